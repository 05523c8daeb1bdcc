//! The controller and estimator dissipation operators, and direct
//! evaluations of the quadratic forms they represent.

use super::vars::{ControllerVars, EstimatorVars};
use crate::delayop::{op_apply, z_inner, PqrsOperator, ZElement};
use crate::model::DelayModel;
use crate::poly::{Interval, PolyMatrix1, PolyMatrix2, Var};
use nalgebra::{DMatrix, DVector};

fn add_block(p: &mut DMatrix<f64>, r0: usize, c0: usize, b: &DMatrix<f64>) {
    let mut v = p.view_mut((r0, c0), b.shape());
    v += b;
}

/// Adds `b` at `(r0, c0)` and `bᵀ` at `(c0, r0)`.
fn add_sym(p: &mut DMatrix<f64>, r0: usize, c0: usize, b: &DMatrix<f64>) {
    add_block(p, r0, c0, b);
    add_block(p, c0, r0, &b.transpose());
}

fn add_rows(dst: &mut PolyMatrix1, r0: usize, src: &PolyMatrix1) {
    let deg = dst.degree();
    for (k, c) in src.coeffs().iter().enumerate() {
        if k > deg {
            assert!(c.amax() == 0.0, "block degree exceeds the operator layout");
            continue;
        }
        let mut v = dst.coeffs_mut()[k].view_mut((r0, 0), c.shape());
        v += c;
    }
}

fn eye(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

/// Degree bounds shared by the decision variables.
fn degree_of(op: &PqrsOperator) -> usize {
    op.q[0].degree()
}

/// The controller operator on `Z_{p+r+n(K+1), n, K}`, with head ordered as
/// `(υ, ω, h(0), h_1(−τ_1), ..., h_K(−τ_K))`.
pub fn map_l1(v: &ControllerVars, model: &DelayModel, gamma: f64) -> PqrsOperator {
    let (n, p, r, k) = (model.n(), model.p(), model.r(), model.k());
    let taus = &model.taus;
    let tk = model.tau_k();
    let d = degree_of(&v.p1);
    let op = &v.p1;
    let (ou, ow, oh) = (0, p, p + r);
    let oe = |i: usize| p + r + n + n * i;
    let m0 = p + r + n * (k + 1);

    let mut e = DMatrix::zeros(m0, m0);
    add_block(&mut e, ou, ou, &(eye(p) * (-gamma / tk)));
    add_block(&mut e, ow, ow, &(eye(r) * (-gamma / tk)));
    add_sym(&mut e, ou, ow, &(&model.d1 / tk));
    add_sym(&mut e, ow, oh, &model.b1.transpose());
    let mut e11 = &model.c10 * &op.p / tk;
    let mut e10 = &model.a0 * &op.p + &model.b2 * &v.h0;
    for i in 0..k {
        let ti = taus[i];
        let q_end = op.q[i].eval_unchecked(-ti);
        let s_end = op.s[i].eval_unchecked(-ti);
        e11 += &model.c1[i] * q_end.transpose();
        add_sym(&mut e, ou, oe(i), &(&model.c1[i] * &s_end));
        e10 += &model.a[i] * q_end.transpose() * tk + op.s[i].eval_unchecked(0.0) * 0.5;
        let e13 = &model.a[i] * &s_end * tk + &model.b2 * &v.h1[i];
        add_sym(&mut e, oh, oe(i), &e13);
        add_block(&mut e, oe(i), oe(i), &(-s_end));
    }
    add_sym(&mut e, ou, oh, &e11);
    add_block(&mut e, oh, oh, &(&e10 + e10.transpose()));

    let mut q = Vec::with_capacity(k);
    let mut s = Vec::with_capacity(k);
    let mut rr = Vec::with_capacity(k);
    for i in 0..k {
        let iv = Interval::delay(taus[i]);
        let mut fu = op.q[i].left_mul(&model.c10);
        let mut fh = op.q[i].left_mul(&model.a0).try_add(&op.q[i].diff()).unwrap();
        fh = fh.try_add(&v.h2[i].left_mul(&model.b2)).unwrap();
        for j in 0..k {
            let rji = op.r[j][i].at_s(-taus[j]).unwrap();
            fu = fu.try_add(&rji.left_mul(&model.c1[j])).unwrap();
            fh = fh.try_add(&rji.left_mul(&model.a[j])).unwrap();
        }
        let mut qi = PolyMatrix1::zeros(m0, n, iv, d);
        add_rows(&mut qi, ou, &fu.scale(1.0 / tk));
        add_rows(&mut qi, oh, &fh);
        q.push(qi);
        s.push(op.s[i].diff().with_degree(2 * d).unwrap());
        rr.push(
            (0..k)
                .map(|j| {
                    let rij = &op.r[i][j];
                    rij.partial(Var::S).try_add(&rij.partial(Var::Theta)).unwrap()
                })
                .collect(),
        );
    }
    PqrsOperator { p: e, q, s, r: rr, taus: taus.clone() }
}

/// The estimator operator on `Z_{r+p1+n(K+1), n, K}`, with head ordered as
/// `(ω, υ, e(0), e_1(−τ_1), ..., e_K(−τ_K))`.
pub fn map_l2(v: &EstimatorVars, model: &DelayModel, gamma: f64) -> PqrsOperator {
    let (n, r, p1, k) = (model.n(), model.r(), model.p1(), model.k());
    let taus = &model.taus;
    let tk = model.tau_k();
    let op = &v.p2;
    let d = degree_of(op);
    let c2 = &model.c2;
    let c2t = c2.transpose();
    let (ow, ou, o0) = (0, r, r + p1);
    let oe = |i: usize| r + p1 + n + n * i;
    let m1 = r + p1 + n * (k + 1);

    let mut e = DMatrix::zeros(m1, m1);
    add_block(&mut e, ow, ow, &(eye(r) * (-gamma / tk)));
    add_block(&mut e, ou, ou, &(eye(p1) * (-gamma / tk)));
    add_sym(&mut e, ow, ou, &(model.d3.transpose() / tk));
    add_sym(&mut e, ow, o0, &(-(model.b1.transpose() * &op.p)));
    add_sym(&mut e, ou, o0, &(&model.c30 / tk));
    let e0 = &op.p * &model.a0 + &v.z1 * c2;
    for i in 0..k {
        let ti = taus[i];
        let q0 = op.q[i].eval_unchecked(0.0);
        let qe = op.q[i].eval_unchecked(-ti);
        let se = op.s[i].eval_unchecked(-ti);
        add_block(&mut e, o0, o0, &(&q0 + q0.transpose() + op.s[i].eval_unchecked(0.0)));
        add_sym(&mut e, ou, oe(i), &(&model.c3[i] / tk));
        add_sym(&mut e, o0, oe(i), &(&op.p * &model.a[i] - qe + &v.z2[i] * c2));
        add_block(&mut e, oe(i), oe(i), &(-se));
    }
    add_block(&mut e, o0, o0, &(&e0 + e0.transpose()));

    let mut q = Vec::with_capacity(k);
    let mut s = Vec::with_capacity(k);
    let mut rr = Vec::with_capacity(k);
    for i in 0..k {
        let iv = Interval::delay(taus[i]);
        let qi = &op.q[i];
        let fw = qi.left_mul(&(-model.b1.transpose()));
        let mut f0 = qi.left_mul(&model.a0.transpose()).try_sub(&qi.diff()).unwrap();
        f0 = f0.try_add(&v.z3[i].right_mul(c2)).unwrap();
        f0 = f0.try_add(&v.z4[i].transpose().left_mul(&c2t)).unwrap();
        for kk in 0..k {
            f0 = f0.try_add(&op.r[kk][i].at_s(0.0).unwrap().scale(1.0 / tk)).unwrap();
        }
        let mut qo = PolyMatrix1::zeros(m1, n, iv, d);
        add_rows(&mut qo, ow, &fw);
        add_rows(&mut qo, o0, &f0);
        for j in 0..k {
            let mut fj = qi.left_mul(&model.a[j].transpose());
            fj = fj.try_sub(&op.r[j][i].at_s(-taus[j]).unwrap().scale(1.0 / tk)).unwrap();
            fj = fj.try_add(&v.z5[i][j].transpose().left_mul(&c2t)).unwrap();
            add_rows(&mut qo, oe(j), &fj);
        }
        q.push(qo);
        let zc = v.z6[i].right_mul(c2);
        let si = op.s[i].diff().scale(-1.0).try_add(&zc).unwrap().try_add(&zc.transpose()).unwrap();
        s.push(si.with_degree(2 * d).unwrap());
        rr.push(
            (0..k)
                .map(|j| {
                    let rij = &op.r[i][j];
                    let base = rij.partial(Var::S).try_add(&rij.partial(Var::Theta)).unwrap().scale(-1.0);
                    let z = v.z7[i][j].right_mul(c2).try_add(&v.z7[j][i].transpose_swap().left_mul(&c2t)).unwrap();
                    base.try_add(&z.scale(tk)).unwrap()
                })
                .collect(),
        );
    }
    PqrsOperator { p: e, q, s, r: rr, taus: taus.clone() }
}

/// `(A0 w(0) + Σ A_i w_i(−τ_i), ẇ_1, ..., ẇ_K)`.
pub fn apply_a(model: &DelayModel, w: &ZElement) -> ZElement {
    let mut x = &model.a0 * &w.x;
    for i in 0..model.k() {
        x += &model.a[i] * w.phi[i].eval_unchecked(-model.taus[i]).column(0);
    }
    ZElement { x, phi: w.phi.iter().map(|p| p.diff()).collect() }
}

fn head_only(x: DVector<f64>, like: &ZElement) -> ZElement {
    ZElement { x, phi: like.phi.iter().map(|p| PolyMatrix1::zeros(p.rows(), 1, p.interval(), 0)).collect() }
}

fn end(w: &ZElement, taus: &[f64], i: usize) -> DVector<f64> {
    w.phi[i].eval_unchecked(-taus[i]).column(0).into_owned()
}

/// Controller dissipation form evaluated directly on `h ∈ X`:
/// `2⟨A P1 h, h⟩ + 2⟨B2 H h, h⟩ + 2⟨B1 ω, h⟩ − γ|ω|² − γ|υ|²
///  + 2 υᵀ C1 P1 h + 2 υᵀ D1 ω`.
pub fn controller_form(
    v: &ControllerVars,
    model: &DelayModel,
    gamma: f64,
    h: &ZElement,
    w: &DVector<f64>,
    u: &DVector<f64>,
) -> f64 {
    let ph = op_apply(&v.p1, h).unwrap();
    let aph = apply_a(model, &ph);
    let mut c1ph = &model.c10 * &ph.x;
    for i in 0..model.k() {
        c1ph += &model.c1[i] * end(&ph, &model.taus, i);
    }
    let bh = head_only(&model.b2 * v.apply_h(h) + &model.b1 * w, h);
    2.0 * z_inner(&aph, h).unwrap() + 2.0 * z_inner(&bh, h).unwrap() - gamma * (w.norm_squared() + u.norm_squared())
        + 2.0 * u.dot(&c1ph)
        + 2.0 * u.dot(&(&model.d1 * w))
}

/// Estimator dissipation form evaluated directly on `e ∈ X`:
/// `2⟨P2 A e + Z C2 e, e⟩ − 2⟨e, P2 B1 ω⟩ − γ|ω|² − γ|υ|²
///  + 2 υᵀ C3 e + 2 υᵀ D3 ω`.
pub fn estimator_form(
    v: &EstimatorVars,
    model: &DelayModel,
    gamma: f64,
    e: &ZElement,
    w: &DVector<f64>,
    u: &DVector<f64>,
) -> f64 {
    let pae = op_apply(&v.p2, &apply_a(model, e)).unwrap();
    let y = ZElement { x: &model.c2 * &e.x, phi: e.phi.iter().map(|p| p.left_mul(&model.c2)).collect() };
    let zy = v.apply_z(&y);
    let pb = op_apply(&v.p2, &head_only(&model.b1 * w, e)).unwrap();
    let mut c3e = &model.c30 * &e.x;
    for i in 0..model.k() {
        c3e += &model.c3[i] * end(e, &model.taus, i);
    }
    2.0 * z_inner(&pae.try_add(&zy).unwrap(), e).unwrap() - 2.0 * z_inner(e, &pb).unwrap()
        - gamma * (w.norm_squared() + u.norm_squared())
        + 2.0 * u.dot(&c3e)
        + 2.0 * u.dot(&(&model.d3 * w))
}

/// Lifts `h ∈ X` with signals into the head/channel element the controller
/// operator acts on.
pub fn lift_controller(model: &DelayModel, h: &ZElement, w: &DVector<f64>, u: &DVector<f64>) -> ZElement {
    let mut head: Vec<f64> = u.iter().chain(w.iter()).chain(h.x.iter()).copied().collect();
    for i in 0..model.k() {
        head.extend(end(h, &model.taus, i).iter());
    }
    ZElement { x: DVector::from_vec(head), phi: h.phi.clone() }
}

pub fn lift_estimator(model: &DelayModel, e: &ZElement, w: &DVector<f64>, u: &DVector<f64>) -> ZElement {
    let mut head: Vec<f64> = w.iter().chain(u.iter()).chain(e.x.iter()).copied().collect();
    for i in 0..model.k() {
        head.extend(end(e, &model.taus, i).iter());
    }
    ZElement { x: DVector::from_vec(head), phi: e.phi.clone() }
}

/// The margin operator `{Î, 0, I/τ_K, 0}` on the lifted space: identity on
/// the `x(0)` head block and on the channels.
pub fn margin_op(m0: usize, head: std::ops::Range<usize>, n: usize, taus: &[f64], d: usize) -> PqrsOperator {
    let tk = *taus.last().unwrap();
    let mut p = DMatrix::zeros(m0, m0);
    for i in head {
        p[(i, i)] = 1.0;
    }
    let ivs: Vec<Interval> = taus.iter().map(|&t| Interval::delay(t)).collect();
    PqrsOperator {
        p,
        q: ivs.iter().map(|&iv| PolyMatrix1::zeros(m0, n, iv, d)).collect(),
        s: ivs.iter().map(|&iv| PolyMatrix1::constant(eye(n) / tk, iv).with_degree(2 * d).unwrap()).collect(),
        r: ivs
            .iter()
            .map(|&a| ivs.iter().map(|&b| PolyMatrix2::zeros(n, n, a, b, d, d)).collect())
            .collect(),
        taus: taus.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::super::vars::{ControllerVarLayout, EstimatorVarLayout};
    use super::*;
    use crate::delayop::{quad_form, OpLayout};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rvec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn dvec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_vec(rvec(rng, n))
    }

    #[test]
    fn controller_operator_represents_the_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for name in ["example1", "example3"] {
            let model = DelayModel::example(name).unwrap();
            let lay = ControllerVarLayout::new(model.n(), model.m(), &model.taus, 2);
            let v = lay.unpack(&rvec(&mut rng, lay.len()));
            let op = map_l1(&v, &model, 1.3);
            for _ in 0..10 {
                let h = ZElement::random_x(&mut rng, model.n(), &model.taus, 3);
                let (w, u) = (dvec(&mut rng, model.r()), dvec(&mut rng, model.p()));
                let direct = controller_form(&v, &model, 1.3, &h, &w, &u);
                let via = quad_form(&op, &lift_controller(&model, &h, &w, &u)).unwrap();
                assert!((direct - via).abs() <= 1e-9 * (1.0 + direct.abs()), "{name}: {direct} vs {via}");
            }
        }
    }

    #[test]
    fn estimator_operator_represents_the_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for name in ["example1", "example2", "example3"] {
            let model = DelayModel::example(name).unwrap();
            let lay = EstimatorVarLayout::new(model.n(), model.q(), &model.taus, 2);
            let v = lay.unpack(&rvec(&mut rng, lay.len()));
            let op = map_l2(&v, &model, 0.7);
            for _ in 0..10 {
                let e = ZElement::random_x(&mut rng, model.n(), &model.taus, 3);
                let (w, u) = (dvec(&mut rng, model.r()), dvec(&mut rng, model.p1()));
                let direct = estimator_form(&v, &model, 0.7, &e, &w, &u);
                let via = quad_form(&op, &lift_estimator(&model, &e, &w, &u)).unwrap();
                assert!((direct - via).abs() <= 1e-9 * (1.0 + direct.abs()), "{name}: {direct} vs {via}");
            }
        }
    }

    fn scalar_model() -> DelayModel {
        let m = |x: f64| DMatrix::from_element(1, 1, x);
        DelayModel {
            name: "scalar".into(),
            a0: m(0.7),
            a: vec![m(-0.4)],
            b1: m(0.3),
            b2: m(1.5),
            c10: m(1.0),
            c1: vec![m(0.0)],
            c2: m(2.0),
            c30: m(1.0),
            c3: vec![m(0.0)],
            d1: m(0.1),
            d3: m(0.2),
            taus: vec![1.0],
        }
    }

    #[test]
    fn scalar_controller_blocks() {
        let model = scalar_model();
        let lay = ControllerVarLayout::new(1, 1, &[1.0], 0);
        let mut v = lay.unpack(&vec![0.0; lay.len()]);
        let (rho, sigma) = (1.7, 0.6);
        v.p1.p[(0, 0)] = rho;
        v.p1.s[0] = PolyMatrix1::scalar(&[sigma], Interval::delay(1.0));
        let op = map_l1(&v, &model, 1.0);
        // Head (υ, ω, h0, h1(−1)).
        let e10 = 0.7 * rho + 0.5 * sigma;
        assert!((op.p[(2, 2)] - 2.0 * e10).abs() < 1e-15);
        assert!((op.p[(2, 3)] - (-0.4 * sigma)).abs() < 1e-15);
        assert!((op.p[(3, 3)] + sigma).abs() < 1e-15);
        assert!((op.p[(0, 2)] - rho).abs() < 1e-15);
        assert!(op.s[0].max_abs() == 0.0);
    }

    #[test]
    fn scalar_estimator_blocks() {
        let model = scalar_model();
        let lay = EstimatorVarLayout::new(1, 1, &[1.0], 0);
        let mut v = lay.unpack(&vec![0.0; lay.len()]);
        let (rho, zeta) = (1.7, -0.25);
        v.p2.p[(0, 0)] = rho;
        v.z1[(0, 0)] = zeta;
        let op = map_l2(&v, &model, 1.0);
        // Head (ω, υ, e0, e1(−1)).
        assert!((op.p[(2, 2)] - (2.0 * 0.7 * rho + 2.0 * zeta * 2.0)).abs() < 1e-15);
        assert!((op.p[(0, 2)] + 0.3 * rho).abs() < 1e-15);
        assert!((op.p[(2, 3)] - (-0.4 * rho)).abs() < 1e-15);
    }

    #[test]
    fn zero_variables_leave_data_blocks() {
        let model = DelayModel::example("example1").unwrap();
        let tk = model.tau_k();
        let lay = ControllerVarLayout::new(model.n(), model.m(), &model.taus, 1);
        let op = map_l1(&lay.unpack(&vec![0.0; lay.len()]), &model, 2.0);
        let (p, r) = (model.p(), model.r());
        for i in 0..p + r {
            assert!((op.p[(i, i)] + 2.0 / tk).abs() < 1e-14);
        }
        assert!((op.p.view((p, p + r), (r, model.n())) - model.b1.transpose()).amax() < 1e-15);
        assert!(op.q.iter().all(|q| q.max_abs() == 0.0));
        assert!(op.s.iter().all(|s| s.max_abs() == 0.0));
        let elay = EstimatorVarLayout::new(model.n(), model.q(), &model.taus, 1);
        let op2 = map_l2(&elay.unpack(&vec![0.0; elay.len()]), &model, 2.0);
        assert!((op2.p.view((0, r), (r, model.p1())) - model.d3.transpose() / tk).amax() < 1e-15);
        assert!(op2.r.iter().flatten().all(|x| x.max_abs() == 0.0));
    }

    #[test]
    fn maps_are_linear_in_the_variables() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let model = DelayModel::example("example3").unwrap();
        let g = 0.9;
        let lay = ControllerVarLayout::new(model.n(), model.m(), &model.taus, 2);
        let ol = OpLayout::for_degree(super::super::m0(&model), model.n(), &model.taus, 2);
        let f = |x: &[f64]| ol.flatten(&map_l1(&lay.unpack(x), &model, g)).unwrap();
        let elay = EstimatorVarLayout::new(model.n(), model.q(), &model.taus, 2);
        let el = OpLayout::for_degree(super::super::m1(&model), model.n(), &model.taus, 2);
        let f2 = |x: &[f64]| el.flatten(&map_l2(&elay.unpack(x), &model, g)).unwrap();
        for (len, f) in [(lay.len(), &f as &dyn Fn(&[f64]) -> Vec<f64>), (elay.len(), &f2)] {
            let (a, b) = (rvec(&mut rng, len), rvec(&mut rng, len));
            let alpha = 0.37;
            let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + y).collect();
            let c0 = f(&vec![0.0; len]);
            let (fa, fb, fc) = (f(&a), f(&b), f(&combo));
            for k in 0..c0.len() {
                let expect = alpha * (fa[k] - c0[k]) + (fb[k] - c0[k]);
                assert!((fc[k] - c0[k] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
            }
        }
    }
}
