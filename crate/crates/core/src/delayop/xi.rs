//! Gram-matrix positivity certificates for PQRS operators.
//!
//! For channel `i` let `Φ(s) = [1, s, ..., s^d] ⊗ I_n` and
//! `w_j = ∫ Φ(θ) φ_j(θ) dθ`. With `ζ_i(s) = [x; Φ(s) φ_i(s); w_1; ...; w_K]`,
//! the form
//! `Σ_i ∫ ζ_iᵀ T_i ζ_i + g_i(s) (Φ_{d-1} φ_i)ᵀ U_i (Φ_{d-1} φ_i) ds`,
//! `g_i(s) = -s(s + τ_i) ≥ 0`, is nonnegative whenever `T_i, U_i ⪰ 0`.
//! Matching its coefficients against `⟨z, op z⟩` gives the certificate.

use super::{AffineOp, DimError, OpLayout, PqrsOperator};
use crate::sdp::{LinExpr, PsdVar, SdpProblem, SdpSolution, Solver};
use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum XiError {
    #[error("certificate degree {d} cannot express operator degrees (Q {dq}, S {ds}, R {dr})")]
    Degree { d: usize, dq: usize, ds: usize, dr: usize },
    #[error(transparent)]
    Dim(#[from] DimError),
}

/// Handles to the Gram blocks of one certificate.
#[derive(Debug, Clone)]
pub struct XiBlocks {
    pub t: Vec<PsdVar>,
    pub u: Vec<Option<PsdVar>>,
    pub degree: usize,
}

/// Numeric Gram blocks of a solved certificate.
#[derive(Debug, Clone)]
pub struct SosCertificate {
    pub t: Vec<DMatrix<f64>>,
    pub u: Vec<Option<DMatrix<f64>>>,
}

impl XiBlocks {
    pub fn values(&self, x: &[f64]) -> SosCertificate {
        SosCertificate {
            t: self.t.iter().map(|b| b.value(x)).collect(),
            u: self.u.iter().map(|b| b.map(|b| b.value(x))).collect(),
        }
    }
}

/// Adds PSD blocks and equalities to `prob` whose feasibility certifies
/// `⟨z, op z⟩ ≥ 0` for all `z ∈ Z_{m,n,K}`.
pub fn make_xi_constraints(prob: &mut SdpProblem, op: &AffineOp, d: usize) -> Result<XiBlocks, XiError> {
    let l0 = &op.layout;
    if l0.dq > d || l0.ds > 2 * d || l0.dr > d {
        return Err(XiError::Degree { d, dq: l0.dq, ds: l0.ds, dr: l0.dr });
    }
    let layout = OpLayout::for_degree(l0.m, l0.n, &l0.taus, d);
    let op = op.relayout(&layout)?;
    let (blocks, img) = gram_image(prob, &layout, d);
    for slot in layout.form_slots() {
        let mut e = LinExpr::default();
        for &(idx, w) in &slot {
            e.add_scaled(&op.coeffs[idx], w);
            e.add_scaled(&img[idx], -w);
        }
        prob.add_equality(e);
    }
    Ok(blocks)
}

/// Fresh Gram blocks and the operator coefficients (in `layout`, which must
/// be the degree-`d` layout) of the form they represent.
pub(crate) fn gram_image(prob: &mut SdpProblem, layout: &OpLayout, d: usize) -> (XiBlocks, Vec<LinExpr>) {
    let (m, n, k) = (layout.m, layout.n, layout.k());
    let tk = layout.tau_k();
    let nb = n * (d + 1);
    let size = m + nb * (k + 1);
    let mut img = vec![LinExpr::default(); layout.len()];
    let mut blocks = XiBlocks { t: Vec::new(), u: Vec::new(), degree: d };

    for i in 0..k {
        let ti = layout.taus[i];
        let t = prob.add_psd_var(size, format!("xi-T{}", i + 1));
        let a_off = m;
        let w_off = |j: usize| m + nb + j * nb;
        // Every ordered pair (row, col) of the symmetric Gram matrix.
        for row in 0..size {
            for col in 0..size {
                let v = t.var(row, col);
                match (row < m, col < m) {
                    (true, true) => img[layout.p_idx(row, col)].add_term(v, ti / tk),
                    (true, false) => {
                        if col < a_off + nb {
                            let (kk, c) = ((col - a_off) / n, (col - a_off) % n);
                            img[layout.q_idx(i, kk, row, c)].add_term(v, 0.5 / tk);
                        } else {
                            let j = (col - w_off(0)) / nb;
                            let e = col - w_off(j);
                            let (kk, c) = (e / n, e % n);
                            img[layout.q_idx(j, kk, row, c)].add_term(v, 0.5 * ti / tk);
                        }
                    }
                    (false, true) => {
                        // Transposed half of the x–a / x–w blocks.
                        if row < a_off + nb {
                            let (kk, c) = ((row - a_off) / n, (row - a_off) % n);
                            img[layout.q_idx(i, kk, col, c)].add_term(v, 0.5 / tk);
                        } else {
                            let j = (row - w_off(0)) / nb;
                            let e = row - w_off(j);
                            let (kk, c) = (e / n, e % n);
                            img[layout.q_idx(j, kk, col, c)].add_term(v, 0.5 * ti / tk);
                        }
                    }
                    (false, false) => {
                        let ra = row < a_off + nb;
                        let ca = col < a_off + nb;
                        match (ra, ca) {
                            (true, true) => {
                                let (k1, r) = ((row - a_off) / n, (row - a_off) % n);
                                let (k2, c) = ((col - a_off) / n, (col - a_off) % n);
                                img[layout.s_idx(i, k1 + k2, r, c)].add_term(v, 1.0 / tk);
                            }
                            (true, false) => {
                                // a–w_j: φ_i(s) against w_j, once into R_ij.
                                let (k1, r) = ((row - a_off) / n, (row - a_off) % n);
                                let j = (col - w_off(0)) / nb;
                                let e = col - w_off(j);
                                let (k2, c) = (e / n, e % n);
                                img[layout.r_idx(i, j, k1, k2, r, c)].add_term(v, 1.0);
                            }
                            (false, true) => {
                                // w_j–a: transposed copy, into R_ji.
                                let j = (row - w_off(0)) / nb;
                                let e = row - w_off(j);
                                let (k1, r) = (e / n, e % n);
                                let (k2, c) = ((col - a_off) / n, (col - a_off) % n);
                                img[layout.r_idx(j, i, k1, k2, r, c)].add_term(v, 1.0);
                            }
                            (false, false) => {
                                let j1 = (row - w_off(0)) / nb;
                                let e1 = row - w_off(j1);
                                let j2 = (col - w_off(0)) / nb;
                                let e2 = col - w_off(j2);
                                img[layout.r_idx(j1, j2, e1 / n, e2 / n, e1 % n, e2 % n)].add_term(v, ti);
                            }
                        }
                    }
                }
            }
        }
        blocks.t.push(t);
        if d >= 1 {
            let us = n * d;
            let u = prob.add_psd_var(us, format!("xi-U{}", i + 1));
            for row in 0..us {
                for col in 0..us {
                    let v = u.var(row, col);
                    let (k1, r) = (row / n, row % n);
                    let (k2, c) = (col / n, col % n);
                    img[layout.s_idx(i, k1 + k2 + 1, r, c)].add_term(v, -ti / tk);
                    img[layout.s_idx(i, k1 + k2 + 2, r, c)].add_term(v, -1.0 / tk);
                }
            }
            blocks.u.push(Some(u));
        } else {
            blocks.u.push(None);
        }
    }

    (blocks, img)
}

/// Solves the pure feasibility problem "`op` admits a degree-`d` certificate".
pub fn xi_feasible(op: &PqrsOperator, d: usize, solver: &dyn Solver) -> Result<SdpSolution, XiError> {
    let dq = op.q.iter().map(|q| q.effective_degree()).max().unwrap_or(0);
    let ds = op.s.iter().map(|s| s.effective_degree()).max().unwrap_or(0);
    let dr = op
        .r
        .iter()
        .flatten()
        .map(|r| {
            let (a, b) = r.bidegree();
            a.max(b)
        })
        .max()
        .unwrap_or(0);
    let layout = OpLayout { m: op.m(), n: op.n(), taus: op.taus.clone(), dq, ds, dr };
    let mut prob = SdpProblem::new();
    let aff = AffineOp::constant(layout, op)?;
    make_xi_constraints(&mut prob, &aff, d)?;
    Ok(solver.solve(&prob))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delayop::{quad_form, ZElement};
    use crate::poly::{Interval, PolyMatrix1};
    use crate::quad::gauss_legendre;
    use crate::sdp::{ClarabelSolver, SolveStatus};
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(k, k, |_, _| rng.gen_range(-1.0..1.0));
        &a * a.transpose()
    }

    // Direct evaluation of Σ_i ∫ ζ_iᵀ T_i ζ_i + g_i (Φ_{d-1}φ_i)ᵀ U_i (Φ_{d-1}φ_i).
    fn gram_form(z: &ZElement, taus: &[f64], d: usize, t: &[DMatrix<f64>], u: &[DMatrix<f64>]) -> f64 {
        let n = z.n();
        let basis = |s: f64, deg: usize, v: &DVector<f64>| {
            let mut out = DVector::zeros(n * (deg + 1));
            for k in 0..=deg {
                out.rows_mut(k * n, n).copy_from(&(v * s.powi(k as i32)));
            }
            out
        };
        let w: Vec<DVector<f64>> = z
            .phi
            .iter()
            .zip(taus)
            .map(|(p, &tau)| {
                let (x, wt) = gauss_legendre(32, Interval::delay(tau));
                let mut acc = DVector::zeros(n * (d + 1));
                for (&s, &wq) in x.iter().zip(&wt) {
                    acc += basis(s, d, &p.eval_unchecked(s).column(0).into_owned()) * wq;
                }
                acc
            })
            .collect();
        let mut total = 0.0;
        for (i, &tau) in taus.iter().enumerate() {
            let (x, wt) = gauss_legendre(32, Interval::delay(tau));
            for (&s, &wq) in x.iter().zip(&wt) {
                let phi = z.phi[i].eval_unchecked(s).column(0).into_owned();
                let mut zeta = vec![z.x.clone(), basis(s, d, &phi)];
                zeta.extend(w.iter().cloned());
                let zeta = DVector::from_iterator(
                    zeta.iter().map(|v| v.len()).sum(),
                    zeta.iter().flat_map(|v| v.iter().copied()),
                );
                total += wq * zeta.dot(&(&t[i] * &zeta));
                if d >= 1 {
                    let b = basis(s, d - 1, &phi);
                    total += wq * (-s * (s + tau)) * b.dot(&(&u[i] * &b));
                }
            }
        }
        total
    }

    #[test]
    fn gram_image_reproduces_the_gram_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let taus = [0.6, 1.0];
        let (m, n, d) = (3, 2, 2);
        let layout = OpLayout::for_degree(m, n, &taus, d);
        let mut prob = SdpProblem::new();
        let (blocks, img) = gram_image(&mut prob, &layout, d);
        let mut x = vec![0.0; prob.n_vars];
        let mut ts = Vec::new();
        let mut us = Vec::new();
        for i in 0..taus.len() {
            let t = random_psd(&mut rng, blocks.t[i].size);
            for r in 0..t.nrows() {
                for c in r..t.ncols() {
                    x[blocks.t[i].var(r, c)] = t[(r, c)];
                }
            }
            ts.push(t);
            let ub = blocks.u[i].unwrap();
            let u = random_psd(&mut rng, ub.size);
            for r in 0..u.nrows() {
                for c in r..u.ncols() {
                    x[ub.var(r, c)] = u[(r, c)];
                }
            }
            us.push(u);
        }
        let vals: Vec<f64> = img.iter().map(|e| e.eval(&x)).collect();
        let op = layout.unflatten(&vals);
        for _ in 0..10 {
            let z = ZElement::random(&mut rng, m, n, &taus, 2);
            let direct = gram_form(&z, &taus, d, &ts, &us);
            let via_op = quad_form(&op, &z).unwrap();
            assert!((direct - via_op).abs() <= 1e-9 * direct.abs().max(1.0), "{direct} vs {via_op}");
        }
    }

    #[test]
    fn identity_feasible_negative_identity_infeasible() {
        let solver = ClarabelSolver::default();
        let id = PqrsOperator::identity(2, &[0.5, 1.0]);
        assert_eq!(xi_feasible(&id, 0, &solver).unwrap().status, SolveStatus::Optimal);
        for d in 0..3 {
            let st = xi_feasible(&id.scale(-1.0), d, &solver).unwrap().status;
            assert_eq!(st, SolveStatus::Infeasible, "d={d}");
        }
    }

    #[test]
    fn positive_multiplier_is_certified() {
        let iv = Interval::delay(1.0);
        let mut op = PqrsOperator::zero(1, 1, &[1.0]);
        op.p[(0, 0)] = 1.0;
        op.s[0] = PolyMatrix1::scalar(&[1.1, 1.0], iv);
        let sol = xi_feasible(&op, 1, &ClarabelSolver::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let z = ZElement::random(&mut rng, 1, 1, &[1.0], 4);
            assert!(quad_form(&op, &z).unwrap() >= 0.0);
        }
    }

    #[test]
    fn degree_too_small_is_structural_error() {
        let iv = Interval::delay(1.0);
        let mut op = PqrsOperator::zero(1, 1, &[1.0]);
        op.q[0] = PolyMatrix1::scalar(&[0.0, 0.0, 1.0], iv);
        assert!(matches!(
            xi_feasible(&op, 1, &ClarabelSolver::default()),
            Err(XiError::Degree { .. })
        ));
    }

    #[test]
    fn certificate_embeds_at_higher_degree() {
        let iv = Interval::delay(1.0);
        let mut op = PqrsOperator::zero(1, 1, &[1.0]);
        op.p[(0, 0)] = 1.0;
        op.q[0] = PolyMatrix1::scalar(&[0.3, 0.2], iv);
        op.s[0] = PolyMatrix1::scalar(&[1.0, 0.5], iv);
        let solver = ClarabelSolver::default();
        assert_eq!(xi_feasible(&op, 1, &solver).unwrap().status, SolveStatus::Optimal);
        assert_eq!(xi_feasible(&op, 2, &solver).unwrap().status, SolveStatus::Optimal);
    }
}
