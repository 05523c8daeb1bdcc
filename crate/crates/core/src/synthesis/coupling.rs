//! The coupling inequality bounding the effect of the estimation error on
//! the controlled state, and the composite gain bound.

use super::SynthesisError;
use crate::delayop::{make_xi_constraints, AffineOp, OpLayout, PqrsOperator, ZElement};
use crate::gains::ControllerGains;
use crate::model::DelayModel;
use crate::poly::{Interval, PolyMatrix1, PolyMatrix2};
use crate::sdp::{LinExpr, SdpProblem, SolveStatus, Solver};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// `√(γ1 (γ1 + r γ2))`.
pub fn composite_gain(gamma1: f64, gamma2: f64, r: f64) -> Result<f64, SynthesisError> {
    if !(gamma1 > 0.0) || !(gamma2 > 0.0) || !(r >= 0.0) || !r.is_finite() {
        return Err(SynthesisError::Config(format!(
            "composite gain needs γ1, γ2 > 0 and r ≥ 0 (got {gamma1}, {gamma2}, {r})"
        )));
    }
    Ok((gamma1 * (gamma1 + r * gamma2)).sqrt())
}

fn k2_degree(g: &ControllerGains) -> usize {
    g.k2.iter().map(|p| p.effective_degree()).max().unwrap_or(0)
}

/// `{E3, F3, N3, 0}` on `Z_{n(K+2), 2n, K}` with head
/// `(h(0), e(0), e_1(−τ_1), ..., e_K(−τ_K))` and channels `(e_i, h_i)`.
/// Its form is `2⟨h, B2 K e⟩ − ε1‖h‖² − r ε2 (‖e‖² + τ_K Σ|e_i(−τ_i)|²)`.
pub fn coupling_operator(g: &ControllerGains, model: &DelayModel, eps1: f64, eps2: f64, r: f64) -> PqrsOperator {
    let (n, k) = (model.n(), model.k());
    let tk = model.tau_k();
    let m3 = n * (k + 2);
    let dq = k2_degree(g);
    let mut p = DMatrix::identity(m3, m3) * (-r * eps2);
    p.view_mut((0, 0), (n, n)).fill_with_identity();
    p.view_mut((0, 0), (n, n)).scale_mut(-eps1);
    let b0 = &model.b2 * &g.k0;
    p.view_mut((0, n), (n, n)).copy_from(&b0);
    p.view_mut((n, 0), (n, n)).copy_from(&b0.transpose());
    for i in 0..k {
        let b = &model.b2 * &g.k1[i];
        p.view_mut((0, 2 * n + n * i), (n, n)).copy_from(&b);
        p.view_mut((2 * n + n * i, 0), (n, n)).copy_from(&b.transpose());
    }
    let mut nmat = DMatrix::zeros(2 * n, 2 * n);
    nmat.view_mut((0, 0), (n, n)).fill_with_identity();
    nmat.view_mut((0, 0), (n, n)).scale_mut(-r * eps2 / tk);
    nmat.view_mut((n, n), (n, n)).fill_with_identity();
    nmat.view_mut((n, n), (n, n)).scale_mut(-eps1 / tk);
    let ivs: Vec<Interval> = model.taus.iter().map(|&t| Interval::delay(t)).collect();
    let q = (0..k)
        .map(|i| {
            let bk = g.k2[i].left_mul(&model.b2).with_degree(dq).unwrap();
            let coeffs = bk
                .coeffs()
                .iter()
                .map(|c| {
                    let mut m = DMatrix::zeros(m3, 2 * n);
                    m.view_mut((0, 0), (n, n)).copy_from(c);
                    m
                })
                .collect();
            PolyMatrix1::new(ivs[i], coeffs).unwrap()
        })
        .collect();
    PqrsOperator {
        p,
        q,
        s: ivs.iter().map(|&iv| PolyMatrix1::constant(nmat.clone(), iv)).collect(),
        r: ivs
            .iter()
            .map(|&a| ivs.iter().map(|&b| PolyMatrix2::zeros(2 * n, 2 * n, a, b, 0, 0)).collect())
            .collect(),
        taus: model.taus.clone(),
    }
}

/// Direct evaluation of the coupling form on `h, e ∈ X`.
pub fn coupling_form(
    g: &ControllerGains,
    model: &DelayModel,
    eps1: f64,
    eps2: f64,
    r: f64,
    h: &ZElement,
    e: &ZElement,
) -> f64 {
    let tk = model.tau_k();
    let ends: f64 = (0..model.k())
        .map(|i| e.phi[i].eval_unchecked(-model.taus[i]).norm_squared())
        .sum();
    2.0 * tk * h.x.dot(&(&model.b2 * g.apply(e))) - eps1 * h.norm().powi(2) - r * eps2 * (e.norm().powi(2) + tk * ends)
}

/// Lifts `(h, e)` into the element the coupling operator acts on.
pub fn lift_coupling(model: &DelayModel, h: &ZElement, e: &ZElement) -> ZElement {
    let mut head: Vec<f64> = h.x.iter().chain(e.x.iter()).copied().collect();
    for i in 0..model.k() {
        head.extend(e.phi[i].eval_unchecked(-model.taus[i]).iter());
    }
    let phi = (0..model.k())
        .map(|i| {
            let (a, b) = (&e.phi[i], &h.phi[i]);
            let deg = a.degree().max(b.degree());
            let (a, b) = (a.with_degree(deg).unwrap(), b.with_degree(deg).unwrap());
            let coeffs = a
                .coeffs()
                .iter()
                .zip(b.coeffs())
                .map(|(x, y)| {
                    let mut m = DMatrix::zeros(x.nrows() + y.nrows(), 1);
                    m.view_mut((0, 0), x.shape()).copy_from(x);
                    m.view_mut((x.nrows(), 0), y.shape()).copy_from(y);
                    m
                })
                .collect();
            PolyMatrix1::new(a.interval(), coeffs).unwrap()
        })
        .collect();
    ZElement { x: nalgebra::DVector::from_vec(head), phi }
}

/// The two operators on `Z_{n(K+1), n, K}`, head `(e(0), e_i(−τ_i))`,
/// left after maximizing the coupling form over `h`: the weight
/// `W = {I, 0, I/τ_K, 0}` of `r ε2` and `G` with `⟨e, G e⟩ = τ_K |B2 K e|²`.
/// The coupling form is nonpositive for all `h` iff
/// `r ε2 ⟨e, W e⟩ − ⟨e, G e⟩ / ε1 ≥ 0`.
pub fn reduced_coupling_operators(g: &ControllerGains, model: &DelayModel) -> (PqrsOperator, PqrsOperator) {
    let (n, k) = (model.n(), model.k());
    let m = n * (k + 1);
    let tk = model.tau_k();
    let ivs: Vec<Interval> = model.taus.iter().map(|&t| Interval::delay(t)).collect();
    let w = PqrsOperator {
        p: DMatrix::identity(m, m),
        q: ivs.iter().map(|&iv| PolyMatrix1::zeros(m, n, iv, 0)).collect(),
        s: ivs.iter().map(|&iv| PolyMatrix1::constant(DMatrix::identity(n, n) / tk, iv)).collect(),
        r: ivs.iter().map(|&a| ivs.iter().map(|&b| PolyMatrix2::zeros(n, n, a, b, 0, 0)).collect()).collect(),
        taus: model.taus.clone(),
    };
    let mut mh = DMatrix::zeros(n, m);
    mh.view_mut((0, 0), (n, n)).copy_from(&(&model.b2 * &g.k0));
    for i in 0..k {
        mh.view_mut((0, n + n * i), (n, n)).copy_from(&(&model.b2 * &g.k1[i]));
    }
    let mq: Vec<PolyMatrix1> = g.k2.iter().map(|p| p.left_mul(&model.b2)).collect();
    let gop = PqrsOperator {
        p: mh.transpose() * &mh,
        q: mq.iter().map(|q| q.left_mul(&mh.transpose())).collect(),
        s: ivs.iter().map(|&iv| PolyMatrix1::zeros(n, n, iv, 0)).collect(),
        r: mq
            .iter()
            .map(|a| mq.iter().map(|b| PolyMatrix2::outer(&a.transpose(), b).unwrap()).collect())
            .collect(),
        taus: model.taus.clone(),
    };
    (w, gop)
}

fn check_margins(eps1: f64, eps2: f64, eps3: f64) -> Result<f64, SynthesisError> {
    if !(eps1 > 0.0) || !(eps2 > 0.0) || !(eps3 >= 0.0) || !(eps3 < eps1) {
        return Err(SynthesisError::Config(format!(
            "coupling needs ε1, ε2 > 0 and 0 ≤ ε3 < ε1 (got {eps1}, {eps2}, {eps3})"
        )));
    }
    Ok(eps1 - eps3)
}

fn reduced_layout(model: &DelayModel, g: &ControllerGains, d: usize) -> (OpLayout, usize) {
    let dc = d.max(k2_degree(g));
    (OpLayout::for_degree(model.n() * (model.k() + 1), model.n(), &model.taus, dc), dc)
}

/// `W − G / (r ε2 (ε1 − ε3)) ∈ Ξ`, which makes the coupling form with `h(0)`
/// margin `ε3` nonpositive. The certificate degree is `max(d, deg K2)`.
pub fn build_coupling_sdp(
    g: &ControllerGains,
    eps1: f64,
    eps2: f64,
    r: f64,
    eps3: f64,
    model: &DelayModel,
    d: usize,
) -> Result<SdpProblem, SynthesisError> {
    let e1 = check_margins(eps1, eps2, eps3)?;
    if !(r > 0.0) || !r.is_finite() {
        return Err(SynthesisError::Config(format!("coupling needs r > 0 (got {r})")));
    }
    let (w, gop) = reduced_coupling_operators(g, model);
    let op = w.try_add(&gop.scale(-1.0 / (r * eps2 * e1)))?;
    let (layout, dc) = reduced_layout(model, g, d);
    let mut prob = SdpProblem::new();
    make_xi_constraints(&mut prob, &AffineOp::constant(layout, &op)?, dc)?;
    Ok(prob)
}

/// Smallest `r` with a degree-`max(d, deg K2)` certificate, from one SDP in
/// `t = r ε2 (ε1 − ε3) / c`, `c` the scale of `G`. `None` when the solve
/// does not reach optimality.
pub fn min_coupling_r(
    g: &ControllerGains,
    eps1: f64,
    eps2: f64,
    eps3: f64,
    model: &DelayModel,
    d: usize,
    solver: &dyn Solver,
) -> Result<Option<f64>, SynthesisError> {
    let e1 = check_margins(eps1, eps2, eps3)?;
    let (w, gop) = reduced_coupling_operators(g, model);
    let c = gop.max_abs();
    if c == 0.0 {
        return Ok(Some(0.0));
    }
    let (layout, dc) = reduced_layout(model, g, d);
    let mut prob = SdpProblem::new();
    let t = prob.add_vars(1);
    let mut aff = AffineOp::constant(layout, &gop.scale(-1.0 / c))?;
    aff.add_var_times(t, &w, 1.0)?;
    prob.add_nonneg(LinExpr::var(t));
    prob.objective = LinExpr::var(t);
    make_xi_constraints(&mut prob, &aff, dc)?;
    let sol = solver.solve(&prob);
    if sol.status != SolveStatus::Optimal {
        return Ok(None);
    }
    Ok(Some(sol.x[t] * c / (eps2 * e1)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingSweep {
    /// Smallest feasible swept `r`.
    pub r: Option<f64>,
    /// Smallest certifiable `r` from the direct solve, if it converged.
    pub r_min_certified: Option<f64>,
    /// `(r, solver status)` for every grid point solved, ascending in `r`.
    pub tried: Vec<(f64, SolveStatus)>,
    pub degree: usize,
}

/// The log-spaced sweep grid.
pub fn r_grid(r_min: f64, r_max: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![r_max];
    }
    let (a, b) = (r_min.ln(), r_max.ln());
    (0..points).map(|k| (a + (b - a) * k as f64 / (points - 1) as f64).exp()).collect()
}

/// Smallest feasible point of the ascending sweep grid. The direct solve
/// locates it and the grid point is then verified; without a direct
/// answer the grid is bisected after checking its top point, which is
/// valid because feasibility is monotone in `r`.
#[allow(clippy::too_many_arguments)]
pub fn sweep_r(
    g: &ControllerGains,
    model: &DelayModel,
    eps1: f64,
    eps2: f64,
    eps3: f64,
    d: usize,
    grid: &[f64],
    solver: &dyn Solver,
) -> Result<CouplingSweep, SynthesisError> {
    let degree = d.max(k2_degree(g));
    let mut tried = Vec::new();
    let feasible = |r: f64, tried: &mut Vec<(f64, SolveStatus)>| -> Result<bool, SynthesisError> {
        let prob = build_coupling_sdp(g, eps1, eps2, r, eps3, model, d)?;
        let st = solver.solve(&prob).status;
        tried.push((r, st));
        Ok(st == SolveStatus::Optimal)
    };
    let done = |r: Option<f64>, rstar: Option<f64>, mut tried: Vec<(f64, SolveStatus)>| {
        tried.sort_by(|a: &(f64, SolveStatus), b| a.0.total_cmp(&b.0));
        Ok(CouplingSweep { r, r_min_certified: rstar, tried, degree })
    };
    let rstar = min_coupling_r(g, eps1, eps2, eps3, model, d, solver)?;
    if let Some(rs) = rstar {
        let Some(first) = grid.iter().position(|&x| x >= rs * (1.0 + 1e-6)) else {
            return done(None, rstar, tried);
        };
        for &x in &grid[first..] {
            if feasible(x, &mut tried)? {
                return done(Some(x), rstar, tried);
            }
        }
        return done(None, rstar, tried);
    }
    let Some(&top) = grid.last() else {
        return done(None, None, tried);
    };
    if !feasible(top, &mut tried)? {
        return done(None, None, tried);
    }
    // grid[hi] is feasible; every index ≤ lo is infeasible.
    let (mut lo, mut hi) = (-1isize, grid.len() as isize - 1);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if feasible(grid[mid as usize], &mut tried)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    done(Some(grid[hi as usize]), None, tried)
}

/// Largest `form / (‖h‖² + ‖e‖²)` over seeded random `h, e ∈ X`.
pub fn check_coupling(
    g: &ControllerGains,
    model: &DelayModel,
    eps1: f64,
    eps2: f64,
    r: f64,
    samples: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples.max(1) {
        let h = ZElement::random_x(&mut rng, model.n(), &model.taus, 3);
        let e = ZElement::random_x(&mut rng, model.n(), &model.taus, 3);
        let f = coupling_form(g, model, eps1, eps2, r, &h, &e);
        worst = worst.max(f / (h.norm().powi(2) + e.norm().powi(2)));
    }
    worst
}
