//! Controller, estimator and coupling SDPs, bisection on the performance
//! level, and sampled post-checks of the certified inequalities.

pub mod bisect;
pub mod coupling;
pub mod maps;
pub mod vars;

pub use bisect::{bisect_gamma, Bisection, GAMMA_CAP};
pub use coupling::{
    build_coupling_sdp, composite_gain, coupling_form, coupling_operator, sweep_r, CouplingSweep,
};
pub use maps::{controller_form, estimator_form, map_l1, map_l2};
pub use vars::{ControllerVarLayout, ControllerVars, EstimatorVarLayout, EstimatorVars, SymParam};

use crate::delayop::{make_xi_constraints, AffineOp, DimError, OpLayout, PqrsOperator, XiBlocks, XiError, ZElement};
use crate::model::DelayModel;
use crate::sdp::{LinExpr, SdpProblem, SdpSolution, SolveStatus, Solver};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error("infeasible at the upper bound γ = {0}; increase hi or degree d")]
    UpperBoundInfeasible(f64),
    #[error("already feasible at the lower bound γ = {0}")]
    LowerBoundFeasible(f64),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Xi(#[from] XiError),
    #[error(transparent)]
    Dim(#[from] DimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub degree: usize,
    /// Coercivity margin of the storage operators.
    pub eps: f64,
    /// Strictness margins of the controller and estimator inequalities
    /// during bisection.
    pub eps1: f64,
    pub eps2: f64,
    /// Strictness margin of the coupling inequality.
    pub eps3: f64,
    pub gamma_lo: Option<f64>,
    pub gamma_hi: Option<f64>,
    /// Relative bisection tolerance.
    pub gamma_tol: f64,
    /// The returned certificates are re-solved at `γ_min·(1 + cert_slack)`
    /// with the levels chosen by `refine` maximized (up to `margin_cap`).
    pub cert_slack: f64,
    pub refine: Refine,
    /// Upper bound on any level maximized by the re-solve.
    pub margin_cap: f64,
    /// Log-spaced coupling grid over `[r_min, r_max]`.
    pub r_min: f64,
    pub r_max: f64,
    pub r_points: usize,
    /// Random samples for the quadratic-form post-checks.
    pub check_samples: usize,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            degree: 1,
            eps: 1e-4,
            eps1: 1e-3,
            eps2: 1e-3,
            eps3: 1e-6,
            gamma_lo: None,
            gamma_hi: None,
            gamma_tol: 1e-3,
            cert_slack: 0.05,
            refine: Refine::default(),
            margin_cap: 10.0,
            r_min: 1e-3,
            r_max: 1e15,
            r_points: 55,
            check_samples: 100,
            seed: 1,
        }
    }
}

/// What the certificate re-solve maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Refine {
    /// The strictness margin of the dissipation inequality.
    Margin,
    /// The coercivity level `ε` of the storage operator.
    Coercivity,
    Both,
    /// Coercivity first, then the margin with `ε` held at half its maximum.
    #[default]
    Balanced,
}

impl Refine {
    fn levels(self, eps: f64, margin: f64, cap: f64) -> (Margin, Margin) {
        let mx = |m: f64| Margin::Maximize { min: m, cap: cap.max(m) };
        let fix = Margin::Fixed;
        match self {
            Refine::Margin => (fix(eps), mx(margin)),
            Refine::Coercivity => (mx(eps), fix(margin)),
            Refine::Both | Refine::Balanced => (mx(eps), mx(margin)),
        }
    }
}

/// Strictness margin of a dissipation inequality or coercivity level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Margin {
    Fixed(f64),
    /// Margin is a variable in `[min, cap]`, maximized.
    Maximize { min: f64, cap: f64 },
}

impl Margin {
    fn min(&self) -> f64 {
        match *self {
            Margin::Fixed(e) => e,
            Margin::Maximize { min, .. } => min,
        }
    }
}

/// An assembled synthesis SDP; the decision variables occupy the first
/// `n_decision` SDP variables.
#[derive(Debug, Clone)]
pub struct SynthesisSdp {
    pub problem: SdpProblem,
    pub n_decision: usize,
    pub eps: Margin,
    pub margin: Margin,
    pub eps_var: Option<usize>,
    pub margin_var: Option<usize>,
    pub positivity: XiBlocks,
    pub dissipation: XiBlocks,
    pub gamma: f64,
    pub degree: usize,
}

fn check_levels(gamma: f64, eps: Margin, margin: Margin) -> Result<(), SynthesisError> {
    if !(gamma > 0.0) || !(eps.min() > 0.0) || !(margin.min() > 0.0) {
        return Err(SynthesisError::Config(format!(
            "γ, ε and the strictness margin must be positive (γ = {gamma}, ε = {}, margin = {})",
            eps.min(),
            margin.min()
        )));
    }
    for m in [eps, margin] {
        if let Margin::Maximize { min, cap } = m {
            if cap < min {
                return Err(SynthesisError::Config(format!("level cap {cap} below minimum {min}")));
            }
        }
    }
    Ok(())
}

/// `{P − εI, ...} ∈ Ξ` and `−(L + margin·Î) ∈ Ξ`, where `pos(x)` and
/// `diss(x)` are affine in the decision vector.
fn assemble(
    n_decision: usize,
    sym: &SymParam,
    eps: Margin,
    diss_layout: OpLayout,
    diss: impl Fn(&[f64]) -> PqrsOperator,
    margin_op: &PqrsOperator,
    margin: Margin,
    d: usize,
    gamma: f64,
) -> Result<SynthesisSdp, SynthesisError> {
    let mut problem = SdpProblem::new();
    problem.add_vars(n_decision);
    let mut objective = LinExpr::default();
    let mut level = |problem: &mut SdpProblem, m: Margin| -> Option<usize> {
        match m {
            Margin::Fixed(_) => None,
            Margin::Maximize { min, cap } => {
                let v = problem.add_vars(1);
                let mut lo = LinExpr::var(v);
                lo.constant = -min;
                problem.add_nonneg(lo);
                let mut hi = LinExpr::constant(cap);
                hi.add_term(v, -1.0);
                problem.add_nonneg(hi);
                objective.add_term(v, -1.0);
                Some(v)
            }
        }
    };
    let eps_var = level(&mut problem, eps);
    let margin_var = level(&mut problem, margin);
    problem.objective = objective;

    let unit = PqrsOperator::zero(sym.layout.m, sym.layout.n, &sym.layout.taus).shifted(1.0);
    let mut pos = AffineOp::from_map(sym.layout.clone(), sym.dim(), 0, |th| Ok(sym.op(th)))?;
    match (eps, eps_var) {
        (_, Some(v)) => pos.add_var_times(v, &unit, 1.0)?,
        (e, None) => pos = pos.add_scaled(&AffineOp::constant(sym.layout.clone(), &unit)?, e.min()),
    }
    let positivity = make_xi_constraints(&mut problem, &pos, d)?;
    let mut neg = AffineOp::from_map(diss_layout.clone(), n_decision, 0, |x| Ok(diss(x)))?.neg();
    match (margin, margin_var) {
        (_, Some(v)) => neg.add_var_times(v, margin_op, -1.0)?,
        (e, None) => neg = neg.add_scaled(&AffineOp::constant(diss_layout, margin_op)?, -e.min()),
    }
    let dissipation = make_xi_constraints(&mut problem, &neg, d)?;
    Ok(SynthesisSdp {
        problem,
        n_decision,
        eps,
        margin,
        eps_var,
        margin_var,
        positivity,
        dissipation,
        gamma,
        degree: d,
    })
}

/// Lifted head size of the controller inequality, `p + r + n(K+1)`.
pub fn m0(model: &DelayModel) -> usize {
    model.p() + model.r() + model.n() * (model.k() + 1)
}

/// Lifted head size of the estimator inequality, `r + p1 + n(K+1)`.
pub fn m1(model: &DelayModel) -> usize {
    model.r() + model.p1() + model.n() * (model.k() + 1)
}

pub fn build_controller_sdp(
    model: &DelayModel,
    gamma: f64,
    d: usize,
    eps: Margin,
    margin: Margin,
) -> Result<(SynthesisSdp, ControllerVarLayout), SynthesisError> {
    check_levels(gamma, eps, margin)?;
    let (n, taus) = (model.n(), &model.taus);
    let layout = ControllerVarLayout::new(n, model.m(), taus, d);
    let m0 = m0(model);
    let oh = model.p() + model.r();
    let mop = maps::margin_op(m0, oh..oh + n, n, taus, d);
    let sdp = assemble(
        layout.len(),
        &layout.sym,
        eps,
        OpLayout::for_degree(m0, n, taus, d),
        |x| map_l1(&layout.unpack(x), model, gamma),
        &mop,
        margin,
        d,
        gamma,
    )?;
    Ok((sdp, layout))
}

/// The estimator margin covers `e(0)` and every `e_i(−τ_i)` head block.
pub fn build_estimator_sdp(
    model: &DelayModel,
    gamma: f64,
    d: usize,
    eps: Margin,
    margin: Margin,
) -> Result<(SynthesisSdp, EstimatorVarLayout), SynthesisError> {
    check_levels(gamma, eps, margin)?;
    let (n, taus) = (model.n(), &model.taus);
    let layout = EstimatorVarLayout::new(n, model.q(), taus, d);
    let m1 = m1(model);
    let o0 = model.r() + model.p1();
    let mop = maps::margin_op(m1, o0..m1, n, taus, d);
    let sdp = assemble(
        layout.len(),
        &layout.sym,
        eps,
        OpLayout::for_degree(m1, n, taus, d),
        |x| map_l2(&layout.unpack(x), model, gamma),
        &mop,
        margin,
        d,
        gamma,
    )?;
    Ok((sdp, layout))
}

/// Numerical quality of a solved certificate.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateQuality {
    pub max_linear_violation: f64,
    pub min_psd_eigenvalue: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate<V> {
    pub gamma: f64,
    pub degree: usize,
    /// Strictness margin actually certified.
    pub margin: f64,
    pub eps: f64,
    #[serde(skip)]
    pub vars: V,
    pub solve: SdpSolution,
    pub quality: CertificateQuality,
}

pub type ControllerCertificate = Certificate<ControllerVars>;
pub type EstimatorCertificate = Certificate<EstimatorVars>;

impl SynthesisSdp {
    /// Solves; returns the certificate when the solver reports optimality.
    pub fn solve<V>(
        &self,
        solver: &dyn Solver,
        unpack: impl Fn(&[f64]) -> V,
    ) -> (SdpSolution, Option<Certificate<V>>) {
        let sol = solver.solve(&self.problem);
        if sol.status != SolveStatus::Optimal {
            return (sol, None);
        }
        let level = |m: Margin, v: Option<usize>| v.map_or(m.min(), |v| sol.x[v]);
        let cert = Certificate {
            gamma: self.gamma,
            degree: self.degree,
            margin: level(self.margin, self.margin_var),
            eps: level(self.eps, self.eps_var),
            vars: unpack(&sol.x[..self.n_decision]),
            solve: sol.clone(),
            quality: CertificateQuality {
                max_linear_violation: self.problem.max_linear_violation(&sol.x),
                min_psd_eigenvalue: self.problem.min_psd_eigenvalue(&sol.x),
            },
        };
        (sol, Some(cert))
    }
}

/// Result of a sampled quadratic-form post-check.
#[derive(Debug, Clone, Serialize)]
pub struct FormCheck {
    pub samples: usize,
    /// Largest `form + margin·‖h‖²` over normalized samples.
    pub max_excess: f64,
    pub slack: f64,
    pub ok: bool,
}

/// Absolute slack of the sampled post-checks.
pub const FORM_SLACK: f64 = 1e-7;

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Samples `(x, ω, υ)` with `x ∈ X` of polynomial channels and
/// `‖x‖² + |ω|² + |υ|² = 1`.
fn sample_triple(rng: &mut ChaCha8Rng, model: &DelayModel, nu: usize) -> (ZElement, DVector<f64>, DVector<f64>) {
    use rand::Rng;
    let deg = rng.gen_range(0..=4);
    let h = ZElement::random_x(rng, model.n(), &model.taus, deg);
    let w = normal_vec(rng, model.r());
    let u = normal_vec(rng, nu);
    let s = (h.norm().powi(2) + w.norm_squared() + u.norm_squared()).sqrt();
    (h.scale(1.0 / s), w / s, u / s)
}

fn form_check(
    samples: usize,
    seed: u64,
    model: &DelayModel,
    nu: usize,
    margin: f64,
    form: impl Fn(&ZElement, &DVector<f64>, &DVector<f64>) -> f64,
) -> FormCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let (h, w, u) = sample_triple(&mut rng, model, nu);
        worst = worst.max(form(&h, &w, &u) + margin * h.norm().powi(2));
    }
    FormCheck { samples, max_excess: worst, slack: FORM_SLACK, ok: worst <= FORM_SLACK }
}

/// Samples the controller dissipation inequality at a certificate.
pub fn check_controller(cert: &ControllerCertificate, model: &DelayModel, samples: usize, seed: u64) -> FormCheck {
    form_check(samples, seed, model, model.p(), cert.margin, |h, w, u| {
        controller_form(&cert.vars, model, cert.gamma, h, w, u)
    })
}

/// Samples the estimator dissipation inequality at a certificate.
pub fn check_estimator(cert: &EstimatorCertificate, model: &DelayModel, samples: usize, seed: u64) -> FormCheck {
    form_check(samples, seed, model, model.p1(), cert.margin, |e, w, u| {
        estimator_form(&cert.vars, model, cert.gamma, e, w, u)
    })
}

/// Bisection result plus the certificate handed on to gain reconstruction.
#[derive(Debug, Clone, Serialize)]
pub struct StageResult<V> {
    pub gamma_min: f64,
    pub gamma_lower: f64,
    pub evaluations: usize,
    pub certificate: Certificate<V>,
    /// Whether `certificate` comes from the re-solve above `gamma_min`.
    pub refined: bool,
    pub check: FormCheck,
    pub seconds: f64,
}

pub type ControllerStage = StageResult<ControllerVars>;
pub type EstimatorStage = StageResult<EstimatorVars>;

fn run_stage<V, L>(
    cfg: &SynthesisConfig,
    solver: &dyn Solver,
    margin: f64,
    build: impl Fn(f64, Margin, Margin) -> Result<(SynthesisSdp, L), SynthesisError>,
    unpack: impl Fn(&L, &[f64]) -> V,
    check: impl Fn(&Certificate<V>) -> FormCheck,
) -> Result<StageResult<V>, SynthesisError> {
    let t0 = Instant::now();
    let fixed = Margin::Fixed(margin);
    let eps = Margin::Fixed(cfg.eps);
    let b = bisect_gamma(
        |g| {
            let (sdp, lay) = build(g, eps, fixed)?;
            Ok(sdp.solve(solver, |x| unpack(&lay, x)).1)
        },
        cfg.gamma_lo,
        cfg.gamma_hi,
        cfg.gamma_tol,
    )?;
    let mut certificate = b.certificate;
    let mut refined = false;
    let mut extra = 0;
    if cfg.cert_slack > 0.0 {
        let g = b.gamma * (1.0 + cfg.cert_slack);
        let mut solve = |e: Margin, m: Margin| -> Result<Option<Certificate<V>>, SynthesisError> {
            extra += 1;
            let (sdp, lay) = build(g, e, m)?;
            Ok(sdp.solve(solver, |x| unpack(&lay, x)).1)
        };
        let steps = match cfg.refine {
            Refine::Balanced => {
                let (e, m) = Refine::Coercivity.levels(cfg.eps, margin, cfg.margin_cap);
                solve(e, m)?.map(|c| {
                    let e = Margin::Fixed((0.5 * c.eps).max(cfg.eps));
                    let (_, m) = Refine::Margin.levels(cfg.eps, margin, cfg.margin_cap);
                    (c, Some((e, m)))
                })
            }
            r => {
                let (e, m) = r.levels(cfg.eps, margin, cfg.margin_cap);
                solve(e, m)?.map(|c| (c, None))
            }
        };
        if let Some((c, next)) = steps {
            certificate = c;
            refined = true;
            if let Some((e, m)) = next {
                if let Some(c) = solve(e, m)? {
                    certificate = c;
                }
            }
        }
    }
    let chk = check(&certificate);
    Ok(StageResult {
        gamma_min: b.gamma,
        gamma_lower: b.lower,
        evaluations: b.evaluations + extra,
        certificate,
        refined,
        check: chk,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

pub fn synthesize_controller(
    model: &DelayModel,
    cfg: &SynthesisConfig,
    solver: &dyn Solver,
) -> Result<ControllerStage, SynthesisError> {
    run_stage(
        cfg,
        solver,
        cfg.eps1,
        |g, e, m| build_controller_sdp(model, g, cfg.degree, e, m),
        |l, x| l.unpack(x),
        |c| check_controller(c, model, cfg.check_samples, cfg.seed),
    )
}

pub fn synthesize_estimator(
    model: &DelayModel,
    cfg: &SynthesisConfig,
    solver: &dyn Solver,
) -> Result<EstimatorStage, SynthesisError> {
    run_stage(
        cfg,
        solver,
        cfg.eps2,
        |g, e, m| build_estimator_sdp(model, g, cfg.degree, e, m),
        |l, x| l.unpack(x),
        |c| check_estimator(c, model, cfg.check_samples, cfg.seed),
    )
}
