//! End-to-end synthesis: controller and estimator bisection, gain
//! reconstruction, the coupling sweep and the composite bound.

use crate::gains::json::{GainsFile, Provenance};
use crate::gains::{
    check_quality, reconstruct_controller_best, reconstruct_observer_best, ControllerGains, GainConfig, GainReport,
    ObserverGains,
};
use crate::model::{DelayModel, SynthesisOverrides};
use crate::sdp::{SolverSettings, Solver};
use crate::sim::{run_sim, SimConfig, SimError, SimSummary};
use crate::synthesis::coupling::{check_coupling, composite_gain, r_grid, sweep_r, CouplingSweep};
use crate::synthesis::{
    synthesize_controller, synthesize_estimator, Certificate, ControllerStage, EstimatorStage, FormCheck,
    SynthesisConfig,
};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

pub const REPORT_SCHEMA: &str = "delayctl.report/1";

/// Allowed `form / (‖h‖² + ‖e‖²)` at an accepted coupling certificate.
pub const COUPLING_FORM_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub synthesis: SynthesisConfig,
    pub gains: GainConfig,
    pub solver: SolverSettings,
}

impl PipelineConfig {
    /// Applies the `[synthesis]` table of a model file.
    pub fn apply_overrides(&mut self, o: &SynthesisOverrides) {
        let s = &mut self.synthesis;
        if let Some(v) = o.degree {
            s.degree = v;
        }
        if o.gamma_lo.is_some() {
            s.gamma_lo = o.gamma_lo;
        }
        if o.gamma_hi.is_some() {
            s.gamma_hi = o.gamma_hi;
        }
        if let Some(v) = o.gamma_tol {
            s.gamma_tol = v;
        }
        if let Some(v) = o.eps {
            s.eps = v;
        }
        if let Some(v) = o.eps1 {
            s.eps1 = v;
        }
        if let Some(v) = o.eps2 {
            s.eps2 = v;
        }
        if let Some(v) = o.eps3 {
            s.eps3 = v;
        }
        if let Some(v) = o.r_sweep {
            s.r_points = v;
        }
    }
}

/// Outcome of one pipeline stage.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StageEntry {
    pub stage: String,
    pub ok: bool,
    pub error: Option<String>,
    pub seconds: f64,
}

/// Bisection summary of the controller or estimator stage.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BisectionSummary {
    pub gamma_min: f64,
    pub gamma_lower: f64,
    pub evaluations: usize,
    /// Level of the certificate handed to gain reconstruction.
    pub certificate_gamma: f64,
    pub certificate_margin: f64,
    pub refined: bool,
    pub solver_status: String,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub max_linear_violation: f64,
    pub min_psd_eigenvalue: f64,
    pub form_check_max_excess: f64,
    pub form_check_ok: bool,
}

impl BisectionSummary {
    fn new<V>(gamma_min: f64, gamma_lower: f64, evaluations: usize, refined: bool, c: &Certificate<V>, f: &FormCheck) -> Self {
        Self {
            gamma_min,
            gamma_lower,
            evaluations,
            certificate_gamma: c.gamma,
            certificate_margin: c.margin,
            refined,
            solver_status: c.solve.raw_status.clone(),
            primal_residual: c.solve.primal_residual,
            dual_residual: c.solve.dual_residual,
            max_linear_violation: c.quality.max_linear_violation,
            min_psd_eigenvalue: c.quality.min_psd_eigenvalue,
            form_check_max_excess: f.max_excess,
            form_check_ok: f.ok,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunReport {
    pub schema: String,
    pub model: String,
    pub config: PipelineConfig,
    pub solver: String,
    pub stages: Vec<StageEntry>,
    pub controller: Option<BisectionSummary>,
    pub estimator: Option<BisectionSummary>,
    pub controller_fit: Option<GainReport>,
    pub observer_fit: Option<GainReport>,
    pub coupling: Option<CouplingSweep>,
    /// Bisection minima.
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub r: Option<f64>,
    /// `√(γ1 (γ1 + r γ2))` at the certificate levels.
    pub composite: Option<f64>,
    pub simulations: Vec<SimSummary>,
    pub total_seconds: f64,
}

impl RunReport {
    pub fn new(model: &DelayModel, config: &PipelineConfig, solver: &str) -> Self {
        Self {
            schema: REPORT_SCHEMA.into(),
            model: model.name.clone(),
            config: config.clone(),
            solver: solver.into(),
            stages: Vec::new(),
            controller: None,
            estimator: None,
            controller_fit: None,
            observer_fit: None,
            coupling: None,
            gamma1: None,
            gamma2: None,
            r: None,
            composite: None,
            simulations: Vec::new(),
            total_seconds: 0.0,
        }
    }

    pub fn ok(&self) -> bool {
        self.stages.iter().all(|s| s.ok)
    }

    pub fn record<T, E: std::fmt::Display>(&mut self, stage: &str, seconds: f64, r: Result<T, E>) -> Option<T> {
        let (ok, error, v) = match r {
            Ok(v) => (true, None, Some(v)),
            Err(e) => (false, Some(e.to_string()), None),
        };
        self.stages.push(StageEntry { stage: stage.into(), ok, error, seconds });
        v
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Everything produced by [`run_synthesis`].
#[derive(Debug, Clone)]
pub struct SynthRun {
    pub report: RunReport,
    pub controller: Option<ControllerStage>,
    pub estimator: Option<EstimatorStage>,
    pub gains: Option<(ControllerGains, ObserverGains)>,
    pub gains_file: Option<GainsFile>,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

/// Runs every synthesis stage; failures are recorded in the report and
/// skip the stages that depend on them.
pub fn run_synthesis(model: &DelayModel, cfg: &PipelineConfig, solver: &dyn Solver) -> SynthRun {
    let t0 = Instant::now();
    let sc = &cfg.synthesis;
    let mut report = RunReport::new(model, cfg, solver.name());

    let ((ctrl, ct), (est, et)) = std::thread::scope(|s| {
        let c = s.spawn(|| timed(|| synthesize_controller(model, sc, solver)));
        let e = s.spawn(|| timed(|| synthesize_estimator(model, sc, solver)));
        (c.join().expect("controller stage panicked"), e.join().expect("estimator stage panicked"))
    });
    let ctrl = report.record("controller-bisection", ct, ctrl);
    let est = report.record("estimator-bisection", et, est);
    if let Some(c) = &ctrl {
        report.gamma1 = Some(c.gamma_min);
        report.controller =
            Some(BisectionSummary::new(c.gamma_min, c.gamma_lower, c.evaluations, c.refined, &c.certificate, &c.check));
        report.record("controller-form-check", 0.0, form_ok(&c.check));
    }
    if let Some(e) = &est {
        report.gamma2 = Some(e.gamma_min);
        report.estimator =
            Some(BisectionSummary::new(e.gamma_min, e.gamma_lower, e.evaluations, e.refined, &e.certificate, &e.check));
        report.record("estimator-form-check", 0.0, form_ok(&e.check));
    }

    // A fit that misses the tolerance fails its stage but is still handed
    // to the coupling sweep, so its effect stays visible in the report.
    let k = ctrl.as_ref().and_then(|c| {
        let (r, t) = timed(|| reconstruct_controller_best(&c.certificate.vars, &cfg.gains));
        report.record("controller-gains", t, r)
    });
    if let Some(k) = &k {
        report.record("controller-gain-identity", 0.0, check_quality(((), k.1.clone()), cfg.gains.tol));
    }
    let l = est.as_ref().and_then(|e| {
        let (r, t) = timed(|| reconstruct_observer_best(&e.certificate.vars, &cfg.gains));
        report.record("observer-gains", t, r)
    });
    if let Some(l) = &l {
        report.record("observer-gain-identity", 0.0, check_quality(((), l.1.clone()), cfg.gains.tol));
    }
    report.controller_fit = k.as_ref().map(|x| x.1.clone());
    report.observer_fit = l.as_ref().map(|x| x.1.clone());

    let mut gains = None;
    let mut gains_file = None;
    if let (Some(c), Some(e), Some((kg, kr)), Some((lg, lr))) = (&ctrl, &est, &k, &l) {
        let (eps1, eps2) = (c.certificate.margin, e.certificate.margin);
        let grid = r_grid(sc.r_min, sc.r_max, sc.r_points);
        let (sw, t) = timed(|| sweep_r(kg, model, eps1, eps2, sc.eps3, sc.degree, &grid, solver));
        let sw = report.record("coupling-sweep", t, sw);
        let (g1, g2) = (c.certificate.gamma, e.certificate.gamma);
        let mut prov = Provenance {
            degree: Some(sc.degree),
            gamma1: Some(g1),
            gamma2: Some(g2),
            eps1: Some(eps1),
            eps2: Some(eps2),
            r: None,
            composite: None,
            controller_report: Some(kr.clone()),
            observer_report: Some(lr.clone()),
        };
        if let Some(sw) = sw {
            let found = sw.r.ok_or_else(|| {
                format!("coupling inequality infeasible on r ∈ [{:.1e}, {:.1e}]", sc.r_min, sc.r_max)
            });
            if let Some(r) = report.record("coupling", 0.0, found) {
                report.r = Some(r);
                let worst = check_coupling(kg, model, eps1, eps2, r, 100, 7);
                let checked = if worst <= COUPLING_FORM_TOL {
                    Ok(())
                } else {
                    Err(format!("sampled coupling form reaches {worst:.3e} (tolerance {COUPLING_FORM_TOL:.0e})"))
                };
                report.record("coupling-form-check", 0.0, checked);
                report.composite = composite_gain(g1, g2, r).ok();
                prov.r = report.r;
                prov.composite = report.composite;
            }
            report.coupling = Some(sw);
        }
        gains_file = Some(GainsFile::new(model, kg, lg, prov));
        gains = Some((kg.clone(), lg.clone()));
    }

    report.total_seconds = t0.elapsed().as_secs_f64();
    SynthRun { report, controller: ctrl, estimator: est, gains, gains_file }
}

fn form_ok(f: &FormCheck) -> Result<(), String> {
    if f.ok {
        Ok(())
    } else {
        Err(format!("sampled dissipation form exceeds zero by {:.3e} (slack {:.1e})", f.max_excess, f.slack))
    }
}

/// Runs one simulation and writes `<stem>.csv` and `<stem>.json` into
/// `dir`. A diverged run still writes its partial trace; the summary then
/// carries the reason and the error is returned alongside it.
pub fn simulate_to_files(
    model: &DelayModel,
    k: &ControllerGains,
    l: &ObserverGains,
    cfg: &SimConfig,
    dir: &Path,
    stem: &str,
    provenance: Option<&Provenance>,
) -> (Option<SimSummary>, Result<(), SimError>) {
    match run_sim(model, k, l, cfg) {
        Ok(trace) => match trace.write_files(dir, stem, provenance, None) {
            Ok(s) => (Some(s), Ok(())),
            Err(e) => (None, Err(e)),
        },
        Err(SimError::Diverged { step, t, reason, partial }) => {
            let s = partial.write_files(dir, stem, provenance, Some(reason.clone())).ok();
            (s, Err(SimError::Diverged { step, t, reason, partial }))
        }
        Err(e) => (None, Err(e)),
    }
}
