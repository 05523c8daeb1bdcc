//! Fixed-step simulation of the plant, the history estimator and the
//! estimator-based controller.
//!
//! The plant keeps its past in a ring buffer read at linearly interpolated
//! lags. Each estimated history `φ̂_i` lives on `N` uniform nodes
//! `s_k = −k τ_i/(N−1)`, transported by first-order upwind differences;
//! node 0 is reset to `x̂` after every step. Channel integrals use the
//! trapezoid rule on the nodes.

mod disturbance;
mod trace;

pub use disturbance::{make_disturbance, Disturbance};
pub use trace::{estimate_l2_gain, richardson_ratio, SimSummary, SimTrace, TRACE_SCHEMA};

use crate::gains::{ControllerGains, ObserverGains};
use crate::model::{DelayModel, SimOverrides};
use crate::quad::trapezoid;
use crate::poly::Interval;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation setup: {0}")]
    Config(String),
    #[error("gains do not match the model: {0}")]
    Shape(String),
    #[error("simulation diverged at step {step} (t = {t:.4}): {reason}")]
    Diverged { step: usize, t: f64, reason: String, partial: Box<SimTrace> },
    #[error("the disturbance has zero energy over the horizon")]
    ZeroDisturbance,
    #[error("cannot write {path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Time step; `None` means `0.5 · min τ_i / points_per_channel`, reduced
    /// further for stiff gains.
    pub dt: Option<f64>,
    /// Horizon; `None` means `40 τ_K`.
    pub horizon: Option<f64>,
    pub points_per_channel: usize,
    pub disturbance: Disturbance,
    /// Plant initial state, also used as its constant initial history.
    /// The estimator always starts at zero.
    pub x0: Option<Vec<f64>>,
    /// State norm treated as divergence.
    pub blowup: f64,
    /// Keep the channel grids in the trace.
    pub record_channels: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: None,
            horizon: None,
            points_per_channel: 20,
            disturbance: Disturbance::default(),
            x0: None,
            blowup: 1e8,
            record_channels: true,
        }
    }
}

impl SimConfig {
    pub fn apply_overrides(&mut self, o: &SimOverrides) -> Result<(), SimError> {
        if o.dt.is_some() {
            self.dt = o.dt;
        }
        if let Some(v) = o.points_per_channel {
            self.points_per_channel = v;
        }
        if o.horizon.is_some() {
            self.horizon = o.horizon;
        }
        if let Some(d) = &o.disturbance {
            self.disturbance = d.parse()?;
        }
        if o.x0.is_some() {
            self.x0 = o.x0.clone();
        }
        Ok(())
    }

    /// Fills defaults and checks the step bound.
    pub fn resolve(&self, model: &DelayModel) -> Result<Resolved, SimError> {
        self.resolve_with_rate(model, None)
    }

    /// Like [`resolve`](Self::resolve); a default `dt` is further limited to
    /// `1/rate`, with `rate` the spectral radius from [`stiffness_rate`].
    pub fn resolve_with_rate(&self, model: &DelayModel, rate: Option<f64>) -> Result<Resolved, SimError> {
        let np = self.points_per_channel;
        if np < 2 {
            return Err(SimError::Config(format!("points_per_channel must be at least 2, got {np}")));
        }
        let tmin = model.taus[0];
        let bound = tmin / np as f64;
        let dt = match (self.dt, rate) {
            (Some(dt), _) => dt,
            (None, Some(r)) if r > 0.0 && r.is_finite() => (0.5 * bound).min(1.0 / r),
            (None, _) => 0.5 * bound,
        };
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(SimError::Config(format!("dt must be positive, got {dt}")));
        }
        if dt > bound * (1.0 + 1e-12) {
            return Err(SimError::Config(format!(
                "dt = {dt} exceeds min τ / points_per_channel = {bound}"
            )));
        }
        let horizon = self.horizon.unwrap_or(40.0 * model.tau_k());
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(SimError::Config(format!("horizon must be positive, got {horizon}")));
        }
        let x0 = match &self.x0 {
            Some(v) if v.len() != model.n() => {
                return Err(SimError::Config(format!("x0 has {} entries, expected {}", v.len(), model.n())))
            }
            Some(v) => DVector::from_column_slice(v),
            None => DVector::zeros(model.n()),
        };
        self.disturbance.validate(model.r())?;
        Ok(Resolved {
            dt,
            horizon,
            steps: (horizon / dt).round() as usize,
            points_per_channel: np,
            disturbance: self.disturbance.clone(),
            x0,
            blowup: self.blowup,
            record_channels: self.record_channels,
        })
    }
}

/// A [`SimConfig`] with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub dt: f64,
    pub horizon: f64,
    pub steps: usize,
    pub points_per_channel: usize,
    pub disturbance: Disturbance,
    pub x0: DVector<f64>,
    pub blowup: f64,
    pub record_channels: bool,
}

/// Gains sampled on the channel nodes, integral weights folded in.
#[derive(Debug, Clone)]
pub struct NodalGains {
    pub k0: DMatrix<f64>,
    pub k1: Vec<DMatrix<f64>>,
    /// `K2i(s_k) w_k`.
    pub k2w: Vec<Vec<DMatrix<f64>>>,
    pub l1: DMatrix<f64>,
    pub l2: Vec<DMatrix<f64>>,
    pub l3w: Vec<Vec<DMatrix<f64>>>,
    pub l4: Vec<Vec<DMatrix<f64>>>,
    pub l5: Vec<Vec<Vec<DMatrix<f64>>>>,
    pub l6: Vec<Vec<DMatrix<f64>>>,
    /// `L7ij(s_k, θ_l) w^j_l`, indexed `[i][j][k][l]`.
    pub l7w: Vec<Vec<Vec<Vec<DMatrix<f64>>>>>,
    pub nodes: Vec<Vec<f64>>,
}

fn check_shape(what: &str, m: (usize, usize), want: (usize, usize)) -> Result<(), SimError> {
    if m != want {
        return Err(SimError::Shape(format!("{what} is {}×{}, expected {}×{}", m.0, m.1, want.0, want.1)));
    }
    Ok(())
}

impl NodalGains {
    pub fn new(model: &DelayModel, k: &ControllerGains, l: &ObserverGains, np: usize) -> Result<Self, SimError> {
        let (n, m, q, kk) = (model.n(), model.m(), model.q(), model.k());
        if k.k1.len() != kk || k.k2.len() != kk || l.l2.len() != kk || l.l5.len() != kk || l.l7.len() != kk {
            return Err(SimError::Shape(format!("gains are for a different number of delays than {kk}")));
        }
        check_shape("K0", k.k0.shape(), (m, n))?;
        check_shape("L1", l.l1.shape(), (n, q))?;
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for &t in &model.taus {
            let (mut x, mut w) = trapezoid(np, Interval::delay(t));
            x.reverse();
            w.reverse();
            x[0] = 0.0;
            nodes.push(x);
            weights.push(w);
        }
        let sampled = |p: &crate::poly::PolyMatrix1, i: usize, weighted: bool| -> Vec<DMatrix<f64>> {
            nodes[i]
                .iter()
                .zip(&weights[i])
                .map(|(&s, &w)| p.eval_unchecked(s) * if weighted { w } else { 1.0 })
                .collect()
        };
        for i in 0..kk {
            check_shape("K1i", k.k1[i].shape(), (m, n))?;
            check_shape("K2i", k.k2[i].shape(), (m, n))?;
            check_shape("L2i", l.l2[i].shape(), (n, q))?;
            for (name, p) in [("L3i", &l.l3[i]), ("L4i", &l.l4[i]), ("L6i", &l.l6[i])] {
                check_shape(name, p.shape(), (n, q))?;
            }
            for j in 0..kk {
                check_shape("L5ij", l.l5[i][j].shape(), (n, q))?;
                check_shape("L7ij", l.l7[i][j].shape(), (n, q))?;
            }
        }
        Ok(Self {
            k0: k.k0.clone(),
            k1: k.k1.clone(),
            k2w: (0..kk).map(|i| sampled(&k.k2[i], i, true)).collect(),
            l1: l.l1.clone(),
            l2: l.l2.clone(),
            l3w: (0..kk).map(|i| sampled(&l.l3[i], i, true)).collect(),
            l4: (0..kk).map(|i| sampled(&l.l4[i], i, false)).collect(),
            l5: (0..kk).map(|i| (0..kk).map(|j| sampled(&l.l5[i][j], i, false)).collect()).collect(),
            l6: (0..kk).map(|i| sampled(&l.l6[i], i, false)).collect(),
            l7w: (0..kk)
                .map(|i| {
                    (0..kk)
                        .map(|j| {
                            nodes[i]
                                .iter()
                                .map(|&s| {
                                    nodes[j]
                                        .iter()
                                        .zip(&weights[j])
                                        .map(|(&t, &w)| l.l7[i][j].eval_unchecked(s, t) * w)
                                        .collect()
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect(),
            nodes,
        })
    }
}

/// Past plant states at spacing `dt`; before the first sample the history
/// is the constant initial state.
#[derive(Debug, Clone)]
pub struct History {
    buf: VecDeque<DVector<f64>>,
    cap: usize,
    initial: DVector<f64>,
    dt: f64,
}

impl History {
    pub fn new(x0: &DVector<f64>, tau_k: f64, dt: f64) -> Self {
        let cap = (tau_k / dt).ceil() as usize + 2;
        let mut buf = VecDeque::with_capacity(cap);
        buf.push_back(x0.clone());
        Self { buf, cap, initial: x0.clone(), dt }
    }

    pub fn push(&mut self, x: DVector<f64>) {
        if self.buf.len() == self.cap {
            self.buf.pop_front();
        }
        self.buf.push_back(x);
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    /// `j`-th sample back from the newest; the constant history beyond.
    fn back(&self, j: usize, total: usize) -> &DVector<f64> {
        if j >= total {
            return &self.initial;
        }
        &self.buf[self.buf.len() - 1 - j]
    }

    /// `x(t − lag)` for the current time `t = step·dt`, `0 ≤ lag ≤ τ_K`.
    pub fn lagged(&self, lag: f64, step: usize) -> DVector<f64> {
        let total = step + 1;
        let pos = lag / self.dt;
        let j = pos.floor();
        let a = pos - j;
        let j = j as usize;
        if a < 1e-12 {
            return self.back(j, total).clone();
        }
        self.back(j, total) * (1.0 - a) + self.back(j + 1, total) * a
    }
}

/// Simulator state at `t = step · dt`.
#[derive(Debug, Clone)]
pub struct SimState {
    pub step: usize,
    pub x: DVector<f64>,
    pub xhat: DVector<f64>,
    /// `phi[i][k] = φ̂_i(s_k)`, node 0 at `s = 0`.
    pub phi: Vec<Vec<DVector<f64>>>,
    pub history: History,
}

impl SimState {
    pub fn new(model: &DelayModel, x0: &DVector<f64>, np: usize, dt: f64) -> Self {
        let n = model.n();
        Self {
            step: 0,
            x: x0.clone(),
            xhat: DVector::zeros(n),
            phi: vec![vec![DVector::zeros(n); np]; model.k()],
            history: History::new(x0, model.tau_k(), dt),
        }
    }

    /// Largest `|s=0 node − x̂|` over channels; zero after every step.
    pub fn boundary_defect(&self) -> f64 {
        self.phi.iter().map(|c| (&c[0] - &self.xhat).amax()).fold(0.0, f64::max)
    }
}

/// Signals at the current time, before the step is taken.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub ze: DVector<f64>,
    /// `x̂ − x`.
    pub e: DVector<f64>,
}

struct Derived {
    out: Outputs,
    xd: Vec<DVector<f64>>,
    b0: DVector<f64>,
    b: Vec<Vec<DVector<f64>>>,
}

fn derive(st: &SimState, model: &DelayModel, g: &NodalGains, w: &DVector<f64>) -> Derived {
    let kk = model.k();
    let last = g.nodes[0].len() - 1;
    let xd: Vec<DVector<f64>> = model.taus.iter().map(|&t| st.history.lagged(t, st.step)).collect();
    let y = &model.c2 * &st.x;
    let b0 = &model.c2 * &st.xhat - &y;
    let b: Vec<Vec<DVector<f64>>> = (0..kk)
        .map(|i| {
            g.nodes[i]
                .iter()
                .zip(&st.phi[i])
                .map(|(&s, p)| {
                    let past = if s == 0.0 { st.x.clone() } else { st.history.lagged(-s, st.step) };
                    &model.c2 * (p - past)
                })
                .collect()
        })
        .collect();
    let mut u = &g.k0 * &st.xhat;
    for i in 0..kk {
        u += &g.k1[i] * &st.phi[i][last];
        for (kw, p) in g.k2w[i].iter().zip(&st.phi[i]) {
            u += kw * p;
        }
    }
    let mut z = &model.c10 * &st.x + &model.d1 * w;
    let e = &st.xhat - &st.x;
    let mut ze = &model.c30 * &e + &model.d3 * w;
    for i in 0..kk {
        z += &model.c1[i] * &xd[i];
        ze += &model.c3[i] * (&st.phi[i][last] - &xd[i]);
    }
    Derived { out: Outputs { u, y, z, ze, e }, xd, b0, b }
}

/// Outputs at the current state without stepping.
pub fn outputs(st: &SimState, model: &DelayModel, g: &NodalGains, w: &DVector<f64>) -> Outputs {
    derive(st, model, g, w).out
}

/// One forward-difference step; returns the outputs at the old time.
pub fn step_closed_loop(
    st: &mut SimState,
    model: &DelayModel,
    g: &NodalGains,
    w: &DVector<f64>,
    dt: f64,
) -> Outputs {
    let kk = model.k();
    let d = derive(st, model, g, w);
    let last = g.nodes[0].len() - 1;
    let bu = &model.b2 * &d.out.u;

    let mut xdot = &model.a0 * &st.x + &model.b1 * w + &bu;
    let mut xhdot = &model.a0 * &st.xhat + &bu + &g.l1 * &d.b0;
    for i in 0..kk {
        xdot += &model.a[i] * &d.xd[i];
        xhdot += &model.a[i] * &st.phi[i][last] + &g.l2[i] * &d.b[i][last];
        for (lw, bi) in g.l3w[i].iter().zip(&d.b[i]) {
            xhdot += lw * bi;
        }
    }

    let mut new_phi = st.phi.clone();
    for i in 0..kk {
        let h = model.taus[i] / last as f64;
        for k in 1..=last {
            let mut rate = (&st.phi[i][k - 1] - &st.phi[i][k]) / h + &g.l4[i][k] * &d.b0 + &g.l6[i][k] * &d.b[i][k];
            for j in 0..kk {
                rate += &g.l5[i][j][k] * &d.b[j][last];
                for (lw, bj) in g.l7w[i][j][k].iter().zip(&d.b[j]) {
                    rate += lw * bj;
                }
            }
            new_phi[i][k] += rate * dt;
        }
    }

    st.x += xdot * dt;
    st.xhat += xhdot * dt;
    for c in new_phi.iter_mut() {
        c[0].copy_from(&st.xhat);
    }
    st.phi = new_phi;
    st.step += 1;
    st.history.push(st.x.clone());
    d.out
}

/// Spectral radius of the undelayed `(x, x̂)` dynamics
/// `ẋ = A0 x + B2 K0 x̂`, `x̂' = (A0 + B2 K0) x̂ + L1 C2 (x̂ − x)`.
/// Forward Euler needs `dt` below about `2/rate`.
pub fn stiffness_rate(model: &DelayModel, g: &NodalGains) -> f64 {
    let n = model.n();
    let bk = &model.b2 * &g.k0;
    let lc = &g.l1 * &model.c2;
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    j.view_mut((0, 0), (n, n)).copy_from(&model.a0);
    j.view_mut((0, n), (n, n)).copy_from(&bk);
    j.view_mut((n, 0), (n, n)).copy_from(&(-&lc));
    j.view_mut((n, n), (n, n)).copy_from(&(&model.a0 + &bk + &lc));
    j.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn finite_norm(v: &DVector<f64>) -> Option<f64> {
    let n = v.norm();
    n.is_finite().then_some(n)
}

/// Runs the closed loop over the horizon.
pub fn run_sim(
    model: &DelayModel,
    k: &ControllerGains,
    l: &ObserverGains,
    cfg: &SimConfig,
) -> Result<SimTrace, SimError> {
    let g = NodalGains::new(model, k, l, cfg.points_per_channel.max(2))?;
    let rc = cfg.resolve_with_rate(model, Some(stiffness_rate(model, &g)))?;
    let mut st = SimState::new(model, &rc.x0, rc.points_per_channel, rc.dt);
    let mut trace = SimTrace::new(model, &rc);
    for step in 0..=rc.steps {
        let t = step as f64 * rc.dt;
        let w = rc.disturbance.eval(t, model.r());
        let snapshot = (st.x.clone(), st.xhat.clone(), rc.record_channels.then(|| st.phi.clone()));
        let out = if step < rc.steps { step_closed_loop(&mut st, model, &g, &w, rc.dt) } else { outputs(&st, model, &g, &w) };
        trace.push(t, &snapshot.0, &snapshot.1, snapshot.2.as_deref(), &out, &w);
        let bad = match (finite_norm(&st.x), finite_norm(&st.xhat)) {
            (Some(a), Some(b)) if a.max(b) <= rc.blowup => None,
            (Some(a), Some(b)) => Some(format!("state norm {:.3e} exceeds {:.1e}", a.max(b), rc.blowup)),
            _ => Some("non-finite state".to_string()),
        };
        if let Some(reason) = bad {
            return Err(SimError::Diverged { step: st.step, t: st.step as f64 * rc.dt, reason, partial: Box::new(trace) });
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_interpolates_and_holds_initial_state() {
        let x0 = DVector::from_vec(vec![1.0]);
        let mut h = History::new(&x0, 1.0, 0.25);
        assert_eq!(h.capacity(), 6);
        for k in 1..=8 {
            h.push(DVector::from_vec(vec![1.0 + k as f64]));
        }
        // newest sample is x(2.0) = 9; x(t) = 1 + 4t on the stored window.
        assert!((h.lagged(0.0, 8)[0] - 9.0).abs() < 1e-12);
        assert!((h.lagged(0.6, 8)[0] - (1.0 + 4.0 * 1.4)).abs() < 1e-12);
        assert!((h.lagged(1.0, 8)[0] - 5.0).abs() < 1e-12);
        let h0 = History::new(&x0, 1.0, 0.25);
        assert_eq!(h0.lagged(0.7, 0)[0], 1.0);
    }

    #[test]
    fn resolve_applies_defaults_and_rejects_coarse_steps() {
        let m = DelayModel::example("example1").unwrap();
        let r = SimConfig::default().resolve(&m).unwrap();
        assert!((r.dt - 0.5 * 0.99 / 20.0).abs() < 1e-15);
        assert!((r.horizon - 39.6).abs() < 1e-12);
        let bad = SimConfig { dt: Some(0.06), ..Default::default() };
        assert!(bad.resolve(&m).is_err());
        let bad = SimConfig { points_per_channel: 1, ..Default::default() };
        assert!(bad.resolve(&m).is_err());
        let bad = SimConfig { x0: Some(vec![1.0]), ..Default::default() };
        assert!(bad.resolve(&m).is_err());
    }
}
