use super::{Disturbance, Resolved, SimError};
use crate::gains::json::Provenance;
use crate::model::DelayModel;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const TRACE_SCHEMA: &str = "delayctl.trace/1";

/// Sampled closed-loop signals. `x`, `u`, ... hold one vector per time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub model: String,
    pub dt: f64,
    pub horizon: f64,
    pub points_per_channel: usize,
    pub disturbance: Disturbance,
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub xhat: Vec<Vec<f64>>,
    /// `phi[t][i][k]` flattened per channel node, empty unless recorded.
    pub phi: Vec<Vec<Vec<f64>>>,
    pub u: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub ze: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    /// `|x̂(t) − x(t)|`.
    pub e_norm: Vec<f64>,
    /// Running trapezoid integrals of `|z|²`, `|z_e|²`, `|w|²`.
    pub int_z2: Vec<f64>,
    pub int_ze2: Vec<f64>,
    pub int_w2: Vec<f64>,
}

fn v(x: &DVector<f64>) -> Vec<f64> {
    x.iter().copied().collect()
}

fn sq(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum()
}

impl SimTrace {
    pub(super) fn new(model: &DelayModel, rc: &Resolved) -> Self {
        let cap = rc.steps + 1;
        Self {
            model: model.name.clone(),
            dt: rc.dt,
            horizon: rc.horizon,
            points_per_channel: rc.points_per_channel,
            disturbance: rc.disturbance.clone(),
            t: Vec::with_capacity(cap),
            x: Vec::with_capacity(cap),
            xhat: Vec::with_capacity(cap),
            phi: Vec::new(),
            u: Vec::with_capacity(cap),
            y: Vec::with_capacity(cap),
            z: Vec::with_capacity(cap),
            ze: Vec::with_capacity(cap),
            w: Vec::with_capacity(cap),
            e_norm: Vec::with_capacity(cap),
            int_z2: Vec::with_capacity(cap),
            int_ze2: Vec::with_capacity(cap),
            int_w2: Vec::with_capacity(cap),
        }
    }

    pub(super) fn push(
        &mut self,
        t: f64,
        x: &DVector<f64>,
        xhat: &DVector<f64>,
        phi: Option<&[Vec<DVector<f64>>]>,
        out: &super::Outputs,
        w: &DVector<f64>,
    ) {
        let acc = |series: &Vec<Vec<f64>>, ints: &Vec<f64>, new: &[f64], dt: f64| -> f64 {
            match (series.last(), ints.last()) {
                (Some(prev), Some(&i)) => i + 0.5 * dt * (sq(prev) + sq(new)),
                _ => 0.0,
            }
        };
        let (z, ze, wv) = (v(&out.z), v(&out.ze), v(w));
        let dt = self.dt;
        let iz = acc(&self.z, &self.int_z2, &z, dt);
        let ize = acc(&self.ze, &self.int_ze2, &ze, dt);
        let iw = acc(&self.w, &self.int_w2, &wv, dt);
        self.int_z2.push(iz);
        self.int_ze2.push(ize);
        self.int_w2.push(iw);
        self.t.push(t);
        self.x.push(v(x));
        self.xhat.push(v(xhat));
        if let Some(p) = phi {
            self.phi.push(p.iter().map(|c| c.iter().flat_map(|n| n.iter().copied()).collect()).collect());
        }
        self.u.push(v(&out.u));
        self.y.push(v(&out.y));
        self.z.push(z);
        self.ze.push(ze);
        self.w.push(wv);
        self.e_norm.push(out.e.norm());
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn state_norms(&self) -> Vec<f64> {
        self.x.iter().map(|x| sq(x).sqrt()).collect()
    }

    pub fn max_state_norm(&self) -> f64 {
        self.state_norms().into_iter().fold(0.0, f64::max)
    }

    pub fn max_e_norm(&self) -> f64 {
        self.e_norm.iter().copied().fold(0.0, f64::max)
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        let mut group = |name: &str, len: usize| {
            for c in 0..len {
                h.push(format!("{name}{}", c + 1));
            }
        };
        let first = |s: &Vec<Vec<f64>>| s.first().map_or(0, |r| r.len());
        group("x", first(&self.x));
        group("xhat", first(&self.xhat));
        group("u", first(&self.u));
        group("y", first(&self.y));
        group("z", first(&self.z));
        group("ze", first(&self.ze));
        group("w", first(&self.w));
        h.extend(["e_norm", "int_z2", "int_ze2", "int_w2"].map(String::from));
        if let Some(p) = self.phi.first() {
            let np = self.points_per_channel;
            for (i, ch) in p.iter().enumerate() {
                let n = ch.len() / np;
                for k in 0..np {
                    for c in 0..n {
                        h.push(format!("phi{}_node{}_{}", i + 1, k, c + 1));
                    }
                }
            }
        }
        h
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), SimError> {
        let io = |e: csv::Error| SimError::Io { path: path.display().to_string(), msg: e.to_string() };
        let mut wtr = csv::Writer::from_path(path).map_err(io)?;
        wtr.write_record(self.header()).map_err(io)?;
        for k in 0..self.len() {
            let mut row = vec![self.t[k]];
            for s in [&self.x, &self.xhat, &self.u, &self.y, &self.z, &self.ze, &self.w] {
                row.extend(&s[k]);
            }
            row.extend([self.e_norm[k], self.int_z2[k], self.int_ze2[k], self.int_w2[k]]);
            if let Some(p) = self.phi.get(k) {
                for ch in p {
                    row.extend(ch);
                }
            }
            wtr.write_record(row.iter().map(|x| format!("{x:e}"))).map_err(io)?;
        }
        wtr.flush().map_err(|e| SimError::Io { path: path.display().to_string(), msg: e.to_string() })
    }

    pub fn summary(&self, diverged: Option<String>) -> SimSummary {
        let last = |s: &Vec<f64>| s.last().copied().unwrap_or(0.0);
        SimSummary {
            model: self.model.clone(),
            disturbance: self.disturbance.label().into(),
            dt: self.dt,
            horizon: self.horizon,
            steps: self.len().saturating_sub(1),
            estimated_gain: estimate_l2_gain(self).ok(),
            int_z2: last(&self.int_z2),
            int_ze2: last(&self.int_ze2),
            int_w2: last(&self.int_w2),
            max_state_norm: self.max_state_norm(),
            final_state_norm: self.state_norms().last().copied().unwrap_or(0.0),
            max_e_norm: self.max_e_norm(),
            final_e_norm: last(&self.e_norm),
            diverged,
            files: Vec::new(),
        }
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write_files(
        &self,
        dir: &Path,
        stem: &str,
        provenance: Option<&Provenance>,
        diverged: Option<String>,
    ) -> Result<SimSummary, SimError> {
        let csv_path = dir.join(format!("{stem}.csv"));
        let json_path = dir.join(format!("{stem}.json"));
        self.write_csv(&csv_path)?;
        let mut summary = self.summary(diverged);
        summary.files = vec![path_str(&csv_path), path_str(&json_path)];
        let sidecar = Sidecar {
            schema: TRACE_SCHEMA,
            model: &self.model,
            dt: self.dt,
            horizon: self.horizon,
            points_per_channel: self.points_per_channel,
            disturbance: &self.disturbance,
            gains: provenance,
            summary: &summary,
        };
        let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        std::fs::write(&json_path, text)
            .map_err(|e| SimError::Io { path: path_str(&json_path), msg: e.to_string() })?;
        Ok(summary)
    }
}

fn path_str(p: &PathBuf) -> String {
    p.display().to_string()
}

#[derive(Serialize)]
struct Sidecar<'a> {
    schema: &'a str,
    model: &'a str,
    dt: f64,
    horizon: f64,
    points_per_channel: usize,
    disturbance: &'a Disturbance,
    gains: Option<&'a Provenance>,
    summary: &'a SimSummary,
}

/// One simulation as recorded in a run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub model: String,
    pub disturbance: String,
    pub dt: f64,
    pub horizon: f64,
    pub steps: usize,
    pub estimated_gain: Option<f64>,
    pub int_z2: f64,
    pub int_ze2: f64,
    pub int_w2: f64,
    pub max_state_norm: f64,
    pub final_state_norm: f64,
    pub max_e_norm: f64,
    pub final_e_norm: f64,
    pub diverged: Option<String>,
    pub files: Vec<String>,
}

/// `√(∫|z|² / ∫|w|²)` over the horizon.
pub fn estimate_l2_gain(trace: &SimTrace) -> Result<f64, SimError> {
    let iw = trace.int_w2.last().copied().unwrap_or(0.0);
    if !(iw > 0.0) {
        return Err(SimError::ZeroDisturbance);
    }
    Ok((trace.int_z2.last().copied().unwrap_or(0.0) / iw).sqrt())
}

/// `(q(h) − q(h/2)) / (q(h/2) − q(h/4))`; close to 2 for first order.
pub fn richardson_ratio(q_h: f64, q_h2: f64, q_h4: f64) -> f64 {
    (q_h - q_h2) / (q_h2 - q_h4)
}
