use super::SimError;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::str::FromStr;

/// Disturbance families. Every family drives all `r` input channels with
/// the same scalar profile except `Custom`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Disturbance {
    Zero,
    /// Zero before `onset`, a linear ramp of length `ramp`, then `amplitude`.
    StepLike { amplitude: f64, onset: f64, ramp: f64 },
    /// `amplitude · sin(π(t − center)) / (π(t − center))`.
    Sinc { amplitude: f64, center: f64 },
    /// Samples `w[k]` at times `t[k]`, linearly interpolated, zero outside.
    Custom { t: Vec<f64>, w: Vec<Vec<f64>> },
}

impl Default for Disturbance {
    fn default() -> Self {
        Self::sinc()
    }
}

impl Disturbance {
    pub fn step_like() -> Self {
        Self::StepLike { amplitude: 1.0, onset: 1.0, ramp: 0.1 }
    }

    pub fn sinc() -> Self {
        Self::Sinc { amplitude: 1.0, center: 5.0 }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::StepLike { .. } => "step",
            Self::Sinc { .. } => "sinc",
            Self::Custom { .. } => "custom",
        }
    }

    fn scalar(&self, t: f64) -> f64 {
        match *self {
            Self::Zero | Self::Custom { .. } => 0.0,
            Self::StepLike { amplitude, onset, ramp } => {
                if t < onset {
                    0.0
                } else if t < onset + ramp {
                    amplitude * (t - onset) / ramp
                } else {
                    amplitude
                }
            }
            Self::Sinc { amplitude, center } => {
                let x = PI * (t - center);
                if x.abs() < 1e-6 {
                    amplitude * (1.0 - x * x / 6.0)
                } else {
                    amplitude * x.sin() / x
                }
            }
        }
    }

    pub fn validate(&self, r: usize) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        match self {
            Self::StepLike { amplitude, onset, ramp } => {
                if !amplitude.is_finite() || !onset.is_finite() || !(*ramp >= 0.0) || !ramp.is_finite() {
                    return bad("step disturbance needs finite amplitude/onset and ramp ≥ 0".into());
                }
            }
            Self::Sinc { amplitude, center } => {
                if !amplitude.is_finite() || !center.is_finite() {
                    return bad("sinc disturbance needs finite amplitude and center".into());
                }
            }
            Self::Custom { t, w } => {
                if t.is_empty() || t.len() != w.len() {
                    return bad(format!("custom disturbance has {} times and {} samples", t.len(), w.len()));
                }
                if t.windows(2).any(|p| !(p[0] < p[1])) {
                    return bad("custom disturbance times must increase strictly".into());
                }
                if let Some(k) = w.iter().position(|row| row.len() != r) {
                    return bad(format!("custom disturbance sample {k} has {} entries, expected {r}", w[k].len()));
                }
            }
            Self::Zero => {}
        }
        Ok(())
    }

    /// `w(t)` for `r` input channels.
    pub fn eval(&self, t: f64, r: usize) -> DVector<f64> {
        match self {
            Self::Custom { t: ts, w } => {
                if t < ts[0] || t > *ts.last().unwrap() {
                    return DVector::zeros(r);
                }
                let k = ts.partition_point(|&s| s <= t).saturating_sub(1).min(ts.len() - 1);
                if k + 1 == ts.len() {
                    return DVector::from_column_slice(&w[k]);
                }
                let a = (t - ts[k]) / (ts[k + 1] - ts[k]);
                DVector::from_fn(r, |c, _| (1.0 - a) * w[k][c] + a * w[k + 1][c])
            }
            _ => DVector::from_element(r, self.scalar(t)),
        }
    }
}

/// Samples `kind` on `grid` for `r` input channels.
pub fn make_disturbance(kind: &Disturbance, r: usize, grid: &[f64]) -> Result<Vec<DVector<f64>>, SimError> {
    if grid.is_empty() {
        return Err(SimError::Config("empty time grid".into()));
    }
    kind.validate(r)?;
    Ok(grid.iter().map(|&t| kind.eval(t, r)).collect())
}

/// `zero`, `step`, `sinc`, optionally with `:key=value,...` parameters,
/// e.g. `step:onset=2,ramp=0.5` or `sinc:center=3`.
impl FromStr for Disturbance {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        let (kind, params) = s.split_once(':').unwrap_or((s, ""));
        let mut kv = Vec::new();
        for p in params.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| SimError::Config(format!("disturbance parameter {p:?} is not key=value")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| SimError::Config(format!("disturbance parameter {k}: {v:?} is not a number")))?;
            kv.push((k.trim().to_string(), v));
        }
        let mut take = |allowed: &[&str], d: &mut Vec<f64>| -> Result<(), SimError> {
            for (k, v) in kv.drain(..) {
                match allowed.iter().position(|a| *a == k) {
                    Some(i) => d[i] = v,
                    None => return Err(SimError::Config(format!("unknown {kind} parameter {k:?}"))),
                }
            }
            Ok(())
        };
        match kind.trim() {
            "zero" => {
                take(&[], &mut vec![])?;
                Ok(Self::Zero)
            }
            "step" | "step-like" => {
                let mut d = vec![1.0, 1.0, 0.1];
                take(&["amplitude", "onset", "ramp"], &mut d)?;
                Ok(Self::StepLike { amplitude: d[0], onset: d[1], ramp: d[2] })
            }
            "sinc" => {
                let mut d = vec![1.0, 5.0];
                take(&["amplitude", "center"], &mut d)?;
                Ok(Self::Sinc { amplitude: d[0], center: d[1] })
            }
            other => Err(SimError::Config(format!(
                "unknown disturbance kind {other:?} (expected zero, step or sinc)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_like_ramps_between_onset_and_full_amplitude() {
        let d = Disturbance::step_like();
        assert_eq!(d.eval(0.99, 1)[0], 0.0);
        assert!((d.eval(1.05, 1)[0] - 0.5).abs() < 1e-12);
        assert_eq!(d.eval(1.1, 1)[0], 1.0);
        assert_eq!(d.eval(30.0, 2), DVector::from_element(2, 1.0));
    }

    #[test]
    fn sinc_is_continuous_at_its_center() {
        let d = Disturbance::sinc();
        assert_eq!(d.eval(5.0, 1)[0], 1.0);
        for h in [1e-3, 1e-5, 1e-7, 1e-9] {
            let lim = 1.0 - (PI * h).powi(2) / 6.0;
            assert!((d.eval(5.0 + h, 1)[0] - lim).abs() < 1e-10, "h={h}");
        }
        assert!(d.eval(6.0, 1)[0].abs() < 1e-15);
    }

    #[test]
    fn parses_kinds_and_parameters() {
        assert_eq!("zero".parse::<Disturbance>().unwrap(), Disturbance::Zero);
        assert_eq!("step".parse::<Disturbance>().unwrap(), Disturbance::step_like());
        assert_eq!(
            "sinc:center=3,amplitude=2".parse::<Disturbance>().unwrap(),
            Disturbance::Sinc { amplitude: 2.0, center: 3.0 }
        );
        assert!("chirp".parse::<Disturbance>().is_err());
        assert!("step:width=2".parse::<Disturbance>().is_err());
    }

    #[test]
    fn custom_samples_interpolate_and_vanish_outside() {
        let d = Disturbance::Custom { t: vec![0.0, 1.0], w: vec![vec![0.0, 2.0], vec![1.0, 4.0]] };
        d.validate(2).unwrap();
        assert_eq!(d.eval(0.5, 2).as_slice(), &[0.5, 3.0]);
        assert_eq!(d.eval(1.0, 2).as_slice(), &[1.0, 4.0]);
        assert_eq!(d.eval(1.5, 2).as_slice(), &[0.0, 0.0]);
        assert!(d.validate(3).is_err());
        assert!(make_disturbance(&Disturbance::Zero, 1, &[]).is_err());
    }
}
