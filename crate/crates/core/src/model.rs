//! Plant data and the TOML model specification format.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("{key}: expected {expected}, got {got}")]
    Shape { key: String, expected: String, got: String },
    #[error("{key}: {msg}")]
    Invalid { key: String, msg: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("unknown bundled example {0:?} (expected example1, example2 or example3)")]
    UnknownExample(String),
}

/// A delay system
/// `ẋ = A0 x + Σ A_i x(t−τ_i) + B1 w + B2 u`, `y = C2 x`,
/// `z = C10 x + Σ C1i x(t−τ_i) + D1 w`, `z_e = C30 e + Σ C3i e(t−τ_i) + D3 w`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayModel {
    pub name: String,
    pub a0: DMatrix<f64>,
    pub a: Vec<DMatrix<f64>>,
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub c10: DMatrix<f64>,
    pub c1: Vec<DMatrix<f64>>,
    pub c2: DMatrix<f64>,
    pub c30: DMatrix<f64>,
    pub c3: Vec<DMatrix<f64>>,
    pub d1: DMatrix<f64>,
    pub d3: DMatrix<f64>,
    pub taus: Vec<f64>,
}

impl DelayModel {
    pub fn n(&self) -> usize {
        self.a0.nrows()
    }
    /// Number of control inputs.
    pub fn m(&self) -> usize {
        self.b2.ncols()
    }
    /// Number of disturbance inputs.
    pub fn r(&self) -> usize {
        self.b1.ncols()
    }
    pub fn p(&self) -> usize {
        self.c10.nrows()
    }
    pub fn q(&self) -> usize {
        self.c2.nrows()
    }
    pub fn p1(&self) -> usize {
        self.c30.nrows()
    }
    pub fn k(&self) -> usize {
        self.taus.len()
    }
    pub fn tau_k(&self) -> f64 {
        *self.taus.last().unwrap()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n = self.n();
        let shape = |key: &str, m: &DMatrix<f64>, r: usize, c: usize| -> Result<(), ModelError> {
            if m.shape() != (r, c) {
                return Err(ModelError::Shape {
                    key: key.into(),
                    expected: format!("{r}×{c}"),
                    got: format!("{}×{}", m.nrows(), m.ncols()),
                });
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Invalid { key: key.into(), msg: "non-finite entry".into() });
            }
            Ok(())
        };
        if n == 0 {
            return Err(ModelError::Invalid { key: "A0".into(), msg: "empty state".into() });
        }
        shape("A0", &self.a0, n, n)?;
        if self.taus.is_empty() {
            return Err(ModelError::Invalid { key: "tau".into(), msg: "at least one delay is required".into() });
        }
        if self.taus.iter().any(|&t| !(t > 0.0) || !t.is_finite()) || self.taus.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::Invalid {
                key: "tau".into(),
                msg: "delays must be positive and strictly increasing".into(),
            });
        }
        let k = self.k();
        for (key, list) in [("Ai", &self.a), ("C1i", &self.c1), ("C3i", &self.c3)] {
            if list.len() != k {
                return Err(ModelError::Invalid {
                    key: key.into(),
                    msg: format!("expected {k} matrices (one per delay), got {}", list.len()),
                });
            }
        }
        for (i, a) in self.a.iter().enumerate() {
            shape(&format!("Ai[{i}]"), a, n, n)?;
        }
        let (r, m, p, q, p1) = (self.r(), self.m(), self.p(), self.q(), self.p1());
        shape("B1", &self.b1, n, r)?;
        shape("B2", &self.b2, n, m)?;
        shape("C10", &self.c10, p, n)?;
        for (i, c) in self.c1.iter().enumerate() {
            shape(&format!("C1i[{i}]"), c, p, n)?;
        }
        shape("C2", &self.c2, q, n)?;
        shape("C30", &self.c30, p1, n)?;
        for (i, c) in self.c3.iter().enumerate() {
            shape(&format!("C3i[{i}]"), c, p1, n)?;
        }
        shape("D1", &self.d1, p, r)?;
        shape("D3", &self.d3, p1, r)?;
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<(Self, ModelSpecFile), ModelError> {
        let spec: ModelSpecFile = toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        Ok((spec.to_model()?, spec))
    }

    pub fn from_file(path: &Path) -> Result<(Self, ModelSpecFile), ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        Self::from_toml_str(&text)
    }

    /// One of the bundled examples: `example1`, `example2`, `example3`.
    pub fn example(name: &str) -> Result<Self, ModelError> {
        Ok(Self::from_toml_str(bundled_spec(name)?)?.0)
    }
}

pub fn bundled_spec(name: &str) -> Result<&'static str, ModelError> {
    match name {
        "example1" => Ok(include_str!("../models/example1.toml")),
        "example2" => Ok(include_str!("../models/example2.toml")),
        "example3" => Ok(include_str!("../models/example3.toml")),
        other => Err(ModelError::UnknownExample(other.into())),
    }
}

pub const BUNDLED_EXAMPLES: [&str; 3] = ["example1", "example2", "example3"];

type Rows = Vec<Vec<f64>>;

/// On-disk model description. Omitted `C1i`, `C3i`, `D1`, `D3` are zero.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelSpecFile {
    #[serde(default)]
    pub name: Option<String>,
    pub tau: Vec<f64>,
    #[serde(rename = "A0")]
    pub a0: Rows,
    #[serde(rename = "Ai")]
    pub ai: Vec<Rows>,
    #[serde(rename = "B1")]
    pub b1: Rows,
    #[serde(rename = "B2")]
    pub b2: Rows,
    #[serde(rename = "C10")]
    pub c10: Rows,
    #[serde(rename = "C1i", default)]
    pub c1i: Option<Vec<Rows>>,
    #[serde(rename = "C2")]
    pub c2: Rows,
    #[serde(rename = "C30")]
    pub c30: Rows,
    #[serde(rename = "C3i", default)]
    pub c3i: Option<Vec<Rows>>,
    #[serde(rename = "D1", default)]
    pub d1: Option<Rows>,
    #[serde(rename = "D3", default)]
    pub d3: Option<Rows>,
    #[serde(default)]
    pub synthesis: Option<SynthesisOverrides>,
    #[serde(default)]
    pub sim: Option<SimOverrides>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SynthesisOverrides {
    pub degree: Option<usize>,
    pub gamma_lo: Option<f64>,
    pub gamma_hi: Option<f64>,
    pub gamma_tol: Option<f64>,
    pub eps: Option<f64>,
    pub eps1: Option<f64>,
    pub eps2: Option<f64>,
    pub eps3: Option<f64>,
    pub r_sweep: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimOverrides {
    pub dt: Option<f64>,
    pub points_per_channel: Option<usize>,
    pub horizon: Option<f64>,
    pub disturbance: Option<String>,
    pub x0: Option<Vec<f64>>,
}

fn matrix(key: &str, rows: &Rows) -> Result<DMatrix<f64>, ModelError> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if r == 0 || c == 0 {
        return Err(ModelError::Invalid { key: key.into(), msg: "empty matrix".into() });
    }
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != c) {
        return Err(ModelError::Shape {
            key: format!("{key} row {i}"),
            expected: format!("{c} columns"),
            got: format!("{}", row.len()),
        });
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl ModelSpecFile {
    pub fn to_model(&self) -> Result<DelayModel, ModelError> {
        let a0 = matrix("A0", &self.a0)?;
        let n = a0.nrows();
        let k = self.tau.len();
        let list = |key: &str, v: &Option<Vec<Rows>>, rows: usize| -> Result<Vec<DMatrix<f64>>, ModelError> {
            match v {
                Some(ms) => ms.iter().enumerate().map(|(i, m)| matrix(&format!("{key}[{i}]"), m)).collect(),
                None => Ok(vec![DMatrix::zeros(rows, n); k]),
            }
        };
        let a = self
            .ai
            .iter()
            .enumerate()
            .map(|(i, m)| matrix(&format!("Ai[{i}]"), m))
            .collect::<Result<Vec<_>, _>>()?;
        let b1 = matrix("B1", &self.b1)?;
        let c10 = matrix("C10", &self.c10)?;
        let c30 = matrix("C30", &self.c30)?;
        let (p, p1, r) = (c10.nrows(), c30.nrows(), b1.ncols());
        let model = DelayModel {
            name: self.name.clone().unwrap_or_else(|| "model".into()),
            a0,
            a,
            b2: matrix("B2", &self.b2)?,
            c1: list("C1i", &self.c1i, p)?,
            c2: matrix("C2", &self.c2)?,
            c3: list("C3i", &self.c3i, p1)?,
            d1: match &self.d1 {
                Some(m) => matrix("D1", m)?,
                None => DMatrix::zeros(p, r),
            },
            d3: match &self.d3 {
                Some(m) => matrix("D3", m)?,
                None => DMatrix::zeros(p1, r),
            },
            b1,
            c10,
            c30,
            taus: self.tau.clone(),
        };
        model.validate()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_examples_parse() {
        let m1 = DelayModel::example("example1").unwrap();
        assert_eq!((m1.n(), m1.m(), m1.r(), m1.p(), m1.q(), m1.p1(), m1.k()), (2, 1, 2, 1, 1, 1, 1));
        assert_eq!(m1.taus, vec![0.99]);
        assert_eq!(m1.a[0][(1, 1)], -0.9);
        let m2 = DelayModel::example("example2").unwrap();
        assert_eq!(m2.taus, vec![0.3]);
        assert_eq!(m2.d1, DMatrix::zeros(2, 2));
        let m3 = DelayModel::example("example3").unwrap();
        assert_eq!(m3.taus, vec![0.5, 1.0]);
        assert_eq!(m3.r(), 3);
    }

    #[test]
    fn wrong_shape_names_the_key() {
        let text = bundled_spec("example1").unwrap().replace("Ai = [[[-1, -1], [0, -0.9]]]", "Ai = [[[-1, -1, 0], [0, -0.9, 0]]]");
        let err = DelayModel::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("Ai[0]"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = format!("{}\nA3 = [[1]]\n", bundled_spec("example2").unwrap());
        assert!(matches!(DelayModel::from_toml_str(&text), Err(ModelError::Parse(_))));
    }

    #[test]
    fn decreasing_delays_rejected() {
        let text = bundled_spec("example3").unwrap().replace("tau = [0.5, 1.0]", "tau = [1.0, 0.5]");
        let err = DelayModel::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().starts_with("tau"), "{err}");
    }
}
