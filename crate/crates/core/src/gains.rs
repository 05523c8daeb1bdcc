//! Explicit controller and observer gains recovered from certificates by
//! composing the `H` and `Z` parametrizations with the inverse storage
//! operator.

use crate::delayop::{op_apply, InversionError, InversionReport, InvertConfig, NodalInverse, ZElement};
use crate::delayop::invert::{fit1, fit2, invert_unchecked};
use crate::poly::{Interval, PolyMatrix1, PolyMatrix2};
use crate::synthesis::{ControllerVars, EstimatorVars};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GainError {
    #[error(transparent)]
    Inversion(#[from] InversionError),
    #[error("gain identity residual {residual:.3e} exceeds tolerance {tol:.1e} (fit degree {degree})")]
    Quality { residual: f64, tol: f64, degree: usize },
    #[error("gains do not match the model: {0}")]
    Shape(String),
}

/// `u = K0 x(0) + Σ K1i x_i(−τ_i) + Σ ∫ K2i(s) x_i(s) ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerGains {
    pub k0: DMatrix<f64>,
    pub k1: Vec<DMatrix<f64>>,
    pub k2: Vec<PolyMatrix1>,
}

impl ControllerGains {
    pub fn zeros(m: usize, n: usize, taus: &[f64]) -> Self {
        Self {
            k0: DMatrix::zeros(m, n),
            k1: taus.iter().map(|_| DMatrix::zeros(m, n)).collect(),
            k2: taus.iter().map(|&t| PolyMatrix1::zeros(m, n, Interval::delay(t), 0)).collect(),
        }
    }

    pub fn apply(&self, z: &ZElement) -> DVector<f64> {
        let mut u = &self.k0 * &z.x;
        for i in 0..self.k1.len() {
            let t = z.phi[i].interval().lo;
            u += &self.k1[i] * z.phi[i].eval_unchecked(t).column(0);
            u += self.k2[i].try_mul(&z.phi[i]).unwrap().integrate().column(0);
        }
        u
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            k0: &self.k0 * a,
            k1: self.k1.iter().map(|m| m * a).collect(),
            k2: self.k2.iter().map(|p| p.scale(a)).collect(),
        }
    }
}

/// The observer injection `L`, mapping `y ∈ Z_{q,q,K}` to `Z_{n,n,K}`:
/// head `L1 y0 + Σ L2i y_i(−τ_i) + Σ ∫ L3i y_i`, channel `i`
/// `L4i y0 + Σ_j L5ij y_j(−τ_j) + L6i y_i + Σ_j ∫ L7ij(·,θ) y_j(θ) dθ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverGains {
    pub l1: DMatrix<f64>,
    pub l2: Vec<DMatrix<f64>>,
    pub l3: Vec<PolyMatrix1>,
    pub l4: Vec<PolyMatrix1>,
    pub l5: Vec<Vec<PolyMatrix1>>,
    pub l6: Vec<PolyMatrix1>,
    pub l7: Vec<Vec<PolyMatrix2>>,
}

impl ObserverGains {
    pub fn zeros(n: usize, q: usize, taus: &[f64]) -> Self {
        let ivs: Vec<Interval> = taus.iter().map(|&t| Interval::delay(t)).collect();
        Self {
            l1: DMatrix::zeros(n, q),
            l2: ivs.iter().map(|_| DMatrix::zeros(n, q)).collect(),
            l3: ivs.iter().map(|&iv| PolyMatrix1::zeros(n, q, iv, 0)).collect(),
            l4: ivs.iter().map(|&iv| PolyMatrix1::zeros(n, q, iv, 0)).collect(),
            l5: ivs.iter().map(|&iv| ivs.iter().map(|_| PolyMatrix1::zeros(n, q, iv, 0)).collect()).collect(),
            l6: ivs.iter().map(|&iv| PolyMatrix1::zeros(n, q, iv, 0)).collect(),
            l7: ivs
                .iter()
                .map(|&a| ivs.iter().map(|&b| PolyMatrix2::zeros(n, q, a, b, 0, 0)).collect())
                .collect(),
        }
    }

    pub fn apply(&self, y: &ZElement) -> ZElement {
        let k = self.l2.len();
        let ends: Vec<DMatrix<f64>> = (0..k).map(|j| y.phi[j].eval_unchecked(y.phi[j].interval().lo)).collect();
        let ym = DMatrix::from_column_slice(y.x.len(), 1, y.x.as_slice());
        let mut head = &self.l1 * &y.x;
        for j in 0..k {
            head += &self.l2[j] * ends[j].column(0);
            head += self.l3[j].try_mul(&y.phi[j]).unwrap().integrate().column(0);
        }
        let phi = (0..k)
            .map(|i| {
                let mut c = self.l4[i].right_mul(&ym);
                c = c.try_add(&self.l6[i].try_mul(&y.phi[i]).unwrap()).unwrap();
                for j in 0..k {
                    c = c.try_add(&self.l5[i][j].right_mul(&ends[j])).unwrap();
                    c = c.try_add(&self.l7[i][j].apply_theta(&y.phi[j]).unwrap()).unwrap();
                }
                c
            })
            .collect();
        ZElement { x: head, phi }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GainReport {
    pub inversion: InversionReport,
    pub fit_degree: usize,
    /// Sampled `sup ‖H z − K P z‖ / ‖z‖` (controller) or
    /// `sup ‖Z y − P L y‖ / ‖y‖` (observer).
    pub residual: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GainConfig {
    pub inversion: InvertConfig,
    /// Starting gain fit degree; `None` means the certificate degree plus 2.
    pub fit_degree: Option<usize>,
    pub max_fit_degree: usize,
    pub tol: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for GainConfig {
    fn default() -> Self {
        Self { inversion: InvertConfig::default(), fit_degree: None, max_fit_degree: 14, tol: 1e-4, samples: 100, seed: 11 }
    }
}

fn fit_degrees(cfg: &GainConfig, d: usize, grid: usize) -> impl Iterator<Item = usize> {
    let start = cfg.fit_degree.unwrap_or(d + 2);
    let top = cfg.max_fit_degree.max(start).min(grid.saturating_sub(1)).max(start);
    start..=top
}

/// Escalates the fit degree until the sampled residual meets `cfg.tol` and
/// returns the best fit seen, whether or not it met the tolerance.
fn escalate<G>(
    cfg: &GainConfig,
    d: usize,
    inversion: InversionReport,
    fit: impl Fn(usize) -> G,
    residual: impl Fn(&G, &mut ChaCha8Rng) -> f64,
) -> Result<(G, GainReport), GainError> {
    let mut best: Option<(G, GainReport)> = None;
    for deg in fit_degrees(cfg, d, inversion.grid_size) {
        let g = fit(deg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut worst: f64 = 0.0;
        for _ in 0..cfg.samples.max(1) {
            worst = worst.max(residual(&g, &mut rng));
        }
        let rep = GainReport { inversion: inversion.clone(), fit_degree: deg, residual: worst, samples: cfg.samples };
        let done = worst <= cfg.tol;
        if best.as_ref().map_or(true, |(_, b)| worst < b.residual) {
            best = Some((g, rep));
        }
        if done {
            break;
        }
    }
    Ok(best.expect("at least one fit degree"))
}

/// Fails with [`GainError::Quality`] unless the fit met `tol`.
pub fn check_quality<G>(fit: (G, GainReport), tol: f64) -> Result<(G, GainReport), GainError> {
    let rep = &fit.1;
    if !(rep.residual <= tol) {
        return Err(GainError::Quality { residual: rep.residual, tol, degree: rep.fit_degree });
    }
    Ok(fit)
}

/// `Σ_a w_a f(a)`.
fn quad_sum(w: &[f64], f: impl Fn(usize) -> DMatrix<f64>) -> DMatrix<f64> {
    let mut acc = f(0) * w[0];
    for a in 1..w.len() {
        acc += f(a) * w[a];
    }
    acc
}

/// Nodal samples of `K = H ∘ P⁻¹`.
fn controller_nodal(v: &ControllerVars, nod: &NodalInverse) -> (DMatrix<f64>, Vec<DMatrix<f64>>, Vec<Vec<DMatrix<f64>>>) {
    let k = nod.taus.len();
    let tk = nod.tau_k();
    let h2: Vec<Vec<DMatrix<f64>>> =
        (0..k).map(|i| nod.nodes[i].iter().map(|&s| v.h2[i].eval_unchecked(s)).collect()).collect();
    let mut k0 = &v.h0 * &nod.p;
    for i in 0..k {
        k0 += &v.h1[i] * nod.q[i][0].transpose() * tk;
        k0 += quad_sum(&nod.weights[i], |a| &h2[i][a] * nod.q[i][a].transpose()) * tk;
    }
    let k1 = (0..k).map(|i| &v.h1[i] * &nod.s[i][0] * tk).collect();
    let k2 = (0..k)
        .map(|j| {
            (0..nod.nodes[j].len())
                .map(|b| {
                    let mut m = &v.h0 * &nod.q[j][b] + &h2[j][b] * &nod.s[j][b] * tk;
                    for i in 0..k {
                        m += &v.h1[i] * &nod.r[i][j][0][b];
                        m += quad_sum(&nod.weights[i], |a| &h2[i][a] * &nod.r[i][j][a][b]);
                    }
                    m
                })
                .collect()
        })
        .collect();
    (k0, k1, k2)
}

/// Recovers `{K0, K1i, K2i}` with `K ∘ P1 = H`.
pub fn reconstruct_controller(v: &ControllerVars, cfg: &GainConfig) -> Result<(ControllerGains, GainReport), GainError> {
    check_quality(reconstruct_controller_best(v, cfg)?, cfg.tol)
}

/// Best-effort fit: like [`reconstruct_controller`] without the tolerance gate.
pub fn reconstruct_controller_best(v: &ControllerVars, cfg: &GainConfig) -> Result<(ControllerGains, GainReport), GainError> {
    let (_, nod, inv_rep) = invert_unchecked(&v.p1, &cfg.inversion)?;
    let (k0, k1, k2n) = controller_nodal(v, &nod);
    let d = v.p1.q[0].degree();
    let n = v.p1.n();
    let taus = v.p1.taus.clone();
    escalate(
        cfg,
        d,
        inv_rep,
        |deg| ControllerGains {
            k0: k0.clone(),
            k1: k1.clone(),
            k2: (0..taus.len()).map(|j| fit1(&nod.nodes[j], &nod.weights[j], &k2n[j], deg, Interval::delay(taus[j]))).collect(),
        },
        |g, rng| {
            let z = ZElement::random_x(rng, n, &taus, 3);
            let pz = op_apply(&v.p1, &z).unwrap();
            (v.apply_h(&z) - g.apply(&pz)).norm() / z.norm()
        },
    )
}

struct ObserverNodal {
    l1: DMatrix<f64>,
    l2: Vec<DMatrix<f64>>,
    l3: Vec<Vec<DMatrix<f64>>>,
    l4: Vec<Vec<DMatrix<f64>>>,
    l5: Vec<Vec<Vec<DMatrix<f64>>>>,
    l6: Vec<Vec<DMatrix<f64>>>,
    l7: Vec<Vec<Vec<Vec<DMatrix<f64>>>>>,
}

/// Nodal samples of `L = P⁻¹ ∘ Z`.
fn observer_nodal(v: &EstimatorVars, nod: &NodalInverse) -> ObserverNodal {
    let k = nod.taus.len();
    let tk = nod.tau_k();
    let nodes = &nod.nodes;
    let w = &nod.weights;
    let at1 = |p: &PolyMatrix1, i: usize| -> Vec<DMatrix<f64>> { nodes[i].iter().map(|&s| p.eval_unchecked(s)).collect() };
    let z3: Vec<_> = (0..k).map(|i| at1(&v.z3[i], i)).collect();
    let z4: Vec<_> = (0..k).map(|i| at1(&v.z4[i], i)).collect();
    let z5: Vec<Vec<_>> = (0..k).map(|i| (0..k).map(|j| at1(&v.z5[i][j], i)).collect()).collect();
    let z6: Vec<_> = (0..k).map(|i| at1(&v.z6[i], i)).collect();
    let z7: Vec<Vec<Vec<Vec<DMatrix<f64>>>>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    nodes[i].iter().map(|&s| nodes[j].iter().map(|&t| v.z7[i][j].eval_unchecked(s, t)).collect()).collect()
                })
                .collect()
        })
        .collect();
    let mut l1 = &nod.p * &v.z1;
    for i in 0..k {
        l1 += quad_sum(&w[i], |a| &nod.q[i][a] * &z4[i][a]) * tk;
    }
    let l2 = (0..k)
        .map(|j| {
            let mut m = &nod.p * &v.z2[j];
            for i in 0..k {
                m += quad_sum(&w[i], |a| &nod.q[i][a] * &z5[i][j][a]) * tk;
            }
            m
        })
        .collect();
    let l3 = (0..k)
        .map(|j| {
            (0..nodes[j].len())
                .map(|b| {
                    let mut m = &nod.p * &z3[j][b] + &nod.q[j][b] * &z6[j][b] * tk;
                    for i in 0..k {
                        m += quad_sum(&w[i], |a| &nod.q[i][a] * &z7[i][j][a][b]) * tk;
                    }
                    m
                })
                .collect()
        })
        .collect();
    let l4 = (0..k)
        .map(|i| {
            (0..nodes[i].len())
                .map(|a| {
                    let mut m = nod.q[i][a].transpose() * &v.z1 * tk + &nod.s[i][a] * &z4[i][a] * (tk * tk);
                    for kk in 0..k {
                        m += quad_sum(&w[kk], |b| &nod.r[i][kk][a][b] * &z4[kk][b]) * tk;
                    }
                    m
                })
                .collect()
        })
        .collect();
    let l5 = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    (0..nodes[i].len())
                        .map(|a| {
                            let mut m = nod.q[i][a].transpose() * &v.z2[j] * tk + &nod.s[i][a] * &z5[i][j][a] * (tk * tk);
                            for kk in 0..k {
                                m += quad_sum(&w[kk], |b| &nod.r[i][kk][a][b] * &z5[kk][j][b]) * tk;
                            }
                            m
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let l6 = (0..k)
        .map(|i| (0..nodes[i].len()).map(|a| &nod.s[i][a] * &z6[i][a] * (tk * tk)).collect())
        .collect();
    let l7 = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    (0..nodes[i].len())
                        .map(|a| {
                            (0..nodes[j].len())
                                .map(|b| {
                                    let mut m = nod.q[i][a].transpose() * &z3[j][b] * tk
                                        + &nod.s[i][a] * &z7[i][j][a][b] * (tk * tk)
                                        + &nod.r[i][j][a][b] * &z6[j][b] * tk;
                                    for kk in 0..k {
                                        m += quad_sum(&w[kk], |c| &nod.r[i][kk][a][c] * &z7[kk][j][c][b]) * tk;
                                    }
                                    m
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    ObserverNodal { l1, l2, l3, l4, l5, l6, l7 }
}

/// Recovers the observer gains with `P2 ∘ L = Z`.
pub fn reconstruct_observer(v: &EstimatorVars, cfg: &GainConfig) -> Result<(ObserverGains, GainReport), GainError> {
    check_quality(reconstruct_observer_best(v, cfg)?, cfg.tol)
}

/// Best-effort fit: like [`reconstruct_observer`] without the tolerance gate.
pub fn reconstruct_observer_best(v: &EstimatorVars, cfg: &GainConfig) -> Result<(ObserverGains, GainReport), GainError> {
    let (_, nod, inv_rep) = invert_unchecked(&v.p2, &cfg.inversion)?;
    let ln = observer_nodal(v, &nod);
    let d = v.p2.q[0].degree();
    let q = v.z1.ncols();
    let taus = v.p2.taus.clone();
    let k = taus.len();
    let ivs: Vec<Interval> = taus.iter().map(|&t| Interval::delay(t)).collect();
    let nodes = &nod.nodes;
    escalate(
        cfg,
        d,
        inv_rep,
        |deg| {
            let f1 = |vals: &Vec<DMatrix<f64>>, i: usize| fit1(&nodes[i], &nod.weights[i], vals, deg, ivs[i]);
            ObserverGains {
                l1: ln.l1.clone(),
                l2: ln.l2.clone(),
                l3: (0..k).map(|j| f1(&ln.l3[j], j)).collect(),
                l4: (0..k).map(|i| f1(&ln.l4[i], i)).collect(),
                l5: (0..k).map(|i| (0..k).map(|j| f1(&ln.l5[i][j], i)).collect()).collect(),
                l6: (0..k).map(|i| f1(&ln.l6[i], i)).collect(),
                l7: (0..k)
                    .map(|i| (0..k).map(|j| fit2(&nodes[i], &nod.weights[i], &nodes[j], &nod.weights[j], &ln.l7[i][j], deg, ivs[i], ivs[j])).collect())
                    .collect(),
            }
        },
        |g, rng| {
            let y = ZElement::random(rng, q, q, &taus, 3);
            let lhs = v.apply_z(&y);
            let rhs = op_apply(&v.p2, &g.apply(&y)).unwrap();
            lhs.try_sub(&rhs).unwrap().norm() / y.norm()
        },
    )
}

pub mod json {
    //! Serialized gain files: matrices row-major, polynomials as
    //! coefficient lists (ascending powers) with their interval.

    use super::*;
    use crate::model::{DelayModel, ModelError};

    pub const GAINS_SCHEMA: &str = "delayctl.gains/1";

    #[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
    pub struct Poly1Json {
        pub interval: [f64; 2],
        pub coeffs: Vec<Vec<Vec<f64>>>,
    }

    #[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
    pub struct Poly2Json {
        pub s_interval: [f64; 2],
        pub theta_interval: [f64; 2],
        /// `coeffs[a][b]` multiplies `s^a θ^b`.
        pub coeffs: Vec<Vec<Vec<Vec<f64>>>>,
    }

    pub fn mat_to(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
    }

    pub fn mat_from(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if rows.iter().any(|x| x.len() != c) {
            return Err("ragged matrix".into());
        }
        Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
    }

    fn iv(v: [f64; 2]) -> Result<Interval, String> {
        Interval::new(v[0], v[1]).map_err(|e| e.to_string())
    }

    impl From<&PolyMatrix1> for Poly1Json {
        fn from(p: &PolyMatrix1) -> Self {
            Self { interval: [p.interval().lo, p.interval().hi], coeffs: p.coeffs().iter().map(mat_to).collect() }
        }
    }

    impl Poly1Json {
        pub fn to_poly(&self) -> Result<PolyMatrix1, String> {
            let cs = self.coeffs.iter().map(|m| mat_from(m)).collect::<Result<Vec<_>, _>>()?;
            PolyMatrix1::new(iv(self.interval)?, cs).map_err(|e| e.to_string())
        }
    }

    impl From<&PolyMatrix2> for Poly2Json {
        fn from(p: &PolyMatrix2) -> Self {
            Self {
                s_interval: [p.s_interval().lo, p.s_interval().hi],
                theta_interval: [p.t_interval().lo, p.t_interval().hi],
                coeffs: p.coeffs().iter().map(|row| row.iter().map(mat_to).collect()).collect(),
            }
        }
    }

    impl Poly2Json {
        pub fn to_poly(&self) -> Result<PolyMatrix2, String> {
            let grid = self
                .coeffs
                .iter()
                .map(|row| row.iter().map(|m| mat_from(m)).collect::<Result<Vec<_>, _>>())
                .collect::<Result<Vec<_>, _>>()?;
            PolyMatrix2::new(iv(self.s_interval)?, iv(self.theta_interval)?, grid).map_err(|e| e.to_string())
        }
    }

    #[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    pub struct ControllerJson {
        pub k0: Vec<Vec<f64>>,
        pub k1: Vec<Vec<Vec<f64>>>,
        pub k2: Vec<Poly1Json>,
    }

    #[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    pub struct ObserverJson {
        pub l1: Vec<Vec<f64>>,
        pub l2: Vec<Vec<Vec<f64>>>,
        pub l3: Vec<Poly1Json>,
        pub l4: Vec<Poly1Json>,
        pub l5: Vec<Vec<Poly1Json>>,
        pub l6: Vec<Poly1Json>,
        pub l7: Vec<Vec<Poly2Json>>,
    }

    /// Synthesis levels the gains were obtained at.
    #[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
    #[serde(deny_unknown_fields)]
    pub struct Provenance {
        pub degree: Option<usize>,
        pub gamma1: Option<f64>,
        pub gamma2: Option<f64>,
        pub eps1: Option<f64>,
        pub eps2: Option<f64>,
        pub r: Option<f64>,
        pub composite: Option<f64>,
        pub controller_report: Option<GainReport>,
        pub observer_report: Option<GainReport>,
    }

    #[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
    #[serde(deny_unknown_fields)]
    pub struct GainsFile {
        pub schema: String,
        pub model: String,
        pub n: usize,
        pub m: usize,
        pub q: usize,
        pub taus: Vec<f64>,
        pub controller: ControllerJson,
        pub observer: ObserverJson,
        pub provenance: Provenance,
    }

    impl GainsFile {
        pub fn new(model: &DelayModel, k: &ControllerGains, l: &ObserverGains, provenance: Provenance) -> Self {
            Self {
                schema: GAINS_SCHEMA.into(),
                model: model.name.clone(),
                n: model.n(),
                m: model.m(),
                q: model.q(),
                taus: model.taus.clone(),
                controller: ControllerJson {
                    k0: mat_to(&k.k0),
                    k1: k.k1.iter().map(mat_to).collect(),
                    k2: k.k2.iter().map(Poly1Json::from).collect(),
                },
                observer: ObserverJson {
                    l1: mat_to(&l.l1),
                    l2: l.l2.iter().map(mat_to).collect(),
                    l3: l.l3.iter().map(Poly1Json::from).collect(),
                    l4: l.l4.iter().map(Poly1Json::from).collect(),
                    l5: l.l5.iter().map(|r| r.iter().map(Poly1Json::from).collect()).collect(),
                    l6: l.l6.iter().map(Poly1Json::from).collect(),
                    l7: l.l7.iter().map(|r| r.iter().map(Poly2Json::from).collect()).collect(),
                },
                provenance,
            }
        }

        pub fn to_json(&self) -> String {
            serde_json::to_string_pretty(self).expect("gains serialize")
        }

        pub fn from_json(s: &str) -> Result<Self, ModelError> {
            let f: Self = serde_json::from_str(s).map_err(|e| ModelError::Parse(e.to_string()))?;
            if f.schema != GAINS_SCHEMA {
                return Err(ModelError::Parse(format!("unsupported gains schema {:?}", f.schema)));
            }
            Ok(f)
        }

        /// Decodes the gains, checking every shape and interval against `model`.
        pub fn decode(&self, model: &DelayModel) -> Result<(ControllerGains, ObserverGains), GainError> {
            let bad = |s: String| GainError::Shape(s);
            let (n, m, q, k) = (model.n(), model.m(), model.q(), model.k());
            if self.n != n || self.m != m || self.q != q || self.taus != model.taus {
                return Err(bad(format!(
                    "gains for n={}, m={}, q={}, τ={:?}; model has n={n}, m={m}, q={q}, τ={:?}",
                    self.n, self.m, self.q, self.taus, model.taus
                )));
            }
            let ivs: Vec<Interval> = model.taus.iter().map(|&t| Interval::delay(t)).collect();
            let mat = |rows: &[Vec<f64>], r: usize, c: usize, key: &str| -> Result<DMatrix<f64>, GainError> {
                let x = mat_from(rows).map_err(|e| bad(format!("{key}: {e}")))?;
                if x.shape() != (r, c) {
                    return Err(bad(format!("{key} is {}×{}, expected {r}×{c}", x.nrows(), x.ncols())));
                }
                Ok(x)
            };
            let p1 = |p: &Poly1Json, r: usize, c: usize, ivl: Interval, key: &str| -> Result<PolyMatrix1, GainError> {
                let x = p.to_poly().map_err(|e| bad(format!("{key}: {e}")))?;
                if x.shape() != (r, c) || x.interval() != ivl {
                    return Err(bad(format!("{key} has the wrong shape or interval")));
                }
                Ok(x)
            };
            let p2 = |p: &Poly2Json, r: usize, c: usize, a: Interval, b: Interval, key: &str| -> Result<PolyMatrix2, GainError> {
                let x = p.to_poly().map_err(|e| bad(format!("{key}: {e}")))?;
                if x.shape() != (r, c) || x.s_interval() != a || x.t_interval() != b {
                    return Err(bad(format!("{key} has the wrong shape or interval")));
                }
                Ok(x)
            };
            let len = |got: usize, key: &str| -> Result<(), GainError> {
                if got != k {
                    return Err(bad(format!("{key} has {got} entries, expected {k}")));
                }
                Ok(())
            };
            let c = &self.controller;
            len(c.k1.len(), "k1")?;
            len(c.k2.len(), "k2")?;
            let kg = ControllerGains {
                k0: mat(&c.k0, m, n, "k0")?,
                k1: (0..k).map(|i| mat(&c.k1[i], m, n, &format!("k1[{i}]"))).collect::<Result<_, _>>()?,
                k2: (0..k).map(|i| p1(&c.k2[i], m, n, ivs[i], &format!("k2[{i}]"))).collect::<Result<_, _>>()?,
            };
            let o = &self.observer;
            for (got, key) in [(o.l2.len(), "l2"), (o.l3.len(), "l3"), (o.l4.len(), "l4"), (o.l5.len(), "l5"), (o.l6.len(), "l6"), (o.l7.len(), "l7")] {
                len(got, key)?;
            }
            for i in 0..k {
                len(o.l5[i].len(), &format!("l5[{i}]"))?;
                len(o.l7[i].len(), &format!("l7[{i}]"))?;
            }
            let lg = ObserverGains {
                l1: mat(&o.l1, n, q, "l1")?,
                l2: (0..k).map(|i| mat(&o.l2[i], n, q, &format!("l2[{i}]"))).collect::<Result<_, _>>()?,
                l3: (0..k).map(|i| p1(&o.l3[i], n, q, ivs[i], &format!("l3[{i}]"))).collect::<Result<_, _>>()?,
                l4: (0..k).map(|i| p1(&o.l4[i], n, q, ivs[i], &format!("l4[{i}]"))).collect::<Result<_, _>>()?,
                l5: (0..k)
                    .map(|i| (0..k).map(|j| p1(&o.l5[i][j], n, q, ivs[i], &format!("l5[{i}][{j}]"))).collect::<Result<_, _>>())
                    .collect::<Result<_, _>>()?,
                l6: (0..k).map(|i| p1(&o.l6[i], n, q, ivs[i], &format!("l6[{i}]"))).collect::<Result<_, _>>()?,
                l7: (0..k)
                    .map(|i| {
                        (0..k)
                            .map(|j| p2(&o.l7[i][j], n, q, ivs[i], ivs[j], &format!("l7[{i}][{j}]")))
                            .collect::<Result<_, _>>()
                    })
                    .collect::<Result<_, _>>()?,
            };
            Ok((kg, lg))
        }
    }
}
