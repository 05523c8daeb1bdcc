//! Numerical inversion of PQRS operators by Nyström collocation on
//! Gauss–Lobatto grids, followed by a least-squares polynomial fit.

use super::{op_apply, DimError, PqrsOperator, ZElement};
use crate::poly::{Interval, PolyMatrix1, PolyMatrix2};
use crate::quad::gauss_lobatto;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct InvertConfig {
    /// Collocation points per channel.
    pub grid_size: usize,
    /// Starting fit degree; `None` means two above the operator's `Q` degree.
    pub fit_degree: Option<usize>,
    /// The fit degree is raised up to this bound until `tol` is met.
    pub max_fit_degree: usize,
    /// Largest accepted round-trip residual.
    pub tol: f64,
    pub max_condition: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for InvertConfig {
    fn default() -> Self {
        Self { grid_size: 40, fit_degree: None, max_fit_degree: 14, tol: 1e-4, max_condition: 1e12, samples: 20, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InversionError {
    #[error("discretized operator is ill-conditioned (condition number {0:.3e})")]
    IllConditioned(f64),
    #[error("inverse fit residual {residual:.3e} exceeds tolerance {tol:.1e} (fit degree {degree})")]
    Quality { residual: f64, tol: f64, degree: usize },
    #[error(transparent)]
    Dim(#[from] DimError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InversionReport {
    pub grid_size: usize,
    pub fit_degree: usize,
    pub condition: f64,
    /// `sup ‖op(inv(z)) − z‖ / ‖z‖` over the random samples.
    pub residual: f64,
}

/// The inverse sampled at the collocation nodes, in PQRS convention:
/// `P̂`, `Q̂_i(s_a)`, `Ŝ_i(s_a)`, `R̂_ij(s_a, θ_b)`.
#[derive(Debug, Clone)]
pub struct NodalInverse {
    pub taus: Vec<f64>,
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
    pub p: DMatrix<f64>,
    pub q: Vec<Vec<DMatrix<f64>>>,
    pub s: Vec<Vec<DMatrix<f64>>>,
    pub r: Vec<Vec<Vec<Vec<DMatrix<f64>>>>>,
}

impl NodalInverse {
    pub fn tau_k(&self) -> f64 {
        *self.taus.last().unwrap()
    }
}

/// Maps nodal values to the monomial coefficients of their discrete
/// `L2` projection with quadrature `weights`, so that the fit
/// reproduces integrals against low-degree functions even where the samples
/// have a sharp boundary layer. The least-squares problem is solved in the
/// variable `x = (s − c)/h` mapping the nodes onto `[−1, 1]`.
pub fn vandermonde_pinv(nodes: &[f64], weights: &[f64], degree: usize) -> DMatrix<f64> {
    let lo = nodes.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = nodes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (c, h) = (0.5 * (lo + hi), (0.5 * (hi - lo)).max(f64::MIN_POSITIVE));
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let v = DMatrix::from_fn(nodes.len(), degree + 1, |i, k| sw[i] * ((nodes[i] - c) / h).powi(k as i32));
    let mut px = v.pseudo_inverse(1e-14).expect("SVD converges");
    for (j, w) in sw.iter().enumerate() {
        px.column_mut(j).scale_mut(*w);
    }
    // ((s − c)/h)^j = Σ_k binom(j, k) (−c)^(j−k) s^k / h^j.
    let mut t = DMatrix::zeros(degree + 1, degree + 1);
    for j in 0..=degree {
        let mut b = 1.0;
        for k in 0..=j {
            t[(k, j)] = b * (-c).powi((j - k) as i32) / h.powi(j as i32);
            b = b * (j - k) as f64 / (k + 1) as f64;
        }
    }
    t * px
}

/// Least-squares fit of matrix samples `vals[a]` at `nodes`.
pub fn fit1(nodes: &[f64], weights: &[f64], vals: &[DMatrix<f64>], degree: usize, iv: Interval) -> PolyMatrix1 {
    let vp = vandermonde_pinv(nodes, weights, degree);
    let (r, c) = vals[0].shape();
    let coeffs = (0..=degree)
        .map(|k| {
            let mut m = DMatrix::zeros(r, c);
            for (a, v) in vals.iter().enumerate() {
                m += v * vp[(k, a)];
            }
            m
        })
        .collect();
    PolyMatrix1::new(iv, coeffs).expect("uniform shapes")
}

/// Tensor least-squares fit of `vals[a][b]` at `(s_nodes[a], t_nodes[b])`.
pub fn fit2(
    s_nodes: &[f64],
    s_weights: &[f64],
    t_nodes: &[f64],
    t_weights: &[f64],
    vals: &[Vec<DMatrix<f64>>],
    degree: usize,
    s_iv: Interval,
    t_iv: Interval,
) -> PolyMatrix2 {
    let vs = vandermonde_pinv(s_nodes, s_weights, degree);
    let vt = vandermonde_pinv(t_nodes, t_weights, degree);
    let (r, c) = vals[0][0].shape();
    // First contract θ, then s.
    let half: Vec<Vec<DMatrix<f64>>> = vals
        .iter()
        .map(|row| {
            (0..=degree)
                .map(|kb| {
                    let mut m = DMatrix::zeros(r, c);
                    for (b, v) in row.iter().enumerate() {
                        m += v * vt[(kb, b)];
                    }
                    m
                })
                .collect()
        })
        .collect();
    let grid = (0..=degree)
        .map(|ka| {
            (0..=degree)
                .map(|kb| {
                    let mut m = DMatrix::zeros(r, c);
                    for (a, row) in half.iter().enumerate() {
                        m += &row[kb] * vs[(ka, a)];
                    }
                    m
                })
                .collect()
        })
        .collect();
    PolyMatrix2::new(s_iv, t_iv, grid).expect("uniform shapes")
}

/// Samples the inverse at the collocation nodes.
pub fn nodal_inverse(op: &PqrsOperator, grid_size: usize, max_condition: f64) -> Result<(NodalInverse, f64), InversionError> {
    let (m, n, k) = (op.m(), op.n(), op.k());
    let tk = op.tau_k();
    let ng = grid_size.max(2);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for &t in &op.taus {
        let (x, w) = gauss_lobatto(ng, Interval::delay(t));
        nodes.push(x);
        weights.push(w);
    }
    let dim = m + k * ng * n;
    let off = |i: usize, a: usize| m + (i * ng + a) * n;
    let mut mat = DMatrix::zeros(dim, dim);
    mat.view_mut((0, 0), (m, m)).copy_from(&op.p);
    for i in 0..k {
        for a in 0..ng {
            let s = nodes[i][a];
            let qa = op.q[i].eval_unchecked(s);
            mat.view_mut((0, off(i, a)), (m, n)).copy_from(&(&qa * weights[i][a]));
            mat.view_mut((off(i, a), 0), (n, m)).copy_from(&(qa.transpose() * tk));
            let sa = op.s[i].eval_unchecked(s) * tk;
            let mut blk = mat.view_mut((off(i, a), off(i, a)), (n, n));
            blk += &sa;
            for j in 0..k {
                for b in 0..ng {
                    let rab = op.r[i][j].eval_unchecked(s, nodes[j][b]) * weights[j][b];
                    let mut blk = mat.view_mut((off(i, a), off(j, b)), (n, n));
                    blk += &rab;
                }
            }
        }
    }
    let sv = mat.clone().svd(false, false).singular_values;
    let cond = sv.max() / sv.min().max(f64::MIN_POSITIVE);
    if !(cond <= max_condition) {
        return Err(InversionError::IllConditioned(cond));
    }
    let inv = mat.try_inverse().ok_or(InversionError::IllConditioned(f64::INFINITY))?;
    let p = inv.view((0, 0), (m, m)).into_owned();
    let mut q = Vec::new();
    let mut s_hat = Vec::new();
    let mut r_hat = Vec::new();
    for i in 0..k {
        let mut qi = Vec::new();
        let mut si = Vec::new();
        for a in 0..ng {
            qi.push(inv.view((0, off(i, a)), (m, n)) / weights[i][a]);
            let sa = (op.s[i].eval_unchecked(nodes[i][a]) * tk)
                .try_inverse()
                .ok_or(InversionError::IllConditioned(f64::INFINITY))?;
            si.push(sa / tk);
        }
        let mut ri = Vec::new();
        for j in 0..k {
            let mut rij = Vec::new();
            for a in 0..ng {
                let mut row = Vec::new();
                for b in 0..ng {
                    let mut e = inv.view((off(i, a), off(j, b)), (n, n)).into_owned();
                    if i == j && a == b {
                        e -= &si[a] * tk;
                    }
                    row.push(e / weights[j][b]);
                }
                rij.push(row);
            }
            ri.push(rij);
        }
        q.push(qi);
        s_hat.push(si);
        r_hat.push(ri);
    }
    Ok((NodalInverse { taus: op.taus.clone(), nodes, weights, p, q, s: s_hat, r: r_hat }, cond))
}

/// Fits the nodal inverse with polynomials of `degree`.
pub fn fit_inverse(nod: &NodalInverse, degree: usize) -> PqrsOperator {
    let k = nod.taus.len();
    let ivs: Vec<Interval> = nod.taus.iter().map(|&t| Interval::delay(t)).collect();
    let q = (0..k).map(|i| fit1(&nod.nodes[i], &nod.weights[i], &nod.q[i], degree, ivs[i])).collect();
    let s = (0..k).map(|i| fit1(&nod.nodes[i], &nod.weights[i], &nod.s[i], degree, ivs[i])).collect();
    let r = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| fit2(&nod.nodes[i], &nod.weights[i], &nod.nodes[j], &nod.weights[j], &nod.r[i][j], degree, ivs[i], ivs[j]))
                .collect()
        })
        .collect();
    PqrsOperator { p: nod.p.clone(), q, s, r, taus: nod.taus.clone() }
}

/// `sup ‖op(inv(z)) − z‖ / ‖z‖` over seeded random polynomial samples.
pub fn roundtrip_residual(op: &PqrsOperator, inv: &PqrsOperator, samples: usize, seed: u64) -> Result<f64, DimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples.max(1) {
        let z = ZElement::random(&mut rng, op.m(), op.n(), &op.taus, 3);
        let back = op_apply(op, &op_apply(inv, &z)?)?;
        worst = worst.max(back.try_sub(&z)?.norm() / z.norm().max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

/// Samples and fits the inverse, keeping the best fit degree even when it
/// misses `cfg.tol`; only an ill-conditioned discretization is an error.
pub fn invert_unchecked(
    op: &PqrsOperator,
    cfg: &InvertConfig,
) -> Result<(PqrsOperator, NodalInverse, InversionReport), InversionError> {
    let (nod, cond) = nodal_inverse(op, cfg.grid_size, cfg.max_condition)?;
    let base = op.q.iter().map(|q| q.degree()).max().unwrap_or(0);
    let start = cfg.fit_degree.unwrap_or(base + 2);
    let top = cfg.max_fit_degree.max(start).min(cfg.grid_size.saturating_sub(1));
    let mut best: Option<(PqrsOperator, InversionReport)> = None;
    for degree in start..=top.max(start) {
        let inv = fit_inverse(&nod, degree);
        let residual = roundtrip_residual(op, &inv, cfg.samples, cfg.seed)?;
        let rep = InversionReport { grid_size: cfg.grid_size, fit_degree: degree, condition: cond, residual };
        let better = best.as_ref().map_or(true, |(_, b)| residual < b.residual);
        if better {
            best = Some((inv, rep));
        }
        if residual <= cfg.tol {
            break;
        }
    }
    let (inv, rep) = best.expect("at least one fit degree");
    Ok((inv, nod, rep))
}

/// Inverts `op`, returning the fitted operator, the nodal samples it was
/// fitted from, and a residual report.
pub fn invert_collocation(
    op: &PqrsOperator,
    cfg: &InvertConfig,
) -> Result<(PqrsOperator, NodalInverse, InversionReport), InversionError> {
    let (inv, nod, rep) = invert_unchecked(op, cfg)?;
    if !(rep.residual <= cfg.tol) {
        return Err(InversionError::Quality { residual: rep.residual, tol: cfg.tol, degree: rep.fit_degree });
    }
    Ok((inv, nod, rep))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_inverts_to_identity() {
        let taus = [0.5, 1.2];
        let id = PqrsOperator::identity(2, &taus);
        let (inv, _, rep) = invert_collocation(&id, &InvertConfig { fit_degree: Some(2), ..Default::default() }).unwrap();
        assert!(rep.residual <= 1e-10);
        assert!((&inv.p - DMatrix::<f64>::identity(2, 2)).amax() < 1e-10);
        assert!(inv.q.iter().all(|q| q.max_abs() < 1e-10));
    }

    #[test]
    fn scaled_identity_inverts_to_half() {
        let taus = [0.99];
        let op = PqrsOperator::scaled_identity(2.0, 2, &taus);
        let (inv, _, rep) = invert_collocation(&op, &InvertConfig { fit_degree: Some(2), ..Default::default() }).unwrap();
        assert!(rep.residual <= 1e-8);
        assert!((&inv.p - DMatrix::<f64>::identity(2, 2) * 0.5).amax() < 1e-10);
        let s = inv.s[0].eval(-0.3).unwrap();
        assert!((s - DMatrix::<f64>::identity(2, 2) * (0.5 / 0.99)).amax() < 1e-10);
    }

    #[test]
    fn singular_operator_is_rejected() {
        let op = PqrsOperator::zero(2, 2, &[1.0]);
        assert!(matches!(
            invert_collocation(&op, &InvertConfig::default()),
            Err(InversionError::IllConditioned(_))
        ));
    }
}
