//! Dense matrix-valued polynomials in the monomial basis over bounded
//! intervals, in one variable (`PolyMatrix1`) or two (`PolyMatrix2`).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::ops::{Add, Neg, Sub};

/// Slack allowed when evaluating just outside an interval endpoint.
pub const DOMAIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolyError {
    #[error("evaluation point {s} outside interval [{lo}, {hi}]")]
    Domain { s: f64, lo: f64, hi: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("interval mismatch: [{0}, {1}] vs [{2}, {3}]")]
    IntervalMismatch(f64, f64, f64, f64),
    #[error("invalid interval [{0}, {1}]")]
    BadInterval(f64, f64),
}

/// A closed interval `[lo, hi]`. Every delay interval is `[-tau, 0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, PolyError> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(PolyError::BadInterval(lo, hi));
        }
        Ok(Self { lo, hi })
    }

    /// The delay interval `[-tau, 0]`.
    pub fn delay(tau: f64) -> Self {
        assert!(tau > 0.0, "delay must be positive, got {tau}");
        Self { lo: -tau, hi: 0.0 }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, s: f64) -> bool {
        s >= self.lo - DOMAIN_TOL && s <= self.hi + DOMAIN_TOL
    }

    fn check(&self, s: f64) -> Result<(), PolyError> {
        if self.contains(s) {
            Ok(())
        } else {
            Err(PolyError::Domain { s, lo: self.lo, hi: self.hi })
        }
    }

    fn same(&self, other: &Interval) -> Result<(), PolyError> {
        if self == other {
            Ok(())
        } else {
            Err(PolyError::IntervalMismatch(self.lo, self.hi, other.lo, other.hi))
        }
    }

    /// `∫_lo^hi s^k ds`.
    pub fn monomial_integral(&self, k: usize) -> f64 {
        let p = (k + 1) as i32;
        (self.hi.powi(p) - self.lo.powi(p)) / (k + 1) as f64
    }
}

/// The monomial basis `{1, s, ..., s^d}` on an interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonomialBasis {
    pub degree: usize,
    pub interval: Interval,
}

impl MonomialBasis {
    pub fn new(degree: usize, interval: Interval) -> Self {
        Self { degree, interval }
    }

    pub fn len(&self) -> usize {
        self.degree + 1
    }

    pub fn eval(&self, s: f64) -> DVector<f64> {
        let mut v = DVector::zeros(self.degree + 1);
        let mut p = 1.0;
        for k in 0..=self.degree {
            v[k] = p;
            p *= s;
        }
        v
    }
}

/// `Σ_k coeffs[k] · s^k`, every coefficient of shape `rows × cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMatrix1 {
    rows: usize,
    cols: usize,
    interval: Interval,
    coeffs: Vec<DMatrix<f64>>,
}

impl PolyMatrix1 {
    pub fn new(interval: Interval, coeffs: Vec<DMatrix<f64>>) -> Result<Self, PolyError> {
        let first = coeffs
            .first()
            .ok_or_else(|| PolyError::Shape("polynomial needs at least one coefficient".into()))?;
        let (rows, cols) = first.shape();
        if let Some(bad) = coeffs.iter().find(|c| c.shape() != (rows, cols)) {
            return Err(PolyError::Shape(format!(
                "coefficient {:?} differs from {:?}",
                bad.shape(),
                (rows, cols)
            )));
        }
        Ok(Self { rows, cols, interval, coeffs })
    }

    pub fn zeros(rows: usize, cols: usize, interval: Interval, degree: usize) -> Self {
        Self { rows, cols, interval, coeffs: vec![DMatrix::zeros(rows, cols); degree + 1] }
    }

    pub fn constant(c: DMatrix<f64>, interval: Interval) -> Self {
        Self { rows: c.nrows(), cols: c.ncols(), interval, coeffs: vec![c] }
    }

    /// `c · s^k`.
    pub fn monomial(c: DMatrix<f64>, k: usize, interval: Interval) -> Self {
        let mut p = Self::zeros(c.nrows(), c.ncols(), interval, k);
        p.coeffs[k] = c;
        p
    }

    /// Scalar (1×1) polynomial from plain coefficients.
    pub fn scalar(coeffs: &[f64], interval: Interval) -> Self {
        let coeffs = if coeffs.is_empty() { vec![0.0] } else { coeffs.to_vec() };
        Self {
            rows: 1,
            cols: 1,
            interval,
            coeffs: coeffs.iter().map(|&c| DMatrix::from_element(1, 1, c)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
    pub fn interval(&self) -> Interval {
        self.interval
    }
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }
    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }
    pub fn coeffs_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.coeffs
    }
    pub fn coeff(&self, k: usize) -> Option<&DMatrix<f64>> {
        self.coeffs.get(k)
    }

    /// Same polynomial with storage padded (or truncated, if the dropped
    /// coefficients are zero) to exactly `degree + 1` coefficients.
    pub fn with_degree(&self, degree: usize) -> Result<Self, PolyError> {
        let mut coeffs = self.coeffs.clone();
        if coeffs.len() > degree + 1 {
            if coeffs[degree + 1..].iter().any(|c| c.iter().any(|&v| v != 0.0)) {
                return Err(PolyError::Shape(format!(
                    "cannot represent degree {} polynomial at degree {degree}",
                    self.degree()
                )));
            }
            coeffs.truncate(degree + 1);
        } else {
            coeffs.resize(degree + 1, DMatrix::zeros(self.rows, self.cols));
        }
        Ok(Self { coeffs, ..self.clone() })
    }

    /// Highest index with a nonzero coefficient (0 for the zero polynomial).
    pub fn effective_degree(&self) -> usize {
        self.coeffs
            .iter()
            .rposition(|c| c.iter().any(|&v| v != 0.0))
            .unwrap_or(0)
    }

    pub fn eval(&self, s: f64) -> Result<DMatrix<f64>, PolyError> {
        self.interval.check(s)?;
        Ok(self.eval_unchecked(s))
    }

    /// Horner evaluation without the domain check.
    pub fn eval_unchecked(&self, s: f64) -> DMatrix<f64> {
        let mut acc = self.coeffs[self.coeffs.len() - 1].clone();
        for c in self.coeffs.iter().rev().skip(1) {
            acc *= s;
            acc += c;
        }
        acc
    }

    pub fn diff(&self) -> Self {
        if self.coeffs.len() == 1 {
            return Self::zeros(self.rows, self.cols, self.interval, 0);
        }
        let coeffs = self.coeffs[1..]
            .iter()
            .enumerate()
            .map(|(k, c)| c * (k + 1) as f64)
            .collect();
        Self { coeffs, ..self.clone() }
    }

    /// Exact `∫ p(s) ds` over the polynomial's interval.
    pub fn integrate(&self) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.rows, self.cols);
        for (k, c) in self.coeffs.iter().enumerate() {
            acc += c * self.interval.monomial_integral(k);
        }
        acc
    }

    pub fn transpose(&self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            interval: self.interval,
            coeffs: self.coeffs.iter().map(|c| c.transpose()).collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| c * a).collect(), ..self.clone() }
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, PolyError> {
        self.combine(other, 1.0)
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, PolyError> {
        self.combine(other, -1.0)
    }

    fn combine(&self, other: &Self, sign: f64) -> Result<Self, PolyError> {
        self.interval.same(&other.interval)?;
        if self.shape() != other.shape() {
            return Err(PolyError::Shape(format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        let n = self.coeffs.len().max(other.coeffs.len());
        let zero = DMatrix::zeros(self.rows, self.cols);
        let coeffs = (0..n)
            .map(|k| {
                let a = self.coeffs.get(k).unwrap_or(&zero);
                let b = other.coeffs.get(k).unwrap_or(&zero);
                if sign > 0.0 {
                    a + b
                } else {
                    a - b
                }
            })
            .collect();
        Ok(Self { coeffs, ..self.clone() })
    }

    /// Polynomial product; degrees add.
    pub fn try_mul(&self, other: &Self) -> Result<Self, PolyError> {
        self.interval.same(&other.interval)?;
        if self.cols != other.rows {
            return Err(PolyError::Shape(format!(
                "cannot multiply {:?} by {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols, self.interval, self.degree() + other.degree());
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in other.coeffs.iter().enumerate() {
                out.coeffs[i + j] += a * b;
            }
        }
        Ok(out)
    }

    /// `M · p(s)`.
    pub fn left_mul(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(m.ncols(), self.rows, "left_mul shape mismatch");
        Self {
            rows: m.nrows(),
            cols: self.cols,
            interval: self.interval,
            coeffs: self.coeffs.iter().map(|c| m * c).collect(),
        }
    }

    /// `p(s) · M`.
    pub fn right_mul(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), self.cols, "right_mul shape mismatch");
        Self {
            rows: self.rows,
            cols: m.ncols(),
            interval: self.interval,
            coeffs: self.coeffs.iter().map(|c| c * m).collect(),
        }
    }

    /// Largest absolute coefficient entry.
    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().flat_map(|c| c.iter()).fold(0.0, |m, &v| m.max(v.abs()))
    }
}

impl<'a> Add for &'a PolyMatrix1 {
    type Output = PolyMatrix1;
    fn add(self, rhs: Self) -> PolyMatrix1 {
        self.try_add(rhs).expect("polynomial add")
    }
}

impl<'a> Sub for &'a PolyMatrix1 {
    type Output = PolyMatrix1;
    fn sub(self, rhs: Self) -> PolyMatrix1 {
        self.try_sub(rhs).expect("polynomial sub")
    }
}

impl Neg for &PolyMatrix1 {
    type Output = PolyMatrix1;
    fn neg(self) -> PolyMatrix1 {
        self.scale(-1.0)
    }
}

/// Which variable of a two-variable polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    S,
    Theta,
}

/// `Σ_{a,b} coeffs[a][b] · s^a θ^b` on `s_interval × θ_interval`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMatrix2 {
    rows: usize,
    cols: usize,
    s_interval: Interval,
    t_interval: Interval,
    coeffs: Vec<Vec<DMatrix<f64>>>,
}

impl PolyMatrix2 {
    pub fn new(
        s_interval: Interval,
        t_interval: Interval,
        coeffs: Vec<Vec<DMatrix<f64>>>,
    ) -> Result<Self, PolyError> {
        let first = coeffs
            .first()
            .and_then(|row| row.first())
            .ok_or_else(|| PolyError::Shape("kernel needs at least one coefficient".into()))?;
        let (rows, cols) = first.shape();
        let dt = coeffs[0].len();
        for row in &coeffs {
            if row.len() != dt {
                return Err(PolyError::Shape("ragged coefficient grid".into()));
            }
            if row.iter().any(|c| c.shape() != (rows, cols)) {
                return Err(PolyError::Shape("coefficient shapes differ".into()));
            }
        }
        Ok(Self { rows, cols, s_interval, t_interval, coeffs })
    }

    pub fn zeros(
        rows: usize,
        cols: usize,
        s_interval: Interval,
        t_interval: Interval,
        ds: usize,
        dt: usize,
    ) -> Self {
        Self {
            rows,
            cols,
            s_interval,
            t_interval,
            coeffs: vec![vec![DMatrix::zeros(rows, cols); dt + 1]; ds + 1],
        }
    }

    pub fn constant(c: DMatrix<f64>, s_interval: Interval, t_interval: Interval) -> Self {
        Self { rows: c.nrows(), cols: c.ncols(), s_interval, t_interval, coeffs: vec![vec![c]] }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn s_interval(&self) -> Interval {
        self.s_interval
    }
    pub fn t_interval(&self) -> Interval {
        self.t_interval
    }
    /// `(degree in s, degree in θ)`.
    pub fn bidegree(&self) -> (usize, usize) {
        (self.coeffs.len() - 1, self.coeffs[0].len() - 1)
    }
    pub fn coeff(&self, a: usize, b: usize) -> &DMatrix<f64> {
        &self.coeffs[a][b]
    }
    pub fn coeff_mut(&mut self, a: usize, b: usize) -> &mut DMatrix<f64> {
        &mut self.coeffs[a][b]
    }
    pub fn coeffs(&self) -> &[Vec<DMatrix<f64>>] {
        &self.coeffs
    }

    pub fn with_bidegree(&self, ds: usize, dt: usize) -> Result<Self, PolyError> {
        let mut out = Self::zeros(self.rows, self.cols, self.s_interval, self.t_interval, ds, dt);
        for (a, row) in self.coeffs.iter().enumerate() {
            for (b, c) in row.iter().enumerate() {
                if a <= ds && b <= dt {
                    out.coeffs[a][b] = c.clone();
                } else if c.iter().any(|&v| v != 0.0) {
                    return Err(PolyError::Shape(format!(
                        "cannot represent bidegree {:?} kernel at ({ds}, {dt})",
                        self.bidegree()
                    )));
                }
            }
        }
        Ok(out)
    }

    pub fn eval(&self, s: f64, t: f64) -> Result<DMatrix<f64>, PolyError> {
        self.s_interval.check(s)?;
        self.t_interval.check(t)?;
        Ok(self.eval_unchecked(s, t))
    }

    pub fn eval_unchecked(&self, s: f64, t: f64) -> DMatrix<f64> {
        self.at_s_unchecked(s).eval_unchecked(t)
    }

    /// The one-variable polynomial `θ ↦ R(s, θ)`.
    pub fn at_s(&self, s: f64) -> Result<PolyMatrix1, PolyError> {
        self.s_interval.check(s)?;
        Ok(self.at_s_unchecked(s))
    }

    fn at_s_unchecked(&self, s: f64) -> PolyMatrix1 {
        let (_, dt) = self.bidegree();
        let mut out = PolyMatrix1::zeros(self.rows, self.cols, self.t_interval, dt);
        let mut p = 1.0;
        for row in &self.coeffs {
            for (b, c) in row.iter().enumerate() {
                out.coeffs[b] += c * p;
            }
            p *= s;
        }
        out
    }

    /// The one-variable polynomial `s ↦ R(s, θ)`.
    pub fn at_theta(&self, t: f64) -> Result<PolyMatrix1, PolyError> {
        self.t_interval.check(t)?;
        let (ds, _) = self.bidegree();
        let mut out = PolyMatrix1::zeros(self.rows, self.cols, self.s_interval, ds);
        for (a, row) in self.coeffs.iter().enumerate() {
            let mut p = 1.0;
            for c in row {
                out.coeffs[a] += c * p;
                p *= t;
            }
        }
        Ok(out)
    }

    pub fn partial(&self, which: Var) -> Self {
        let (ds, dt) = self.bidegree();
        let mut out = Self::zeros(self.rows, self.cols, self.s_interval, self.t_interval, ds, dt);
        for a in 0..=ds {
            for b in 0..=dt {
                match which {
                    Var::S if a + 1 <= ds => {
                        out.coeffs[a][b] = &self.coeffs[a + 1][b] * (a + 1) as f64;
                    }
                    Var::Theta if b + 1 <= dt => {
                        out.coeffs[a][b] = &self.coeffs[a][b + 1] * (b + 1) as f64;
                    }
                    _ => {}
                }
            }
        }
        out
    }

    /// `(s, θ) ↦ R(θ, s)^T`, with the two intervals exchanged.
    pub fn transpose_swap(&self) -> Self {
        let (ds, dt) = self.bidegree();
        let coeffs = (0..=dt)
            .map(|b| (0..=ds).map(|a| self.coeffs[a][b].transpose()).collect())
            .collect();
        Self {
            rows: self.cols,
            cols: self.rows,
            s_interval: self.t_interval,
            t_interval: self.s_interval,
            coeffs,
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        let coeffs = self.coeffs.iter().map(|row| row.iter().map(|c| c * k).collect()).collect();
        Self { coeffs, ..self.clone() }
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, PolyError> {
        self.combine(other, 1.0)
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, PolyError> {
        self.combine(other, -1.0)
    }

    fn combine(&self, other: &Self, sign: f64) -> Result<Self, PolyError> {
        self.s_interval.same(&other.s_interval)?;
        self.t_interval.same(&other.t_interval)?;
        if self.shape() != other.shape() {
            return Err(PolyError::Shape(format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        let (a1, b1) = self.bidegree();
        let (a2, b2) = other.bidegree();
        let mut out = self.with_bidegree(a1.max(a2), b1.max(b2))?;
        for (a, row) in other.coeffs.iter().enumerate() {
            for (b, c) in row.iter().enumerate() {
                if sign > 0.0 {
                    out.coeffs[a][b] += c;
                } else {
                    out.coeffs[a][b] -= c;
                }
            }
        }
        Ok(out)
    }

    pub fn left_mul(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(m.ncols(), self.rows, "left_mul shape mismatch");
        let coeffs = self.coeffs.iter().map(|row| row.iter().map(|c| m * c).collect()).collect();
        Self { rows: m.nrows(), coeffs, ..self.clone() }
    }

    pub fn right_mul(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), self.cols, "right_mul shape mismatch");
        let coeffs = self.coeffs.iter().map(|row| row.iter().map(|c| c * m).collect()).collect();
        Self { cols: m.ncols(), coeffs, ..self.clone() }
    }

    /// `s ↦ ∫ R(s, θ) φ(θ) dθ`, exact.
    pub fn apply_theta(&self, phi: &PolyMatrix1) -> Result<PolyMatrix1, PolyError> {
        self.t_interval.same(&phi.interval)?;
        if self.cols != phi.rows {
            return Err(PolyError::Shape("kernel/function shape mismatch".into()));
        }
        let (ds, dt) = self.bidegree();
        let mut out = PolyMatrix1::zeros(self.rows, phi.cols, self.s_interval, ds);
        for a in 0..=ds {
            for b in 0..=dt {
                for (k, f) in phi.coeffs.iter().enumerate() {
                    let w = self.t_interval.monomial_integral(b + k);
                    out.coeffs[a] += (&self.coeffs[a][b] * f) * w;
                }
            }
        }
        Ok(out)
    }

    /// `θ ↦ ∫ ψ(s) R(s, θ) ds`, exact; `ψ` is a polynomial in `s`.
    pub fn left_integrate_s(&self, psi: &PolyMatrix1) -> Result<PolyMatrix1, PolyError> {
        self.s_interval.same(&psi.interval)?;
        if psi.cols != self.rows {
            return Err(PolyError::Shape("function/kernel shape mismatch".into()));
        }
        let (ds, dt) = self.bidegree();
        let mut out = PolyMatrix1::zeros(psi.rows, self.cols, self.t_interval, dt);
        for a in 0..=ds {
            for b in 0..=dt {
                for (k, f) in psi.coeffs.iter().enumerate() {
                    let w = self.s_interval.monomial_integral(a + k);
                    out.coeffs[b] += (f * &self.coeffs[a][b]) * w;
                }
            }
        }
        Ok(out)
    }

    /// Tensor product `p(s) q(θ)` of two one-variable polynomials.
    pub fn outer(p: &PolyMatrix1, q: &PolyMatrix1) -> Result<Self, PolyError> {
        if p.cols != q.rows {
            return Err(PolyError::Shape("outer product shape mismatch".into()));
        }
        let coeffs = p
            .coeffs
            .iter()
            .map(|a| q.coeffs.iter().map(|b| a * b).collect())
            .collect();
        Ok(Self { rows: p.rows, cols: q.cols, s_interval: p.interval, t_interval: q.interval, coeffs })
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().flatten().flat_map(|c| c.iter()).fold(0.0, |m, &v| m.max(v.abs()))
    }
}

impl<'a> Add for &'a PolyMatrix2 {
    type Output = PolyMatrix2;
    fn add(self, rhs: Self) -> PolyMatrix2 {
        self.try_add(rhs).expect("kernel add")
    }
}

impl<'a> Sub for &'a PolyMatrix2 {
    type Output = PolyMatrix2;
    fn sub(self, rhs: Self) -> PolyMatrix2 {
        self.try_sub(rhs).expect("kernel sub")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::gauss_legendre;
    use proptest::prelude::*;

    fn unit() -> Interval {
        Interval::delay(1.0)
    }

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn eval_constant_and_linear() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let p = PolyMatrix1::constant(c.clone(), unit());
        assert_eq!(p.eval(-0.3).unwrap(), c);
        let lin = PolyMatrix1::monomial(DMatrix::identity(2, 2), 1, unit());
        assert_eq!(lin.eval(-1.0).unwrap(), -DMatrix::<f64>::identity(2, 2));
    }

    #[test]
    fn eval_mixed_entries() {
        // [[1, s], [s^2, 0]]
        let c0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let c1 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let c2 = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let p = PolyMatrix1::new(unit(), vec![c0, c1, c2]).unwrap();
        let v = p.eval(-0.5).unwrap();
        assert_eq!(v, DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.25, 0.0]));
    }

    #[test]
    fn eval_outside_interval_is_domain_error() {
        let p = PolyMatrix1::scalar(&[1.0, 1.0], unit());
        assert!(p.eval(1e-13).is_ok());
        assert!(matches!(p.eval(0.1), Err(PolyError::Domain { .. })));
        assert!(matches!(p.eval(-1.5), Err(PolyError::Domain { .. })));
    }

    #[test]
    fn diff_power_rule() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let constant = PolyMatrix1::constant(c.clone(), unit());
        assert_eq!(constant.diff().eval(-0.2).unwrap(), DMatrix::zeros(2, 2));
        let sq = PolyMatrix1::monomial(c.clone(), 2, unit());
        let d = sq.diff();
        assert_eq!(d.degree(), 1);
        assert_eq!(d.coeffs()[1], &c * 2.0);
        assert_eq!(d.coeffs()[0], DMatrix::zeros(2, 2));
    }

    #[test]
    fn diff_cubic_matches_central_differences() {
        let p = PolyMatrix1::scalar(&[0.0, 0.0, 0.0, 1.0], unit());
        let d = p.diff();
        let h = 1e-5;
        for &s in &[-0.9, -0.7, -0.5, -0.3, -0.1] {
            let fd = (p.eval_unchecked(s + h)[(0, 0)] - p.eval_unchecked(s - h)[(0, 0)]) / (2.0 * h);
            let exact = d.eval(s).unwrap()[(0, 0)];
            assert!((fd - exact).abs() <= 1e-7 * exact.abs(), "s={s}: {fd} vs {exact}");
            assert!((exact - 3.0 * s * s).abs() < 1e-14);
        }
    }

    #[test]
    fn integrate_closed_form() {
        assert_eq!(PolyMatrix1::zeros(2, 3, unit(), 4).integrate(), DMatrix::zeros(2, 3));
        let s = PolyMatrix1::scalar(&[0.0, 1.0], unit());
        assert!((s.integrate()[(0, 0)] + 0.5).abs() < 1e-15);
        let s2 = PolyMatrix1::scalar(&[0.0, 0.0, 1.0], unit());
        assert!((s2.integrate()[(0, 0)] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn partial_derivatives() {
        let i = unit();
        let c = PolyMatrix2::constant(m1(4.0), i, i);
        assert_eq!(c.partial(Var::S).eval(-0.5, -0.5).unwrap()[(0, 0)], 0.0);
        // s θ
        let mut st = PolyMatrix2::zeros(1, 1, i, i, 1, 1);
        *st.coeff_mut(1, 1) = m1(1.0);
        let ds = st.partial(Var::S);
        assert_eq!(ds.eval(-0.2, -0.7).unwrap()[(0, 0)], -0.7);
        // s^2 θ
        let mut r = PolyMatrix2::zeros(1, 1, i, i, 2, 1);
        *r.coeff_mut(2, 1) = m1(1.0);
        let dt = r.partial(Var::Theta);
        let h = 1e-5;
        for &(s, t) in &[(-0.1, -0.9), (-0.5, -0.5), (-0.8, -0.3)] {
            let fd = (r.eval_unchecked(s, t + h)[(0, 0)] - r.eval_unchecked(s, t - h)[(0, 0)]) / (2.0 * h);
            let exact = dt.eval(s, t).unwrap()[(0, 0)];
            assert!((exact - s * s).abs() < 1e-15);
            assert!((fd - exact).abs() <= 1e-7 * exact.abs().max(1e-3));
        }
    }

    #[test]
    fn arithmetic_basics() {
        let i = unit();
        let a = PolyMatrix1::new(i, vec![m1(1.0), m1(2.0)]).unwrap();
        let z = PolyMatrix1::zeros(1, 1, i, 0);
        assert_eq!(&a + &z, a);
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 3.0]);
        let cs = PolyMatrix1::monomial(c.clone(), 1, i);
        let dsp = PolyMatrix1::monomial(d.clone(), 1, i);
        let prod = cs.try_mul(&dsp).unwrap();
        assert_eq!(prod.degree(), 2);
        assert_eq!(prod.coeffs()[2], &c * &d);
        assert_eq!(prod.coeffs()[0], DMatrix::zeros(2, 2));
        let bad = PolyMatrix1::zeros(3, 3, i, 0);
        assert!(matches!(a.try_add(&bad), Err(PolyError::Shape(_))));
        let other = PolyMatrix1::zeros(1, 1, Interval::delay(2.0), 0);
        assert!(matches!(a.try_add(&other), Err(PolyError::IntervalMismatch(..))));
    }

    #[test]
    fn transpose_swap_exchanges_variables() {
        let i = unit();
        let mut r = PolyMatrix2::zeros(1, 1, i, i, 1, 0);
        *r.coeff_mut(1, 0) = m1(1.0); // R(s, θ) = s
        let t = r.transpose_swap();
        assert_eq!(t.bidegree(), (0, 1));
        assert_eq!(t.eval(-0.3, -0.8).unwrap()[(0, 0)], -0.8);
    }

    fn small_poly(deg: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-3.0..3.0f64, deg + 1)
    }

    proptest! {
        #[test]
        fn diff_matches_finite_differences(coeffs in small_poly(5), tau in 0.3..2.0f64) {
            let p = PolyMatrix1::scalar(&coeffs, Interval::delay(tau));
            let d = p.diff();
            let h = 1e-5 * tau;
            for k in 1..=10 {
                let s = -tau * k as f64 / 11.0;
                let fd = (p.eval_unchecked(s + h)[(0,0)] - p.eval_unchecked(s - h)[(0,0)]) / (2.0 * h);
                let ex = d.eval_unchecked(s)[(0,0)];
                prop_assert!((fd - ex).abs() <= 1e-6 * ex.abs().max(1.0));
            }
        }

        #[test]
        fn integrate_matches_gauss_legendre(coeffs in prop::collection::vec(-2.0..2.0f64, 1..13), tau in 0.2..1.5f64) {
            let iv = Interval::delay(tau);
            let p = PolyMatrix1::scalar(&coeffs, iv);
            let (x, w) = gauss_legendre(32, iv);
            let q: f64 = x.iter().zip(&w).map(|(&s, &wi)| wi * p.eval_unchecked(s)[(0,0)]).sum();
            prop_assert!((q - p.integrate()[(0,0)]).abs() <= 1e-10);
        }

        #[test]
        fn transpose_swap_is_involution(vals in prop::collection::vec(-5.0..5.0f64, 2 * 3 * 4 * 2)) {
            let i = Interval::delay(0.7);
            let j = Interval::delay(1.3);
            let mut r = PolyMatrix2::zeros(2, 4, i, j, 2, 1);
            let mut it = vals.iter();
            for a in 0..=2 { for b in 0..=1 { for e in r.coeff_mut(a, b).iter_mut() { *e = *it.next().unwrap(); } } }
            prop_assert_eq!(r.transpose_swap().transpose_swap(), r);
        }

        // Dyadic coefficients keep every sum exact in binary floating point.
        #[test]
        fn add_then_sub_roundtrips(a in prop::collection::vec(-1024i32..1024, 4), b in prop::collection::vec(-1024i32..1024, 4)) {
            let iv = unit();
            let pa = PolyMatrix1::scalar(&a.iter().map(|&v| v as f64 / 64.0).collect::<Vec<_>>(), iv);
            let pb = PolyMatrix1::scalar(&b.iter().map(|&v| v as f64 / 128.0).collect::<Vec<_>>(), iv);
            prop_assert_eq!(&(&pa + &pb) - &pb, pa);
        }
    }
}
