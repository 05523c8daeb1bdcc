//! The space `Z_{m,n,K}` (a head vector plus one history function per
//! delay), the PQRS operator class acting on it, and positivity
//! certificates for such operators.

pub mod invert;
mod layout;
mod xi;

pub use invert::{invert_collocation, InversionError, InversionReport, InvertConfig, NodalInverse};
pub use layout::{AffineOp, OpLayout};
pub use xi::{make_xi_constraints, xi_feasible, XiBlocks, XiError};

use crate::poly::{Interval, PolyError, PolyMatrix1, PolyMatrix2};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DimError {
    #[error("dimension mismatch: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// `(x, φ_1, ..., φ_K)` with polynomial channels; channel `i` is an
/// `n × 1` polynomial on `[-τ_i, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZElement {
    pub x: DVector<f64>,
    pub phi: Vec<PolyMatrix1>,
}

impl ZElement {
    pub fn new(x: DVector<f64>, phi: Vec<PolyMatrix1>) -> Result<Self, DimError> {
        if let Some(n) = phi.first().map(|p| p.rows()) {
            if phi.iter().any(|p| p.rows() != n || p.cols() != 1) {
                return Err(DimError::Mismatch("channels must be n×1 of equal n".into()));
            }
        }
        Ok(Self { x, phi })
    }

    pub fn zeros(m: usize, n: usize, taus: &[f64]) -> Self {
        Self {
            x: DVector::zeros(m),
            phi: taus.iter().map(|&t| PolyMatrix1::zeros(n, 1, Interval::delay(t), 0)).collect(),
        }
    }

    pub fn m(&self) -> usize {
        self.x.len()
    }

    pub fn n(&self) -> usize {
        self.phi.first().map_or(0, |p| p.rows())
    }

    pub fn taus(&self) -> Vec<f64> {
        self.phi.iter().map(|p| -p.interval().lo).collect()
    }

    fn tau_k(&self) -> f64 {
        self.phi.last().map_or(1.0, |p| -p.interval().lo)
    }

    /// `max_i |φ_i(0) − x|`; zero for members of `X`.
    pub fn boundary_defect(&self) -> f64 {
        self.phi
            .iter()
            .map(|p| (p.eval_unchecked(0.0).column(0) - &self.x).amax())
            .fold(0.0, f64::max)
    }

    pub fn scale(&self, a: f64) -> Self {
        Self { x: &self.x * a, phi: self.phi.iter().map(|p| p.scale(a)).collect() }
    }

    pub fn try_add(&self, o: &Self) -> Result<Self, DimError> {
        if self.x.len() != o.x.len() || self.phi.len() != o.phi.len() {
            return Err(DimError::Mismatch("z elements differ in shape".into()));
        }
        let phi = self
            .phi
            .iter()
            .zip(&o.phi)
            .map(|(a, b)| a.try_add(b))
            .collect::<Result<_, _>>()?;
        Ok(Self { x: &self.x + &o.x, phi })
    }

    pub fn try_sub(&self, o: &Self) -> Result<Self, DimError> {
        self.try_add(&o.scale(-1.0))
    }

    pub fn norm(&self) -> f64 {
        z_inner(self, self).map(|v| v.max(0.0).sqrt()).unwrap_or(f64::NAN)
    }

    /// Random element of `Z` with channel degree `deg`, entries in `[-1, 1]`.
    pub fn random<R: Rng>(rng: &mut R, m: usize, n: usize, taus: &[f64], deg: usize) -> Self {
        let x = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let phi = taus
            .iter()
            .map(|&t| {
                let coeffs = (0..=deg)
                    .map(|_| DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-1.0..1.0)))
                    .collect();
                PolyMatrix1::new(Interval::delay(t), coeffs).expect("shapes agree")
            })
            .collect();
        Self { x, phi }
    }

    /// Random element of `X` (`φ_i(0) = x`), so `m == n`.
    pub fn random_x<R: Rng>(rng: &mut R, n: usize, taus: &[f64], deg: usize) -> Self {
        let mut z = Self::random(rng, n, n, taus, deg);
        for p in &mut z.phi {
            p.coeffs_mut()[0] = DMatrix::from_column_slice(n, 1, z.x.as_slice());
        }
        z
    }
}

/// `τ_K a.xᵀ b.x + Σ_i ∫ a.φ_iᵀ b.φ_i ds`, computed exactly.
pub fn z_inner(a: &ZElement, b: &ZElement) -> Result<f64, DimError> {
    if a.x.len() != b.x.len() || a.phi.len() != b.phi.len() {
        return Err(DimError::Mismatch("inner product of differently shaped elements".into()));
    }
    let mut v = a.tau_k() * a.x.dot(&b.x);
    for (p, q) in a.phi.iter().zip(&b.phi) {
        v += p.transpose().try_mul(q)?.integrate()[(0, 0)];
    }
    Ok(v)
}

/// The operator
/// `(x, φ) ↦ (P x + Σ∫Q_i φ_i, τ_K Q_iᵀ x + τ_K S_i φ_i + Σ_j ∫R_ij φ_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PqrsOperator {
    pub p: DMatrix<f64>,
    pub q: Vec<PolyMatrix1>,
    pub s: Vec<PolyMatrix1>,
    pub r: Vec<Vec<PolyMatrix2>>,
    pub taus: Vec<f64>,
}

impl PqrsOperator {
    pub fn new(
        p: DMatrix<f64>,
        q: Vec<PolyMatrix1>,
        s: Vec<PolyMatrix1>,
        r: Vec<Vec<PolyMatrix2>>,
        taus: Vec<f64>,
    ) -> Result<Self, DimError> {
        let k = taus.len();
        if k == 0 || taus.iter().any(|&t| !(t > 0.0)) || taus.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DimError::Mismatch("delays must be positive and strictly increasing".into()));
        }
        if q.len() != k || s.len() != k || r.len() != k || r.iter().any(|row| row.len() != k) {
            return Err(DimError::Mismatch("one Q, S per delay and one R per delay pair".into()));
        }
        let m = p.nrows();
        if p.ncols() != m {
            return Err(DimError::Mismatch("P must be square".into()));
        }
        let n = s[0].rows();
        for i in 0..k {
            let iv = Interval::delay(taus[i]);
            if q[i].shape() != (m, n) || q[i].interval() != iv {
                return Err(DimError::Mismatch(format!("Q_{} must be {m}×{n} on [-τ_{}, 0]", i + 1, i + 1)));
            }
            if s[i].shape() != (n, n) || s[i].interval() != iv {
                return Err(DimError::Mismatch(format!("S_{} must be {n}×{n} on [-τ_{}, 0]", i + 1, i + 1)));
            }
            for j in 0..k {
                let rij = &r[i][j];
                if rij.shape() != (n, n)
                    || rij.s_interval() != iv
                    || rij.t_interval() != Interval::delay(taus[j])
                {
                    return Err(DimError::Mismatch(format!("R_{}{} has the wrong shape or domain", i + 1, j + 1)));
                }
            }
        }
        Ok(Self { p, q, s, r, taus })
    }

    pub fn zero(m: usize, n: usize, taus: &[f64]) -> Self {
        let ivs: Vec<Interval> = taus.iter().map(|&t| Interval::delay(t)).collect();
        Self {
            p: DMatrix::zeros(m, m),
            q: ivs.iter().map(|&iv| PolyMatrix1::zeros(m, n, iv, 0)).collect(),
            s: ivs.iter().map(|&iv| PolyMatrix1::zeros(n, n, iv, 0)).collect(),
            r: ivs
                .iter()
                .map(|&a| ivs.iter().map(|&b| PolyMatrix2::zeros(n, n, a, b, 0, 0)).collect())
                .collect(),
            taus: taus.to_vec(),
        }
    }

    /// `{P = I, Q = 0, S_i = I/τ_K, R = 0}`, the identity on `Z_{n,K}`.
    pub fn identity(n: usize, taus: &[f64]) -> Self {
        Self::scaled_identity(1.0, n, taus)
    }

    pub fn scaled_identity(a: f64, n: usize, taus: &[f64]) -> Self {
        let mut op = Self::zero(n, n, taus);
        let tk = *taus.last().expect("at least one delay");
        op.p = DMatrix::identity(n, n) * a;
        for (s, &t) in op.s.iter_mut().zip(taus) {
            *s = PolyMatrix1::constant(DMatrix::identity(n, n) * (a / tk), Interval::delay(t));
        }
        op
    }

    pub fn m(&self) -> usize {
        self.p.nrows()
    }
    pub fn n(&self) -> usize {
        self.s[0].rows()
    }
    pub fn k(&self) -> usize {
        self.taus.len()
    }
    pub fn tau_k(&self) -> f64 {
        *self.taus.last().unwrap()
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            p: &self.p * a,
            q: self.q.iter().map(|x| x.scale(a)).collect(),
            s: self.s.iter().map(|x| x.scale(a)).collect(),
            r: self.r.iter().map(|row| row.iter().map(|x| x.scale(a)).collect()).collect(),
            taus: self.taus.clone(),
        }
    }

    pub fn try_add(&self, o: &Self) -> Result<Self, DimError> {
        if self.taus != o.taus || self.m() != o.m() || self.n() != o.n() {
            return Err(DimError::Mismatch("operators act on different spaces".into()));
        }
        Ok(Self {
            p: &self.p + &o.p,
            q: self.q.iter().zip(&o.q).map(|(a, b)| a.try_add(b)).collect::<Result<_, _>>()?,
            s: self.s.iter().zip(&o.s).map(|(a, b)| a.try_add(b)).collect::<Result<_, _>>()?,
            r: self
                .r
                .iter()
                .zip(&o.r)
                .map(|(ra, rb)| ra.iter().zip(rb).map(|(a, b)| a.try_add(b)).collect::<Result<_, _>>())
                .collect::<Result<_, _>>()?,
            taus: self.taus.clone(),
        })
    }

    /// `{P − εI, Q, S − (ε/τ_K) I, R}`; positivity of the result means
    /// `⟨z, Pz⟩ ≥ ε‖z‖²`.
    pub fn shifted(&self, eps: f64) -> Self {
        let mut op = self.clone();
        let n = self.n();
        op.p -= DMatrix::identity(self.m(), self.m()) * eps;
        let tk = self.tau_k();
        for s in &mut op.s {
            s.coeffs_mut()[0] -= DMatrix::identity(n, n) * (eps / tk);
        }
        op
    }

    pub fn max_abs(&self) -> f64 {
        let mut v = self.p.amax();
        for x in &self.q {
            v = v.max(x.max_abs());
        }
        for x in &self.s {
            v = v.max(x.max_abs());
        }
        for row in &self.r {
            for x in row {
                v = v.max(x.max_abs());
            }
        }
        v
    }
}

/// Applies the operator exactly in coefficient space.
pub fn op_apply(op: &PqrsOperator, z: &ZElement) -> Result<ZElement, DimError> {
    if z.x.len() != op.m() || z.phi.len() != op.k() || (op.k() > 0 && z.n() != op.n()) {
        return Err(DimError::Mismatch(format!(
            "operator on Z_{{{},{},{}}} applied to element of Z_{{{},{},{}}}",
            op.m(),
            op.n(),
            op.k(),
            z.m(),
            z.n(),
            z.phi.len()
        )));
    }
    let tk = op.tau_k();
    let xm = DMatrix::from_column_slice(z.x.len(), 1, z.x.as_slice());
    let mut head = &op.p * &z.x;
    let mut phi = Vec::with_capacity(op.k());
    for i in 0..op.k() {
        head += op.q[i].try_mul(&z.phi[i])?.integrate().column(0);
        let mut ch = op.q[i].transpose().right_mul(&xm).scale(tk);
        ch = ch.try_add(&op.s[i].try_mul(&z.phi[i])?.scale(tk))?;
        for j in 0..op.k() {
            ch = ch.try_add(&op.r[i][j].apply_theta(&z.phi[j])?)?;
        }
        phi.push(ch);
    }
    Ok(ZElement { x: head, phi })
}

/// `⟨z, op z⟩`.
pub fn quad_form(op: &PqrsOperator, z: &ZElement) -> Result<f64, DimError> {
    z_inner(z, &op_apply(op, z)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfAdjointReport {
    /// Whether every coefficient identity holds to `1e-9` relative.
    pub ok: bool,
    /// Largest violation of the coefficient identities.
    pub symbolic_residual: f64,
    /// Largest `|⟨op z, y⟩ − ⟨z, op y⟩| / (‖z‖‖y‖)` over sampled pairs in `X`.
    pub sampled_residual: f64,
}

/// Checks the self-adjoint, `X`-preserving structure:
/// `S_i = S_iᵀ`, `R_ij(s,θ) = R_ji(θ,s)ᵀ`, `P = τ_K (Q_i(0)ᵀ + S_i(0))`,
/// `Q_j(s) = R_ij(0, s)`, and `P = Pᵀ`; then samples the adjoint identity.
pub fn op_selfadjoint_check<R: Rng>(op: &PqrsOperator, samples: usize, rng: &mut R) -> SelfAdjointReport {
    let tk = op.tau_k();
    let mut res: f64 = (&op.p - op.p.transpose()).amax();
    let square = op.m() == op.n();
    for i in 0..op.k() {
        for c in op.s[i].coeffs() {
            res = res.max((c - c.transpose()).amax());
        }
        if square {
            let p_i = (op.q[i].eval_unchecked(0.0).transpose() + op.s[i].eval_unchecked(0.0)) * tk;
            res = res.max((&op.p - p_i).amax());
        } else {
            res = f64::INFINITY;
        }
        for j in 0..op.k() {
            let swap = op.r[j][i].transpose_swap();
            res = res.max(op.r[i][j].try_sub(&swap).map(|d| d.max_abs()).unwrap_or(f64::INFINITY));
            if square {
                let r0 = op.r[i][j].at_s(0.0).expect("0 is in every delay interval");
                res = res.max(r0.try_sub(&op.q[j]).map(|d| d.max_abs()).unwrap_or(f64::INFINITY));
            }
        }
    }
    let scale = op.max_abs().max(1.0);
    let mut sampled: f64 = 0.0;
    if square {
        let deg = op.q.iter().map(|q| q.degree()).max().unwrap_or(0).max(2);
        for _ in 0..samples {
            let z = ZElement::random_x(rng, op.n(), &op.taus, deg);
            let y = ZElement::random_x(rng, op.n(), &op.taus, deg);
            let a = z_inner(&op_apply(op, &z).unwrap(), &y).unwrap();
            let b = z_inner(&z, &op_apply(op, &y).unwrap()).unwrap();
            sampled = sampled.max((a - b).abs() / (z.norm() * y.norm()).max(1e-300));
        }
    }
    SelfAdjointReport { ok: res <= 1e-9 * scale, symbolic_residual: res, sampled_residual: sampled }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn iv(t: f64) -> Interval {
        Interval::delay(t)
    }

    #[test]
    fn inner_product_examples() {
        let z = ZElement::zeros(2, 1, &[1.0]);
        assert_eq!(z_inner(&z, &z).unwrap(), 0.0);
        let mut a = ZElement::zeros(2, 1, &[1.0]);
        a.x[0] = 1.0;
        assert_eq!(z_inner(&a, &a).unwrap(), 1.0);
        let s = ZElement::new(DVector::zeros(1), vec![PolyMatrix1::scalar(&[0.0, 1.0], iv(1.0))]).unwrap();
        assert!((z_inner(&s, &s).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn apply_identity_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let taus = [0.4, 1.1];
        let z = ZElement::random(&mut rng, 2, 2, &taus, 3);
        let id = op_apply(&PqrsOperator::identity(2, &taus), &z).unwrap();
        let diff = id.try_sub(&z).unwrap();
        assert!(diff.norm() <= 1e-10);
        let zero = op_apply(&PqrsOperator::zero(2, 2, &taus), &z).unwrap();
        assert!(zero.norm() == 0.0);
    }

    #[test]
    fn apply_scalar_hand_example() {
        let i = iv(1.0);
        let op = PqrsOperator::new(
            DMatrix::from_element(1, 1, 2.0),
            vec![PolyMatrix1::scalar(&[1.0], i)],
            vec![PolyMatrix1::scalar(&[1.0], i)],
            vec![vec![PolyMatrix2::zeros(1, 1, i, i, 0, 0)]],
            vec![1.0],
        )
        .unwrap();
        let z = ZElement::new(DVector::from_element(1, 1.0), vec![PolyMatrix1::scalar(&[0.0, 1.0], i)]).unwrap();
        let out = op_apply(&op, &z).unwrap();
        assert!((out.x[0] - 1.5).abs() < 1e-15);
        for &s in &[-1.0, -0.5, 0.0] {
            assert!((out.phi[0].eval(s).unwrap()[(0, 0)] - (1.0 + s)).abs() < 1e-15);
        }
    }

    #[test]
    fn apply_rejects_mismatch() {
        let op = PqrsOperator::identity(2, &[1.0]);
        let z = ZElement::zeros(3, 2, &[1.0]);
        assert!(op_apply(&op, &z).is_err());
    }

    #[test]
    fn identity_is_selfadjoint_and_perturbation_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let id = PqrsOperator::identity(2, &[0.5, 1.0]);
        let rep = op_selfadjoint_check(&id, 20, &mut rng);
        assert!(rep.ok && rep.symbolic_residual == 0.0);
        let mut bad = id.clone();
        bad.p[(0, 0)] += 1e-3;
        assert!(!op_selfadjoint_check(&bad, 20, &mut rng).ok);
    }
}
