//! Flat coefficient storage of PQRS operators at fixed degrees, and
//! operators whose coefficients are affine in SDP variables.

use super::{DimError, PqrsOperator};
use crate::poly::{Interval, PolyMatrix1, PolyMatrix2};
use crate::sdp::LinExpr;
use nalgebra::DMatrix;

/// Shapes and degree bounds of an operator on `Z_{m,n,K}`: `Q_i` of degree
/// `dq`, `S_i` of degree `ds`, `R_ij` of bidegree `(dr, dr)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OpLayout {
    pub m: usize,
    pub n: usize,
    pub taus: Vec<f64>,
    pub dq: usize,
    pub ds: usize,
    pub dr: usize,
}

impl OpLayout {
    /// The layout matched by a degree-`d` positivity certificate.
    pub fn for_degree(m: usize, n: usize, taus: &[f64], d: usize) -> Self {
        Self { m, n, taus: taus.to_vec(), dq: d, ds: 2 * d, dr: d }
    }

    pub fn k(&self) -> usize {
        self.taus.len()
    }

    pub fn tau_k(&self) -> f64 {
        *self.taus.last().unwrap()
    }

    fn q_len(&self) -> usize {
        (self.dq + 1) * self.m * self.n
    }
    fn s_len(&self) -> usize {
        (self.ds + 1) * self.n * self.n
    }
    fn r_len(&self) -> usize {
        (self.dr + 1) * (self.dr + 1) * self.n * self.n
    }

    pub fn len(&self) -> usize {
        let k = self.k();
        self.m * self.m + k * (self.q_len() + self.s_len()) + k * k * self.r_len()
    }

    pub fn p_idx(&self, r: usize, c: usize) -> usize {
        r * self.m + c
    }
    pub fn q_idx(&self, i: usize, k: usize, r: usize, c: usize) -> usize {
        self.m * self.m + i * self.q_len() + (k * self.m + r) * self.n + c
    }
    pub fn s_idx(&self, i: usize, k: usize, r: usize, c: usize) -> usize {
        self.m * self.m + self.k() * self.q_len() + i * self.s_len() + (k * self.n + r) * self.n + c
    }
    pub fn r_idx(&self, i: usize, j: usize, a: usize, b: usize, r: usize, c: usize) -> usize {
        let base = self.m * self.m + self.k() * (self.q_len() + self.s_len());
        base + (i * self.k() + j) * self.r_len() + ((a * (self.dr + 1) + b) * self.n + r) * self.n + c
    }

    /// Coefficients of `op` padded to this layout; fails if `op` needs
    /// higher degrees or acts on a different space.
    pub fn flatten(&self, op: &PqrsOperator) -> Result<Vec<f64>, DimError> {
        if op.m() != self.m || op.n() != self.n || op.taus != self.taus {
            return Err(DimError::Mismatch(format!(
                "operator on Z_{{{},{},{}}} does not match layout Z_{{{},{},{}}}",
                op.m(),
                op.n(),
                op.k(),
                self.m,
                self.n,
                self.k()
            )));
        }
        let mut v = vec![0.0; self.len()];
        for r in 0..self.m {
            for c in 0..self.m {
                v[self.p_idx(r, c)] = op.p[(r, c)];
            }
        }
        for i in 0..self.k() {
            let q = op.q[i].with_degree(self.dq)?;
            for (k, cm) in q.coeffs().iter().enumerate() {
                for r in 0..self.m {
                    for c in 0..self.n {
                        v[self.q_idx(i, k, r, c)] = cm[(r, c)];
                    }
                }
            }
            let s = op.s[i].with_degree(self.ds)?;
            for (k, cm) in s.coeffs().iter().enumerate() {
                for r in 0..self.n {
                    for c in 0..self.n {
                        v[self.s_idx(i, k, r, c)] = cm[(r, c)];
                    }
                }
            }
            for j in 0..self.k() {
                let rij = op.r[i][j].with_bidegree(self.dr, self.dr)?;
                for a in 0..=self.dr {
                    for b in 0..=self.dr {
                        let cm = rij.coeff(a, b);
                        for r in 0..self.n {
                            for c in 0..self.n {
                                v[self.r_idx(i, j, a, b, r, c)] = cm[(r, c)];
                            }
                        }
                    }
                }
            }
        }
        Ok(v)
    }

    pub fn unflatten(&self, v: &[f64]) -> PqrsOperator {
        assert_eq!(v.len(), self.len());
        let (m, n) = (self.m, self.n);
        let ivs: Vec<Interval> = self.taus.iter().map(|&t| Interval::delay(t)).collect();
        let p = DMatrix::from_fn(m, m, |r, c| v[self.p_idx(r, c)]);
        let q = (0..self.k())
            .map(|i| {
                let coeffs = (0..=self.dq)
                    .map(|k| DMatrix::from_fn(m, n, |r, c| v[self.q_idx(i, k, r, c)]))
                    .collect();
                PolyMatrix1::new(ivs[i], coeffs).unwrap()
            })
            .collect();
        let s = (0..self.k())
            .map(|i| {
                let coeffs = (0..=self.ds)
                    .map(|k| DMatrix::from_fn(n, n, |r, c| v[self.s_idx(i, k, r, c)]))
                    .collect();
                PolyMatrix1::new(ivs[i], coeffs).unwrap()
            })
            .collect();
        let rr = (0..self.k())
            .map(|i| {
                (0..self.k())
                    .map(|j| {
                        let grid = (0..=self.dr)
                            .map(|a| {
                                (0..=self.dr)
                                    .map(|b| DMatrix::from_fn(n, n, |r, c| v[self.r_idx(i, j, a, b, r, c)]))
                                    .collect()
                            })
                            .collect();
                        PolyMatrix2::new(ivs[i], ivs[j], grid).unwrap()
                    })
                    .collect()
            })
            .collect();
        PqrsOperator { p, q, s, r: rr, taus: self.taus.clone() }
    }

    /// Linear functionals (sparse weights over flat indices) that determine
    /// the quadratic form `⟨z, op z⟩` on `Z` and are mutually independent:
    /// the symmetric part of `P` and of each `S` coefficient, every `Q`
    /// entry, and the symmetrized kernel coefficients for `i ≤ j`.
    pub fn form_slots(&self) -> Vec<Vec<(usize, f64)>> {
        let mut out = Vec::new();
        let pair = |a: usize, b: usize| -> Vec<(usize, f64)> {
            if a == b {
                vec![(a, 1.0)]
            } else {
                vec![(a, 0.5), (b, 0.5)]
            }
        };
        for c in 0..self.m {
            for r in 0..=c {
                out.push(pair(self.p_idx(r, c), self.p_idx(c, r)));
            }
        }
        for i in 0..self.k() {
            for k in 0..=self.dq {
                for r in 0..self.m {
                    for c in 0..self.n {
                        out.push(vec![(self.q_idx(i, k, r, c), 1.0)]);
                    }
                }
            }
            for k in 0..=self.ds {
                for c in 0..self.n {
                    for r in 0..=c {
                        out.push(pair(self.s_idx(i, k, r, c), self.s_idx(i, k, c, r)));
                    }
                }
            }
        }
        let nb = (self.dr + 1) * self.n;
        for i in 0..self.k() {
            for j in i..self.k() {
                for u in 0..nb {
                    let (a, r) = (u / self.n, u % self.n);
                    let vstart = if i == j { u } else { 0 };
                    for w in vstart..nb {
                        let (b, c) = (w / self.n, w % self.n);
                        out.push(pair(self.r_idx(i, j, a, b, r, c), self.r_idx(j, i, b, a, c, r)));
                    }
                }
            }
        }
        out
    }
}

/// Operator coefficients as affine expressions in SDP variables.
#[derive(Debug, Clone)]
pub struct AffineOp {
    pub layout: OpLayout,
    pub coeffs: Vec<LinExpr>,
}

impl AffineOp {
    pub fn constant(layout: OpLayout, op: &PqrsOperator) -> Result<Self, DimError> {
        let v = layout.flatten(op)?;
        Ok(Self { coeffs: v.into_iter().map(LinExpr::constant).collect(), layout })
    }

    /// Builds the affine map `x ↦ f(x)` for `f` affine in `x ∈ R^nvars`,
    /// attaching variable `k` to SDP variable `offset + k`.
    pub fn from_map(
        layout: OpLayout,
        nvars: usize,
        offset: usize,
        f: impl Fn(&[f64]) -> Result<PqrsOperator, DimError>,
    ) -> Result<Self, DimError> {
        let mut x = vec![0.0; nvars];
        let c0 = layout.flatten(&f(&x)?)?;
        let mut coeffs: Vec<LinExpr> = c0.iter().map(|&c| LinExpr::constant(c)).collect();
        for k in 0..nvars {
            x[k] = 1.0;
            let ck = layout.flatten(&f(&x)?)?;
            x[k] = 0.0;
            for (idx, (&a, &b)) in ck.iter().zip(&c0).enumerate() {
                let d = a - b;
                if d != 0.0 {
                    coeffs[idx].terms.push((offset + k, d));
                }
            }
        }
        Ok(Self { layout, coeffs })
    }

    pub fn neg(&self) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .map(|e| {
                let mut o = LinExpr::default();
                o.add_scaled(e, -1.0);
                o
            })
            .collect();
        Self { layout: self.layout.clone(), coeffs }
    }

    /// `self + a·other`.
    pub fn add_scaled(&self, other: &AffineOp, a: f64) -> Self {
        assert_eq!(self.layout, other.layout);
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(x, y)| {
                let mut o = x.clone();
                o.add_scaled(y, a);
                o
            })
            .collect();
        Self { layout: self.layout.clone(), coeffs }
    }

    /// Adds `a·var` times the coefficients of the constant `op`.
    pub fn add_var_times(&mut self, var: usize, op: &PqrsOperator, a: f64) -> Result<(), DimError> {
        let v = self.layout.flatten(op)?;
        for (e, &c) in self.coeffs.iter_mut().zip(&v) {
            e.add_term(var, a * c);
        }
        Ok(())
    }

    /// Re-pads to a layout with larger degree bounds.
    pub fn relayout(&self, target: &OpLayout) -> Result<Self, DimError> {
        let l = &self.layout;
        if target.m != l.m || target.n != l.n || target.taus != l.taus {
            return Err(DimError::Mismatch("relayout across spaces".into()));
        }
        if target.dq < l.dq || target.ds < l.ds || target.dr < l.dr {
            return Err(DimError::Mismatch(format!(
                "operator degrees (Q {}, S {}, R {}) exceed bounds (Q {}, S {}, R {})",
                l.dq, l.ds, l.dr, target.dq, target.ds, target.dr
            )));
        }
        let mut coeffs = vec![LinExpr::default(); target.len()];
        for r in 0..l.m {
            for c in 0..l.m {
                coeffs[target.p_idx(r, c)] = self.coeffs[l.p_idx(r, c)].clone();
            }
        }
        for i in 0..l.k() {
            for k in 0..=l.dq {
                for r in 0..l.m {
                    for c in 0..l.n {
                        coeffs[target.q_idx(i, k, r, c)] = self.coeffs[l.q_idx(i, k, r, c)].clone();
                    }
                }
            }
            for k in 0..=l.ds {
                for r in 0..l.n {
                    for c in 0..l.n {
                        coeffs[target.s_idx(i, k, r, c)] = self.coeffs[l.s_idx(i, k, r, c)].clone();
                    }
                }
            }
            for j in 0..l.k() {
                for a in 0..=l.dr {
                    for b in 0..=l.dr {
                        for r in 0..l.n {
                            for c in 0..l.n {
                                coeffs[target.r_idx(i, j, a, b, r, c)] =
                                    self.coeffs[l.r_idx(i, j, a, b, r, c)].clone();
                            }
                        }
                    }
                }
            }
        }
        Ok(Self { layout: target.clone(), coeffs })
    }

    pub fn eval(&self, x: &[f64]) -> PqrsOperator {
        let v: Vec<f64> = self.coeffs.iter().map(|e| e.eval(x)).collect();
        self.layout.unflatten(&v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delayop::ZElement;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flatten_roundtrip() {
        let layout = OpLayout::for_degree(3, 2, &[0.5, 1.0], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        let v: Vec<f64> = (0..layout.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let op = layout.unflatten(&v);
        assert_eq!(layout.flatten(&op).unwrap(), v);
    }

    #[test]
    fn slots_are_disjoint_and_cover_form() {
        let layout = OpLayout::for_degree(2, 2, &[0.5, 1.0], 1);
        let slots = layout.form_slots();
        let mut seen = vec![0usize; layout.len()];
        for s in &slots {
            for &(i, _) in s {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn form_depends_only_on_slots() {
        // An operator whose slot values all vanish has a zero quadratic form.
        let layout = OpLayout::for_degree(2, 2, &[0.5, 1.0], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        use rand::Rng;
        let mut v = vec![0.0; layout.len()];
        for s in layout.form_slots() {
            if s.len() == 2 {
                let a: f64 = rng.gen_range(-1.0..1.0);
                v[s[0].0] = a;
                v[s[1].0] = -a;
            }
        }
        let op = layout.unflatten(&v);
        for _ in 0..10 {
            let z = ZElement::random(&mut rng, 2, 2, &[0.5, 1.0], 3);
            assert!(crate::delayop::quad_form(&op, &z).unwrap().abs() < 1e-12);
        }
    }
}
