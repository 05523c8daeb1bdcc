//! Decision-variable parametrizations for the controller and estimator.

use crate::delayop::{OpLayout, PqrsOperator, ZElement};
use crate::poly::{Interval, PolyMatrix1, PolyMatrix2};
use nalgebra::{DMatrix, DVector};

/// Linear parametrization `flat = basis · θ` of self-adjoint operators on
/// `Z_{n,K}` (symmetric `P`, `S_i`, and `R_ij(s,θ) = R_ji(θ,s)ᵀ`),
/// optionally also satisfying the `X`-invariance identities
/// `P = τ_K (Q_i(0)ᵀ + S_i(0))` and `Q_j(s) = R_ij(0, s)`.
#[derive(Debug, Clone)]
pub struct SymParam {
    pub layout: OpLayout,
    /// Sparse columns of the basis, as (flat index, weight) lists.
    pub columns: Vec<Vec<(usize, f64)>>,
}

fn raw_columns(l: &OpLayout) -> Vec<Vec<(usize, f64)>> {
    let pair = |a: usize, b: usize| if a == b { vec![(a, 1.0)] } else { vec![(a, 1.0), (b, 1.0)] };
    let mut cols = Vec::new();
    for c in 0..l.m {
        for r in 0..=c {
            cols.push(pair(l.p_idx(r, c), l.p_idx(c, r)));
        }
    }
    for i in 0..l.k() {
        for k in 0..=l.dq {
            for r in 0..l.m {
                for c in 0..l.n {
                    cols.push(vec![(l.q_idx(i, k, r, c), 1.0)]);
                }
            }
        }
        for k in 0..=l.ds {
            for c in 0..l.n {
                for r in 0..=c {
                    cols.push(pair(l.s_idx(i, k, r, c), l.s_idx(i, k, c, r)));
                }
            }
        }
    }
    let nb = (l.dr + 1) * l.n;
    for i in 0..l.k() {
        for j in i..l.k() {
            for u in 0..nb {
                let (a, r) = (u / l.n, u % l.n);
                for w in (if i == j { u } else { 0 })..nb {
                    let (b, c) = (w / l.n, w % l.n);
                    cols.push(pair(l.r_idx(i, j, a, b, r, c), l.r_idx(j, i, b, a, c, r)));
                }
            }
        }
    }
    cols
}

/// Basis of the nullspace of `a` by reduced row echelon form, as sparse
/// columns of coefficients over the columns of `a`.
fn nullspace_rref(mut a: DMatrix<f64>) -> Vec<Vec<(usize, f64)>> {
    let (rows, cols) = a.shape();
    let scale = a.amax().max(1.0);
    let tol = 1e-11 * scale;
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..cols {
        if row >= rows {
            break;
        }
        let (best, val) = (row..rows)
            .map(|r| (r, a[(r, col)].abs()))
            .fold((row, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= tol {
            continue;
        }
        a.swap_rows(row, best);
        let p = a[(row, col)];
        for c in 0..cols {
            a[(row, c)] /= p;
        }
        for r in 0..rows {
            if r != row {
                let f = a[(r, col)];
                if f != 0.0 {
                    for c in 0..cols {
                        let v = a[(row, c)];
                        a[(r, c)] -= f * v;
                    }
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    let is_pivot: Vec<bool> = (0..cols).map(|c| pivots.contains(&c)).collect();
    (0..cols)
        .filter(|&f| !is_pivot[f])
        .map(|f| {
            let mut v = vec![(f, 1.0)];
            for (r, &pc) in pivots.iter().enumerate() {
                let x = a[(r, f)];
                if x.abs() > tol {
                    v.push((pc, -x));
                }
            }
            v
        })
        .collect()
}

impl SymParam {
    pub fn new(n: usize, taus: &[f64], d: usize, boundary_coupled: bool) -> Self {
        let layout = OpLayout::for_degree(n, n, taus, d);
        let raw = raw_columns(&layout);
        if !boundary_coupled {
            return Self { layout, columns: raw };
        }
        let l = &layout;
        let tk = l.tau_k();
        // Constraint rows over flat indices.
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
        for i in 0..l.k() {
            for r in 0..n {
                for c in 0..n {
                    rows.push(vec![(l.p_idx(r, c), 1.0), (l.q_idx(i, 0, c, r), -tk), (l.s_idx(i, 0, r, c), -tk)]);
                }
            }
            for j in 0..l.k() {
                for k in 0..=l.dq {
                    for r in 0..n {
                        for c in 0..n {
                            rows.push(vec![(l.q_idx(j, k, r, c), 1.0), (l.r_idx(i, j, 0, k, r, c), -1.0)]);
                        }
                    }
                }
            }
        }
        let mut flat_to_raw: Vec<Vec<(usize, f64)>> = vec![Vec::new(); l.len()];
        for (ci, col) in raw.iter().enumerate() {
            for &(idx, w) in col {
                flat_to_raw[idx].push((ci, w));
            }
        }
        let mut cg = DMatrix::zeros(rows.len(), raw.len());
        for (ri, row) in rows.iter().enumerate() {
            for &(idx, w) in row {
                for &(ci, w2) in &flat_to_raw[idx] {
                    cg[(ri, ci)] += w * w2;
                }
            }
        }
        let null = nullspace_rref(cg);
        let columns = null
            .iter()
            .map(|v| {
                let mut acc: Vec<(usize, f64)> = Vec::new();
                for &(ci, a) in v {
                    for &(idx, w) in &raw[ci] {
                        acc.push((idx, a * w));
                    }
                }
                acc.sort_by_key(|t| t.0);
                let mut out: Vec<(usize, f64)> = Vec::new();
                for (idx, w) in acc {
                    match out.last_mut() {
                        Some(last) if last.0 == idx => last.1 += w,
                        _ => out.push((idx, w)),
                    }
                }
                out.retain(|t| t.1 != 0.0);
                out
            })
            .collect();
        Self { layout, columns }
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn op(&self, theta: &[f64]) -> PqrsOperator {
        let mut v = vec![0.0; self.layout.len()];
        for (col, &t) in self.columns.iter().zip(theta) {
            if t != 0.0 {
                for &(idx, w) in col {
                    v[idx] += w * t;
                }
            }
        }
        self.layout.unflatten(&v)
    }
}

fn take_matrix(x: &[f64], at: &mut usize, r: usize, c: usize) -> DMatrix<f64> {
    let m = DMatrix::from_row_slice(r, c, &x[*at..*at + r * c]);
    *at += r * c;
    m
}

fn take_poly(x: &[f64], at: &mut usize, r: usize, c: usize, deg: usize, iv: Interval) -> PolyMatrix1 {
    let coeffs = (0..=deg).map(|_| take_matrix(x, at, r, c)).collect();
    PolyMatrix1::new(iv, coeffs).unwrap()
}

fn take_kernel(x: &[f64], at: &mut usize, r: usize, c: usize, deg: usize, a: Interval, b: Interval) -> PolyMatrix2 {
    let grid = (0..=deg).map(|_| (0..=deg).map(|_| take_matrix(x, at, r, c)).collect()).collect();
    PolyMatrix2::new(a, b, grid).unwrap()
}

/// `{P1, Q1i, S1i, R1ij}` and `{H0, H1i, H2i}` as numbers.
#[derive(Debug, Clone)]
pub struct ControllerVars {
    pub p1: PqrsOperator,
    pub h0: DMatrix<f64>,
    pub h1: Vec<DMatrix<f64>>,
    pub h2: Vec<PolyMatrix1>,
}

impl ControllerVars {
    /// `H0 y + Σ H1i y_i(−τ_i) + Σ ∫ H2i y_i`.
    pub fn apply_h(&self, y: &ZElement) -> DVector<f64> {
        let mut out = &self.h0 * &y.x;
        for i in 0..self.h1.len() {
            out += &self.h1[i] * y.phi[i].eval_unchecked(-self.p1.taus[i]).column(0);
            out += self.h2[i].try_mul(&y.phi[i]).unwrap().integrate().column(0);
        }
        out
    }
}

/// Flat-vector layout of the controller decision variables.
#[derive(Debug, Clone)]
pub struct ControllerVarLayout {
    pub sym: SymParam,
    pub m: usize,
    pub d: usize,
}

impl ControllerVarLayout {
    pub fn new(n: usize, m: usize, taus: &[f64], d: usize) -> Self {
        Self { sym: SymParam::new(n, taus, d, true), m, d }
    }
    fn n(&self) -> usize {
        self.sym.layout.n
    }
    pub fn len(&self) -> usize {
        let (n, m, k, d) = (self.n(), self.m, self.sym.layout.k(), self.d);
        self.sym.dim() + m * n * (1 + k) + k * (d + 1) * m * n
    }
    pub fn unpack(&self, x: &[f64]) -> ControllerVars {
        let (n, m, d) = (self.n(), self.m, self.d);
        let taus = &self.sym.layout.taus;
        let nd = self.sym.dim();
        let p1 = self.sym.op(&x[..nd]);
        let mut at = nd;
        let h0 = take_matrix(x, &mut at, m, n);
        let h1 = taus.iter().map(|_| take_matrix(x, &mut at, m, n)).collect();
        let h2 = taus.iter().map(|&t| take_poly(x, &mut at, m, n, d, Interval::delay(t))).collect();
        ControllerVars { p1, h0, h1, h2 }
    }
}

/// `{P2, Q2i, S2i, R2ij}` and `{Z1, ..., Z7ij}` as numbers.
#[derive(Debug, Clone)]
pub struct EstimatorVars {
    pub p2: PqrsOperator,
    pub z1: DMatrix<f64>,
    pub z2: Vec<DMatrix<f64>>,
    pub z3: Vec<PolyMatrix1>,
    pub z4: Vec<PolyMatrix1>,
    pub z5: Vec<Vec<PolyMatrix1>>,
    pub z6: Vec<PolyMatrix1>,
    pub z7: Vec<Vec<PolyMatrix2>>,
}

impl EstimatorVars {
    /// Applies the injection parametrization to `y ∈ Z_{q,q,K}`; the result
    /// lies in `Z_{n,n,K}`.
    pub fn apply_z(&self, y: &ZElement) -> ZElement {
        let taus = &self.p2.taus;
        let tk = *taus.last().unwrap();
        let k = taus.len();
        let ym = DMatrix::from_column_slice(y.x.len(), 1, y.x.as_slice());
        let ends: Vec<DMatrix<f64>> = (0..k).map(|j| y.phi[j].eval_unchecked(-taus[j])).collect();
        let mut head = &self.z1 * &y.x;
        for i in 0..k {
            head += &self.z2[i] * ends[i].column(0);
            head += self.z3[i].try_mul(&y.phi[i]).unwrap().integrate().column(0);
        }
        let phi = (0..k)
            .map(|i| {
                let mut zi = self.z4[i].right_mul(&ym);
                for j in 0..k {
                    zi = zi.try_add(&self.z5[i][j].right_mul(&ends[j])).unwrap();
                    zi = zi.try_add(&self.z7[i][j].apply_theta(&y.phi[j]).unwrap()).unwrap();
                }
                zi = zi.try_add(&self.z6[i].try_mul(&y.phi[i]).unwrap()).unwrap();
                zi.scale(tk)
            })
            .collect();
        ZElement { x: head, phi }
    }
}

#[derive(Debug, Clone)]
pub struct EstimatorVarLayout {
    pub sym: SymParam,
    pub q: usize,
    pub d: usize,
}

impl EstimatorVarLayout {
    pub fn new(n: usize, q: usize, taus: &[f64], d: usize) -> Self {
        Self { sym: SymParam::new(n, taus, d, false), q, d }
    }
    fn n(&self) -> usize {
        self.sym.layout.n
    }
    pub fn len(&self) -> usize {
        let (n, q, k, d) = (self.n(), self.q, self.sym.layout.k(), self.d);
        let nq = n * q;
        self.sym.dim() + nq * (1 + k) + 2 * k * (d + 1) * nq + k * k * (d + 1) * nq + k * (2 * d + 1) * nq
            + k * k * (d + 1) * (d + 1) * nq
    }
    pub fn unpack(&self, x: &[f64]) -> EstimatorVars {
        let (n, q, d) = (self.n(), self.q, self.d);
        let taus = self.sym.layout.taus.clone();
        let ivs: Vec<Interval> = taus.iter().map(|&t| Interval::delay(t)).collect();
        let nd = self.sym.dim();
        let p2 = self.sym.op(&x[..nd]);
        let mut at = nd;
        let z1 = take_matrix(x, &mut at, n, q);
        let z2 = ivs.iter().map(|_| take_matrix(x, &mut at, n, q)).collect();
        let z3 = ivs.iter().map(|&iv| take_poly(x, &mut at, n, q, d, iv)).collect();
        let z4 = ivs.iter().map(|&iv| take_poly(x, &mut at, n, q, d, iv)).collect();
        let z5 = ivs
            .iter()
            .map(|&iv| ivs.iter().map(|_| take_poly(x, &mut at, n, q, d, iv)).collect())
            .collect();
        let z6 = ivs.iter().map(|&iv| take_poly(x, &mut at, n, q, 2 * d, iv)).collect();
        let z7 = ivs
            .iter()
            .map(|&a| ivs.iter().map(|&b| take_kernel(x, &mut at, n, q, d, a, b)).collect())
            .collect();
        debug_assert_eq!(at, self.len());
        EstimatorVars { p2, z1, z2, z3, z4, z5, z6, z7 }
    }
}
