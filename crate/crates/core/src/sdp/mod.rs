//! Solver-agnostic semidefinite programs: free scalar variables, PSD
//! blocks over affine entries, linear equalities and a linear objective.

mod clarabel_adapter;

pub use clarabel_adapter::{ClarabelSolver, SolverSettings};

use serde::{Deserialize, Serialize};

/// Sparse affine expression `constant + Σ coef·x[var]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(v: usize) -> Self {
        Self { terms: vec![(v, 1.0)], constant: 0.0 }
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.iter().all(|&(_, c)| c == 0.0)
    }

    pub fn add_term(&mut self, v: usize, c: f64) {
        if c != 0.0 {
            self.terms.push((v, c));
        }
    }

    pub fn add_scaled(&mut self, other: &LinExpr, a: f64) {
        self.constant += a * other.constant;
        for &(v, c) in &other.terms {
            self.add_term(v, a * c);
        }
    }

    /// Merge repeated variables and drop zero coefficients.
    pub fn compact(&mut self) {
        self.terms.sort_by_key(|t| t.0);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for &(v, c) in &self.terms {
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => out.push((v, c)),
            }
        }
        out.retain(|t| t.1 != 0.0);
        self.terms = out;
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>()
    }
}

/// Symmetric block constrained PSD. `entries` holds the upper triangle in
/// column-major order: (0,0), (0,1), (1,1), (0,2), ...
#[derive(Debug, Clone)]
pub struct PsdConstraint {
    pub size: usize,
    pub entries: Vec<LinExpr>,
    pub label: String,
}

/// Index of `(i, j)`, `i <= j`, in column-major upper-triangle storage.
pub fn triu_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    j * (j + 1) / 2 + i
}

/// A PSD matrix whose entries are fresh variables.
#[derive(Debug, Clone, Copy)]
pub struct PsdVar {
    pub size: usize,
    pub first: usize,
}

impl PsdVar {
    pub fn var(&self, i: usize, j: usize) -> usize {
        self.first + triu_index(i, j)
    }
    pub fn len(&self) -> usize {
        self.size * (self.size + 1) / 2
    }
    pub fn value(&self, x: &[f64]) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.size, self.size, |i, j| x[self.var(i, j)])
    }
}

#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    pub n_vars: usize,
    /// Each expression is constrained to equal zero.
    pub equalities: Vec<LinExpr>,
    /// Each expression is constrained to be nonnegative.
    pub nonneg: Vec<LinExpr>,
    pub psd: Vec<PsdConstraint>,
    /// Minimized.
    pub objective: LinExpr,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_vars(&mut self, k: usize) -> usize {
        let first = self.n_vars;
        self.n_vars += k;
        first
    }

    pub fn add_psd_var(&mut self, size: usize, label: impl Into<String>) -> PsdVar {
        let first = self.add_vars(size * (size + 1) / 2);
        let v = PsdVar { size, first };
        let entries = (0..v.len()).map(|k| LinExpr::var(first + k)).collect();
        self.psd.push(PsdConstraint { size, entries, label: label.into() });
        v
    }

    pub fn add_equality(&mut self, mut e: LinExpr) {
        e.compact();
        if !e.terms.is_empty() || e.constant != 0.0 {
            self.equalities.push(e);
        }
    }

    pub fn add_nonneg(&mut self, mut e: LinExpr) {
        e.compact();
        self.nonneg.push(e);
    }

    /// Largest violation of the equality and nonnegativity rows at `x`.
    pub fn max_linear_violation(&self, x: &[f64]) -> f64 {
        let eq = self.equalities.iter().map(|e| e.eval(x).abs()).fold(0.0, f64::max);
        let ineq = self.nonneg.iter().map(|e| (-e.eval(x)).max(0.0)).fold(0.0, f64::max);
        eq.max(ineq)
    }

    /// Smallest eigenvalue over all PSD blocks at `x`.
    pub fn min_psd_eigenvalue(&self, x: &[f64]) -> f64 {
        self.psd
            .iter()
            .map(|b| {
                let m = nalgebra::DMatrix::from_fn(b.size, b.size, |i, j| b.entries[triu_index(i, j)].eval(x));
                m.symmetric_eigenvalues().min()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdpSolution {
    pub status: SolveStatus,
    /// The backend's own termination status.
    pub raw_status: String,
    #[serde(skip)]
    pub x: Vec<f64>,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: u32,
    pub solve_time: f64,
}

pub trait Solver: Sync {
    fn solve(&self, problem: &SdpProblem) -> SdpSolution;
    fn name(&self) -> &str;
    fn settings_json(&self) -> serde_json::Value;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triu_layout_is_column_major() {
        assert_eq!(triu_index(0, 0), 0);
        assert_eq!(triu_index(0, 1), 1);
        assert_eq!(triu_index(1, 1), 2);
        assert_eq!(triu_index(0, 2), 3);
        assert_eq!(triu_index(2, 1), 4);
    }

    #[test]
    fn compact_merges_terms() {
        let mut e = LinExpr { terms: vec![(3, 1.0), (1, 2.0), (3, -1.0)], constant: 0.5 };
        e.compact();
        assert_eq!(e.terms, vec![(1, 2.0)]);
        assert_eq!(e.eval(&[0.0, 2.0, 0.0, 9.0]), 4.5);
    }
}
