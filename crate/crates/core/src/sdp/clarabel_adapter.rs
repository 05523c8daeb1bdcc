use super::{LinExpr, SdpProblem, SdpSolution, SolveStatus, Solver};
use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::{Deserialize, Serialize};

/// Subset of the interior-point settings exposed to users.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_iter: u32,
    /// Seconds per solve; `None` means unlimited.
    pub time_limit: Option<f64>,
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    pub tol_feas: f64,
    pub tol_infeas_abs: f64,
    pub tol_infeas_rel: f64,
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iter: 200,
            time_limit: None,
            tol_gap_abs: 1e-8,
            tol_gap_rel: 1e-8,
            tol_feas: 1e-8,
            tol_infeas_abs: 1e-8,
            tol_infeas_rel: 1e-8,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ClarabelSolver {
    pub settings: SolverSettings,
}

impl ClarabelSolver {
    pub fn new(settings: SolverSettings) -> Self {
        Self { settings }
    }
}

struct Rows {
    triplets: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
}

impl Rows {
    // Row encodes s = b - A x = scale * expr.
    fn push(&mut self, e: &LinExpr, scale: f64) {
        let row = self.b.len();
        for &(v, c) in &e.terms {
            self.triplets.push((row, v, -scale * c));
        }
        self.b.push(scale * e.constant);
    }
}

fn csc(m: usize, n: usize, mut t: Vec<(usize, usize, f64)>) -> CscMatrix<f64> {
    t.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
    let mut colptr = vec![0usize; n + 1];
    let mut rowval = Vec::with_capacity(t.len());
    let mut nzval: Vec<f64> = Vec::with_capacity(t.len());
    let mut last: Option<(usize, usize)> = None;
    for (r, c, v) in t {
        if last == Some((r, c)) {
            *nzval.last_mut().unwrap() += v;
            continue;
        }
        rowval.push(r);
        nzval.push(v);
        colptr[c + 1] += 1;
        last = Some((r, c));
    }
    for c in 0..n {
        colptr[c + 1] += colptr[c];
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}

impl Solver for ClarabelSolver {
    fn name(&self) -> &str {
        "clarabel"
    }

    fn settings_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.settings).unwrap_or_default()
    }

    fn solve(&self, p: &SdpProblem) -> SdpSolution {
        let n = p.n_vars;
        let mut rows = Rows { triplets: Vec::new(), b: Vec::new() };
        let mut cones = Vec::new();
        for e in &p.equalities {
            rows.push(e, 1.0);
        }
        if !p.equalities.is_empty() {
            cones.push(SupportedConeT::ZeroConeT(p.equalities.len()));
        }
        for e in &p.nonneg {
            rows.push(e, 1.0);
        }
        if !p.nonneg.is_empty() {
            cones.push(SupportedConeT::NonnegativeConeT(p.nonneg.len()));
        }
        let r2 = std::f64::consts::SQRT_2;
        for blk in &p.psd {
            for j in 0..blk.size {
                for i in 0..=j {
                    let scale = if i == j { 1.0 } else { r2 };
                    rows.push(&blk.entries[super::triu_index(i, j)], scale);
                }
            }
            cones.push(SupportedConeT::PSDTriangleConeT(blk.size));
        }
        let m = rows.b.len();
        let a = csc(m, n, rows.triplets);
        let mut q = vec![0.0; n];
        for &(v, c) in &p.objective.terms {
            q[v] += c;
        }
        let pm = CscMatrix::zeros((n, n));
        let s = &self.settings;
        let settings = DefaultSettingsBuilder::default()
            .verbose(s.verbose)
            .max_iter(s.max_iter)
            .time_limit(s.time_limit.unwrap_or(f64::INFINITY))
            .tol_gap_abs(s.tol_gap_abs)
            .tol_gap_rel(s.tol_gap_rel)
            .tol_feas(s.tol_feas)
            .tol_infeas_abs(s.tol_infeas_abs)
            .tol_infeas_rel(s.tol_infeas_rel)
            .build()
            .expect("valid solver settings");
        let mut solver = match DefaultSolver::new(&pm, &q, &a, &rows.b, &cones, settings) {
            Ok(s) => s,
            Err(e) => {
                return SdpSolution {
                    status: SolveStatus::NumericalFailure,
                    raw_status: format!("setup error: {e:?}"),
                    x: vec![0.0; n],
                    objective: f64::NAN,
                    primal_residual: f64::NAN,
                    dual_residual: f64::NAN,
                    iterations: 0,
                    solve_time: 0.0,
                }
            }
        };
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible => SolveStatus::Infeasible,
            _ => SolveStatus::NumericalFailure,
        };
        SdpSolution {
            status,
            raw_status: format!("{:?}", sol.status),
            x: sol.x.clone(),
            objective: sol.obj_val + p.objective.constant,
            primal_residual: sol.r_prim,
            dual_residual: sol.r_dual,
            iterations: sol.iterations,
            solve_time: sol.solve_time,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_psd_bound() {
        // max x s.t. [[1, x], [x, 1]] >= 0
        let mut p = SdpProblem::new();
        let x = p.add_vars(1);
        p.psd.push(super::super::PsdConstraint {
            size: 2,
            entries: vec![LinExpr::constant(1.0), LinExpr::var(x), LinExpr::constant(1.0)],
            label: "t".into(),
        });
        p.objective = LinExpr { terms: vec![(x, -1.0)], constant: 0.0 };
        let s = ClarabelSolver::default().solve(&p);
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.x[x] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn infeasible_is_reported() {
        let mut p = SdpProblem::new();
        let t = p.add_psd_var(2, "t");
        // t00 = -1 contradicts t >= 0
        let mut e = LinExpr::var(t.var(0, 0));
        e.constant = 1.0;
        p.add_equality(e);
        let s = ClarabelSolver::default().solve(&p);
        assert_eq!(s.status, SolveStatus::Infeasible);
    }
}
