//! Bisection on the performance level.

use super::SynthesisError;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Bisection<T> {
    /// Smallest feasible level found.
    pub gamma: f64,
    /// Largest level verified infeasible.
    pub lower: f64,
    pub evaluations: usize,
    #[serde(skip)]
    pub certificate: T,
}

/// Largest level tried when growing the upper bound.
pub const GAMMA_CAP: f64 = 1048576.0;

/// Finds the smallest feasible `γ` to relative tolerance `tol`.
///
/// `feasible(γ)` returns a certificate when `γ` is feasible. Without `hi`,
/// the upper bound grows by doubling from 1 up to [`GAMMA_CAP`]; without
/// `lo`, the lower bound is found by halving the upper bound (down to 1e-9).
pub fn bisect_gamma<T>(
    mut feasible: impl FnMut(f64) -> Result<Option<T>, SynthesisError>,
    lo: Option<f64>,
    hi: Option<f64>,
    tol: f64,
) -> Result<Bisection<T>, SynthesisError> {
    if !(tol > 0.0) {
        return Err(SynthesisError::Config("bisection tolerance must be positive".into()));
    }
    let mut evals = 0;
    let mut call = |g: f64, evals: &mut usize| {
        *evals += 1;
        feasible(g)
    };
    let (mut hi, mut cert, mut known_lo) = match hi {
        Some(h) => match call(h, &mut evals)? {
            Some(c) => (h, c, None),
            None => return Err(SynthesisError::UpperBoundInfeasible(h)),
        },
        None => {
            let mut g = 1.0;
            let mut last_bad = None;
            loop {
                if let Some(c) = call(g, &mut evals)? {
                    break (g, c, last_bad);
                }
                last_bad = Some(g);
                g *= 2.0;
                if g > GAMMA_CAP {
                    return Err(SynthesisError::UpperBoundInfeasible(GAMMA_CAP));
                }
            }
        }
    };
    let mut lo = match (lo, known_lo.take()) {
        (Some(l), _) => {
            if l >= hi {
                return Err(SynthesisError::Config(format!("lower bound {l} is not below upper bound {hi}")));
            }
            if call(l, &mut evals)?.is_some() {
                return Err(SynthesisError::LowerBoundFeasible(l));
            }
            l
        }
        (None, Some(l)) => l,
        (None, None) => {
            let mut g = hi;
            loop {
                g *= 0.5;
                if g < 1e-9 {
                    return Err(SynthesisError::LowerBoundFeasible(g));
                }
                match call(g, &mut evals)? {
                    Some(c) => {
                        hi = g;
                        cert = c;
                    }
                    None => break g,
                }
            }
        }
    };
    while hi - lo > tol * hi {
        let mid = 0.5 * (lo + hi);
        match call(mid, &mut evals)? {
            Some(c) => {
                hi = mid;
                cert = c;
            }
            None => lo = mid,
        }
    }
    Ok(Bisection { gamma: hi, lower: lo, evaluations: evals, certificate: cert })
}
