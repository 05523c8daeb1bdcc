//! Reference levels for the bundled examples and the tolerance bands the
//! regression runs are judged by.

use serde::{Deserialize, Serialize};

/// `(example, degree, γ1, γ2)`.
pub const GAMMA_MIN: [(&str, usize, f64, f64); 9] = [
    ("example1", 1, 1.9082, 4.1485),
    ("example1", 2, 1.6829, 4.1425),
    ("example1", 4, 1.6359, 4.1425),
    ("example2", 1, 0.1067, 0.1325),
    ("example2", 2, 0.1060, 0.1325),
    ("example2", 4, 0.1059, 0.1325),
    ("example3", 1, 1.049, 1.4862),
    ("example3", 2, 0.9892, 1.4851),
    ("example3", 4, 0.9596, 1.4851),
];

/// Simulated closed-loop gains reported for the examples.
pub const GAMMA_REAL: [(&str, f64); 3] = [("example1", 0.7893), ("example2", 0.0738), ("example3", 0.6080)];

pub const MATCH_TOL: f64 = 0.10;
pub const CONSERVATIVE_TOL: f64 = 0.25;

pub fn gamma_min(example: &str, degree: usize) -> Option<(f64, f64)> {
    GAMMA_MIN.iter().find(|c| c.0 == example && c.1 == degree).map(|c| (c.2, c.3))
}

pub fn gamma_real(example: &str) -> Option<f64> {
    GAMMA_REAL.iter().find(|c| c.0 == example).map(|c| c.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Match,
    /// Outside the match band but within the conservative band.
    Conservative,
    Miss,
}

/// Signed relative deviation and its verdict.
pub fn judge(value: f64, target: f64) -> (f64, Verdict) {
    let rel = (value - target) / target;
    let v = if rel.abs() <= MATCH_TOL {
        Verdict::Match
    } else if rel.abs() <= CONSERVATIVE_TOL {
        Verdict::Conservative
    } else {
        Verdict::Miss
    };
    (rel, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bands_are_symmetric() {
        assert_eq!(judge(1.0999, 1.0).1, Verdict::Match);
        assert_eq!(judge(0.9001, 1.0).1, Verdict::Match);
        assert_eq!(judge(1.1001, 1.0).1, Verdict::Conservative);
        assert_eq!(judge(0.7501, 1.0).1, Verdict::Conservative);
        assert_eq!(judge(0.7, 1.0).1, Verdict::Miss);
        assert_eq!(gamma_min("example2", 2), Some((0.1060, 0.1325)));
        assert_eq!(gamma_min("example2", 3), None);
    }
}
