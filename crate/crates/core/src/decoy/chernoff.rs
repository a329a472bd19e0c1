use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Lower,
    Upper,
}

/// Bounds on the expectation of a count, each failing with probability at
/// most ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChernoffInterval {
    pub lower: f64,
    pub upper: f64,
}

impl ChernoffInterval {
    pub fn side(&self, side: Side) -> f64 {
        match side {
            Side::Lower => self.lower,
            Side::Upper => self.upper,
        }
    }
}

const BISECTION_STEPS: usize = 200;

/// χ·(d − ln(1 + d)) with d = E/χ − 1, the exponent shared by both tails.
fn tail_exponent(expected: f64, observed: f64) -> f64 {
    let d = expected / observed - 1.0;
    observed * (d - d.ln_1p())
}

fn bisect(mut lo: f64, mut hi: f64, mut above_root: impl FnMut(f64) -> bool) -> f64 {
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if above_root(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Multiplicative Chernoff interval for the expected value behind an
/// observed count χ.
///
/// The lower end is χ/(1+δ_L) with χ(δ_L/(1+δ_L) − ln(1+δ_L)) = ln ε and the
/// upper end χ/(1−δ_U) with χ(−δ_U/(1−δ_U) − ln(1−δ_U)) = ln ε. In terms of
/// E both reduce to E − χ − χ ln(E/χ) = ln(1/ε), one root on each side of χ.
/// For χ = 0 the interval is [0, ln(1/ε)].
pub fn chernoff_interval(observed: f64, epsilon: f64) -> Result<ChernoffInterval> {
    if !(observed >= 0.0 && observed.is_finite()) {
        return Err(Error::Domain(format!(
            "observed count must be finite and non-negative, got {observed}"
        )));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let target = -epsilon.ln();
    if observed == 0.0 {
        return Ok(ChernoffInterval {
            lower: 0.0,
            upper: target,
        });
    }
    let lower = bisect(0.0, observed, |e| tail_exponent(e, observed) < target);
    let mut hi = observed + target + 2.0 * (observed * target).sqrt() + 1.0;
    while tail_exponent(hi, observed) < target {
        hi = observed + 2.0 * (hi - observed);
    }
    let upper = bisect(observed, hi, |e| tail_exponent(e, observed) >= target);
    Ok(ChernoffInterval {
        lower: lower.max(0.0),
        upper,
    })
}
