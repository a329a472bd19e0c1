//! Linear-programming decoy bounds over the yields Y_nm, n, m ≤ N.
//!
//! Each cell's Chernoff-relaxed gain constrains the Poisson mixture
//! Σ P_a(n) P_b(m) Y_nm. Pairs above the cutoff can contribute at most their
//! Poisson mass (Y ≤ 1), which relaxes the lower side only. Variables are
//! divided by the largest gain bound so the constraint matrix is O(1).

use microlp::{ComparisonOp, OptimizationDirection, Problem, Variable};
use serde::{Deserialize, Serialize};

use super::analytic::{DecoyBounds, PhaseErrorBound};
use super::{Estimator, ObservedStats, SecurityParams, Side, Tally};
use crate::error::{Error, Result};
use crate::photonics::poisson_pmf;
use crate::protocol::{Basis, CellKey};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpEstimate {
    pub bounds: DecoyBounds,
    pub m11_lower: f64,
    /// `None` flags that no phase-error bound exists.
    pub phase_error: Option<PhaseErrorBound>,
}

struct GainRow {
    weights: Vec<(usize, usize, f64)>,
    lower: f64,
    upper: f64,
}

fn gain_rows(stats: &ObservedStats, basis: Basis, tally: Tally, cutoff: usize, epsilon: f64) -> Result<Vec<GainRow>> {
    CellKey::all()
        .filter(|k| k.basis == basis)
        .map(|key| {
            let (a, b) = stats.means(key);
            let pa = poisson_pmf(a, cutoff);
            let pb = poisson_pmf(b, cutoff);
            let tail = 1.0 - pa.iter().sum::<f64>() * pb.iter().sum::<f64>();
            let mut weights = Vec::new();
            for (n, wa) in pa.iter().enumerate() {
                for (m, wb) in pb.iter().enumerate() {
                    if wa * wb > 0.0 {
                        weights.push((n, m, wa * wb));
                    }
                }
            }
            Ok(GainRow {
                weights,
                lower: stats.gain_bound(key, tally, epsilon, Side::Lower)? - tail.max(0.0),
                upper: stats.gain_bound(key, tally, epsilon, Side::Upper)?,
            })
        })
        .collect()
}

struct YieldProgram {
    problem: Problem,
    scale: f64,
}

impl YieldProgram {
    fn new(direction: OptimizationDirection, scale: f64) -> Self {
        Self {
            problem: Problem::new(direction),
            scale,
        }
    }

    fn variables(&mut self, cutoff: usize, objective: Option<(usize, usize)>) -> Vec<Vec<Variable>> {
        let max = 1.0 / self.scale;
        (0..=cutoff)
            .map(|n| {
                (0..=cutoff)
                    .map(|m| {
                        let obj = if objective == Some((n, m)) { 1.0 } else { 0.0 };
                        self.problem.add_var(obj, (0.0, max))
                    })
                    .collect()
            })
            .collect()
    }

    fn constrain(&mut self, vars: &[Vec<Variable>], rows: &[GainRow]) {
        for row in rows {
            let expr: Vec<(Variable, f64)> = row.weights.iter().map(|&(n, m, w)| (vars[n][m], w)).collect();
            if row.lower > 0.0 {
                self.problem
                    .add_constraint(expr.as_slice(), ComparisonOp::Ge, row.lower / self.scale);
            }
            self.problem
                .add_constraint(expr.as_slice(), ComparisonOp::Le, row.upper / self.scale);
        }
    }

    fn solve(&self, what: &str) -> Result<f64> {
        let outcome = self.problem.solve().map_err(|e| match e {
            microlp::Error::Infeasible => {
                Error::Infeasible(format!("{what}: observed gains admit no yield assignment"))
            }
            other => Error::Internal(format!("{what}: {other}")),
        })?;
        let solution = outcome
            .into_solution()
            .map_err(|_| Error::Internal(format!("{what}: solver interrupted")))?;
        Ok(solution.objective() * self.scale)
    }
}

fn scale_of(rows: &[&[GainRow]]) -> f64 {
    rows.iter()
        .flat_map(|r| r.iter())
        .map(|r| r.upper)
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE)
}

fn min_y11(rows: &[GainRow], cutoff: usize) -> Result<f64> {
    let mut lp = YieldProgram::new(OptimizationDirection::Minimize, scale_of(&[rows]));
    let y = lp.variables(cutoff, Some((1, 1)));
    lp.constrain(&y, rows);
    lp.solve("single-photon yield")
}

/// Error yields R and their complements S = Y − R, both non-negative.
fn max_ey11(gains: &[GainRow], errors: &[GainRow], cutoff: usize) -> Result<f64> {
    let mut lp = YieldProgram::new(OptimizationDirection::Maximize, scale_of(&[gains, errors]));
    let r = lp.variables(cutoff, Some((1, 1)));
    let s = lp.variables(cutoff, None);
    lp.constrain(&r, errors);
    for row in gains {
        let expr: Vec<(Variable, f64)> = row
            .weights
            .iter()
            .flat_map(|&(n, m, w)| [(r[n][m], w), (s[n][m], w)])
            .collect();
        if row.lower > 0.0 {
            lp.problem
                .add_constraint(expr.as_slice(), ComparisonOp::Ge, row.lower / lp.scale);
        }
        lp.problem
            .add_constraint(expr.as_slice(), ComparisonOp::Le, row.upper / lp.scale);
    }
    lp.solve("single-photon error yield")
}

pub fn lp_decoy_bounds(stats: &ObservedStats, cutoff: usize, epsilon: f64) -> Result<DecoyBounds> {
    if cutoff < 2 {
        return Err(Error::Config("photon cutoff must be at least 2".into()));
    }
    let z = gain_rows(stats, Basis::Z, Tally::Coincidences, cutoff, epsilon)?;
    let x = gain_rows(stats, Basis::X, Tally::Coincidences, cutoff, epsilon)?;
    let x_err = gain_rows(stats, Basis::X, Tally::Errors, cutoff, epsilon)?;
    Ok(DecoyBounds {
        y11_z_lower: min_y11(&z, cutoff)?,
        y11_x_lower: min_y11(&x, cutoff)?,
        ey11_x_upper: max_ey11(&x, &x_err, cutoff)?,
    })
}

/// LP counterpart of the analytic M11 and phase-error bounds.
pub fn lp_estimate(stats: &ObservedStats, sec: &SecurityParams) -> Result<LpEstimate> {
    stats.validate()?;
    sec.validate()?;
    let epsilon = sec.epsilon_for(Estimator::Lp);
    let bounds = lp_decoy_bounds(stats, sec.photon_cutoff, epsilon)?;
    let m11_lower = bounds.m11_lower(stats);
    let phase_error = match bounds.phase_error(stats, m11_lower, epsilon) {
        Ok(p) => Some(p),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(LpEstimate {
        bounds,
        m11_lower,
        phase_error,
    })
}
