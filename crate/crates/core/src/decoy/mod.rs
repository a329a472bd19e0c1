//! Finite-key security analysis: decoy-state bounds on the single-photon
//! contribution, phase-error estimation and the secure key length.
//!
//! Every observed count enters through a Chernoff interval at the per-bound
//! failure probability, taken on whichever side weakens the estimate. Two
//! estimators are available. [`Estimator::Analytic`] uses the closed-form
//! vacuum+weak bounds. [`Estimator::Lp`] solves linear programs over all
//! photon-number yields up to a cutoff and serves as a cross-check.

mod analytic;
mod chernoff;
mod entropy;
mod key;
mod lp;

use log::warn;
use serde::{Deserialize, Serialize};

pub use analytic::{
    estimate_e11_upper, estimate_m11_lower, random_sampling_deviation, single_photon_weight, DecoyBounds,
    PhaseErrorBound,
};
pub use chernoff::{chernoff_interval, ChernoffInterval, Side};
pub use entropy::binary_entropy;
pub use key::{error_correction_cost, key_rate, ratio_report, secure_key_length, Ratios};
pub use lp::{lp_decoy_bounds, lp_estimate, LpEstimate};

use crate::error::{Error, Result};
use crate::photonics::DEFAULT_PHOTON_CUTOFF;
use crate::protocol::{Basis, CellKey, CountTables, IntensityClass, IntensitySet};

/// Chernoff applications of the analytic chain: 7 gains per basis, 4 X-basis
/// error gains and the random-sampling step.
pub const ANALYTIC_EPSILON_SHARES: usize = 19;
/// Two sides of 9 gains per basis and 9 X-basis error gains, plus sampling.
pub const LP_EPSILON_SHARES: usize = 55;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    Analytic,
    Lp,
}

/// Analysis input: per-cell counts plus the source settings that produced
/// them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedStats {
    pub tables: CountTables,
    pub alice: IntensitySet,
    pub bob: IntensitySet,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Tally {
    Coincidences,
    Errors,
}

impl ObservedStats {
    pub fn new(tables: CountTables, alice: IntensitySet, bob: IntensitySet, duration_s: f64) -> Result<Self> {
        let stats = Self {
            tables,
            alice,
            bob,
            duration_s,
        };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        self.alice.validate()?;
        self.bob.validate()?;
        self.tables.validate()?;
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Config(format!(
                "duration must be positive, got {}",
                self.duration_s
            )));
        }
        Ok(())
    }

    pub fn signal_key() -> CellKey {
        CellKey::new(Basis::Z, IntensityClass::Signal, IntensityClass::Signal)
    }

    /// Sifted key-cell coincidences M and their QBER E.
    pub fn signal_count(&self) -> u64 {
        self.tables.cell(Self::signal_key()).coincidences
    }

    pub fn signal_qber(&self) -> f64 {
        self.tables.qber(Self::signal_key()).unwrap_or(0.0)
    }

    pub(crate) fn means(&self, key: CellKey) -> (f64, f64) {
        (self.alice.mean(key.alice), self.bob.mean(key.bob))
    }

    pub(crate) fn pulses(&self, key: CellKey) -> f64 {
        self.tables.cell(key).pulses_sent as f64
    }

    /// Per-pulse gain bound. A cell with no pulses carries no information:
    /// its bounds are the physical range [0, 1].
    pub(crate) fn gain_bound(&self, key: CellKey, tally: Tally, epsilon: f64, side: Side) -> Result<f64> {
        let cell = self.tables.cell(key);
        if cell.pulses_sent == 0 {
            return Ok(match side {
                Side::Lower => 0.0,
                Side::Upper => 1.0,
            });
        }
        let count = match tally {
            Tally::Coincidences => cell.coincidences,
            Tally::Errors => cell.errors,
        };
        let bound = chernoff_interval(count as f64, epsilon)?.side(side);
        Ok((bound / cell.pulses_sent as f64).min(1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SecurityParams {
    pub epsilon_total: f64,
    /// Overrides the equal split of `epsilon_total`.
    pub epsilon_per_bound: Option<f64>,
    /// Error-correction inefficiency.
    pub f: f64,
    pub photon_cutoff: usize,
}

impl Default for SecurityParams {
    fn default() -> Self {
        Self {
            epsilon_total: 1e-10,
            epsilon_per_bound: None,
            f: 1.16,
            photon_cutoff: DEFAULT_PHOTON_CUTOFF,
        }
    }
}

impl SecurityParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_total > 0.0 && self.epsilon_total < 1.0) {
            return Err(Error::Config(format!(
                "epsilon_total must lie in (0, 1), got {}",
                self.epsilon_total
            )));
        }
        if let Some(e) = self.epsilon_per_bound {
            if !(e > 0.0 && e < 1.0) {
                return Err(Error::Config(format!("epsilon_per_bound must lie in (0, 1), got {e}")));
            }
        }
        if !(self.f >= 1.0 && self.f.is_finite()) {
            return Err(Error::Config(format!("f must be at least 1, got {}", self.f)));
        }
        if self.photon_cutoff < 2 {
            return Err(Error::Config("photon cutoff must be at least 2".into()));
        }
        Ok(())
    }

    pub fn epsilon_for(&self, estimator: Estimator) -> f64 {
        let shares = match estimator {
            Estimator::Analytic => ANALYTIC_EPSILON_SHARES,
            Estimator::Lp => LP_EPSILON_SHARES,
        };
        self.epsilon_per_bound.unwrap_or(self.epsilon_total / shares as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyResult {
    pub estimator: Estimator,
    pub epsilon_per_bound: f64,
    /// Key-cell coincidences M and QBER E.
    pub m_signal: f64,
    pub e_signal: f64,
    pub m11_lower: f64,
    /// `None` when no single-photon contribution can be certified.
    pub phase_error: Option<PhaseErrorBound>,
    pub e11_upper: Option<f64>,
    pub k_ec: f64,
    pub key_bits: f64,
    pub rate_bps: f64,
    /// The bounds leave no secure key.
    pub insecure: bool,
    pub ratios: Option<Ratios>,
}

impl KeyResult {
    pub fn zero_key(&self) -> bool {
        self.key_bits <= 0.0
    }
}

/// Runs the full chain: single-photon bounds, phase error, error-correction
/// cost, key length, rate and ratio decomposition.
pub fn analyze(stats: &ObservedStats, sec: &SecurityParams, estimator: Estimator) -> Result<KeyResult> {
    stats.validate()?;
    sec.validate()?;
    let epsilon = sec.epsilon_for(estimator);
    let bounds = match estimator {
        Estimator::Analytic => analytic::analytic_decoy_bounds(stats, epsilon)?,
        Estimator::Lp => lp_decoy_bounds(stats, sec.photon_cutoff, epsilon)?,
    };
    let m11_lower = bounds.m11_lower(stats);
    let phase_error = match bounds.phase_error(stats, m11_lower, epsilon) {
        Ok(p) => Some(p),
        Err(Error::Undefined(msg)) => {
            warn!("phase error undefined: {msg}");
            None
        }
        Err(e) => return Err(e),
    };

    let m_signal = stats.signal_count() as f64;
    let e_signal = stats.signal_qber();
    let k_ec = error_correction_cost(m_signal, e_signal, sec.f)?;
    let (key_bits, insecure) = match &phase_error {
        Some(p) => {
            let k = secure_key_length(m11_lower, p.phase_error_upper.min(1.0), k_ec)?;
            (k, p.insecure || k <= 0.0)
        }
        None => (0.0, true),
    };
    let e11_upper = phase_error.as_ref().map(|p| p.phase_error_upper);
    let ratios = if m_signal > 0.0 {
        Some(Ratios::from_parts(
            m_signal,
            m11_lower,
            e11_upper.unwrap_or(0.5),
            k_ec,
            key_bits,
        )?)
    } else {
        None
    };
    Ok(KeyResult {
        estimator,
        epsilon_per_bound: epsilon,
        m_signal,
        e_signal,
        m11_lower,
        phase_error,
        e11_upper,
        k_ec,
        key_bits,
        rate_bps: key_rate(key_bits, stats.duration_s)?,
        insecure,
        ratios,
    })
}
