use serde::{Deserialize, Serialize};

use super::entropy::{binary_entropy, clamped_entropy};
use super::{KeyResult, ObservedStats};
use crate::error::{Error, Result};

/// K_ec = M · f · H(E).
pub fn error_correction_cost(m: f64, e: f64, f: f64) -> Result<f64> {
    if !(f >= 1.0) {
        return Err(Error::Domain(format!(
            "error-correction inefficiency must be at least 1, got {f}"
        )));
    }
    if !(m >= 0.0) {
        return Err(Error::Domain(format!("sifted count must be non-negative, got {m}")));
    }
    Ok(m * f * binary_entropy(e)?)
}

/// K = max(0, M11 (1 − H(e11)) − K_ec). Rates above 1/2 count as 1/2.
pub fn secure_key_length(m11_lower: f64, e11_upper: f64, k_ec: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&e11_upper) {
        return Err(Error::Domain(format!(
            "phase error rate must lie in [0, 1], got {e11_upper}"
        )));
    }
    Ok((m11_lower * (1.0 - clamped_entropy(e11_upper)) - k_ec).max(0.0))
}

pub fn key_rate(key_bits: f64, duration_s: f64) -> Result<f64> {
    if !(duration_s > 0.0) {
        return Err(Error::Domain(format!("duration must be positive, got {duration_s}")));
    }
    Ok(key_bits / duration_s)
}

/// Shares of the sifted key-cell count M consumed by error correction,
/// multiphoton pairs and privacy amplification, and left as final key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub ec_fraction: f64,
    pub multiphoton_fraction: f64,
    pub phase_error_fraction: f64,
    pub final_key_fraction: f64,
}

impl Ratios {
    pub fn from_parts(m: f64, m11: f64, e11: f64, k_ec: f64, key_bits: f64) -> Result<Self> {
        if !(m > 0.0) {
            return Err(Error::Undefined(
                "ratio decomposition needs a positive sifted count".into(),
            ));
        }
        Ok(Self {
            ec_fraction: k_ec / m,
            multiphoton_fraction: (m - m11) / m,
            phase_error_fraction: m11 * clamped_entropy(e11) / m,
            final_key_fraction: key_bits / m,
        })
    }

    pub fn sum(&self) -> f64 {
        self.ec_fraction + self.multiphoton_fraction + self.phase_error_fraction + self.final_key_fraction
    }

    pub fn as_array(&self) -> [(&'static str, f64); 4] {
        [
            ("error correction", self.ec_fraction),
            ("multiphoton", self.multiphoton_fraction),
            ("phase error", self.phase_error_fraction),
            ("final key", self.final_key_fraction),
        ]
    }
}

pub fn ratio_report(stats: &ObservedStats, result: &KeyResult) -> Result<Ratios> {
    Ratios::from_parts(
        stats.signal_count() as f64,
        result.m11_lower,
        result.e11_upper.unwrap_or(0.5),
        result.k_ec,
        result.key_bits,
    )
}
