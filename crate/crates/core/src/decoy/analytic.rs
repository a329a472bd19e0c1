//! Closed-form vacuum+weak decoy bounds.
//!
//! With S(a, b) = e^{a_A+a_B} Q(a, b) − e^{a_A} Q(a, 0) − e^{a_B} Q(0, b) + Q(0, 0)
//! the sum over n, m ≥ 1 of a_A^n a_B^m Y_nm / (n! m!), and r = ν/μ per party,
//! every term with n + m ≥ 3 obeys ν_A^n ν_B^m ≤ k μ_A^n μ_B^m for
//! k = r_A r_B max(r_A, r_B). Hence
//!
//!   Y11 ≥ [S(ν, ν) − k S(μ, μ)] / (ν_A ν_B − k μ_A μ_B).
//!
//! The same expansion of the X-basis error gains, dropping the n, m ≥ 1 terms
//! other than (1, 1), gives
//!
//!   e11 Y11 ≤ [e^{ν_A+ν_B} R(ν, ν) − e^{ν_A} R(ν, 0) − e^{ν_B} R(0, ν) + R(0, 0)] / (ν_A ν_B).

use log::warn;
use serde::{Deserialize, Serialize};

use super::entropy::clamped_entropy;
use super::{ObservedStats, SecurityParams, Side, Tally};
use crate::error::{Error, Result};
use crate::protocol::{Basis, CellKey, IntensityClass};

use IntensityClass::{Decoy, Signal, Vacuum};

/// Expected number of single-photon pairs among a cell's pulses.
pub fn single_photon_weight(stats: &ObservedStats, key: CellKey) -> f64 {
    let (a, b) = stats.means(key);
    stats.pulses(key) * a * b * (-a - b).exp()
}

/// Single-photon yields and the X-basis single-photon error yield, each
/// bounded in the pessimistic direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyBounds {
    pub y11_z_lower: f64,
    pub y11_x_lower: f64,
    pub ey11_x_upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseErrorBound {
    /// Single-photon X-basis bit-error rate bound.
    pub bit_error_upper: f64,
    /// Single-photon pairs behind the X-basis estimate.
    pub n_x: f64,
    pub sampling_deviation: f64,
    pub phase_error_upper: f64,
    /// Above 1/2: no key can be certified.
    pub insecure: bool,
}

impl DecoyBounds {
    /// M11 from the Z-basis yield, clamped to [0, M].
    pub fn m11_lower(&self, stats: &ObservedStats) -> f64 {
        let key = ObservedStats::signal_key();
        let raw = single_photon_weight(stats, key) * self.y11_z_lower;
        if raw < 0.0 {
            warn!("negative single-photon bound {raw:.4e} clamped to 0; data inconsistent with the source model");
        }
        raw.clamp(0.0, stats.signal_count() as f64)
    }

    /// Bit-error bound plus the random-sampling deviation between the
    /// X-basis test pairs and the Z-basis key pairs.
    pub fn phase_error(&self, stats: &ObservedStats, m11_lower: f64, epsilon: f64) -> Result<PhaseErrorBound> {
        if !(m11_lower > 0.0) {
            return Err(Error::Undefined("no single-photon key pairs certified".into()));
        }
        if !(self.y11_x_lower > 0.0) {
            return Err(Error::Undefined("no single-photon X-basis yield certified".into()));
        }
        let bit = (self.ey11_x_upper / self.y11_x_lower).max(0.0);
        let n_x = single_photon_weight(stats, CellKey::new(Basis::X, Decoy, Decoy)) * self.y11_x_lower;
        if bit >= 0.5 || !(n_x > 0.0) {
            return Ok(PhaseErrorBound {
                bit_error_upper: bit,
                n_x,
                sampling_deviation: 0.0,
                phase_error_upper: bit.max(0.5),
                insecure: true,
            });
        }
        let theta = random_sampling_deviation(n_x, m11_lower, bit, epsilon)?;
        let phase = bit + theta;
        Ok(PhaseErrorBound {
            bit_error_upper: bit,
            n_x,
            sampling_deviation: theta,
            phase_error_upper: phase,
            insecure: phase >= 0.5,
        })
    }
}

fn y11_lower(stats: &ObservedStats, basis: Basis, epsilon: f64) -> Result<f64> {
    let (nu_a, mu_a) = (stats.alice.decoy, stats.alice.signal);
    let (nu_b, mu_b) = (stats.bob.decoy, stats.bob.signal);
    let (r_a, r_b) = (nu_a / mu_a, nu_b / mu_b);
    let k = r_a * r_b * r_a.max(r_b);
    let q = |a, b, side| stats.gain_bound(CellKey::new(basis, a, b), Tally::Coincidences, epsilon, side);

    // Q(0, 0) enters with weight 1 − k > 0.
    let q00 = q(Vacuum, Vacuum, Side::Lower)?;
    let s_nu = (nu_a + nu_b).exp() * q(Decoy, Decoy, Side::Lower)?
        - nu_a.exp() * q(Decoy, Vacuum, Side::Upper)?
        - nu_b.exp() * q(Vacuum, Decoy, Side::Upper)?
        + q00;
    let s_mu = (mu_a + mu_b).exp() * q(Signal, Signal, Side::Upper)?
        - mu_a.exp() * q(Signal, Vacuum, Side::Lower)?
        - mu_b.exp() * q(Vacuum, Signal, Side::Lower)?
        + q00;
    Ok((s_nu - k * s_mu) / (nu_a * nu_b - k * mu_a * mu_b))
}

fn ey11_x_upper(stats: &ObservedStats, epsilon: f64) -> Result<f64> {
    let (nu_a, nu_b) = (stats.alice.decoy, stats.bob.decoy);
    let r = |a, b, side| stats.gain_bound(CellKey::new(Basis::X, a, b), Tally::Errors, epsilon, side);
    Ok(((nu_a + nu_b).exp() * r(Decoy, Decoy, Side::Upper)?
        - nu_a.exp() * r(Decoy, Vacuum, Side::Lower)?
        - nu_b.exp() * r(Vacuum, Decoy, Side::Lower)?
        + r(Vacuum, Vacuum, Side::Upper)?)
        / (nu_a * nu_b))
}

pub(crate) fn analytic_decoy_bounds(stats: &ObservedStats, epsilon: f64) -> Result<DecoyBounds> {
    Ok(DecoyBounds {
        y11_z_lower: y11_lower(stats, Basis::Z, epsilon)?,
        y11_x_lower: y11_lower(stats, Basis::X, epsilon)?,
        ey11_x_upper: ey11_x_upper(stats, epsilon)?,
    })
}

/// Lower bound on the single-photon-pair coincidences of the key cell.
pub fn estimate_m11_lower(stats: &ObservedStats, sec: &SecurityParams) -> Result<f64> {
    stats.validate()?;
    sec.validate()?;
    let eps = sec.epsilon_for(super::Estimator::Analytic);
    Ok(DecoyBounds {
        y11_z_lower: y11_lower(stats, Basis::Z, eps)?,
        y11_x_lower: 0.0,
        ey11_x_upper: 0.0,
    }
    .m11_lower(stats))
}

/// Upper bound on the phase-error rate of the single-photon key pairs.
pub fn estimate_e11_upper(stats: &ObservedStats, m11_lower: f64, sec: &SecurityParams) -> Result<PhaseErrorBound> {
    stats.validate()?;
    sec.validate()?;
    let eps = sec.epsilon_for(super::Estimator::Analytic);
    analytic_decoy_bounds(stats, eps)?.phase_error(stats, m11_lower, eps)
}

/// Deviation θ such that the phase-error rate of `n_z` pairs exceeds the
/// bit-error rate `e` seen on `n_x` pairs by more than θ with probability
/// at most ε:
///
///   ε = √(n_x+n_z) / √(e(1−e) n_x n_z) · 2^{−(n_x+n_z) ξ(θ)},
///   ξ(θ) = H(e + θ − q θ) − q H(e) − (1 − q) H(e + θ),  q = n_x/(n_x+n_z).
///
/// The prefactor uses max(e, 1/n_x) so that a zero observed rate stays finite.
pub fn random_sampling_deviation(n_x: f64, n_z: f64, e: f64, epsilon: f64) -> Result<f64> {
    if !(n_x > 0.0 && n_z > 0.0) {
        return Err(Error::Undefined("random sampling needs positive sample sizes".into()));
    }
    if !(0.0..0.5).contains(&e) {
        return Err(Error::Domain(format!("bit error rate must lie in [0, 1/2), got {e}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let n = n_x + n_z;
    let q = n_x / n;
    let e_pref = e.max(1.0 / n_x).min(0.5);
    let ln_pref = 0.5 * n.ln() - 0.5 * (e_pref * (1.0 - e_pref) * n_x * n_z).ln();
    let h = |x: f64| {
        let x = x.clamp(0.0, 1.0);
        if x <= 0.5 {
            clamped_entropy(x)
        } else {
            clamped_entropy(1.0 - x)
        }
    };
    let h_e = h(e);
    let gap = |theta: f64| {
        let xi = h(e + theta - q * theta) - q * h_e - (1.0 - q) * h(e + theta);
        ln_pref - n * xi * std::f64::consts::LN_2 - epsilon.ln()
    };
    let max_theta = 1.0 - e;
    if gap(0.0) <= 0.0 {
        return Ok(0.0);
    }
    if gap(max_theta) > 0.0 {
        return Ok(max_theta);
    }
    let (mut lo, mut hi) = (0.0, max_theta);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}
