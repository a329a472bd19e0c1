//! Stochastic realizations of a session.
//!
//! [`montecarlo_session`] simulates every clock cycle. Pulse `i` reads a fixed
//! block of the ChaCha stream at word offset `i * WORDS_PER_PULSE`, so any
//! partition of the pulse range merges to exactly the single-pass tables.
//!
//! [`sample_session_counts`] draws the same tables at the count level
//! (photon-pair-resolved Poisson thinning) and scales to field-size sessions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::interference::{bits_disagree, poisson_pmf, psi_minus_mass};
use super::{
    single_photon_error_rate, FockCache, OpticalModel, SessionSpec, TimeBinState, MATCHED_BASIS_PAIR_PROBABILITY,
};
use crate::error::{Error, Result};
use crate::protocol::{
    classify_bsm, sample_pulse_choice, Basis, BsmOutcome, CellKey, CountTables, DetectionPattern, FlipRule,
    IntensityClass,
};

/// Uniform `f64` draws per pulse: 3 per party choice, 2 photon numbers, the
/// detection pattern and the phase-error tag of single-photon key events.
pub const UNIFORMS_PER_PULSE: u64 = 10;
const WORDS_PER_PULSE: u128 = 2 * UNIFORMS_PER_PULSE as u128;
const CHUNK_PULSES: u64 = 1 << 16;

/// Photon-number-resolved facts the estimators never see.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Counts restricted to pulses with exactly one photon from each party.
    pub single_photon: CountTables,
    /// Model bit-error probability of single-photon pairs in the X basis.
    pub e11_model: f64,
    /// Phase errors tagged on the Z-basis signal-signal single-photon events.
    pub phase_errors_signal: u64,
}

impl GroundTruth {
    fn signal_key() -> CellKey {
        CellKey::new(Basis::Z, IntensityClass::Signal, IntensityClass::Signal)
    }

    /// True single-photon-pair coincidences in the key cell.
    pub fn m11(&self) -> u64 {
        self.single_photon.cell(Self::signal_key()).coincidences
    }

    /// Realized phase-error rate of those events.
    pub fn e11(&self) -> Option<f64> {
        let m = self.m11();
        (m > 0).then(|| self.phase_errors_signal as f64 / m as f64)
    }

    fn merge(&mut self, other: &GroundTruth) {
        self.single_photon.merge(&other.single_photon);
        self.phase_errors_signal += other.phase_errors_signal;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloRun {
    pub tables: CountTables,
    pub truth: GroundTruth,
}

/// Inverse-CDF Poisson draw from a single uniform.
fn poisson_from_uniform(mean: f64, u: f64) -> usize {
    let mut p = (-mean).exp();
    let mut cdf = p;
    let mut k = 0usize;
    while u >= cdf && p > 0.0 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k
}

fn pattern_from_uniform(probs: &[f64; 16], u: f64) -> DetectionPattern {
    let mut cdf = 0.0;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            last = i;
            cdf += p;
            if u < cdf {
                return DetectionPattern::from_index(i);
            }
        }
    }
    DetectionPattern::from_index(last)
}

/// Per-pulse simulator for one `SessionSpec`.
#[derive(Debug, Clone)]
pub struct PulseSimulator {
    spec: SessionSpec,
    cache: FockCache,
    e11_model: f64,
}

impl PulseSimulator {
    pub fn new(spec: &SessionSpec) -> Result<Self> {
        spec.validate()?;
        let model = spec.optical_model()?;
        Ok(Self {
            spec: spec.clone(),
            cache: FockCache::new(&model, spec.photon_cutoff),
            e11_model: single_photon_error_rate(Basis::X, &model, spec.flip_rule),
        })
    }

    /// Simulates pulses `start..end` of the session stream.
    pub fn run_range(&self, start: u64, end: u64) -> MonteCarloRun {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_word_pos(u128::from(start) * WORDS_PER_PULSE);
        let rule = self.spec.flip_rule;
        let signal_key = GroundTruth::signal_key();
        let mut tables = CountTables::new();
        let mut truth = GroundTruth {
            e11_model: self.e11_model,
            ..GroundTruth::default()
        };

        for _ in start..end {
            let alice = sample_pulse_choice(&self.spec.alice, &mut rng);
            let bob = sample_pulse_choice(&self.spec.bob, &mut rng);
            let n = poisson_from_uniform(self.spec.alice.mean(alice.intensity), rng.random());
            let m = poisson_from_uniform(self.spec.bob.mean(bob.intensity), rng.random());
            let probs = self.cache.probs(
                TimeBinState::new(alice.basis, alice.bit),
                TimeBinState::new(bob.basis, bob.bit),
                n,
                m,
            );
            let pattern = pattern_from_uniform(&probs, rng.random());
            let phase_error_tag: f64 = rng.random();

            tables.record_detection(alice, bob, pattern, rule);
            if n == 1 && m == 1 {
                let outcome = classify_bsm(pattern);
                truth.single_photon.record(alice, bob, outcome, rule);
                let key = CellKey::new(alice.basis, alice.intensity, bob.intensity);
                if alice.basis == bob.basis
                    && outcome == BsmOutcome::PsiMinus
                    && key == signal_key
                    && phase_error_tag < self.e11_model
                {
                    truth.phase_errors_signal += 1;
                }
            }
        }
        MonteCarloRun { tables, truth }
    }

    /// Splits the range into fixed chunks and runs them in parallel. The
    /// result does not depend on the thread count.
    pub fn run(&self, n_pulses: u64) -> MonteCarloRun {
        let chunks: Vec<(u64, u64)> = (0..n_pulses.div_ceil(CHUNK_PULSES))
            .map(|c| (c * CHUNK_PULSES, ((c + 1) * CHUNK_PULSES).min(n_pulses)))
            .collect();
        chunks.par_iter().map(|&(s, e)| self.run_range(s, e)).reduce(
            || MonteCarloRun {
                tables: CountTables::new(),
                truth: GroundTruth {
                    e11_model: self.e11_model,
                    ..GroundTruth::default()
                },
            },
            |mut a, b| {
                a.tables.merge(&b.tables);
                a.truth.merge(&b.truth);
                a
            },
        )
    }
}

/// Per-pulse Monte Carlo of `n_pulses` clock cycles.
pub fn montecarlo_session(spec: &SessionSpec, n_pulses: u64) -> Result<CountTables> {
    Ok(montecarlo_session_with_truth(spec, n_pulses)?.tables)
}

pub fn montecarlo_session_with_truth(spec: &SessionSpec, n_pulses: u64) -> Result<MonteCarloRun> {
    if n_pulses == 0 {
        return Err(Error::Config("n_pulses must be at least 1".into()));
    }
    Ok(PulseSimulator::new(spec)?.run(n_pulses))
}

fn poisson_draw<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

fn binomial_draw<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).map(|d| d.sample(rng)).unwrap_or(0)
}

/// Count-level sample of a full session of `clock_rate × duration` pulses.
///
/// Pulses are split over the cells multinomially; within a cell the |ψ⁻⟩
/// events of every (bits, n, m) class are independent Poisson draws, which
/// is exact for a Poissonized pulse count. Photon pairs above the cutoff are
/// dropped (their mass is below the truncation tolerance).
pub fn sample_session_counts<R: Rng + ?Sized>(spec: &SessionSpec, rng: &mut R) -> Result<MonteCarloRun> {
    spec.validate()?;
    let model = spec.optical_model()?;
    sample_counts_with_model(spec, &model, rng)
}

pub(crate) fn sample_counts_with_model<R: Rng + ?Sized>(
    spec: &SessionSpec,
    model: &OpticalModel,
    rng: &mut R,
) -> Result<MonteCarloRun> {
    let cache = FockCache::new(model, spec.photon_cutoff);
    let e11_model = single_photon_error_rate(Basis::X, model, spec.flip_rule);
    let rule: FlipRule = spec.flip_rule;
    let total = spec.total_pulses().round() as u64;

    let mut tables = CountTables::new();
    let mut truth = GroundTruth {
        e11_model,
        ..GroundTruth::default()
    };

    let mut remaining = total;
    let mut remaining_mass = 1.0;
    for key in CellKey::all() {
        let p = spec.alice.probability(key.alice) * spec.bob.probability(key.bob) * MATCHED_BASIS_PAIR_PROBABILITY;
        let pulses = binomial_draw(remaining, (p / remaining_mass).min(1.0), rng);
        remaining -= pulses;
        remaining_mass -= p;

        let pa = poisson_pmf(spec.alice.mean(key.alice), spec.photon_cutoff);
        let pb = poisson_pmf(spec.bob.mean(key.bob), spec.photon_cutoff);
        let cell = tables.cell_mut(key);
        cell.pulses_sent = pulses;
        let single = truth.single_photon.cell_mut(key);
        single.pulses_sent = binomial_draw(pulses, pa[1] * pb[1], rng);

        for a_bit in 0..2u8 {
            for b_bit in 0..2u8 {
                let error = bits_disagree(a_bit, b_bit, key.basis, rule);
                let alice = TimeBinState::new(key.basis, a_bit);
                let bob = TimeBinState::new(key.basis, b_bit);
                for (n, wn) in pa.iter().enumerate() {
                    for (m, wm) in pb.iter().enumerate() {
                        let psi = psi_minus_mass(&cache.probs(alice, bob, n, m));
                        let events = poisson_draw(pulses as f64 * 0.25 * wn * wm * psi, rng);
                        let cell = tables.cell_mut(key);
                        cell.coincidences += events;
                        if error {
                            cell.errors += events;
                        }
                        if n == 1 && m == 1 {
                            let single = truth.single_photon.cell_mut(key);
                            single.coincidences += events;
                            if error {
                                single.errors += events;
                            }
                        }
                    }
                }
            }
        }
        // Poisson thinning can exceed a tiny cell's pulse count.
        let cell = tables.cell_mut(key);
        cell.coincidences = cell.coincidences.min(cell.pulses_sent);
        cell.errors = cell.errors.min(cell.coincidences);
    }
    tables.mismatched_basis = remaining;
    truth.phase_errors_signal = binomial_draw(truth.m11(), e11_model, rng);
    Ok(MonteCarloRun { tables, truth })
}
