//! Detection-pattern probabilities for two phase-randomized pulses meeting on
//! a 50:50 beam splitter followed by two threshold detectors read out in two
//! time bins.
//!
//! The four detector cells are ordered like [`DetectionPattern`] bits:
//! (D1, bin 0), (D1, bin 1), (D2, bin 0), (D2, bin 1). For a set `U` of cells
//! the light-only no-click probability of an `n`-photon pulse from Alice and
//! an `m`-photon pulse from Bob is
//!
//! ```text
//! F(U | n, m) = Σ_k C(n,k) C(m,k) g(U)^(2k) (1 - pA(U))^(n-k) (1 - pB(U))^(m-k)
//! ```
//!
//! where `pA`, `pB` are the probabilities that a single photon of each party
//! is detected inside `U` and `g` is their overlap-weighted cross term. It is
//! the Poisson-coefficient expansion of the phase-averaged coherent-state
//! result `exp(-μa pA - μb pB) I0(2 g sqrt(μa μb))`. Exact-click
//! probabilities follow by inclusion-exclusion, and independent dark clicks
//! are convolved in afterwards.

use serde::{Deserialize, Serialize};

use super::OpticalModel;
use crate::error::{Error, Result};
use crate::protocol::{classify_bsm, Basis, BsmOutcome, DetectionPattern, FlipRule};

const CELLS: usize = 4;
const PATTERNS: usize = 16;

/// A party's encoded time-bin qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeBinState {
    pub basis: Basis,
    pub bit: u8,
}

impl TimeBinState {
    pub const ALL: [TimeBinState; 4] = [
        TimeBinState {
            basis: Basis::Z,
            bit: 0,
        },
        TimeBinState {
            basis: Basis::Z,
            bit: 1,
        },
        TimeBinState {
            basis: Basis::X,
            bit: 0,
        },
        TimeBinState {
            basis: Basis::X,
            bit: 1,
        },
    ];

    pub fn new(basis: Basis, bit: u8) -> Self {
        Self { basis, bit }
    }

    pub fn index(self) -> usize {
        self.basis.index() * 2 + usize::from(self.bit)
    }

    /// Amplitudes in time bins 0 and 1.
    fn bin_amplitudes(self) -> [f64; 2] {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        match (self.basis, self.bit) {
            (Basis::Z, 0) => [1.0, 0.0],
            (Basis::Z, _) => [0.0, 1.0],
            (Basis::X, 0) => [h, h],
            (Basis::X, _) => [h, -h],
        }
    }

    /// Amplitudes on the four detector cells. Bob enters the splitter through
    /// the other port and picks up the sign on D2.
    fn cell_amplitudes(self, bob_port: bool) -> [f64; CELLS] {
        let [b0, b1] = self.bin_amplitudes();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = if bob_port { -1.0 } else { 1.0 };
        [h * b0, h * b1, s * h * b0, s * h * b1]
    }
}

fn mask_cells(mask: usize) -> impl Iterator<Item = usize> {
    (0..CELLS).filter(move |c| mask & (1 << c) != 0)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Single-photon detection weights of one (Alice state, Bob state) pair on
/// every subset of cells.
#[derive(Debug, Clone, Copy)]
struct SubsetWeights {
    p_alice: [f64; PATTERNS],
    p_bob: [f64; PATTERNS],
    cross: [f64; PATTERNS],
}

impl SubsetWeights {
    fn new(alice: TimeBinState, bob: TimeBinState, model: &OpticalModel) -> Self {
        let a = alice.cell_amplitudes(false);
        let b = bob.cell_amplitudes(true);
        let coupling = model.overlap * (model.efficiency_alice * model.efficiency_bob).sqrt();
        let mut w = SubsetWeights {
            p_alice: [0.0; PATTERNS],
            p_bob: [0.0; PATTERNS],
            cross: [0.0; PATTERNS],
        };
        for mask in 0..PATTERNS {
            for c in mask_cells(mask) {
                w.p_alice[mask] += model.efficiency_alice * a[c] * a[c];
                w.p_bob[mask] += model.efficiency_bob * b[c] * b[c];
                w.cross[mask] += coupling * a[c] * b[c];
            }
        }
        w
    }

    fn no_click(&self, mask: usize, n: usize, m: usize) -> f64 {
        let qa = 1.0 - self.p_alice[mask];
        let qb = 1.0 - self.p_bob[mask];
        let g2 = self.cross[mask] * self.cross[mask];
        (0..=n.min(m))
            .map(|k| {
                binomial(n, k) * binomial(m, k) * g2.powi(k as i32) * qa.powi((n - k) as i32) * qb.powi((m - k) as i32)
            })
            .sum()
    }

    fn pattern_probs(&self, n: usize, m: usize, dark: f64) -> [f64; PATTERNS] {
        let full = PATTERNS - 1;
        let mut none = [0.0; PATTERNS];
        for (mask, slot) in none.iter_mut().enumerate() {
            *slot = self.no_click(mask, n, m);
        }
        // Light-only exact-click probabilities by inclusion-exclusion.
        let mut light = [0.0; PATTERNS];
        for (s, slot) in light.iter_mut().enumerate() {
            let complement = full & !s;
            let mut acc = 0.0;
            let mut t = s;
            loop {
                let sign = if t.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                acc += sign * none[complement | t];
                if t == 0 {
                    break;
                }
                t = (t - 1) & s;
            }
            *slot = acc.max(0.0);
        }
        with_dark_clicks(&light, dark)
    }
}

/// Each cell clicks when light or an independent dark count fires it.
fn with_dark_clicks(light: &[f64; PATTERNS], dark: f64) -> [f64; PATTERNS] {
    let mut out = [0.0; PATTERNS];
    for (c, slot) in out.iter_mut().enumerate() {
        let silent = (1.0 - dark).powi((CELLS as u32 - c.count_ones()) as i32);
        let mut acc = 0.0;
        let mut s = c;
        loop {
            acc += light[s] * dark.powi((c & !s).count_ones() as i32);
            if s == 0 {
                break;
            }
            s = (s - 1) & c;
        }
        *slot = acc * silent;
    }
    out
}

/// Pattern distribution for exactly `n` photons from Alice and `m` from Bob.
pub fn fock_pattern_probs(
    alice: TimeBinState,
    bob: TimeBinState,
    n: usize,
    m: usize,
    model: &OpticalModel,
) -> [f64; PATTERNS] {
    SubsetWeights::new(alice, bob, model).pattern_probs(n, m, model.dark_prob)
}

/// Pattern distributions for every state pair and photon pair up to a cutoff.
#[derive(Debug, Clone)]
pub struct FockCache {
    cutoff: usize,
    weights: Vec<SubsetWeights>,
    dark: f64,
    table: Vec<[f64; PATTERNS]>,
}

impl FockCache {
    pub fn new(model: &OpticalModel, cutoff: usize) -> Self {
        let mut weights = Vec::with_capacity(16);
        for alice in TimeBinState::ALL {
            for bob in TimeBinState::ALL {
                weights.push(SubsetWeights::new(alice, bob, model));
            }
        }
        let side = cutoff + 1;
        let mut table = Vec::with_capacity(16 * side * side);
        for w in &weights {
            for n in 0..side {
                for m in 0..side {
                    table.push(w.pattern_probs(n, m, model.dark_prob));
                }
            }
        }
        Self {
            cutoff,
            weights,
            dark: model.dark_prob,
            table,
        }
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// Falls back to direct evaluation above the cutoff.
    pub fn probs(&self, alice: TimeBinState, bob: TimeBinState, n: usize, m: usize) -> [f64; PATTERNS] {
        let pair = alice.index() * 4 + bob.index();
        if n <= self.cutoff && m <= self.cutoff {
            let side = self.cutoff + 1;
            self.table[(pair * side + n) * side + m]
        } else {
            self.weights[pair].pattern_probs(n, m, self.dark)
        }
    }
}

pub(crate) fn poisson_pmf(mean: f64, cutoff: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(cutoff + 1);
    let mut p = (-mean).exp();
    for k in 0..=cutoff {
        if k > 0 {
            p *= mean / k as f64;
        }
        out.push(p);
    }
    out
}

/// Per-pattern probabilities for one intensity cell and basis pair,
/// conditional on each party's bit: `probs[alice_bit][bob_bit][pattern]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternTable {
    pub probs: [[[f64; PATTERNS]; 2]; 2],
    /// Upper bound on the probability mass dropped by the photon cutoff.
    pub truncation_bound: f64,
}

impl PatternTable {
    pub fn psi_minus_given(&self, alice_bit: u8, bob_bit: u8) -> f64 {
        psi_minus_mass(&self.probs[usize::from(alice_bit)][usize::from(bob_bit)])
    }

    /// |ψ⁻⟩ probability with uniform bits.
    pub fn psi_minus(&self) -> f64 {
        let mut acc = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                acc += 0.25 * self.psi_minus_given(a, b);
            }
        }
        acc
    }

    /// Probability of a |ψ⁻⟩ announcement whose sifted bits disagree.
    pub fn error_probability(&self, basis: Basis, rule: FlipRule) -> f64 {
        let mut acc = 0.0;
        for a in 0..2u8 {
            for b in 0..2u8 {
                if bits_disagree(a, b, basis, rule) {
                    acc += 0.25 * self.psi_minus_given(a, b);
                }
            }
        }
        acc
    }

    pub fn total(&self, alice_bit: u8, bob_bit: u8) -> f64 {
        self.probs[usize::from(alice_bit)][usize::from(bob_bit)].iter().sum()
    }
}

pub(crate) fn bits_disagree(alice_bit: u8, bob_bit: u8, basis: Basis, rule: FlipRule) -> bool {
    let flipped = match (rule, basis) {
        (FlipRule::ZOnly, Basis::X) => alice_bit,
        _ => 1 - alice_bit,
    };
    flipped != bob_bit
}

pub(crate) fn psi_minus_mass(probs: &[f64; PATTERNS]) -> f64 {
    probs
        .iter()
        .enumerate()
        .filter(|(i, _)| classify_bsm(DetectionPattern::from_index(*i)) == BsmOutcome::PsiMinus)
        .map(|(_, p)| p)
        .sum()
}

/// Photon-number expansion of the per-clock pattern distribution for mean
/// photon numbers `mu_alice`, `mu_bob` and the given basis pair.
///
/// Fails with [`Error::Precision`] when the Poisson mass beyond `cutoff`
/// exceeds `tolerance`.
pub fn expected_event_probs(
    mu_alice: f64,
    mu_bob: f64,
    bases: (Basis, Basis),
    model: &OpticalModel,
    cutoff: usize,
    tolerance: f64,
) -> Result<PatternTable> {
    if !(mu_alice >= 0.0 && mu_bob >= 0.0) {
        return Err(Error::Domain(format!(
            "intensities must be >= 0, got ({mu_alice}, {mu_bob})"
        )));
    }
    let pa = poisson_pmf(mu_alice, cutoff);
    let pb = poisson_pmf(mu_bob, cutoff);
    let truncation_bound = (1.0 - pa.iter().sum::<f64>() * pb.iter().sum::<f64>()).max(0.0);
    if truncation_bound > tolerance {
        return Err(Error::Precision {
            cutoff,
            bound: truncation_bound,
            tolerance,
        });
    }

    let mut probs = [[[0.0; PATTERNS]; 2]; 2];
    for a_bit in 0..2u8 {
        for b_bit in 0..2u8 {
            let w = SubsetWeights::new(
                TimeBinState::new(bases.0, a_bit),
                TimeBinState::new(bases.1, b_bit),
                model,
            );
            let slot = &mut probs[usize::from(a_bit)][usize::from(b_bit)];
            for (n, &wn) in pa.iter().enumerate() {
                for (m, &wm) in pb.iter().enumerate() {
                    let weight = wn * wm;
                    if weight == 0.0 {
                        continue;
                    }
                    for (acc, p) in slot.iter_mut().zip(w.pattern_probs(n, m, model.dark_prob)) {
                        *acc += weight * p;
                    }
                }
            }
        }
    }
    Ok(PatternTable {
        probs,
        truncation_bound,
    })
}

/// Result of the relative-phase quadrature, with the difference to the
/// half-resolution grid as an accuracy check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseAverage {
    pub table: PatternTable,
    pub half_grid_difference: f64,
}

/// Coherent-state route: for a fixed relative phase each cell receives an
/// independent Poisson photon number, so the pattern probability factorizes.
/// The relative phase is averaged with the trapezoidal rule on `points`
/// equally spaced nodes.
pub fn phase_averaged_event_probs(
    mu_alice: f64,
    mu_bob: f64,
    bases: (Basis, Basis),
    model: &OpticalModel,
    points: usize,
) -> Result<PhaseAverage> {
    if points < 2 || !points.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "quadrature needs an even number of points, got {points}"
        )));
    }
    let fine = phase_grid(mu_alice, mu_bob, bases, model, points);
    let coarse = phase_grid(mu_alice, mu_bob, bases, model, points / 2);
    let mut diff: f64 = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            for p in 0..PATTERNS {
                diff = diff.max((fine[a][b][p] - coarse[a][b][p]).abs());
            }
        }
    }
    Ok(PhaseAverage {
        table: PatternTable {
            probs: fine,
            truncation_bound: 0.0,
        },
        half_grid_difference: diff,
    })
}

fn phase_grid(
    mu_alice: f64,
    mu_bob: f64,
    bases: (Basis, Basis),
    model: &OpticalModel,
    points: usize,
) -> [[[f64; PATTERNS]; 2]; 2] {
    let mut out = [[[0.0; PATTERNS]; 2]; 2];
    let amp_a = (mu_alice * model.efficiency_alice).sqrt();
    let amp_b = (mu_bob * model.efficiency_bob).sqrt();
    for a_bit in 0..2u8 {
        for b_bit in 0..2u8 {
            let a = TimeBinState::new(bases.0, a_bit).cell_amplitudes(false);
            let b = TimeBinState::new(bases.1, b_bit).cell_amplitudes(true);
            let slot = &mut out[usize::from(a_bit)][usize::from(b_bit)];
            for j in 0..points {
                let phi = std::f64::consts::TAU * j as f64 / points as f64;
                let mut click = [0.0; CELLS];
                for c in 0..CELLS {
                    let mean = (amp_a * a[c]).powi(2)
                        + (amp_b * b[c]).powi(2)
                        + 2.0 * model.overlap * amp_a * a[c] * amp_b * b[c] * phi.cos();
                    click[c] = 1.0 - (1.0 - model.dark_prob) * (-mean).exp();
                }
                for (pattern, acc) in slot.iter_mut().enumerate() {
                    let p: f64 = (0..CELLS)
                        .map(|c| {
                            if pattern & (1 << c) != 0 {
                                click[c]
                            } else {
                                1.0 - click[c]
                            }
                        })
                        .product();
                    *acc += p / points as f64;
                }
            }
        }
    }
    out
}

/// Bit-error probability of |ψ⁻⟩ events from exactly one photon per party in
/// the given basis. This is the phase-error rate of single-photon pairs.
pub fn single_photon_error_rate(basis: Basis, model: &OpticalModel, rule: FlipRule) -> f64 {
    let mut total = 0.0;
    let mut errors = 0.0;
    for a in 0..2u8 {
        for b in 0..2u8 {
            let p = psi_minus_mass(&fock_pattern_probs(
                TimeBinState::new(basis, a),
                TimeBinState::new(basis, b),
                1,
                1,
                model,
            ));
            total += p;
            if bits_disagree(a, b, basis, rule) {
                errors += p;
            }
        }
    }
    if total > 0.0 {
        errors / total
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photonics::DEFAULT_PHOTON_CUTOFF;
    use approx::assert_relative_eq;

    fn model(eff_a: f64, eff_b: f64, dark: f64, overlap: f64) -> OpticalModel {
        OpticalModel {
            efficiency_alice: eff_a,
            efficiency_bob: eff_b,
            dark_prob: dark,
            overlap,
        }
    }

    fn paper_model() -> OpticalModel {
        OpticalModel::new(&Default::default(), &Default::default()).unwrap()
    }

    #[test]
    fn vacuum_without_dark_never_clicks() {
        for bases in [(Basis::Z, Basis::Z), (Basis::X, Basis::X), (Basis::Z, Basis::X)] {
            let t = expected_event_probs(0.0, 0.0, bases, &model(0.2, 0.5, 0.0, 1.0), 8, 1e-9).unwrap();
            for a in 0..2 {
                for b in 0..2 {
                    assert_eq!(t.probs[a][b][0], 1.0);
                    assert_eq!(t.probs[a][b][1..].iter().sum::<f64>(), 0.0);
                }
            }
        }
    }

    #[test]
    fn dark_only_psi_minus_matches_enumeration() {
        let d = 0.013;
        let t = expected_event_probs(0.0, 0.0, (Basis::Z, Basis::Z), &model(0.2, 0.5, d, 1.0), 8, 1e-9).unwrap();
        // Two accepted patterns, each with two dark clicks and two silent cells.
        let expected = 2.0 * d * d * (1.0 - d) * (1.0 - d);
        assert_relative_eq!(t.psi_minus(), expected, max_relative = 1e-12);
        // Enumerate the 16 patterns independently.
        for pattern in DetectionPattern::all() {
            let k = pattern.clicks() as i32;
            let p = d.powi(k) * (1.0 - d).powi(4 - k);
            assert_relative_eq!(t.probs[0][1][pattern.index()], p, max_relative = 1e-12);
        }
    }

    #[test]
    fn hong_ou_mandel_single_photons_bunch() {
        // Two perfectly indistinguishable single photons in the same bin never
        // split between the detectors.
        let m = model(1.0, 1.0, 0.0, 1.0);
        let z0 = TimeBinState::new(Basis::Z, 0);
        let p = fock_pattern_probs(z0, z0, 1, 1, &m);
        let split = DetectionPattern {
            d1_bin0: true,
            d2_bin0: true,
            ..Default::default()
        };
        assert!(p[split.index()].abs() < 1e-15);
        assert_relative_eq!(p[0b0001], 0.5, max_relative = 1e-12);
        assert_relative_eq!(p[0b0100], 0.5, max_relative = 1e-12);
        // Fully distinguishable photons split half the time.
        let p = fock_pattern_probs(z0, z0, 1, 1, &model(1.0, 1.0, 0.0, 0.0));
        assert_relative_eq!(p[split.index()], 0.5, max_relative = 1e-12);
    }

    #[test]
    fn single_photon_pairs_are_basis_independent() {
        let m = model(0.03, 0.11, 0.0, 0.9);
        let psi = |basis| {
            let mut acc = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    acc += 0.25
                        * psi_minus_mass(&fock_pattern_probs(
                            TimeBinState::new(basis, a),
                            TimeBinState::new(basis, b),
                            1,
                            1,
                            &m,
                        ));
                }
            }
            acc
        };
        assert_relative_eq!(psi(Basis::Z), psi(Basis::X), max_relative = 1e-12);
        assert_relative_eq!(psi(Basis::Z), 0.03 * 0.11 / 4.0, max_relative = 1e-12);
    }

    #[test]
    fn single_photon_x_error_vanishes_with_perfect_overlap() {
        assert!(single_photon_error_rate(Basis::X, &model(0.1, 0.3, 0.0, 1.0), FlipRule::AllBases) < 1e-12);
        let e = single_photon_error_rate(Basis::X, &model(0.1, 0.3, 0.0, 0.9), FlipRule::AllBases);
        assert_relative_eq!(e, (1.0 - 0.81) / 2.0, max_relative = 1e-12);
        assert!(single_photon_error_rate(Basis::Z, &model(0.1, 0.3, 0.0, 0.9), FlipRule::AllBases) < 1e-12);
    }

    #[test]
    fn fock_probabilities_are_normalized() {
        let m = paper_model();
        for a in TimeBinState::ALL {
            for b in TimeBinState::ALL {
                for n in 0..6 {
                    for k in 0..6 {
                        let s: f64 = fock_pattern_probs(a, b, n, k, &m).iter().sum();
                        assert!((s - 1.0).abs() < 1e-12, "{a:?} {b:?} {n} {k}: {s}");
                    }
                }
            }
        }
    }

    #[test]
    fn expansion_agrees_with_phase_quadrature() {
        let m = model(0.05, 0.2, 1e-3, 0.93);
        for bases in [(Basis::Z, Basis::Z), (Basis::X, Basis::X), (Basis::X, Basis::Z)] {
            for (mu_a, mu_b) in [(0.4, 0.4), (0.07, 0.4), (0.4, 0.0), (0.0, 0.07)] {
                let fock = expected_event_probs(mu_a, mu_b, bases, &m, 14, 1e-14).unwrap();
                let quad = phase_averaged_event_probs(mu_a, mu_b, bases, &m, 64).unwrap();
                assert!(quad.half_grid_difference < 1e-14);
                for a in 0..2 {
                    for b in 0..2 {
                        for p in 0..16 {
                            let (x, y) = (fock.probs[a][b][p], quad.table.probs[a][b][p]);
                            assert!(
                                (x - y).abs() < 1e-13,
                                "{bases:?} {mu_a} {mu_b} [{a}][{b}][{p}]: {x} vs {y}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn truncation_bound_is_certified() {
        let m = paper_model();
        let t = expected_event_probs(0.4, 0.4, (Basis::X, Basis::X), &m, DEFAULT_PHOTON_CUTOFF, 1e-9).unwrap();
        assert!(t.truncation_bound <= 1e-9);
        for a in 0..2 {
            for b in 0..2 {
                let total = t.total(a, b);
                assert!((1.0 - total - t.truncation_bound).abs() < 1e-12);
                assert!((1.0 - total).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn small_cutoff_is_precision_error() {
        let m = paper_model();
        let err = expected_event_probs(0.4, 0.4, (Basis::Z, Basis::Z), &m, 2, 1e-9).unwrap_err();
        assert!(matches!(err, Error::Precision { cutoff: 2, .. }));
    }

    #[test]
    fn brighter_arrival_dominates_coincidences() {
        // Bob's link is ~6.6 dB better, so (decoy, signal) beats (signal, decoy).
        let m = paper_model();
        let nu_mu = expected_event_probs(0.07, 0.4, (Basis::X, Basis::X), &m, DEFAULT_PHOTON_CUTOFF, 1e-9).unwrap();
        let mu_nu = expected_event_probs(0.4, 0.07, (Basis::X, Basis::X), &m, DEFAULT_PHOTON_CUTOFF, 1e-9).unwrap();
        assert!(nu_mu.psi_minus() > mu_nu.psi_minus());
    }
}
