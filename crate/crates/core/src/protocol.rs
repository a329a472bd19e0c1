//! Protocol-level types and the pure logic of the decoy-state MDI-QKD round:
//! per-clock state preparation, partial Bell-state measurement classification,
//! sifting and accumulation of coincidence/error counts.
//!
//! Each party picks one of three intensities (vacuum, weak decoy, signal), a
//! basis (Z: time-bin occupancy, X: relative phase of the two bins) and a bit.
//! The relay announces a |ψ⁻⟩ projection when the two detectors fire in
//! alternate time bins. |ψ⁻⟩ anti-correlates the parties in both bases, so
//! Alice flips her bit before comparison.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of the three intensity probabilities.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityClass {
    Vacuum,
    Decoy,
    Signal,
}

impl IntensityClass {
    pub const ALL: [IntensityClass; 3] = [IntensityClass::Vacuum, IntensityClass::Decoy, IntensityClass::Signal];

    pub fn index(self) -> usize {
        match self {
            IntensityClass::Vacuum => 0,
            IntensityClass::Decoy => 1,
            IntensityClass::Signal => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IntensityClass::Vacuum => "vacuum",
            IntensityClass::Decoy => "decoy",
            IntensityClass::Signal => "signal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub const ALL: [Basis; 2] = [Basis::Z, Basis::X];

    pub fn index(self) -> usize {
        match self {
            Basis::Z => 0,
            Basis::X => 1,
        }
    }
}

/// Mean photon numbers of the three intensity classes and their selection
/// probabilities, ordered (vacuum, decoy, signal).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensitySet {
    pub decoy: f64,
    pub signal: f64,
    pub probabilities: [f64; 3],
}

impl Default for IntensitySet {
    fn default() -> Self {
        Self {
            decoy: 0.07,
            signal: 0.40,
            probabilities: [0.22, 0.45, 0.33],
        }
    }
}

impl IntensitySet {
    pub fn validate(&self) -> Result<()> {
        if !(self.decoy > 0.0 && self.decoy < self.signal && self.signal.is_finite()) {
            return Err(Error::Config(format!(
                "intensities must satisfy 0 < decoy < signal, got decoy={} signal={}",
                self.decoy, self.signal
            )));
        }
        if self
            .probabilities
            .iter()
            .any(|p| !(0.0..=1.0).contains(p) || !p.is_finite())
        {
            return Err(Error::Config(format!(
                "intensity probabilities must lie in [0, 1], got {:?}",
                self.probabilities
            )));
        }
        let sum: f64 = self.probabilities.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(Error::Config(format!(
                "intensity probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    pub fn mean(&self, class: IntensityClass) -> f64 {
        match class {
            IntensityClass::Vacuum => 0.0,
            IntensityClass::Decoy => self.decoy,
            IntensityClass::Signal => self.signal,
        }
    }

    pub fn probability(&self, class: IntensityClass) -> f64 {
        self.probabilities[class.index()]
    }
}

/// One party's per-clock random selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PulseChoice {
    pub intensity: IntensityClass,
    pub basis: Basis,
    pub bit: u8,
}

impl PulseChoice {
    /// Vacuum pulses keep their basis/bit labels for table indexing but carry
    /// no information.
    pub fn encodes_information(&self) -> bool {
        self.intensity != IntensityClass::Vacuum
    }
}

/// Draws one pulse choice. Always consumes exactly three `f64` uniforms from
/// `rng`, which lets callers address per-pulse positions in a seekable stream.
pub fn sample_pulse_choice<R: Rng + ?Sized>(set: &IntensitySet, rng: &mut R) -> PulseChoice {
    let u_intensity: f64 = rng.random();
    let u_basis: f64 = rng.random();
    let u_bit: f64 = rng.random();

    let [p0, p_decoy, _] = set.probabilities;
    // Degenerate probabilities must never select a zero-weight class.
    let intensity = if u_intensity < p0 {
        IntensityClass::Vacuum
    } else if u_intensity < p0 + p_decoy {
        IntensityClass::Decoy
    } else if set.probabilities[2] > 0.0 {
        IntensityClass::Signal
    } else if p_decoy > 0.0 {
        IntensityClass::Decoy
    } else {
        IntensityClass::Vacuum
    };
    PulseChoice {
        intensity,
        basis: if u_basis < 0.5 { Basis::Z } else { Basis::X },
        bit: u8::from(u_bit >= 0.5),
    }
}

/// Click / no-click of the two detectors in the two time bins of one clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct DetectionPattern {
    pub d1_bin0: bool,
    pub d1_bin1: bool,
    pub d2_bin0: bool,
    pub d2_bin1: bool,
}

impl DetectionPattern {
    /// Bit layout: bit0 = d1_bin0, bit1 = d1_bin1, bit2 = d2_bin0, bit3 = d2_bin1.
    pub fn index(&self) -> usize {
        usize::from(self.d1_bin0)
            | usize::from(self.d1_bin1) << 1
            | usize::from(self.d2_bin0) << 2
            | usize::from(self.d2_bin1) << 3
    }

    pub fn from_index(index: usize) -> Self {
        Self {
            d1_bin0: index & 1 != 0,
            d1_bin1: index & 2 != 0,
            d2_bin0: index & 4 != 0,
            d2_bin1: index & 8 != 0,
        }
    }

    pub fn all() -> impl Iterator<Item = DetectionPattern> {
        (0..16).map(DetectionPattern::from_index)
    }

    pub fn clicks(&self) -> u32 {
        (self.index() as u32).count_ones()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BsmOutcome {
    PsiMinus,
    NoEvent,
}

/// Announces |ψ⁻⟩ only for the strict two-click cross pattern: one detector in
/// bin 0, the other in bin 1, nothing else.
pub fn classify_bsm(pattern: DetectionPattern) -> BsmOutcome {
    let cross_01 = pattern.d1_bin0 && pattern.d2_bin1 && !pattern.d1_bin1 && !pattern.d2_bin0;
    let cross_10 = pattern.d1_bin1 && pattern.d2_bin0 && !pattern.d1_bin0 && !pattern.d2_bin1;
    if cross_01 || cross_10 {
        BsmOutcome::PsiMinus
    } else {
        BsmOutcome::NoEvent
    }
}

/// |ψ⁺⟩ signature (same detector, both bins). Never post-selected; tallied for
/// diagnostics only.
pub fn is_psi_plus(pattern: DetectionPattern) -> bool {
    pattern.clicks() == 2 && ((pattern.d1_bin0 && pattern.d1_bin1) || (pattern.d2_bin0 && pattern.d2_bin1))
}

/// Which bases get Alice's bit flip after a |ψ⁻⟩ announcement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipRule {
    #[default]
    AllBases,
    ZOnly,
}

impl FlipRule {
    fn flips(self, basis: Basis) -> bool {
        match self {
            FlipRule::AllBases => true,
            FlipRule::ZOnly => basis == Basis::Z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiftedPair {
    pub basis: Basis,
    pub alice_bit_after_flip: u8,
    pub bob_bit: u8,
    pub intensity_pair: (IntensityClass, IntensityClass),
}

impl SiftedPair {
    pub fn is_error(&self) -> bool {
        self.alice_bit_after_flip != self.bob_bit
    }
}

pub fn sift(alice: PulseChoice, bob: PulseChoice, outcome: BsmOutcome) -> Option<SiftedPair> {
    sift_with(alice, bob, outcome, FlipRule::default())
}

pub fn sift_with(alice: PulseChoice, bob: PulseChoice, outcome: BsmOutcome, rule: FlipRule) -> Option<SiftedPair> {
    if outcome != BsmOutcome::PsiMinus || alice.basis != bob.basis {
        return None;
    }
    let alice_bit_after_flip = if rule.flips(alice.basis) {
        1 - alice.bit
    } else {
        alice.bit
    };
    Some(SiftedPair {
        basis: alice.basis,
        alice_bit_after_flip,
        bob_bit: bob.bit,
        intensity_pair: (alice.intensity, bob.intensity),
    })
}

/// Coordinates of one table cell: matched basis, Alice's intensity (row) and
/// Bob's intensity (column).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub basis: Basis,
    pub alice: IntensityClass,
    pub bob: IntensityClass,
}

impl CellKey {
    pub fn new(basis: Basis, alice: IntensityClass, bob: IntensityClass) -> Self {
        Self { basis, alice, bob }
    }

    /// All 18 cells, basis-major then Alice row then Bob column.
    pub fn all() -> impl Iterator<Item = CellKey> {
        Basis::ALL.into_iter().flat_map(|basis| {
            IntensityClass::ALL.into_iter().flat_map(move |alice| {
                IntensityClass::ALL
                    .into_iter()
                    .map(move |bob| CellKey::new(basis, alice, bob))
            })
        })
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?}[alice={}, bob={}]",
            self.basis,
            self.alice.name(),
            self.bob.name()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CellCounts {
    pub pulses_sent: u64,
    pub coincidences: u64,
    pub errors: u64,
    /// Diagnostic |ψ⁺⟩ tally; never used for key or estimation.
    #[serde(default)]
    pub psi_plus: u64,
}

impl CellCounts {
    pub fn qber(&self) -> Option<f64> {
        (self.coincidences > 0).then(|| self.errors as f64 / self.coincidences as f64)
    }

    fn merge(&mut self, other: &CellCounts) {
        self.pulses_sent += other.pulses_sent;
        self.coincidences += other.coincidences;
        self.errors += other.errors;
        self.psi_plus += other.psi_plus;
    }
}

/// Coincidence and error counts for every (basis, Alice intensity, Bob
/// intensity) cell of matched-basis pulses.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CountTables {
    cells: [[[CellCounts; 3]; 3]; 2],
    /// Pulses whose bases did not match; they belong to no cell.
    pub mismatched_basis: u64,
}

impl CountTables {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cell(&self, key: CellKey) -> &CellCounts {
        &self.cells[key.basis.index()][key.alice.index()][key.bob.index()]
    }

    pub fn cell_mut(&mut self, key: CellKey) -> &mut CellCounts {
        &mut self.cells[key.basis.index()][key.alice.index()][key.bob.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (CellKey, &CellCounts)> + '_ {
        CellKey::all().map(move |key| (key, self.cell(key)))
    }

    pub fn qber(&self, key: CellKey) -> Option<f64> {
        self.cell(key).qber()
    }

    pub fn total_pulses(&self) -> u64 {
        self.iter().map(|(_, c)| c.pulses_sent).sum::<u64>() + self.mismatched_basis
    }

    pub fn record(&mut self, alice: PulseChoice, bob: PulseChoice, outcome: BsmOutcome, rule: FlipRule) {
        if alice.basis != bob.basis {
            self.mismatched_basis += 1;
            return;
        }
        let cell = self.cell_mut(CellKey::new(alice.basis, alice.intensity, bob.intensity));
        cell.pulses_sent += 1;
        if let Some(pair) = sift_with(alice, bob, outcome, rule) {
            cell.coincidences += 1;
            cell.errors += u64::from(pair.is_error());
        }
    }

    /// Classifies the raw pattern, records it and keeps the |ψ⁺⟩ diagnostic.
    pub fn record_detection(
        &mut self,
        alice: PulseChoice,
        bob: PulseChoice,
        pattern: DetectionPattern,
        rule: FlipRule,
    ) {
        self.record(alice, bob, classify_bsm(pattern), rule);
        if alice.basis == bob.basis && is_psi_plus(pattern) {
            self.cell_mut(CellKey::new(alice.basis, alice.intensity, bob.intensity))
                .psi_plus += 1;
        }
    }

    pub fn merge(&mut self, other: &CountTables) {
        for key in CellKey::all() {
            let theirs = *other.cell(key);
            self.cell_mut(key).merge(&theirs);
        }
        self.mismatched_basis += other.mismatched_basis;
    }

    /// Checks `0 ≤ errors ≤ coincidences ≤ pulses_sent` for every cell.
    pub fn validate(&self) -> Result<()> {
        for (key, c) in self.iter() {
            if c.errors > c.coincidences {
                return Err(Error::Validation {
                    cell: key,
                    message: format!("errors {} exceed coincidences {}", c.errors, c.coincidences),
                });
            }
            if c.coincidences > c.pulses_sent {
                return Err(Error::Validation {
                    cell: key,
                    message: format!("coincidences {} exceed pulses sent {}", c.coincidences, c.pulses_sent),
                });
            }
        }
        Ok(())
    }
}

/// Folds a record stream into count tables with the default flip rule.
pub fn accumulate<I>(records: I) -> CountTables
where
    I: IntoIterator<Item = (PulseChoice, PulseChoice, BsmOutcome)>,
{
    accumulate_with(records, FlipRule::default())
}

pub fn accumulate_with<I>(records: I, rule: FlipRule) -> CountTables
where
    I: IntoIterator<Item = (PulseChoice, PulseChoice, BsmOutcome)>,
{
    let mut tables = CountTables::new();
    for (alice, bob, outcome) in records {
        tables.record(alice, bob, outcome, rule);
    }
    tables
}
