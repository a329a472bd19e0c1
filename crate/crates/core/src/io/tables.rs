//! `mdiqkd-tables/1`: a hand-auditable JSON form of the count tables.
//!
//! ```json
//! {
//!   "schema": "mdiqkd-tables/1",
//!   "rounded": false,
//!   "metadata": {
//!     "duration_s": 65520.0,
//!     "clock_rate_hz": 75000000.0,
//!     "alice": { "decoy": 0.07, "signal": 0.4, "probabilities": [0.22, 0.45, 0.33] },
//!     "bob":   { "decoy": 0.07, "signal": 0.4, "probabilities": [0.22, 0.45, 0.33] },
//!     "qber_precision": 0.0001
//!   },
//!   "cells": [
//!     { "basis": "Z", "alice": "signal", "bob": "signal",
//!       "coincidences": 13500000, "errors": 2700, "qber": 0.0002,
//!       "pulses_sent": 133786350000 }
//!   ]
//! }
//! ```
//!
//! All 18 cells must appear exactly once. `errors` and `qber` are each
//! optional but at least one is required; when both are present they must
//! agree to half the stated precision. A missing `pulses_sent` is the
//! expected share clock × duration × p_A × p_B / 4.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoy::ObservedStats;
use crate::error::{Error, Result};
use crate::photonics::MATCHED_BASIS_PAIR_PROBABILITY;
use crate::protocol::{Basis, CellKey, CountTables, IntensityClass, IntensitySet};

pub const TABLE_SCHEMA: &str = "mdiqkd-tables/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub duration_s: f64,
    pub clock_rate_hz: f64,
    pub alice: IntensitySet,
    pub bob: IntensitySet,
    /// Resolution of the `qber` fields as a fraction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qber_precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableCell {
    pub basis: Basis,
    pub alice: IntensityClass,
    pub bob: IntensityClass,
    pub coincidences: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub errors: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qber: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulses_sent: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_plus: Option<u64>,
}

impl TableCell {
    pub fn key(&self) -> CellKey {
        CellKey::new(self.basis, self.alice, self.bob)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableFile {
    pub schema: String,
    /// Counts carry only the significant digits of a published table.
    #[serde(default)]
    pub rounded: bool,
    pub metadata: TableMetadata,
    pub cells: Vec<TableCell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mismatched_basis: Option<u64>,
}

impl TableFile {
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::Schema("table file is empty".into()));
        }
        let file: TableFile =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("malformed table file: {e}")))?;
        if file.schema != TABLE_SCHEMA {
            return Err(Error::Schema(format!(
                "unsupported schema {:?}, expected {TABLE_SCHEMA:?}",
                file.schema
            )));
        }
        Ok(file)
    }

    /// Exact export: every count explicit, no QBER field.
    pub fn from_stats(stats: &ObservedStats, clock_rate_hz: f64, rounded: bool) -> Self {
        let cells = stats
            .tables
            .iter()
            .map(|(key, c)| TableCell {
                basis: key.basis,
                alice: key.alice,
                bob: key.bob,
                coincidences: c.coincidences,
                errors: Some(c.errors),
                qber: None,
                pulses_sent: Some(c.pulses_sent),
                psi_plus: (c.psi_plus > 0).then_some(c.psi_plus),
            })
            .collect();
        TableFile {
            schema: TABLE_SCHEMA.into(),
            rounded,
            metadata: TableMetadata {
                description: None,
                duration_s: stats.duration_s,
                clock_rate_hz,
                alice: stats.alice,
                bob: stats.bob,
                qber_precision: None,
            },
            cells,
            mismatched_basis: Some(stats.tables.mismatched_basis),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    fn expected_pulses(&self, key: CellKey) -> u64 {
        let m = &self.metadata;
        (m.clock_rate_hz
            * m.duration_s
            * m.alice.probability(key.alice)
            * m.bob.probability(key.bob)
            * MATCHED_BASIS_PAIR_PROBABILITY)
            .round() as u64
    }

    /// Converts to analysis input, checking schema completeness, QBER
    /// consistency and count ordering.
    pub fn to_stats(&self) -> Result<ObservedStats> {
        let m = &self.metadata;
        if !(m.clock_rate_hz > 0.0 && m.clock_rate_hz.is_finite()) {
            return Err(Error::Schema(format!(
                "clock rate must be positive, got {}",
                m.clock_rate_hz
            )));
        }
        let mut seen = [[[false; 3]; 3]; 2];
        let mut tables = CountTables::new();
        for cell in &self.cells {
            let key = cell.key();
            let flag = &mut seen[key.basis.index()][key.alice.index()][key.bob.index()];
            if *flag {
                return Err(Error::Schema(format!("cell {key} appears twice")));
            }
            *flag = true;

            let errors = match (cell.errors, cell.qber) {
                (Some(e), Some(q)) => {
                    check_qber(self, key, cell.coincidences, e, q)?;
                    e
                }
                (Some(e), None) => e,
                (None, Some(q)) => {
                    if !(0.0..=1.0).contains(&q) {
                        return Err(Error::Validation {
                            cell: key,
                            message: format!("qber {q} outside [0, 1]"),
                        });
                    }
                    (q * cell.coincidences as f64).round() as u64
                }
                (None, None) => {
                    return Err(Error::Schema(format!("cell {key} has neither errors nor qber")));
                }
            };
            let c = tables.cell_mut(key);
            c.coincidences = cell.coincidences;
            c.errors = errors;
            c.pulses_sent = cell.pulses_sent.unwrap_or_else(|| self.expected_pulses(key));
            c.psi_plus = cell.psi_plus.unwrap_or(0);
        }
        if let Some(key) = CellKey::all().find(|k| !seen[k.basis.index()][k.alice.index()][k.bob.index()]) {
            return Err(Error::Schema(format!("cell {key} is missing")));
        }
        let assigned: u64 = tables.iter().map(|(_, c)| c.pulses_sent).sum();
        tables.mismatched_basis = self
            .mismatched_basis
            .unwrap_or_else(|| ((m.clock_rate_hz * m.duration_s).round() as u64).saturating_sub(assigned));
        tables.validate()?;
        ObservedStats::new(tables, m.alice, m.bob, m.duration_s)
    }
}

fn check_qber(file: &TableFile, key: CellKey, coincidences: u64, errors: u64, qber: f64) -> Result<()> {
    let precision = file.metadata.qber_precision.unwrap_or(0.0);
    let measured = if coincidences > 0 {
        errors as f64 / coincidences as f64
    } else {
        0.0
    };
    // Rounded counts add their own half-unit of relative slack.
    let slack = if file.rounded && coincidences > 0 {
        0.5 / coincidences as f64
    } else {
        0.0
    };
    let tol = 0.5 * precision + slack + 1e-12;
    if (measured - qber).abs() > tol {
        return Err(Error::Validation {
            cell: key,
            message: format!(
                "stated qber {qber} disagrees with errors/coincidences = {measured:.6} (tolerance {tol:.2e})"
            ),
        });
    }
    Ok(())
}

pub fn ingest_tables(path: impl AsRef<Path>) -> Result<ObservedStats> {
    read_table_file(path)?.to_stats()
}

pub fn read_table_file(path: impl AsRef<Path>) -> Result<TableFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TableFile::parse(&text)
}

pub fn export_tables(stats: &ObservedStats, clock_rate_hz: f64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = TableFile::from_stats(stats, clock_rate_hz, false).to_json()?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// The field-test tables bundled with the crate.
pub const FIELD_TABLES_JSON: &str = include_str!("../../fixtures/field_tables.json");

pub fn field_tables() -> Result<TableFile> {
    TableFile::parse(FIELD_TABLES_JSON)
}
