//! Result record, ratio chart and reproduction log.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::decoy::{KeyResult, Ratios};
use crate::error::{Error, Result};

pub const RESULT_SCHEMA: &str = "mdiqkd-result/1";
pub const RESULT_FILE: &str = "result.json";
pub const CHART_FILE: &str = "ratios.svg";
pub const LOG_FILE: &str = "reproduction.log";

const RATIO_SUM_TOLERANCE: f64 = 1e-9;

/// Machine-readable outcome of one analysis. Contains no timestamps so that
/// equal inputs give byte-identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema: String,
    /// Where the counts came from, e.g. `simulated (counts, feedback)`.
    pub source: String,
    pub duration_s: f64,
    pub seed: Option<u64>,
    pub result: KeyResult,
}

impl ResultRecord {
    pub fn new(result: KeyResult, source: impl Into<String>, duration_s: f64, seed: Option<u64>) -> Self {
        Self {
            schema: RESULT_SCHEMA.into(),
            source: source.into(),
            duration_s,
            seed,
            result,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::Schema("result file is empty".into()));
        }
        let record: ResultRecord =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("malformed result file: {e}")))?;
        if record.schema != RESULT_SCHEMA {
            return Err(Error::Schema(format!(
                "unsupported schema {:?}, expected {RESULT_SCHEMA:?}",
                record.schema
            )));
        }
        Ok(record)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// The four chart segments; `None` when the key is zero.
pub fn chart_segments(result: &KeyResult) -> Result<Option<Ratios>> {
    if result.zero_key() {
        return Ok(None);
    }
    let ratios = result
        .ratios
        .ok_or_else(|| Error::Internal("positive key without a ratio decomposition".into()))?;
    check_ratio_sum(&ratios)?;
    Ok(Some(ratios))
}

pub fn check_ratio_sum(ratios: &Ratios) -> Result<()> {
    let sum = ratios.sum();
    if !((sum - 1.0).abs() <= RATIO_SUM_TOLERANCE) {
        return Err(Error::Internal(format!("ratio segments sum to {sum}, not 1")));
    }
    if ratios.as_array().iter().any(|(_, v)| !(*v >= -RATIO_SUM_TOLERANCE)) {
        return Err(Error::Internal(format!("negative ratio segment in {ratios:?}")));
    }
    Ok(())
}

const CHART_COLORS: [&str; 4] = ["#4e79a7", "#e15759", "#f28e2b", "#59a14f"];

/// Horizontal stacked bar with one segment per share of the sifted key.
pub fn render_ratio_chart(ratios: &Ratios) -> Result<String> {
    check_ratio_sum(ratios)?;
    let (width, bar_y, bar_h) = (640.0, 40.0, 48.0);
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="200" viewBox="0 0 {w} 200">"#,
        w = width + 40.0
    )
    .unwrap();
    writeln!(
        svg,
        r#"  <text x="20" y="24" font-family="sans-serif" font-size="14">Fate of the sifted signal-signal Z-basis bits</text>"#
    )
    .unwrap();
    let mut x = 20.0;
    for (i, ((label, fraction), color)) in ratios.as_array().iter().zip(CHART_COLORS).enumerate() {
        let w = fraction.max(0.0) * width;
        writeln!(
            svg,
            r#"  <rect class="segment" data-label="{label}" data-fraction="{fraction:.12}" x="{x:.3}" y="{bar_y}" width="{w:.3}" height="{bar_h}" fill="{color}"/>"#
        )
        .unwrap();
        let ly = 120.0 + 18.0 * i as f64;
        writeln!(
            svg,
            r#"  <rect x="20" y="{y:.0}" width="12" height="12" fill="{color}"/>"#,
            y = ly - 11.0
        )
        .unwrap();
        writeln!(
            svg,
            r#"  <text x="40" y="{ly:.0}" font-family="sans-serif" font-size="12">{label}: {pct:.2}%</text>"#,
            pct = 100.0 * fraction
        )
        .unwrap();
        x += w;
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |x| format!("{x:.6e}"))
}

pub fn render_log(record: &ResultRecord) -> String {
    let r = &record.result;
    let mut s = String::new();
    writeln!(s, "source             {}", record.source).unwrap();
    if let Some(seed) = record.seed {
        writeln!(s, "seed               {seed}").unwrap();
    }
    writeln!(s, "estimator          {:?}", r.estimator).unwrap();
    writeln!(s, "epsilon per bound  {:.6e}", r.epsilon_per_bound).unwrap();
    writeln!(s, "duration           {} s", record.duration_s).unwrap();
    writeln!(s, "M (Z, signal)      {:.6e}", r.m_signal).unwrap();
    writeln!(s, "E (Z, signal)      {:.6e}", r.e_signal).unwrap();
    writeln!(s, "M11 lower          {:.6e}", r.m11_lower).unwrap();
    if let Some(p) = &r.phase_error {
        writeln!(s, "e11 bit (X) upper  {:.6e}", p.bit_error_upper).unwrap();
        writeln!(s, "sampling deviation {:.6e}", p.sampling_deviation).unwrap();
    }
    writeln!(s, "e11 phase upper    {}", fmt_opt(r.e11_upper)).unwrap();
    writeln!(s, "K_ec               {:.6e}", r.k_ec).unwrap();
    writeln!(s, "K                  {:.6e}", r.key_bits).unwrap();
    writeln!(s, "rate               {:.6} bit/s", r.rate_bps).unwrap();
    if let Some(q) = &r.ratios {
        for (label, v) in q.as_array() {
            writeln!(s, "share {label:<17} {:.4}%", 100.0 * v).unwrap();
        }
    }
    if r.zero_key() {
        writeln!(
            s,
            "INSECURE: the bounds leave no secure key; no ratio chart was produced"
        )
        .unwrap();
    }
    s
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `result.json`, `reproduction.log` and, for a positive key,
/// `ratios.svg` into `dir`. Returns the written paths.
pub fn emit_report(record: &ResultRecord, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let segments = chart_segments(&record.result)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut written = Vec::new();
    let result_path = dir.join(RESULT_FILE);
    let mut json = serde_json::to_string_pretty(record)?;
    json.push('\n');
    write(&result_path, &json)?;
    written.push(result_path);

    let chart_path = dir.join(CHART_FILE);
    match segments {
        Some(ratios) => {
            write(&chart_path, &render_ratio_chart(&ratios)?)?;
            written.push(chart_path);
        }
        None => {
            warn!("zero secure key: ratio chart omitted");
            if chart_path.exists() {
                fs::remove_file(&chart_path).map_err(|e| Error::io(&chart_path, e))?;
            }
        }
    }

    let log_path = dir.join(LOG_FILE);
    write(&log_path, &render_log(record))?;
    written.push(log_path);
    Ok(written)
}
