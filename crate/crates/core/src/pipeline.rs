//! End-to-end runs: simulate or ingest, analyze, report.
//!
//! Randomness comes from one ChaCha8 seed split into independent streams,
//! so the count sampler and the drift simulation never share draws.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::decoy::{analyze, ObservedStats};
use crate::error::{Error, Result};
use crate::feedback::{run_scheduled_session, ScheduleReport};
use crate::io::{emit_report, ingest_tables, Mode, ResultRecord, RunConfig, SimulationMethod, TableFile};
use crate::photonics::montecarlo::{montecarlo_session, sample_session_counts};
use crate::photonics::{cell_probabilities, scale_to_session, ExpectedTables, SessionSpec};
use crate::protocol::CountTables;

pub const TABLES_FILE: &str = "tables.json";
pub const FEEDBACK_FILE: &str = "feedback.json";

const COUNT_STREAM: u64 = 0;
const FEEDBACK_STREAM: u64 = 1;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub stats: ObservedStats,
    pub schedule: Option<ScheduleReport>,
    pub source: String,
}

/// Stretches of key exchange, each under fixed interference parameters.
fn segments(config: &RunConfig) -> Result<(Vec<SessionSpec>, Option<ScheduleReport>)> {
    let spec = &config.session;
    if !config.simulation.feedback {
        return Ok((vec![spec.clone()], None));
    }
    let seed = config
        .seed
        .ok_or_else(|| Error::Config("the feedback schedule needs a seed".into()))?;
    let schedule = run_scheduled_session(
        spec,
        &config.drift,
        &config.controller,
        &mut stream(seed, FEEDBACK_STREAM),
    )?;
    let specs = schedule
        .blocks
        .iter()
        .flat_map(|b| b.qkd_segments())
        .map(|(duration_s, interference)| SessionSpec {
            duration_s,
            interference,
            ..spec.clone()
        })
        .collect();
    Ok((specs, Some(schedule)))
}

/// Realizes count tables according to `config.simulation`.
pub fn simulate(config: &RunConfig) -> Result<Simulation> {
    config.validate(Mode::Simulate)?;
    let spec = &config.session;
    let method = config.simulation.method;
    let (tables, duration_s, schedule) = match method {
        SimulationMethod::Pulses => {
            let n = config.simulation.pulses.unwrap_or(0);
            let seeded = SessionSpec {
                seed: config.seed.unwrap_or(spec.seed),
                ..spec.clone()
            };
            let duration = n as f64 / spec.channel.clock_rate_hz;
            (montecarlo_session(&seeded, n)?, duration, None)
        }
        SimulationMethod::Expected => {
            let (specs, schedule) = segments(config)?;
            let mut expected = ExpectedTables::default();
            for s in &specs {
                expected.add_scaled(&scale_to_session(&cell_probabilities(s)?, s), 1.0);
            }
            (expected.rounded(), spec.duration_s, schedule)
        }
        SimulationMethod::Counts => {
            let (specs, schedule) = segments(config)?;
            let mut rng = stream(config.seed.unwrap_or(spec.seed), COUNT_STREAM);
            let mut tables = CountTables::new();
            for s in &specs {
                tables.merge(&sample_session_counts(s, &mut rng)?.tables);
            }
            (tables, spec.duration_s, schedule)
        }
    };
    let source = format!(
        "simulated ({}{})",
        match method {
            SimulationMethod::Expected => "expected",
            SimulationMethod::Counts => "counts",
            SimulationMethod::Pulses => "pulses",
        },
        if schedule.is_some() { ", feedback" } else { "" }
    );
    Ok(Simulation {
        stats: ObservedStats::new(tables, spec.alice, spec.bob, duration_s)?,
        schedule,
        source,
    })
}

pub fn run_feedback_demo(config: &RunConfig) -> Result<ScheduleReport> {
    config.validate(Mode::FeedbackDemo)?;
    let seed = config.seed.unwrap_or(config.session.seed);
    run_scheduled_session(
        &config.session,
        &config.drift,
        &config.controller,
        &mut stream(seed, FEEDBACK_STREAM),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub stats: ObservedStats,
    pub schedule: Option<ScheduleReport>,
    pub record: ResultRecord,
    pub files: Vec<PathBuf>,
}

fn output_dir(config: &RunConfig) -> Result<&Path> {
    config
        .output_dir
        .as_deref()
        .ok_or_else(|| Error::Config("no output directory configured".into()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the simulated tables (and schedule, if any) to the output
/// directory.
pub fn write_simulation(sim: &Simulation, config: &RunConfig) -> Result<Vec<PathBuf>> {
    let dir = output_dir(config)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut file = TableFile::from_stats(&sim.stats, config.session.channel.clock_rate_hz, false);
    file.metadata.description = Some(sim.source.clone());
    let tables = dir.join(TABLES_FILE);
    fs::write(&tables, file.to_json()?).map_err(|e| Error::io(&tables, e))?;
    let mut files = vec![tables];
    if let Some(schedule) = &sim.schedule {
        let path = dir.join(FEEDBACK_FILE);
        write_json(&path, schedule)?;
        files.push(path);
    }
    Ok(files)
}

/// Ingests `config.input` or simulates, then analyzes and writes the report.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutcome> {
    config.validate(Mode::Pipeline)?;
    let dir = output_dir(config)?;
    let (stats, schedule, source, mut files) = match &config.input {
        Some(path) => {
            let name = path
                .file_name()
                .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
            (ingest_tables(path)?, None, format!("ingested {name}"), Vec::new())
        }
        None => {
            let sim = simulate(config)?;
            let files = write_simulation(&sim, config)?;
            (sim.stats, sim.schedule, sim.source, files)
        }
    };
    let result = analyze(&stats, &config.security, config.estimator)?;
    info!(
        "{source}: K = {:.4e} bits, rate = {:.4} bit/s",
        result.key_bits, result.rate_bps
    );
    let seed = if config.input.is_none() && config.is_stochastic(Mode::Pipeline) {
        config.seed
    } else {
        None
    };
    let record = ResultRecord::new(result, source, stats.duration_s, seed);
    files.extend(emit_report(&record, dir)?);
    Ok(PipelineOutcome {
        stats,
        schedule,
        record,
        files,
    })
}

/// Analysis of an existing table file with the report written to the output
/// directory.
pub fn run_analyze(config: &RunConfig) -> Result<PipelineOutcome> {
    config.validate(Mode::Analyze)?;
    run_pipeline(config)
}

/// Re-renders the chart and log of a stored result file.
pub fn run_report(config: &RunConfig) -> Result<(ResultRecord, Vec<PathBuf>)> {
    config.validate(Mode::Report)?;
    let input = config.input.as_deref().unwrap_or(Path::new(""));
    let record = ResultRecord::load(input)?;
    let files = emit_report(&record, output_dir(config)?)?;
    Ok((record, files))
}

/// Writes a schedule report as `feedback.json` in the output directory.
pub fn write_feedback(schedule: &ScheduleReport, config: &RunConfig) -> Result<PathBuf> {
    let dir = output_dir(config)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(FEEDBACK_FILE);
    write_json(&path, schedule)?;
    Ok(path)
}
