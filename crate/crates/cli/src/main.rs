use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

use mdiqkd_core::decoy::{Estimator, ObservedStats};
use mdiqkd_core::io::{Mode, RunConfig, SimulationMethod};
use mdiqkd_core::pipeline::{
    run_analyze, run_feedback_demo, run_pipeline, run_report, simulate, write_feedback, write_simulation,
    PipelineOutcome,
};
use mdiqkd_core::Error;

const EXIT_ZERO_KEY: u8 = 2;
const EXIT_VALIDATION: u8 = 3;
const EXIT_NUMERIC: u8 = 4;
const EXIT_OTHER: u8 = 1;

/// Decoy-state MDI-QKD simulator and finite-key security analysis.
#[derive(Debug, Parser)]
#[command(name = "mdiqkd", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stochastic stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Total failure probability, split equally over the bounds.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Error-correction inefficiency.
    #[arg(long, global = true)]
    f: Option<f64>,
    /// Photon-number cutoff of the interference model and the LP.
    #[arg(long, global = true)]
    cutoff: Option<usize>,
    #[arg(long, global = true, value_enum)]
    estimator: Option<EstimatorArg>,
    /// Output directory.
    #[arg(long, short, global = true, env = "MDIQKD_OUT_DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Analytic,
    Lp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Expected,
    Counts,
    Pulses,
}

#[derive(Debug, Args)]
struct SimulationArgs {
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Clock cycles for the per-pulse method.
    #[arg(long)]
    pulses: Option<u64>,
    /// Run the session through drift and the calibration schedule.
    #[arg(long)]
    feedback: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Realize count tables and write them as tables.json.
    Simulate(SimulationArgs),
    /// Analyze a table file.
    Analyze {
        #[arg(long, short)]
        input: Option<PathBuf>,
    },
    /// Simulate (or ingest `--input`), analyze and report.
    Pipeline {
        #[arg(long, short)]
        input: Option<PathBuf>,
        #[command(flatten)]
        sim: SimulationArgs,
    },
    /// Drift and calibration schedule only; writes feedback.json.
    FeedbackDemo {
        /// Leave every feedback loop off.
        #[arg(long)]
        no_feedback: bool,
    },
    /// Re-render chart and log from a result.json.
    Report {
        #[arg(long, short)]
        input: Option<PathBuf>,
    },
}

impl Command {
    fn mode(&self) -> Mode {
        match self {
            Command::Simulate(_) => Mode::Simulate,
            Command::Analyze { .. } => Mode::Analyze,
            Command::Pipeline { .. } => Mode::Pipeline,
            Command::FeedbackDemo { .. } => Mode::FeedbackDemo,
            Command::Report { .. } => Mode::Report,
        }
    }
}

fn apply_simulation(config: &mut RunConfig, sim: &SimulationArgs) {
    if let Some(m) = sim.method {
        config.simulation.method = match m {
            MethodArg::Expected => SimulationMethod::Expected,
            MethodArg::Counts => SimulationMethod::Counts,
            MethodArg::Pulses => SimulationMethod::Pulses,
        };
    }
    if sim.pulses.is_some() {
        config.simulation.pulses = sim.pulses;
    }
    config.simulation.feedback |= sim.feedback;
}

fn build_config(cli: &Cli) -> Result<RunConfig, Error> {
    let g = &cli.global;
    let mut config = match &g.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = g.seed {
        config.seed = Some(seed);
    }
    if let Some(eps) = g.epsilon {
        config.security.epsilon_total = eps;
    }
    if let Some(f) = g.f {
        config.security.f = f;
    }
    if let Some(n) = g.cutoff {
        config.security.photon_cutoff = n;
        config.session.photon_cutoff = n;
    }
    if let Some(e) = g.estimator {
        config.estimator = match e {
            EstimatorArg::Analytic => Estimator::Analytic,
            EstimatorArg::Lp => Estimator::Lp,
        };
    }
    if let Some(out) = &g.out {
        config.output_dir = Some(out.clone());
    }
    if config.output_dir.is_none() {
        config.output_dir = Some(PathBuf::from("mdiqkd-out"));
    }
    match &cli.command {
        Command::Simulate(sim) => apply_simulation(&mut config, sim),
        Command::Pipeline { input, sim } => {
            if input.is_some() {
                config.input = input.clone();
            }
            apply_simulation(&mut config, sim);
        }
        Command::Analyze { input } | Command::Report { input } => {
            if input.is_some() {
                config.input = input.clone();
            }
        }
        Command::FeedbackDemo { no_feedback } => {
            if *no_feedback {
                config.controller.enabled = false;
            }
        }
    }
    config.validate(cli.command.mode())?;
    Ok(config)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Schema(_) | Error::Validation { .. } | Error::Json(_) | Error::Toml(_) => {
            EXIT_VALIDATION
        }
        Error::Precision { .. }
        | Error::Infeasible(_)
        | Error::Undefined(_)
        | Error::Domain(_)
        | Error::Internal(_) => EXIT_NUMERIC,
        Error::Io { .. } => EXIT_OTHER,
    }
}

fn finish(outcome: &PipelineOutcome) -> u8 {
    let r = &outcome.record.result;
    println!("M11 lower bound   {:.6e}", r.m11_lower);
    match r.e11_upper {
        Some(e) => println!("e11 upper bound   {:.4}%", 100.0 * e),
        None => println!("e11 upper bound   undefined"),
    }
    println!("secure key        {:.6e} bits", r.key_bits);
    println!("key rate          {:.4} bit/s", r.rate_bps);
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    if r.zero_key() {
        println!("INSECURE: no secure key");
        EXIT_ZERO_KEY
    } else {
        0
    }
}

fn run(cli: &Cli) -> Result<u8, Error> {
    let config = build_config(cli)?;
    match &cli.command {
        Command::Simulate(_) => {
            let sim = simulate(&config)?;
            let key = ObservedStats::signal_key();
            println!("{}", sim.source);
            println!(
                "M_z(signal, signal) {}  E_z {:.4}%",
                sim.stats.signal_count(),
                100.0 * sim.stats.tables.qber(key).unwrap_or(0.0)
            );
            for f in write_simulation(&sim, &config)? {
                println!("wrote {}", f.display());
            }
            Ok(0)
        }
        Command::Analyze { .. } => Ok(finish(&run_analyze(&config)?)),
        Command::Pipeline { .. } => Ok(finish(&run_pipeline(&config)?)),
        Command::FeedbackDemo { .. } => {
            let report = run_feedback_demo(&config)?;
            let path = write_feedback(&report, &config)?;
            println!("calibrations      {}", report.calibration_events);
            println!("duty cycle        {:.4}", report.duty_cycle);
            println!("polarization span {:.4}", report.polarization_fluctuation());
            println!("within thresholds {}", report.within_thresholds(&config.controller));
            println!("wrote {}", path.display());
            Ok(0)
        }
        Command::Report { .. } => {
            let (record, files) = run_report(&config)?;
            for f in &files {
                println!("wrote {}", f.display());
            }
            if record.result.zero_key() {
                println!("INSECURE: no secure key");
                Ok(EXIT_ZERO_KEY)
            } else {
                Ok(0)
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
