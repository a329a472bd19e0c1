//! TOML run configuration. Every section is optional and falls back to the
//! library defaults.
//!
//! ```toml
//! seed = 7
//! output_dir = "out"
//! estimator = "analytic"
//!
//! [simulation]
//! method = "counts"      # expected | counts | pulses
//! feedback = true
//!
//! [session]
//! duration_s = 65520.0
//!
//! [session.channel]
//! loss_alice_db = 7.9
//!
//! [security]
//! epsilon_total = 1e-10
//! f = 1.16
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decoy::{Estimator, SecurityParams};
use crate::error::{Error, Result};
use crate::feedback::{ControllerConfig, DriftModel};
use crate::photonics::SessionSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Analyze,
    Pipeline,
    FeedbackDemo,
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimulationMethod {
    /// Rounded expected counts; no randomness.
    #[default]
    Expected,
    /// Count-level sample of the whole session.
    Counts,
    /// Per-pulse Monte Carlo over `pulses` clock cycles.
    Pulses,
}

impl SimulationMethod {
    pub fn is_stochastic(self) -> bool {
        !matches!(self, SimulationMethod::Expected)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub method: SimulationMethod,
    /// Required by the per-pulse method.
    pub pulses: Option<u64>,
    /// Drive the session through the calibration schedule and drift.
    pub feedback: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Table file to analyze, or result file to re-render in report mode.
    pub input: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub estimator: Estimator,
    pub simulation: SimulationConfig,
    pub session: SessionSpec,
    pub security: SecurityParams,
    pub drift: DriftModel,
    pub controller: ControllerConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Whether `mode` under this configuration draws random numbers.
    pub fn is_stochastic(&self, mode: Mode) -> bool {
        match mode {
            Mode::FeedbackDemo => true,
            Mode::Simulate => self.simulation.method.is_stochastic() || self.simulation.feedback,
            Mode::Pipeline => {
                self.input.is_none() && (self.simulation.method.is_stochastic() || self.simulation.feedback)
            }
            Mode::Analyze | Mode::Report => false,
        }
    }

    pub fn validate(&self, mode: Mode) -> Result<()> {
        self.session.validate()?;
        self.security.validate()?;
        self.drift.validate()?;
        self.controller.validate()?;
        if self.is_stochastic(mode) && self.seed.is_none() {
            return Err(Error::Config(format!("{mode:?} mode is stochastic and needs a seed")));
        }
        if matches!(mode, Mode::Analyze | Mode::Report) && self.input.is_none() {
            return Err(Error::Config(format!("{mode:?} mode needs an input file")));
        }
        let simulates = matches!(mode, Mode::Simulate) || (matches!(mode, Mode::Pipeline) && self.input.is_none());
        if simulates && self.simulation.method == SimulationMethod::Pulses {
            match self.simulation.pulses {
                None | Some(0) => {
                    return Err(Error::Config("the pulses method needs `simulation.pulses` >= 1".into()));
                }
                Some(_) if self.simulation.feedback => {
                    return Err(Error::Config(
                        "the pulses method does not run under the feedback schedule".into(),
                    ));
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}
