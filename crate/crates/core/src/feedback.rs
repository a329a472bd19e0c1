//! Environmental drift and the feedback loops that hold the two sources
//! indistinguishable at the relay.
//!
//! Timing and wavelength are corrected only at scheduled calibrations; the
//! polarization and phase loops act every simulation step.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::photonics::{mode_overlap, InterferenceParams, SessionSpec};

const DAY_S: f64 = 86_400.0;

/// Length of the stretches over which a block's interference parameters are
/// held constant for count simulation.
pub const SEGMENT_S: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftState {
    pub timing_offset_ps: f64,
    pub wavelength_offset_pm: f64,
    /// In [0, 1].
    pub polarization_transmission: f64,
    pub phase_offset_rad: f64,
    pub wall_time_s: f64,
}

impl Default for DriftState {
    fn default() -> Self {
        Self {
            timing_offset_ps: 0.0,
            wavelength_offset_pm: 0.0,
            polarization_transmission: 1.0,
            phase_offset_rad: 0.0,
            wall_time_s: 0.0,
        }
    }
}

impl DriftState {
    pub fn interference(&self, base: &InterferenceParams) -> InterferenceParams {
        InterferenceParams {
            timing_offset_ps: self.timing_offset_ps,
            spectral_offset_pm: self.wavelength_offset_pm,
            polarization_overlap: self.polarization_transmission,
            phase_misalignment_rad: self.phase_offset_rad,
            ..*base
        }
    }
}

/// Random-walk variances per second and optional diurnal amplitudes
/// (24 h period) for timing and wavelength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftModel {
    pub timing_variance_ps2_per_s: f64,
    pub wavelength_variance_pm2_per_s: f64,
    pub polarization_variance_per_s: f64,
    pub phase_variance_rad2_per_s: f64,
    pub diurnal_timing_amplitude_ps: f64,
    pub diurnal_wavelength_amplitude_pm: f64,
}

impl Default for DriftModel {
    fn default() -> Self {
        Self {
            timing_variance_ps2_per_s: 0.5,
            wavelength_variance_pm2_per_s: 2e-3,
            polarization_variance_per_s: 4e-6,
            phase_variance_rad2_per_s: 1e-4,
            diurnal_timing_amplitude_ps: 0.0,
            diurnal_wavelength_amplitude_pm: 0.0,
        }
    }
}

impl DriftModel {
    pub fn none() -> Self {
        Self {
            timing_variance_ps2_per_s: 0.0,
            wavelength_variance_pm2_per_s: 0.0,
            polarization_variance_per_s: 0.0,
            phase_variance_rad2_per_s: 0.0,
            diurnal_timing_amplitude_ps: 0.0,
            diurnal_wavelength_amplitude_pm: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = [
            self.timing_variance_ps2_per_s,
            self.wavelength_variance_pm2_per_s,
            self.polarization_variance_per_s,
            self.phase_variance_rad2_per_s,
        ];
        if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config("drift variances must be finite and non-negative".into()));
        }
        if !(self.diurnal_timing_amplitude_ps.is_finite() && self.diurnal_wavelength_amplitude_pm.is_finite()) {
            return Err(Error::Config("diurnal amplitudes must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    /// When false no loop or calibration corrects anything; the schedule and
    /// its dead time are unchanged.
    pub enabled: bool,
    pub calibration_interval_s: f64,
    pub dead_time_s: f64,
    pub timing_threshold_ps: f64,
    pub wavelength_threshold_pm: f64,
    pub wavelength_step_pm: f64,
    pub wavelength_measurement_noise_pm: f64,
    pub polarization_fluctuation_threshold: f64,
    pub phase_threshold_rad: f64,
    pub polarization_gain: f64,
    pub phase_gain: f64,
    pub step_s: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            calibration_interval_s: 1800.0,
            dead_time_s: 60.0,
            timing_threshold_ps: 20.0,
            wavelength_threshold_pm: 1.0,
            wavelength_step_pm: 0.5,
            wavelength_measurement_noise_pm: 0.5,
            polarization_fluctuation_threshold: 0.03,
            phase_threshold_rad: 0.05,
            polarization_gain: 0.8,
            phase_gain: 0.9,
            step_s: 10.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.calibration_interval_s,
            self.timing_threshold_ps,
            self.wavelength_threshold_pm,
            self.wavelength_step_pm,
            self.polarization_fluctuation_threshold,
            self.phase_threshold_rad,
            self.step_s,
        ];
        if positive.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Config("interval, thresholds and step must be positive".into()));
        }
        if !(self.dead_time_s >= 0.0 && self.dead_time_s < self.calibration_interval_s) {
            return Err(Error::Config("dead time must lie in [0, interval)".into()));
        }
        if !(self.wavelength_measurement_noise_pm >= 0.0) {
            return Err(Error::Config(
                "wavelength measurement noise must be non-negative".into(),
            ));
        }
        // Worst case of quantizing a noisy reading.
        if self.wavelength_measurement_noise_pm + self.wavelength_step_pm / 2.0 > self.wavelength_threshold_pm {
            return Err(Error::Config(
                "wavelength step and measurement noise cannot meet the threshold".into(),
            ));
        }
        if !((0.0..=1.0).contains(&self.polarization_gain) && (0.0..=1.0).contains(&self.phase_gain)) {
            return Err(Error::Config("loop gains must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn gaussian<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> f64 {
    if variance > 0.0 {
        variance.sqrt() * Distribution::<f64>::sample(&StandardNormal, rng)
    } else {
        0.0
    }
}

/// Advances the state by `dt` seconds of drift.
pub fn evolve_drift<R: Rng + ?Sized>(
    state: &DriftState,
    dt: f64,
    model: &DriftModel,
    rng: &mut R,
) -> Result<DriftState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("drift step must be positive, got {dt}")));
    }
    let t0 = state.wall_time_s;
    let t1 = t0 + dt;
    let omega = 2.0 * std::f64::consts::PI / DAY_S;
    let diurnal = (omega * t1).sin() - (omega * t0).sin();
    Ok(DriftState {
        timing_offset_ps: state.timing_offset_ps
            + gaussian(model.timing_variance_ps2_per_s * dt, rng)
            + model.diurnal_timing_amplitude_ps * diurnal,
        wavelength_offset_pm: state.wavelength_offset_pm
            + gaussian(model.wavelength_variance_pm2_per_s * dt, rng)
            + model.diurnal_wavelength_amplitude_pm * diurnal,
        polarization_transmission: (state.polarization_transmission
            + gaussian(model.polarization_variance_per_s * dt, rng))
        .clamp(0.0, 1.0),
        phase_offset_rad: state.phase_offset_rad + gaussian(model.phase_variance_rad2_per_s * dt, rng),
        wall_time_s: t1,
    })
}

/// Timing scan, wavelength lock and phase reset.
///
/// The wavelength is read with bounded noise and actuated in whole steps, so
/// the residual is at most noise + step/2.
pub fn apply_calibration<R: Rng + ?Sized>(state: &DriftState, config: &ControllerConfig, rng: &mut R) -> DriftState {
    let t = config.timing_threshold_ps;
    let reading = state.wavelength_offset_pm + rng.random_range(-1.0..=1.0) * config.wavelength_measurement_noise_pm;
    let step = config.wavelength_step_pm;
    let correction = (reading / step).round() * step;
    let p = config.phase_threshold_rad;
    DriftState {
        timing_offset_ps: rng.random_range(-t..=t),
        wavelength_offset_pm: state.wavelength_offset_pm - correction,
        phase_offset_rad: rng.random_range(-p..=p),
        ..*state
    }
}

/// Count-rate hill climb: recovers a fraction `polarization_gain` of the
/// lost transmission.
pub fn polarization_feedback_step(state: &DriftState, config: &ControllerConfig) -> DriftState {
    let t = state.polarization_transmission;
    DriftState {
        polarization_transmission: (t + config.polarization_gain * (1.0 - t)).clamp(0.0, 1.0),
        ..*state
    }
}

pub fn phase_feedback_step(state: &DriftState, config: &ControllerConfig) -> DriftState {
    DriftState {
        phase_offset_rad: state.phase_offset_rad * (1.0 - config.phase_gain),
        ..*state
    }
}

/// One QKD block: the calibration at its start, then key exchange until the
/// next calibration or the end of the session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub qkd_seconds: f64,
    /// State right after the calibration.
    pub drift: DriftState,
    pub params: InterferenceParams,
    pub overlap: f64,
    /// Overlap averaged over the block's simulation steps.
    pub mean_overlap: f64,
    pub polarization_min: f64,
    pub polarization_max: f64,
    /// Piecewise-constant parameters covering [start_s, end_s].
    pub segments: Vec<BlockSegment>,
}

/// Parameters sampled at the midpoint of a stretch of one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSegment {
    pub start_s: f64,
    pub end_s: f64,
    pub params: InterferenceParams,
}

impl BlockRecord {
    /// Key-exchange seconds and parameters of each segment; the dead time
    /// at the start of the block is excluded.
    pub fn qkd_segments(&self) -> Vec<(f64, InterferenceParams)> {
        let qkd_start = self.end_s - self.qkd_seconds;
        self.segments
            .iter()
            .map(|s| ((s.end_s.min(self.end_s) - s.start_s.max(qkd_start)).max(0.0), s.params))
            .filter(|(dt, _)| *dt > 0.0)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub blocks: Vec<BlockRecord>,
    pub calibration_events: usize,
    pub qkd_seconds: f64,
    pub calibration_seconds: f64,
    pub duty_cycle: f64,
    pub polarization_min: f64,
    pub polarization_max: f64,
}

impl ScheduleReport {
    pub fn polarization_fluctuation(&self) -> f64 {
        self.polarization_max - self.polarization_min
    }

    /// Checks the block parameters against the controller thresholds.
    pub fn within_thresholds(&self, config: &ControllerConfig) -> bool {
        self.polarization_fluctuation() < config.polarization_fluctuation_threshold
            && self.blocks.iter().all(|b| {
                b.drift.timing_offset_ps.abs() <= config.timing_threshold_ps
                    && b.drift.wavelength_offset_pm.abs() <= config.wavelength_threshold_pm
                    && b.drift.phase_offset_rad.abs() <= config.phase_threshold_rad
            })
    }
}

/// Simulates a whole session of drift, calibrations every interval and the
/// real-time loops.
pub fn run_scheduled_session<R: Rng + ?Sized>(
    spec: &SessionSpec,
    model: &DriftModel,
    config: &ControllerConfig,
    rng: &mut R,
) -> Result<ScheduleReport> {
    model.validate()?;
    config.validate()?;
    spec.interference.validate()?;
    let duration = spec.duration_s;
    let interval = config.calibration_interval_s;
    if !(duration >= interval) {
        return Err(Error::Config(format!(
            "session of {duration} s is shorter than one calibration interval ({interval} s)"
        )));
    }
    let base = spec.interference;
    let n_blocks = (duration / interval).ceil() as usize;
    let mut state = DriftState::default();
    let mut blocks = Vec::with_capacity(n_blocks);
    let (mut pol_min, mut pol_max) = (f64::INFINITY, f64::NEG_INFINITY);

    for index in 0..n_blocks {
        let start = index as f64 * interval;
        let end = ((index + 1) as f64 * interval).min(duration);
        if config.enabled {
            state = apply_calibration(&state, config, rng);
        }
        let drift = state;
        let params = drift.interference(&base);

        let (mut b_min, mut b_max) = (state.polarization_transmission, state.polarization_transmission);
        let mut overlap_sum = mode_overlap(&params);
        let mut samples = 1usize;
        let mut t = start;
        let mut segments = Vec::new();
        let mut seg_start = start;
        let mut seg_params: Option<InterferenceParams> = None;
        while t < end {
            if t - seg_start >= SEGMENT_S - 1e-9 {
                segments.push(BlockSegment {
                    start_s: seg_start,
                    end_s: t,
                    params: seg_params.unwrap_or_else(|| state.interference(&base)),
                });
                seg_start = t;
                seg_params = None;
            }
            if seg_params.is_none() && t - seg_start >= 0.5 * SEGMENT_S.min(end - seg_start) - 1e-9 {
                seg_params = Some(state.interference(&base));
            }
            let dt = config.step_s.min(end - t);
            state = evolve_drift(&state, dt, model, rng)?;
            if config.enabled {
                state = polarization_feedback_step(&state, config);
                state = phase_feedback_step(&state, config);
            }
            t = state.wall_time_s;
            b_min = b_min.min(state.polarization_transmission);
            b_max = b_max.max(state.polarization_transmission);
            overlap_sum += mode_overlap(&state.interference(&base));
            samples += 1;
        }
        segments.push(BlockSegment {
            start_s: seg_start,
            end_s: end,
            params: seg_params.unwrap_or_else(|| state.interference(&base)),
        });
        pol_min = pol_min.min(b_min);
        pol_max = pol_max.max(b_max);
        blocks.push(BlockRecord {
            index,
            start_s: start,
            end_s: end,
            qkd_seconds: (end - start - config.dead_time_s).max(0.0),
            drift,
            params,
            overlap: mode_overlap(&params),
            mean_overlap: overlap_sum / samples as f64,
            polarization_min: b_min,
            polarization_max: b_max,
            segments,
        });
    }

    let qkd_seconds: f64 = blocks.iter().map(|b| b.qkd_seconds).sum();
    Ok(ScheduleReport {
        calibration_events: blocks.len(),
        calibration_seconds: duration - qkd_seconds,
        duty_cycle: qkd_seconds / duration,
        qkd_seconds,
        blocks,
        polarization_min: pol_min,
        polarization_max: pol_max,
    })
}
