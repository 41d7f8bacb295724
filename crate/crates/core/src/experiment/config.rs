use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::controller::{DEFAULT_ALPHA_MAX, DEFAULT_DEADBAND, DEFAULT_LAMBDA_SHAPE};
use crate::error::{Error, Result};
use crate::measurement::{ImperfectionModel, RamseySetting};
use crate::reconstruction::{PROBE_PHASES, PROBE_SAMPLES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Run exactly `iterations` loop iterations.
    FixedTime,
    /// Stop once the estimated `P(n_t)` exceeds the threshold on
    /// `fidelity_consecutive` successive iterations, or after `iterations`.
    FixedFidelity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    /// Gaussian `Lambda` of width `lambda_shape`.
    Lyapunov,
    /// `d = 1 - <n_t|rho|n_t>`.
    Indicator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthRelaxation {
    Lindblad,
    Jumps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub dim: usize,
    /// Sample period, s.
    pub t_a: f64,
    /// Cavity damping time, s. `inf` disables relaxation.
    pub t_c: f64,
    pub n_th: f64,
    pub phi_0: f64,
    /// Ramsey phases cycled per iteration; `None` selects the default for
    /// the target.
    pub phase_schedule: Option<Vec<f64>>,
    pub n_t: usize,
    pub alpha_max: f64,
    pub delay_samples: usize,
    pub sensor: ImperfectionModel,
    pub lambda_shape: f64,
    pub distance: DistanceKind,
    pub deadband: f64,
    pub control: bool,
    pub truth_relaxation: TruthRelaxation,
    pub stop_rule: StopRule,
    pub iterations: usize,
    pub fidelity_threshold: f64,
    pub fidelity_consecutive: usize,
    /// Probe samples taken on the truth after each trajectory stops.
    pub probe_samples: usize,
    pub probe_phases: Vec<f64>,
    /// Duration of one trial-and-error attempt, s.
    pub tau: f64,
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            dim: 10,
            t_a: 82e-6,
            t_c: 65e-3,
            n_th: 0.05,
            phi_0: 0.256 * PI,
            phase_schedule: None,
            n_t: 3,
            alpha_max: DEFAULT_ALPHA_MAX,
            delay_samples: 4,
            sensor: ImperfectionModel::default(),
            lambda_shape: DEFAULT_LAMBDA_SHAPE,
            distance: DistanceKind::Lyapunov,
            deadband: DEFAULT_DEADBAND,
            control: true,
            truth_relaxation: TruthRelaxation::Lindblad,
            stop_rule: StopRule::FixedTime,
            iterations: 2000,
            fidelity_threshold: 0.8,
            fidelity_consecutive: 3,
            probe_samples: PROBE_SAMPLES,
            probe_phases: PROBE_PHASES.to_vec(),
            tau: 14e-3,
            max_attempts: 100,
            seed: 0,
        }
    }
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be positive",
        })
    }
}

impl LoopConfig {
    /// Ideal single-atom detection without delay.
    pub fn ideal(mut self) -> Self {
        self.sensor = ImperfectionModel::ideal();
        self.delay_samples = 0;
        self
    }

    /// No cavity relaxation at all.
    pub fn lossless(mut self) -> Self {
        self.t_c = f64::INFINITY;
        self.n_th = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidDimension(self.dim));
        }
        positive("T_a", self.t_a)?;
        if !self.t_a.is_finite() {
            return Err(Error::InvalidParameter {
                name: "T_a",
                value: self.t_a,
                reason: "must be finite",
            });
        }
        positive("T_c", self.t_c)?;
        positive("phi_0", self.phi_0)?;
        positive("alpha_max", self.alpha_max)?;
        positive("lambda_shape", self.lambda_shape)?;
        positive("tau", self.tau)?;
        if !(self.n_th >= 0.0 && self.n_th.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "n_th",
                value: self.n_th,
                reason: "must be finite and non-negative",
            });
        }
        if !(self.deadband >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "deadband",
                value: self.deadband,
                reason: "must be non-negative",
            });
        }
        if !(0.0..=1.0).contains(&self.fidelity_threshold) {
            return Err(Error::InvalidParameter {
                name: "fidelity_threshold",
                value: self.fidelity_threshold,
                reason: "must lie in [0, 1]",
            });
        }
        if self.n_t >= self.dim {
            return Err(Error::InvalidParameter {
                name: "n_t",
                value: self.n_t as f64,
                reason: "target outside the truncation",
            });
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.fidelity_consecutive == 0 {
            return Err(Error::Config("fidelity_consecutive must be at least 1".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be at least 1".into()));
        }
        if matches!(&self.phase_schedule, Some(s) if s.is_empty()) {
            return Err(Error::Config("phase_schedule is empty".into()));
        }
        if self.probe_samples > 0 && self.probe_phases.is_empty() {
            return Err(Error::Config("probe_phases is empty".into()));
        }
        self.sensor.validate()?;
        for &phi in self.schedule_phases().iter().chain(&self.probe_phases) {
            RamseySetting::new(phi, self.phi_0)?;
        }
        Ok(())
    }

    /// Phases actually cycled by the loop.
    pub fn schedule_phases(&self) -> Vec<f64> {
        match &self.phase_schedule {
            Some(s) => s.clone(),
            None => default_schedule(self.n_t, self.phi_0),
        }
    }

    pub fn schedule(&self) -> Vec<RamseySetting> {
        self.schedule_phases()
            .into_iter()
            .map(|phi_r| RamseySetting {
                phi_r,
                phi_0: self.phi_0,
            })
            .collect()
    }

    pub fn probe_settings(&self) -> Vec<RamseySetting> {
        self.probe_phases
            .iter()
            .map(|&phi_r| RamseySetting {
                phi_r,
                phi_0: self.phi_0,
            })
            .collect()
    }

    /// Iterations in one trial-and-error attempt.
    pub fn tau_iterations(&self) -> usize {
        ((self.tau / self.t_a).round() as usize).max(1)
    }
}

/// `n_t = 2`: `-0.44`; `n_t = 3`: `-0.44, -1.24` alternating; otherwise the
/// single phase balancing `P(e|n_t)`.
pub fn default_schedule(n_t: usize, phi_0: f64) -> Vec<f64> {
    match n_t {
        2 => vec![-0.44],
        3 => vec![-0.44, -1.24],
        _ => vec![RamseySetting::balanced_for(n_t, phi_0).phi_r],
    }
}
