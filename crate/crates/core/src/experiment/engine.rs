use std::collections::VecDeque;
use std::ops::ControlFlow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{DistanceKind, LoopConfig, StopRule, TruthRelaxation};
use crate::controller::{build_lambda, indicator_weights, Controller};
use crate::dissipation::{build_propagator, RelaxationModel};
use crate::error::Result;
use crate::estimator::{EstimatorState, FilterModel};
use crate::fock::{coherent_state, DensityMatrix, DisplacementGenerator};
use crate::measurement::{interact_with_povm, DetectionEvent, Povm, RamseySetting};
use crate::reconstruction::{collect_probes, ProbeRecord};

/// Stream of trajectory `index` under `master_seed`.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    FixedTime,
    FidelityReached,
    /// Fixed-fidelity run that hit the iteration cap.
    IterationLimit,
    /// An observer asked to stop.
    Interrupted,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::FixedTime => "fixed_time",
            StopReason::FidelityReached => "fidelity_reached",
            StopReason::IterationLimit => "iteration_limit",
            StopReason::Interrupted => "interrupted",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "fixed_time" => StopReason::FixedTime,
            "fidelity_reached" => StopReason::FidelityReached,
            "iteration_limit" => StopReason::IterationLimit,
            "interrupted" => StopReason::Interrupted,
            _ => return None,
        })
    }
}

/// What an observer sees at the end of one iteration.
#[derive(Debug)]
pub struct StepView<'a> {
    pub index: usize,
    pub time_s: f64,
    /// Report that reached the estimator this iteration, if any.
    pub event: Option<DetectionEvent>,
    pub alpha: f64,
    /// Distance of the displaced estimate to the target.
    pub distance: f64,
    /// Present-time estimate after the displacement.
    pub estimate: &'a DensityMatrix,
    pub truth: &'a DensityMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryOutcome {
    pub stop_reason: StopReason,
    pub iterations: usize,
    /// Iteration that completed the first fidelity streak.
    pub converged_at: Option<usize>,
    pub final_estimate: DensityMatrix,
    pub final_truth: DensityMatrix,
    pub probes: Option<ProbeRecord>,
}

/// Starting point of a trajectory.
#[derive(Debug, Clone)]
pub struct InitialStates {
    pub truth: DensityMatrix,
    pub estimate: DensityMatrix,
}

/// Everything derived once from a [`LoopConfig`] and shared by all its
/// trajectories.
#[derive(Debug, Clone)]
pub struct LoopEngine {
    config: LoopConfig,
    relaxation: RelaxationModel,
    filter: FilterModel,
    controller: Controller,
    schedule: Vec<Povm>,
    probe_settings: Vec<RamseySetting>,
    displacements: DisplacementGenerator,
}

impl LoopEngine {
    pub fn new(config: LoopConfig) -> Result<Self> {
        config.validate()?;
        let dim = config.dim;
        let relaxation = build_propagator(config.t_c, config.n_th, config.t_a, dim)?;
        let filter = FilterModel::new(relaxation.clone(), config.sensor)?;
        let weights = match config.distance {
            DistanceKind::Lyapunov => build_lambda(config.n_t, config.lambda_shape, dim)?,
            DistanceKind::Indicator => indicator_weights(config.n_t, dim)?,
        };
        let controller = Controller::new(weights, config.alpha_max, config.deadband)?;
        let schedule = config.schedule().into_iter().map(|s| Povm::new(s, dim)).collect();
        let probe_settings = config.probe_settings();
        let displacements = DisplacementGenerator::new(dim)?;
        Ok(Self {
            config,
            relaxation,
            filter,
            controller,
            schedule,
            probe_settings,
            displacements,
        })
    }

    pub fn config(&self) -> &LoopConfig {
        &self.config
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn filter(&self) -> &FilterModel {
        &self.filter
    }

    /// Coherent state of amplitude `sqrt(n_t)` for both truth and estimate.
    pub fn coherent_start(&self) -> Result<InitialStates> {
        let rho = coherent_state((self.config.n_t as f64).sqrt(), self.config.dim)?;
        Ok(InitialStates {
            truth: rho.clone(),
            estimate: rho,
        })
    }

    /// Runs one trajectory. Each iteration relaxes the truth, sends the
    /// scheduled sample through it, hands the report that is due to the
    /// filter, chooses `alpha` on the present-time estimate and displaces
    /// the truth.
    pub fn simulate<F>(
        &self,
        init: &InitialStates,
        rng: &mut ChaCha8Rng,
        control: bool,
        iterations: usize,
        stop_rule: StopRule,
        mut observer: F,
    ) -> Result<TrajectoryOutcome>
    where
        F: FnMut(&StepView) -> ControlFlow<()>,
    {
        let cfg = &self.config;
        init.truth.ensure_dim(cfg.dim)?;
        init.estimate.ensure_dim(cfg.dim)?;
        let mut truth = init.truth.clone();
        let mut est = EstimatorState::new(init.estimate.clone(), cfg.delay_samples);
        let mut in_flight: VecDeque<DetectionEvent> = VecDeque::with_capacity(cfg.delay_samples + 1);
        let mut streak = 0usize;
        let mut converged_at = None;
        let mut stop_reason = match stop_rule {
            StopRule::FixedTime => StopReason::FixedTime,
            StopRule::FixedFidelity => StopReason::IterationLimit,
        };
        let mut done = 0;
        let mut estimate = init.estimate.clone();

        for i in 0..iterations {
            match cfg.truth_relaxation {
                TruthRelaxation::Lindblad => self.relaxation.relax_in_place(&mut truth),
                TruthRelaxation::Jumps => truth = self.relaxation.jump_step(&truth, rng)?,
            }
            let povm = &self.schedule[i % self.schedule.len()];
            let (next, event) = interact_with_povm(&truth, povm, &cfg.sensor, i, rng);
            truth = next;
            in_flight.push_back(event);

            est.emit(povm.setting());
            let arrived = if in_flight.len() > cfg.delay_samples {
                in_flight.pop_front()
            } else {
                None
            };
            if let Some(ev) = &arrived {
                est.assimilate(ev, &self.filter)?;
            }

            let ctrl = est.control_state(&self.filter);
            let alpha = if control { self.controller.decide(&ctrl).alpha } else { 0.0 };
            est.commit(alpha, &self.filter);
            estimate = ctrl;
            if alpha != 0.0 {
                let d = self.displacements.operator(alpha);
                truth = truth.conjugate(&d)?;
                estimate = estimate.conjugate(&d)?;
            }
            let distance = self.controller.distance(&estimate);

            if estimate.population(cfg.n_t) > cfg.fidelity_threshold {
                streak += 1;
            } else {
                streak = 0;
            }
            let streak_done = streak >= cfg.fidelity_consecutive;
            if streak_done && converged_at.is_none() {
                converged_at = Some(i);
            }

            done = i + 1;
            let view = StepView {
                index: i,
                time_s: done as f64 * cfg.t_a,
                event: arrived,
                alpha,
                distance,
                estimate: &estimate,
                truth: &truth,
            };
            if observer(&view).is_break() {
                stop_reason = StopReason::Interrupted;
                break;
            }
            if stop_rule == StopRule::FixedFidelity && streak_done {
                stop_reason = StopReason::FidelityReached;
                break;
            }
        }

        let probes = if cfg.probe_samples > 0 {
            Some(collect_probes(
                &truth,
                &self.probe_settings,
                &cfg.sensor,
                cfg.probe_samples,
                Some(&self.relaxation),
                rng,
            )?)
        } else {
            None
        };
        Ok(TrajectoryOutcome {
            stop_reason,
            iterations: done,
            converged_at,
            final_estimate: estimate,
            final_truth: truth,
            probes,
        })
    }

    /// [`LoopEngine::simulate`] with the configured control, length and
    /// stop rule.
    pub fn simulate_default<F>(&self, init: &InitialStates, rng: &mut ChaCha8Rng, observer: F) -> Result<TrajectoryOutcome>
    where
        F: FnMut(&StepView) -> ControlFlow<()>,
    {
        let cfg = &self.config;
        self.simulate(init, rng, cfg.control, cfg.iterations, cfg.stop_rule, observer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub index: usize,
    pub time_s: f64,
    pub reported_e: u32,
    pub reported_g: u32,
    pub alpha: f64,
    pub distance: f64,
    pub p_est: Vec<f64>,
    pub p_true: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub dim: usize,
    pub rows: Vec<IterationRow>,
    pub stop_reason: StopReason,
    pub stop_time_s: f64,
    pub converged_at: Option<usize>,
    pub final_estimate: DensityMatrix,
    pub final_truth: DensityMatrix,
    /// Estimated density matrices at requested iterations.
    pub snapshots: Vec<(usize, DensityMatrix)>,
    pub probes: Option<ProbeRecord>,
}

impl TrajectoryRecord {
    pub fn iterations(&self) -> usize {
        self.rows.len()
    }
}

/// One feedback trajectory from the coherent start, recorded row by row.
pub fn run_feedback_trajectory(config: &LoopConfig, seed: u64) -> Result<TrajectoryRecord> {
    run_recorded(config, seed, &[])
}

/// As [`run_feedback_trajectory`], also keeping the estimated density
/// matrix at each iteration listed in `snapshots`.
pub fn run_recorded(config: &LoopConfig, seed: u64, snapshots: &[usize]) -> Result<TrajectoryRecord> {
    let engine = LoopEngine::new(config.clone())?;
    let init = engine.coherent_start()?;
    let mut rng = trajectory_rng(seed, 0);
    record_trajectory(&engine, &init, &mut rng, snapshots)
}

pub(crate) fn record_trajectory(
    engine: &LoopEngine,
    init: &InitialStates,
    rng: &mut ChaCha8Rng,
    snapshots: &[usize],
) -> Result<TrajectoryRecord> {
    let cfg = engine.config();
    let mut rows = Vec::with_capacity(cfg.iterations);
    let mut snaps = Vec::new();
    let outcome = engine.simulate_default(init, rng, |v| {
        let (e, g) = v.event.map_or((0, 0), |ev| (ev.reported_e, ev.reported_g));
        rows.push(IterationRow {
            index: v.index,
            time_s: v.time_s,
            reported_e: e,
            reported_g: g,
            alpha: v.alpha,
            distance: v.distance,
            p_est: v.estimate.populations(),
            p_true: v.truth.populations(),
        });
        if snapshots.contains(&v.index) {
            snaps.push((v.index, v.estimate.clone()));
        }
        ControlFlow::Continue(())
    })?;
    Ok(TrajectoryRecord {
        dim: cfg.dim,
        stop_time_s: outcome.iterations as f64 * cfg.t_a,
        rows,
        stop_reason: outcome.stop_reason,
        converged_at: outcome.converged_at,
        final_estimate: outcome.final_estimate,
        final_truth: outcome.final_truth,
        snapshots: snaps,
        probes: outcome.probes,
    })
}
