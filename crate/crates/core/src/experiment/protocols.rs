use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{LoopConfig, StopRule};
use super::engine::{trajectory_rng, InitialStates, LoopEngine, StopReason};
use super::ensemble::{run_batched, stats_without_series, EnsembleStats, TrajectorySummary, BATCH_SIZE, CONVERGENCE_FRACTION};
use crate::error::{Error, Result};
use crate::fock::DensityMatrix;

fn par_indexed<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let batches: Vec<(usize, usize)> = (0..n)
        .step_by(BATCH_SIZE)
        .map(|s| (s, (s + BATCH_SIZE).min(n)))
        .collect();
    let parts: Vec<Result<Vec<T>>> = batches
        .par_iter()
        .map(|&(s, e)| (s..e).map(&f).collect())
        .collect();
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Trial-and-error preparation: inject the coherent state, measure without
/// control for `tau`, accept if the estimated `P(n_t)` exceeds the
/// threshold, otherwise reset and retry. A trajectory that exhausts
/// `max_attempts` never converges.
pub fn run_trial_and_error(config: &LoopConfig, n_traj: usize, master_seed: u64) -> Result<EnsembleStats> {
    if n_traj == 0 {
        return Err(Error::Config("at least one trajectory is required".into()));
    }
    let mut cfg = config.clone();
    cfg.probe_samples = 0;
    let engine = LoopEngine::new(cfg)?;
    let cfg = engine.config();
    let start = engine.coherent_start()?;
    let n_tau = cfg.tau_iterations();
    let summaries = par_indexed(n_traj, |index| {
        let mut rng = trajectory_rng(master_seed, index as u64);
        let mut iterations = 0;
        for attempt in 1..=cfg.max_attempts {
            let out = engine.simulate(&start, &mut rng, false, n_tau, StopRule::FixedTime, |_| ControlFlow::Continue(()))?;
            iterations += out.iterations;
            let success = out.final_estimate.population(cfg.n_t) > cfg.fidelity_threshold;
            if success || attempt == cfg.max_attempts {
                return Ok(TrajectorySummary {
                    index,
                    stop_reason: if success {
                        StopReason::FidelityReached
                    } else {
                        StopReason::IterationLimit
                    },
                    iterations,
                    convergence_time: success.then(|| iterations as f64 * cfg.t_a),
                    attempts: attempt,
                    final_p_true: out.final_truth.populations(),
                    final_p_est: out.final_estimate.populations(),
                    probes: None,
                });
            }
        }
        unreachable!("max_attempts is at least 1")
    })?;
    Ok(stats_without_series(cfg, summaries))
}

/// Truth in `|n_t - 1>` while the estimator starts from the diagonal
/// `prior`, normally the terminal truth histogram of a fixed-fidelity
/// ensemble.
pub fn run_jump_recovery(config: &LoopConfig, prior: Option<&[f64]>, n_traj: usize, master_seed: u64) -> Result<EnsembleStats> {
    let prior = prior.ok_or_else(|| {
        Error::Config(
            "jump recovery needs the estimator's prior photon-number histogram; \
             run an ensemble first and pass its terminal histogram"
                .into(),
        )
    })?;
    if config.n_t == 0 {
        return Err(Error::Config("jump recovery needs n_t >= 1".into()));
    }
    if prior.len() != config.dim {
        return Err(Error::DimensionMismatch {
            expected: config.dim,
            found: prior.len(),
        });
    }
    let engine = LoopEngine::new(config.clone())?;
    let init = InitialStates {
        truth: DensityMatrix::fock(config.n_t - 1, config.dim)?,
        estimate: DensityMatrix::from_populations(prior)?,
    };
    run_batched(&engine, n_traj, master_seed, |_| Ok(init.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryMetrics {
    /// First time the mean estimated `P(n_t - 1)` exceeds `P(n_t)`, s.
    pub crossing_time: Option<f64>,
    /// Mean estimated `P(n_t)` over the last quarter of the run.
    pub steady_p_target: f64,
    /// First time after both the crossing and the dip of the mean estimated
    /// `P(n_t)` at which it is back to 80% of `steady_p_target`, s.
    pub return_time: Option<f64>,
    /// Peak of the 10-iteration moving average of the mean `|alpha|`.
    pub alpha_peak: f64,
    /// Mean `|alpha|` over the last quarter.
    pub alpha_tail: f64,
}

pub const ALPHA_WINDOW: usize = 10;
pub const RETURN_LEVEL: f64 = 0.8;

pub fn recovery_metrics(stats: &EnsembleStats) -> Result<RecoveryMetrics> {
    let n_t = stats.n_t;
    let len = stats.mean_p_est.len();
    if n_t == 0 || len < 4 * ALPHA_WINDOW {
        return Err(Error::InvalidState("recovery run too short to analyze".into()));
    }
    let tail_from = len - len / 4;
    let steady_p_target =
        stats.mean_p_est[tail_from..].iter().map(|p| p[n_t]).sum::<f64>() / (len - tail_from) as f64;
    let crossing = (0..len).find(|&i| stats.mean_p_est[i][n_t - 1] > stats.mean_p_est[i][n_t]);
    // the dip is searched in the first half so late noise cannot move it
    let dip = (0..len / 2)
        .min_by(|&a, &b| stats.mean_p_est[a][n_t].total_cmp(&stats.mean_p_est[b][n_t]))
        .unwrap_or(0);
    let returned = crossing
        .map(|c| c.max(dip))
        .and_then(|from| (from..len).find(|&i| stats.mean_p_est[i][n_t] >= RETURN_LEVEL * steady_p_target));
    let alpha = &stats.mean_abs_alpha;
    let alpha_peak = alpha
        .windows(ALPHA_WINDOW)
        .map(|w| w.iter().sum::<f64>() / ALPHA_WINDOW as f64)
        .fold(0.0, f64::max);
    let alpha_tail = alpha[tail_from..].iter().sum::<f64>() / (len - tail_from) as f64;
    Ok(RecoveryMetrics {
        crossing_time: crossing.map(|i| stats.time(i)),
        steady_p_target,
        return_time: returned.map(|i| stats.time(i)),
        alpha_peak,
        alpha_tail,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaTuning {
    pub best_shape: f64,
    /// `(shape, 63% convergence time)` per grid point, in grid order.
    pub table: Vec<(f64, Option<f64>)>,
}

/// Grid search over the Gaussian width of `Lambda`, scoring each point by
/// the 63% convergence time of a fixed-fidelity feedback ensemble. Points
/// that never reach 63% rank last; ties keep the earlier grid point.
pub fn tune_lambda(config: &LoopConfig, grid: &[f64], n_traj: usize, master_seed: u64) -> Result<LambdaTuning> {
    if grid.is_empty() {
        return Err(Error::Config("lambda shape grid is empty".into()));
    }
    let mut table = Vec::with_capacity(grid.len());
    for &shape in grid {
        let mut cfg = config.clone();
        cfg.lambda_shape = shape;
        cfg.stop_rule = StopRule::FixedFidelity;
        cfg.probe_samples = 0;
        let stats = super::ensemble::run_ensemble(&cfg, n_traj, master_seed)?;
        table.push((shape, stats.convergence_time(CONVERGENCE_FRACTION)));
    }
    let key = |t: Option<f64>| t.unwrap_or(f64::INFINITY);
    let mut best = table[0];
    for &row in &table[1..] {
        if key(row.1) < key(best.1) {
            best = row;
        }
    }
    Ok(LambdaTuning {
        best_shape: best.0,
        table,
    })
}
