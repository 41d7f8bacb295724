use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::LoopConfig;
use super::engine::{trajectory_rng, InitialStates, LoopEngine, StopReason, TrajectoryOutcome};
use crate::error::{Error, Result};
use crate::reconstruction::ProbeRecord;

/// Trajectories per work unit. Fixed so that results do not depend on the
/// number of worker threads.
pub const BATCH_SIZE: usize = 8;

/// Convergence fraction that defines the convergence time.
pub const CONVERGENCE_FRACTION: f64 = 0.63;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub index: usize,
    pub stop_reason: StopReason,
    /// Loop iterations executed, summed over attempts for trial and error.
    pub iterations: usize,
    /// Time at which the fidelity criterion was first met, s.
    pub convergence_time: Option<f64>,
    /// Trial-and-error attempts used; 1 in feedback mode.
    pub attempts: usize,
    pub final_p_true: Vec<f64>,
    pub final_p_est: Vec<f64>,
    pub probes: Option<ProbeRecord>,
}

/// Running sums over trajectories, one slot per iteration.
#[derive(Debug, Clone, Default)]
struct Accumulator {
    dim: usize,
    active: Vec<u64>,
    est: Vec<f64>,
    truth: Vec<f64>,
    abs_alpha: Vec<f64>,
    distance: Vec<f64>,
}

impl Accumulator {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    fn grow(&mut self, len: usize) {
        if self.active.len() < len {
            self.active.resize(len, 0);
            self.est.resize(len * self.dim, 0.0);
            self.truth.resize(len * self.dim, 0.0);
            self.abs_alpha.resize(len, 0.0);
            self.distance.resize(len, 0.0);
        }
    }

    fn add(&mut self, i: usize, est: &[f64], truth: &[f64], alpha: f64, distance: f64) {
        self.grow(i + 1);
        self.active[i] += 1;
        let d = self.dim;
        for n in 0..d {
            self.est[i * d + n] += est[n];
            self.truth[i * d + n] += truth[n];
        }
        self.abs_alpha[i] += alpha.abs();
        self.distance[i] += distance;
    }

    fn merge(&mut self, other: &Accumulator) {
        self.grow(other.active.len());
        for (a, b) in self.active.iter_mut().zip(&other.active) {
            *a += b;
        }
        for (a, b) in self.est.iter_mut().zip(&other.est) {
            *a += b;
        }
        for (a, b) in self.truth.iter_mut().zip(&other.truth) {
            *a += b;
        }
        for (a, b) in self.abs_alpha.iter_mut().zip(&other.abs_alpha) {
            *a += b;
        }
        for (a, b) in self.distance.iter_mut().zip(&other.distance) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub dim: usize,
    pub n_t: usize,
    pub t_a: f64,
    /// Trajectories still running at each iteration.
    pub active: Vec<u64>,
    /// `P(n)` of the displaced estimate averaged over active trajectories.
    pub mean_p_est: Vec<Vec<f64>>,
    pub mean_p_true: Vec<Vec<f64>>,
    pub mean_abs_alpha: Vec<f64>,
    pub mean_distance: Vec<f64>,
    /// Per-trajectory results, in index order.
    pub trajectories: Vec<TrajectorySummary>,
}

impl EnsembleStats {
    fn from_parts(config: &LoopConfig, acc: Accumulator, trajectories: Vec<TrajectorySummary>) -> Self {
        let d = acc.dim;
        let len = acc.active.len();
        let mut mean_p_est = Vec::with_capacity(len);
        let mut mean_p_true = Vec::with_capacity(len);
        let mut mean_abs_alpha = Vec::with_capacity(len);
        let mut mean_distance = Vec::with_capacity(len);
        for i in 0..len {
            let k = acc.active[i] as f64;
            mean_p_est.push(acc.est[i * d..(i + 1) * d].iter().map(|x| x / k).collect());
            mean_p_true.push(acc.truth[i * d..(i + 1) * d].iter().map(|x| x / k).collect());
            mean_abs_alpha.push(acc.abs_alpha[i] / k);
            mean_distance.push(acc.distance[i] / k);
        }
        Self {
            dim: config.dim,
            n_t: config.n_t,
            t_a: config.t_a,
            active: acc.active,
            mean_p_est,
            mean_p_true,
            mean_abs_alpha,
            mean_distance,
            trajectories,
        }
    }

    pub fn n_traj(&self) -> usize {
        self.trajectories.len()
    }

    /// Time of iteration `i`, s.
    pub fn time(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.t_a
    }

    /// Fraction of trajectories that have met the fidelity criterion by `t`.
    pub fn convergence_fraction(&self, t: f64) -> f64 {
        let hit = self
            .trajectories
            .iter()
            .filter(|s| s.convergence_time.is_some_and(|c| c <= t))
            .count();
        hit as f64 / self.n_traj() as f64
    }

    /// Stepped `C_fr(t)`: one point per distinct convergence time.
    pub fn convergence_curve(&self) -> Vec<(f64, f64)> {
        let mut times: Vec<f64> = self.trajectories.iter().filter_map(|s| s.convergence_time).collect();
        times.sort_by(f64::total_cmp);
        let n = self.n_traj() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (k, t) in times.iter().enumerate() {
            let frac = (k + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.0 == *t => last.1 = frac,
                _ => out.push((*t, frac)),
            }
        }
        out
    }

    /// Earliest time at which `C_fr` reaches `fraction`.
    pub fn convergence_time(&self, fraction: f64) -> Option<f64> {
        let needed = (fraction * self.n_traj() as f64).ceil().max(1.0) as usize;
        let mut times: Vec<f64> = self.trajectories.iter().filter_map(|s| s.convergence_time).collect();
        if times.len() < needed {
            return None;
        }
        times.sort_by(f64::total_cmp);
        Some(times[needed - 1])
    }

    /// Mean truth `P(n)` at each trajectory's stop.
    pub fn terminal_p_true(&self) -> Vec<f64> {
        mean_of(self.trajectories.iter().map(|s| s.final_p_true.as_slice()), self.dim)
    }

    pub fn terminal_p_est(&self) -> Vec<f64> {
        mean_of(self.trajectories.iter().map(|s| s.final_p_est.as_slice()), self.dim)
    }

    /// Time average of `mean_p_true[.][n]` over the iterations from
    /// `from` on.
    pub fn time_averaged_p_true(&self, n: usize, from: usize) -> f64 {
        let tail = &self.mean_p_true[from.min(self.mean_p_true.len())..];
        tail.iter().map(|p| p[n]).sum::<f64>() / tail.len() as f64
    }

    pub fn probes(&self) -> Vec<ProbeRecord> {
        self.trajectories.iter().filter_map(|s| s.probes.clone()).collect()
    }
}

fn mean_of<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let mut sum = vec![0.0; dim];
    let mut count = 0usize;
    for r in rows {
        for (s, x) in sum.iter_mut().zip(r) {
            *s += x;
        }
        count += 1;
    }
    sum.iter().map(|s| s / count.max(1) as f64).collect()
}

pub(crate) fn summarize(index: usize, outcome: TrajectoryOutcome, t_a: f64, attempts: usize) -> TrajectorySummary {
    TrajectorySummary {
        index,
        stop_reason: outcome.stop_reason,
        iterations: outcome.iterations,
        convergence_time: outcome.converged_at.map(|i| (i + 1) as f64 * t_a),
        attempts,
        final_p_true: outcome.final_truth.populations(),
        final_p_est: outcome.final_estimate.populations(),
        probes: outcome.probes,
    }
}

/// Runs `n_traj` trajectories from `init` in fixed-size parallel batches.
pub(crate) fn run_batched<I>(engine: &LoopEngine, n_traj: usize, master_seed: u64, init: I) -> Result<EnsembleStats>
where
    I: Fn(usize) -> Result<InitialStates> + Sync,
{
    if n_traj == 0 {
        return Err(Error::Config("at least one trajectory is required".into()));
    }
    let cfg = engine.config();
    let batches: Vec<(usize, usize)> = (0..n_traj)
        .step_by(BATCH_SIZE)
        .map(|start| (start, (start + BATCH_SIZE).min(n_traj)))
        .collect();
    let results: Vec<Result<(Accumulator, Vec<TrajectorySummary>)>> = batches
        .par_iter()
        .map(|&(start, end)| {
            let mut acc = Accumulator::new(cfg.dim);
            let mut summaries = Vec::with_capacity(end - start);
            for index in start..end {
                let mut rng = trajectory_rng(master_seed, index as u64);
                let states = init(index)?;
                let outcome = engine.simulate_default(&states, &mut rng, |v| {
                    acc.add(v.index, &v.estimate.populations(), &v.truth.populations(), v.alpha, v.distance);
                    ControlFlow::Continue(())
                })?;
                summaries.push(summarize(index, outcome, cfg.t_a, 1));
            }
            Ok((acc, summaries))
        })
        .collect();

    let mut total = Accumulator::new(cfg.dim);
    let mut trajectories = Vec::with_capacity(n_traj);
    for r in results {
        let (acc, summaries) = r?;
        total.merge(&acc);
        trajectories.extend(summaries);
    }
    Ok(EnsembleStats::from_parts(cfg, total, trajectories))
}

/// Feedback ensemble from the coherent start. Trajectory `i` uses stream
/// `i` of `master_seed`, so a one-trajectory ensemble replays
/// [`super::run_feedback_trajectory`] with the same seed.
pub fn run_ensemble(config: &LoopConfig, n_traj: usize, master_seed: u64) -> Result<EnsembleStats> {
    let engine = LoopEngine::new(config.clone())?;
    let start = engine.coherent_start()?;
    run_batched(&engine, n_traj, master_seed, |_| Ok(start.clone()))
}

/// Stats without time series, for protocols whose trajectories restart.
pub(crate) fn stats_without_series(config: &LoopConfig, trajectories: Vec<TrajectorySummary>) -> EnsembleStats {
    EnsembleStats::from_parts(config, Accumulator::new(config.dim), trajectories)
}
