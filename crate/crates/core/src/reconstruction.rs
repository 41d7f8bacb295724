//! Maximum-likelihood photon-number distribution from probe samples taken
//! after a trajectory stops, independent of the feedback estimator.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dissipation::RelaxationModel;
use crate::error::{Error, Result};
use crate::fock::DensityMatrix;
use crate::measurement::{fock_event_probability, interact_and_report, ImperfectionModel, RamseySetting};

/// Ramsey phases of the probe cycle, rad.
pub const PROBE_PHASES: [f64; 4] = [1.17, 0.36, -0.44, -1.24];
pub const PROBE_SAMPLES: usize = 10;

pub const EM_TOLERANCE: f64 = 1e-8;
pub const EM_MAX_ITERATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSample {
    pub phi_r: f64,
    pub phi_0: f64,
    pub reported_e: u32,
    pub reported_g: u32,
}

impl ProbeSample {
    pub fn setting(&self) -> RamseySetting {
        RamseySetting {
            phi_r: self.phi_r,
            phi_0: self.phi_0,
        }
    }
}

/// Probe samples of one trajectory, in the order they were taken.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub samples: Vec<ProbeSample>,
}

impl ProbeRecord {
    pub fn detected_atoms(&self) -> u32 {
        self.samples.iter().map(|s| s.reported_e + s.reported_g).sum()
    }

    /// `P(record | |n>)`, neglecting relaxation within the probe window.
    pub fn likelihood(&self, n: usize, model: &ImperfectionModel) -> f64 {
        self.samples
            .iter()
            .map(|s| fock_event_probability(n, s.setting(), model, s.reported_e, s.reported_g))
            .product()
    }
}

/// Sends `n_samples` probes through `truth`, cycling through `settings`, with
/// one relaxation step before each probe when `relaxation` is given.
pub fn collect_probes<R: Rng + ?Sized>(
    truth: &DensityMatrix,
    settings: &[RamseySetting],
    model: &ImperfectionModel,
    n_samples: usize,
    relaxation: Option<&RelaxationModel>,
    rng: &mut R,
) -> Result<ProbeRecord> {
    if n_samples == 0 {
        return Err(Error::Config("probe sample count must be at least 1".into()));
    }
    if settings.is_empty() {
        return Err(Error::Config("probe phase list is empty".into()));
    }
    let mut state = truth.clone();
    let mut samples = Vec::with_capacity(n_samples);
    for k in 0..n_samples {
        if let Some(relax) = relaxation {
            state = relax.relax(&state)?;
        }
        let setting = settings[k % settings.len()];
        let (next, event) = interact_and_report(&state, setting, model, k, rng);
        state = next;
        samples.push(ProbeSample {
            phi_r: setting.phi_r,
            phi_0: setting.phi_0,
            reported_e: event.reported_e,
            reported_g: event.reported_g,
        });
    }
    Ok(ProbeRecord { samples })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub distribution: Vec<f64>,
    /// Log-likelihood at the start of every EM iteration and at the end.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when no record carries information; `distribution` is then the
    /// uniform initializer.
    pub degenerate: bool,
}

type RecordKey = Vec<(u64, u64, u32, u32)>;

fn record_key(record: &ProbeRecord) -> RecordKey {
    record
        .samples
        .iter()
        .map(|s| (s.phi_r.to_bits(), s.phi_0.to_bits(), s.reported_e, s.reported_g))
        .collect()
}

/// EM over the photon-number simplex from the uniform initializer.
pub fn ml_reconstruct(records: &[ProbeRecord], model: &ImperfectionModel, dim: usize) -> Result<Reconstruction> {
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    if records.is_empty() {
        return Err(Error::InvalidState("no probe records to reconstruct from".into()));
    }
    model.validate()?;

    // identical records share one likelihood row
    let mut groups: BTreeMap<RecordKey, (usize, f64)> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(record_key(r)).or_insert((i, 0.0)).1 += 1.0;
    }
    let rows: Vec<(Vec<f64>, f64)> = groups
        .values()
        .map(|&(i, count)| ((0..dim).map(|n| records[i].likelihood(n, model)).collect(), count))
        .collect();
    let total: f64 = rows.iter().map(|(_, c)| c).sum();

    let uniform = vec![1.0 / dim as f64; dim];
    let informative = rows.iter().any(|(l, _)| {
        let max = l.iter().cloned().fold(f64::MIN, f64::max);
        let min = l.iter().cloned().fold(f64::MAX, f64::min);
        max - min > 1e-15 * max.abs()
    });
    if !informative {
        log::warn!("probe records carry no photon-number information; returning the uniform prior");
        return Ok(Reconstruction {
            distribution: uniform,
            log_likelihood: Vec::new(),
            iterations: 0,
            converged: true,
            degenerate: true,
        });
    }

    let log_likelihood_of = |p: &[f64]| -> f64 {
        rows.iter()
            .map(|(l, c)| c * l.iter().zip(p).map(|(a, b)| a * b).sum::<f64>().ln())
            .sum()
    };

    let mut p = uniform;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < EM_MAX_ITERATIONS {
        trace.push(log_likelihood_of(&p));
        let mut next = vec![0.0; dim];
        for (l, c) in &rows {
            let norm: f64 = l.iter().zip(&p).map(|(a, b)| a * b).sum();
            if norm > 0.0 {
                for n in 0..dim {
                    next[n] += c * p[n] * l[n] / norm;
                }
            }
        }
        for x in &mut next {
            *x /= total;
        }
        let change = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        p = next;
        iterations += 1;
        if change < EM_TOLERANCE {
            converged = true;
            break;
        }
    }
    trace.push(log_likelihood_of(&p));
    let sum: f64 = p.iter().sum();
    for x in &mut p {
        *x /= sum;
    }
    Ok(Reconstruction {
        distribution: p,
        log_likelihood: trace,
        iterations,
        converged,
        degenerate: false,
    })
}

/// Numerical rank of the likelihood matrix of one full probe cycle over the
/// photon numbers `0..levels`: rows are every joint report of the cycle.
pub fn likelihood_rank(settings: &[RamseySetting], model: &ImperfectionModel, levels: usize) -> usize {
    let max = model.max_atoms();
    let reports: Vec<(u32, u32)> = (0..=max)
        .flat_map(|e| (0..=max - e).map(move |g| (e, g)))
        .collect();
    let mut rows: Vec<Vec<f64>> = vec![vec![1.0; levels]];
    for &s in settings {
        let mut next = Vec::with_capacity(rows.len() * reports.len());
        for row in &rows {
            for &(e, g) in &reports {
                next.push(
                    (0..levels)
                        .map(|n| row[n] * fock_event_probability(n, s, model, e, g))
                        .collect(),
                );
            }
        }
        rows = next;
    }
    let m = DMatrix::from_fn(rows.len(), levels, |i, j| rows[i][j]);
    let sv = m.singular_values();
    let top = sv.max();
    sv.iter().filter(|&&s| s > top * 1e-10).count()
}

/// Probe settings for the default phase cycle.
pub fn probe_settings(phi_0: f64) -> Vec<RamseySetting> {
    PROBE_PHASES
        .iter()
        .map(|&phi_r| RamseySetting { phi_r, phi_0 })
        .collect()
}
