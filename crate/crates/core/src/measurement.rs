//! The sensor: Ramsey-qubit POVM, measurement back-action on the field and
//! the imperfect detection channel.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, FockOperator};

/// Per-photon Ramsey phase shift, `0.256 pi`.
pub const DEFAULT_PHI_0: f64 = 0.256 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RamseySetting {
    pub phi_r: f64,
    pub phi_0: f64,
}

impl RamseySetting {
    pub fn new(phi_r: f64, phi_0: f64) -> Result<Self> {
        if !(phi_0 > 0.0 && phi_0.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "phi_0",
                value: phi_0,
                reason: "phase shift per photon must be positive",
            });
        }
        if !phi_r.is_finite() {
            return Err(Error::InvalidParameter {
                name: "phi_r",
                value: phi_r,
                reason: "Ramsey phase must be finite",
            });
        }
        Ok(Self { phi_r, phi_0 })
    }

    /// The Ramsey phase giving `P(e|n) = 1/2` on the rising side, wrapped to
    /// `(-pi, pi]`.
    pub fn balanced_for(n: usize, phi_0: f64) -> Self {
        let mut phi_r = FRAC_PI_2 - phi_0 * (n as f64 + 0.5);
        phi_r = (phi_r + PI).rem_euclid(2.0 * PI) - PI;
        if phi_r <= -PI {
            phi_r += 2.0 * PI;
        }
        Self { phi_r, phi_0 }
    }

    fn half_angle(&self, n: usize) -> f64 {
        (self.phi_r + self.phi_0 * (n as f64 + 0.5)) / 2.0
    }

    /// `P(e | n)` for an ideal single atom.
    pub fn prob_excited(&self, n: usize) -> f64 {
        self.half_angle(n).cos().powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Excited,
    Ground,
}

impl Outcome {
    pub const BOTH: [Outcome; 2] = [Outcome::Excited, Outcome::Ground];
}

/// Diagonals of the measurement operators `M_e = cos(..)`, `M_g = sin(..)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Povm {
    setting: RamseySetting,
    excited: Vec<f64>,
    ground: Vec<f64>,
}

impl Povm {
    pub fn new(setting: RamseySetting, dim: usize) -> Self {
        let (excited, ground) = (0..dim)
            .map(|n| {
                let x = setting.half_angle(n);
                (x.cos(), x.sin())
            })
            .unzip();
        Self {
            setting,
            excited,
            ground,
        }
    }

    pub fn setting(&self) -> RamseySetting {
        self.setting
    }

    pub fn dim(&self) -> usize {
        self.excited.len()
    }

    pub fn amplitudes(&self, outcome: Outcome) -> &[f64] {
        match outcome {
            Outcome::Excited => &self.excited,
            Outcome::Ground => &self.ground,
        }
    }

    /// `P(outcome | n)`.
    pub fn prob_given_n(&self, n: usize, outcome: Outcome) -> f64 {
        self.amplitudes(outcome)[n].powi(2)
    }

    /// `Tr(M_j rho M_j†)`.
    pub fn probability(&self, rho: &DensityMatrix, outcome: Outcome) -> f64 {
        self.amplitudes(outcome)
            .iter()
            .enumerate()
            .map(|(n, m)| m * m * rho.population(n))
            .sum()
    }

    /// `M_j rho M_j†`, unnormalized.
    pub fn apply(&self, rho: &DensityMatrix, outcome: Outcome) -> DensityMatrix {
        let amp = self.amplitudes(outcome);
        let m = rho.matrix();
        let out = nalgebra::DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| amp[i] * amp[j] * m[(i, j)]);
        DensityMatrix::from_matrix_unchecked(out)
    }
}

pub fn povm_operators(setting: RamseySetting, dim: usize) -> Result<(FockOperator, FockOperator)> {
    if dim < 2 {
        return Err(Error::InvalidDimension(dim));
    }
    let povm = Povm::new(setting, dim);
    Ok((
        FockOperator::diagonal(povm.amplitudes(Outcome::Excited)),
        FockOperator::diagonal(povm.amplitudes(Outcome::Ground)),
    ))
}

/// Number of atoms in one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Occupancy {
    /// Poisson law with every `k >= max_atoms` folded into `k = max_atoms`.
    Poisson { mean: f64, max_atoms: u32 },
    Fixed(u32),
}

impl Occupancy {
    pub fn max_atoms(&self) -> u32 {
        match *self {
            Occupancy::Poisson { max_atoms, .. } => max_atoms,
            Occupancy::Fixed(k) => k,
        }
    }

    /// `P(k)` for `k in 0..=max_atoms`.
    pub fn probabilities(&self) -> Vec<f64> {
        match *self {
            Occupancy::Poisson { mean, max_atoms } => {
                let mut probs = Vec::with_capacity(max_atoms as usize + 1);
                let mut term = (-mean).exp();
                let mut total = 0.0;
                for k in 0..max_atoms {
                    probs.push(term);
                    total += term;
                    term *= mean / (k + 1) as f64;
                }
                probs.push((1.0 - total).max(0.0));
                probs
            }
            Occupancy::Fixed(k) => {
                let mut probs = vec![0.0; k as usize + 1];
                probs[k as usize] = 1.0;
                probs
            }
        }
    }
}

/// Detector imperfections and sample occupancy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImperfectionModel {
    pub occupancy: Occupancy,
    pub detect_efficiency: f64,
    /// Probability that a detected `e` atom is reported as `g`.
    pub err_e: f64,
    /// Probability that a detected `g` atom is reported as `e`.
    pub err_g: f64,
}

impl Default for ImperfectionModel {
    fn default() -> Self {
        Self {
            occupancy: Occupancy::Poisson {
                mean: 0.6,
                max_atoms: 2,
            },
            detect_efficiency: 0.35,
            err_e: 0.03,
            err_g: 0.03,
        }
    }
}

impl ImperfectionModel {
    /// Exactly one atom per sample, perfectly detected.
    pub fn ideal() -> Self {
        Self {
            occupancy: Occupancy::Fixed(1),
            detect_efficiency: 1.0,
            err_e: 0.0,
            err_g: 0.0,
        }
    }

    pub fn max_atoms(&self) -> u32 {
        self.occupancy.max_atoms()
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("detect_efficiency", self.detect_efficiency),
            ("err_e", self.err_e),
            ("err_g", self.err_g),
        ];
        for (name, value) in probs {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidParameter {
                    name,
                    value,
                    reason: "probability must lie in [0, 1]",
                });
            }
        }
        if let Occupancy::Poisson { mean, max_atoms } = self.occupancy {
            if !(mean >= 0.0 && mean.is_finite()) {
                return Err(Error::InvalidParameter {
                    name: "mean_atoms",
                    value: mean,
                    reason: "Poisson mean must be finite and non-negative",
                });
            }
            if max_atoms == 0 {
                return Err(Error::InvalidParameter {
                    name: "max_atoms",
                    value: 0.0,
                    reason: "must allow at least one atom",
                });
            }
        }
        Ok(())
    }

    /// Report distribution `[none, e, g]` for an atom whose true state is
    /// `outcome`.
    pub fn report_probabilities(&self, outcome: Outcome) -> [f64; 3] {
        let eff = self.detect_efficiency;
        match outcome {
            Outcome::Excited => [1.0 - eff, eff * (1.0 - self.err_e), eff * self.err_e],
            Outcome::Ground => [1.0 - eff, eff * self.err_g, eff * (1.0 - self.err_g)],
        }
    }

    /// Probability of the reported counts given the sequence of true outcomes
    /// of all atoms in the sample.
    pub fn report_likelihood(&self, outcomes: &[Outcome], reported_e: u32, reported_g: u32) -> f64 {
        // distribute the atoms over {none, e, g} one at a time
        fn recurse(
            model: &ImperfectionModel,
            outcomes: &[Outcome],
            e_left: u32,
            g_left: u32,
        ) -> f64 {
            let Some((first, rest)) = outcomes.split_first() else {
                return if e_left == 0 && g_left == 0 { 1.0 } else { 0.0 };
            };
            if (e_left + g_left) as usize > outcomes.len() {
                return 0.0;
            }
            let [none, e, g] = model.report_probabilities(*first);
            let mut total = none * recurse(model, rest, e_left, g_left);
            if e_left > 0 && e > 0.0 {
                total += e * recurse(model, rest, e_left - 1, g_left);
            }
            if g_left > 0 && g > 0.0 {
                total += g * recurse(model, rest, e_left, g_left - 1);
            }
            total
        }
        recurse(self, outcomes, reported_e, reported_g)
    }
}

/// Counts of atoms reported in `e` and `g` for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub iteration_index: usize,
    pub reported_e: u32,
    pub reported_g: u32,
}

impl DetectionEvent {
    pub fn new(iteration_index: usize, reported_e: u32, reported_g: u32) -> Self {
        Self {
            iteration_index,
            reported_e,
            reported_g,
        }
    }

    pub fn reported(&self) -> u32 {
        self.reported_e + self.reported_g
    }

    pub fn is_empty(&self) -> bool {
        self.reported() == 0
    }
}

pub fn sample_occupancy<R: Rng + ?Sized>(model: &ImperfectionModel, rng: &mut R) -> u32 {
    match model.occupancy {
        Occupancy::Fixed(k) => k,
        occupancy @ Occupancy::Poisson { .. } => {
            let probs = occupancy.probabilities();
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (k, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return k as u32;
                }
            }
            occupancy.max_atoms()
        }
    }
}

/// Sends one sample through the field: collapses `rho` atom by atom and
/// returns the detector report.
pub fn interact_and_report<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    setting: RamseySetting,
    model: &ImperfectionModel,
    iteration_index: usize,
    rng: &mut R,
) -> (DensityMatrix, DetectionEvent) {
    let povm = Povm::new(setting, rho.dim());
    interact_with_povm(rho, &povm, model, iteration_index, rng)
}

pub(crate) fn interact_with_povm<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    povm: &Povm,
    model: &ImperfectionModel,
    iteration_index: usize,
    rng: &mut R,
) -> (DensityMatrix, DetectionEvent) {
    let atoms = sample_occupancy(model, rng);
    let mut state = rho.clone();
    let mut event = DetectionEvent::new(iteration_index, 0, 0);
    for _ in 0..atoms {
        let p_e = povm.probability(&state, Outcome::Excited);
        let outcome = if rng.random::<f64>() < p_e {
            Outcome::Excited
        } else {
            Outcome::Ground
        };
        let p = match outcome {
            Outcome::Excited => p_e,
            Outcome::Ground => 1.0 - p_e,
        };
        let mut next = povm.apply(&state, outcome);
        *next.matrix_mut() /= p;
        state = next.normalized();

        if rng.random::<f64>() < model.detect_efficiency {
            let flip = match outcome {
                Outcome::Excited => model.err_e,
                Outcome::Ground => model.err_g,
            };
            let flipped = rng.random::<f64>() < flip;
            match (outcome, flipped) {
                (Outcome::Excited, false) | (Outcome::Ground, true) => event.reported_e += 1,
                _ => event.reported_g += 1,
            }
        }
    }
    (state, event)
}

/// `P(event | |n>)` in closed form: atoms are independent for a Fock state,
/// so the report counts are a Poisson-weighted multinomial.
pub fn fock_event_probability(
    n: usize,
    setting: RamseySetting,
    model: &ImperfectionModel,
    reported_e: u32,
    reported_g: u32,
) -> f64 {
    let p_e = setting.prob_excited(n);
    let eff = model.detect_efficiency;
    let r_e = eff * (p_e * (1.0 - model.err_e) + (1.0 - p_e) * model.err_g);
    let r_g = eff * (p_e * model.err_e + (1.0 - p_e) * (1.0 - model.err_g));
    let r_none = 1.0 - eff;
    let reported = reported_e + reported_g;
    model
        .occupancy
        .probabilities()
        .iter()
        .enumerate()
        .skip(reported as usize)
        .map(|(k, pk)| {
            let k = k as u32;
            let missed = k - reported;
            let multinomial =
                factorial(k) / (factorial(reported_e) * factorial(reported_g) * factorial(missed));
            pk * multinomial * r_e.powi(reported_e as i32) * r_g.powi(reported_g as i32) * r_none.powi(missed as i32)
        })
        .sum()
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn povm_is_complete() {
        let (me, mg) = povm_operators(RamseySetting::new(0.3, DEFAULT_PHI_0).unwrap(), 10).unwrap();
        let sum = me.matrix() * me.matrix() + mg.matrix() * mg.matrix();
        assert!((sum - nalgebra::DMatrix::identity(10, 10)).amax() < 1e-15);
    }

    #[test]
    fn published_phases_are_balanced() {
        let s2 = RamseySetting::new(-0.44, DEFAULT_PHI_0).unwrap();
        assert_abs_diff_eq!(s2.prob_excited(2), 0.5, epsilon = 1e-3);
        // -1.24 is the balanced phase -1.2441 rounded to two decimals
        let s3 = RamseySetting::new(-1.24, DEFAULT_PHI_0).unwrap();
        assert_abs_diff_eq!(s3.prob_excited(3), 0.5, epsilon = 2.5e-3);
    }

    #[test]
    fn balanced_phase_formula() {
        for n in 0..8 {
            let s = RamseySetting::balanced_for(n, DEFAULT_PHI_0);
            assert_abs_diff_eq!(s.prob_excited(n), 0.5, epsilon = 1e-12);
            assert!(s.phi_r > -PI && s.phi_r <= PI);
        }
        assert_abs_diff_eq!(RamseySetting::balanced_for(0, DEFAULT_PHI_0).phi_r, 1.17, epsilon = 0.01);
        assert_abs_diff_eq!(RamseySetting::balanced_for(1, DEFAULT_PHI_0).phi_r, 0.36, epsilon = 0.01);
        assert_abs_diff_eq!(RamseySetting::balanced_for(2, DEFAULT_PHI_0).phi_r, -0.44, epsilon = 0.01);
        assert_abs_diff_eq!(RamseySetting::balanced_for(3, DEFAULT_PHI_0).phi_r, -1.24, epsilon = 0.01);
    }

    #[test]
    fn occupancy_law() {
        let probs = ImperfectionModel::default().occupancy.probabilities();
        assert_eq!(probs.len(), 3);
        assert_abs_diff_eq!(probs[0], (-0.6f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(probs[1], 0.6 * (-0.6f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(probs[0], 0.5488, epsilon = 1e-4);
        assert_abs_diff_eq!(probs[1], 0.3293, epsilon = 1e-4);
        assert_abs_diff_eq!(probs[2], 0.1219, epsilon = 1e-4);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = ImperfectionModel::default();
        let mut counts = [0usize; 3];
        let draws = 200_000;
        for _ in 0..draws {
            counts[sample_occupancy(&model, &mut rng) as usize] += 1;
        }
        for k in 0..3 {
            let f = counts[k] as f64 / draws as f64;
            let sigma = (probs[k] * (1.0 - probs[k]) / draws as f64).sqrt();
            assert!((f - probs[k]).abs() < 4.0 * sigma);
        }
    }

    #[test]
    fn model_validation() {
        let mut m = ImperfectionModel::default();
        m.detect_efficiency = 1.7;
        assert!(m.validate().is_err());
        m.detect_efficiency = 0.35;
        m.err_g = -0.1;
        assert!(m.validate().is_err());
    }

    #[test]
    fn empty_sample_leaves_field_alone() {
        let mut model = ImperfectionModel::default();
        model.occupancy = Occupancy::Fixed(0);
        let rho = crate::fock::coherent_state(1.5, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (after, event) = interact_and_report(&rho, RamseySetting::new(-0.44, DEFAULT_PHI_0).unwrap(), &model, 0, &mut rng);
        assert_eq!(after, rho);
        assert!(event.is_empty());
    }

    #[test]
    fn fock_states_are_not_demolished() {
        let rho = DensityMatrix::fock(2, 10).unwrap();
        let model = ImperfectionModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..500 {
            let phi = -1.5 + 0.01 * i as f64;
            let (after, _) = interact_and_report(&rho, RamseySetting::new(phi, DEFAULT_PHI_0).unwrap(), &model, i, &mut rng);
            assert_eq!(after, rho);
        }
    }

    #[test]
    fn true_outcome_frequency_matches_povm() {
        // ideal detection exposes the true outcomes directly
        let rho = DensityMatrix::fock(2, 10).unwrap();
        let model = ImperfectionModel::ideal();
        let setting = RamseySetting::new(-0.44, DEFAULT_PHI_0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let runs = 100_000;
        let excited = (0..runs)
            .filter(|i| interact_and_report(&rho, setting, &model, *i, &mut rng).1.reported_e == 1)
            .count();
        assert_abs_diff_eq!(excited as f64 / runs as f64, 0.5, epsilon = 5e-3);
    }

    #[test]
    fn event_probabilities_sum_to_one() {
        let model = ImperfectionModel::default();
        let setting = RamseySetting::new(-1.24, DEFAULT_PHI_0).unwrap();
        for n in 0..10 {
            let mut total = 0.0;
            for e in 0..=2 {
                for g in 0..=(2 - e) {
                    total += fock_event_probability(n, setting, &model, e, g);
                }
            }
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn report_likelihood_matches_closed_form() {
        let model = ImperfectionModel::default();
        let setting = RamseySetting::new(0.36, DEFAULT_PHI_0).unwrap();
        let probs = model.occupancy.probabilities();
        for n in [0usize, 3, 6] {
            let p_e = setting.prob_excited(n);
            for (e, g) in [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)] {
                let mut total = 0.0;
                for (k, pk) in probs.iter().enumerate() {
                    // all true-outcome sequences of length k
                    for mask in 0..(1u32 << k) {
                        let seq: Vec<Outcome> = (0..k)
                            .map(|i| if mask >> i & 1 == 1 { Outcome::Excited } else { Outcome::Ground })
                            .collect();
                        let prior: f64 = seq
                            .iter()
                            .map(|o| if *o == Outcome::Excited { p_e } else { 1.0 - p_e })
                            .product();
                        total += pk * prior * model.report_likelihood(&seq, e, g);
                    }
                }
                let closed = fock_event_probability(n, setting, &model, e, g);
                assert_abs_diff_eq!(total, closed, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn at_least_one_e_report_matches_closed_form() {
        let model = ImperfectionModel::default();
        let setting = RamseySetting::new(-0.44, DEFAULT_PHI_0).unwrap();
        let n = 1;
        let rho = DensityMatrix::fock(n, 10).unwrap();
        let expected = fock_event_probability(n, setting, &model, 1, 0)
            + fock_event_probability(n, setting, &model, 2, 0)
            + fock_event_probability(n, setting, &model, 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let runs = 100_000;
        let hits = (0..runs)
            .filter(|i| interact_and_report(&rho, setting, &model, *i, &mut rng).1.reported_e >= 1)
            .count();
        let f = hits as f64 / runs as f64;
        let sigma = (expected * (1.0 - expected) / runs as f64).sqrt();
        assert!((f - expected).abs() < 3.0 * sigma, "{f} vs {expected}");
    }
}
