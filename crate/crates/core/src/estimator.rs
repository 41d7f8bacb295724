//! The controller's state filter.
//!
//! Each reported sample is assimilated by Bayesian inference over the
//! hidden atom count, true outcomes and report patterns. Samples still on
//! their way to the detector are accounted for by the outcome-averaged
//! measurement map when the present-time state is needed for control.
//!
//! One loop iteration on the field is: relaxation, sample interaction,
//! displacement. The filter replays exactly that sequence for each sample
//! once its report arrives, so with a matched model and a noiseless
//! detector it reproduces the true state.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::dissipation::RelaxationModel;
use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, DisplacementGenerator, FockOperator};
use crate::measurement::{DetectionEvent, ImperfectionModel, Outcome, Povm, RamseySetting};

/// One hidden explanation of a detection event: how many atoms crossed the
/// field and what their true states were. Report patterns are summed out.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub outcomes: Vec<Outcome>,
}

impl Hypothesis {
    pub fn atoms(&self) -> usize {
        self.outcomes.len()
    }
}

#[derive(Debug, Clone)]
pub struct HypothesisWeights {
    pub hypotheses: Vec<Hypothesis>,
    pub weights: Vec<f64>,
}

impl HypothesisWeights {
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Posterior probability that the sample held `atoms` atoms.
    pub fn atom_count_weight(&self, atoms: usize) -> f64 {
        self.hypotheses
            .iter()
            .zip(&self.weights)
            .filter(|(h, _)| h.atoms() == atoms)
            .map(|(_, w)| w)
            .sum()
    }
}

fn outcome_sequences(k: usize) -> impl Iterator<Item = Vec<Outcome>> {
    (0..1usize << k).map(move |mask| {
        (0..k)
            .map(|i| {
                if mask >> i & 1 == 0 {
                    Outcome::Excited
                } else {
                    Outcome::Ground
                }
            })
            .collect()
    })
}

fn kraus_diagonal(povm: &Povm, outcomes: &[Outcome]) -> Vec<f64> {
    let mut diag = vec![1.0; povm.dim()];
    for outcome in outcomes {
        for (d, m) in diag.iter_mut().zip(povm.amplitudes(*outcome)) {
            *d *= m;
        }
    }
    diag
}

fn check_event(event: &DetectionEvent, model: &ImperfectionModel) -> Result<()> {
    if event.reported() > model.max_atoms() {
        return Err(Error::InvalidEvent {
            reported: event.reported(),
            max_atoms: model.max_atoms(),
        });
    }
    Ok(())
}

/// Unnormalized hypothesis weights `prior(k) * P(report | outcomes) * Tr(K rho K†)`
/// together with each hypothesis' diagonal Kraus operator.
fn weighted_hypotheses(
    rho: &DensityMatrix,
    event: &DetectionEvent,
    povm: &Povm,
    model: &ImperfectionModel,
) -> Vec<(Hypothesis, f64, Vec<f64>)> {
    let priors = model.occupancy.probabilities();
    let mut out = Vec::new();
    for (k, prior) in priors.iter().enumerate() {
        if *prior == 0.0 || (k as u32) < event.reported() {
            continue;
        }
        for outcomes in outcome_sequences(k) {
            let report = model.report_likelihood(&outcomes, event.reported_e, event.reported_g);
            if report == 0.0 {
                continue;
            }
            let kraus = kraus_diagonal(povm, &outcomes);
            let trace: f64 = kraus
                .iter()
                .enumerate()
                .map(|(n, x)| x * x * rho.population(n))
                .sum();
            // the amplitude factor prior * report multiplies K rho K†
            out.push((Hypothesis { outcomes }, prior * report * trace, kraus));
        }
    }
    out
}

/// Posterior over hypotheses for one event.
pub fn hypothesis_posterior(
    rho: &DensityMatrix,
    event: &DetectionEvent,
    setting: RamseySetting,
    model: &ImperfectionModel,
) -> Result<HypothesisWeights> {
    check_event(event, model)?;
    let povm = Povm::new(setting, rho.dim());
    let weighted = weighted_hypotheses(rho, event, &povm, model);
    let total: f64 = weighted.iter().map(|(_, w, _)| w).sum();
    if !(total > 0.0) {
        return Err(Error::InvalidState("event has zero likelihood under the model".into()));
    }
    let (hypotheses, weights) = weighted.into_iter().map(|(h, w, _)| (h, w / total)).unzip();
    Ok(HypothesisWeights { hypotheses, weights })
}

/// Bayesian update of `rho` on a (possibly empty) detection event.
pub fn update_on_event(
    rho: &DensityMatrix,
    event: &DetectionEvent,
    setting: RamseySetting,
    model: &ImperfectionModel,
) -> Result<DensityMatrix> {
    check_event(event, model)?;
    let povm = Povm::new(setting, rho.dim());
    update_with_povm(rho, event, &povm, model)
}

pub(crate) fn update_with_povm(
    rho: &DensityMatrix,
    event: &DetectionEvent,
    povm: &Povm,
    model: &ImperfectionModel,
) -> Result<DensityMatrix> {
    let dim = rho.dim();
    let mut mask = DMatrix::zeros(dim, dim);
    let mut total = 0.0;
    let priors = model.occupancy.probabilities();
    for (k, prior) in priors.iter().enumerate() {
        if *prior == 0.0 || (k as u32) < event.reported() {
            continue;
        }
        for outcomes in outcome_sequences(k) {
            let factor = prior * model.report_likelihood(&outcomes, event.reported_e, event.reported_g);
            if factor == 0.0 {
                continue;
            }
            let kraus = kraus_diagonal(povm, &outcomes);
            for j in 0..dim {
                for i in 0..dim {
                    mask[(i, j)] += factor * kraus[i] * kraus[j];
                }
            }
            total += factor
                * kraus
                    .iter()
                    .enumerate()
                    .map(|(n, x)| x * x * rho.population(n))
                    .sum::<f64>();
        }
    }
    if !(total > 0.0) {
        return Err(Error::InvalidState("event has zero likelihood under the model".into()));
    }
    let out = rho.matrix().component_mul(&mask) / total;
    Ok(DensityMatrix::from_matrix_unchecked(out).normalized())
}

/// Outcome-averaged map of one sample,
/// `rho -> sum_k p_k sum_{j1..jk} M_j1..M_jk rho M_jk†..M_j1†`.
pub fn unconditional_map(rho: &DensityMatrix, setting: RamseySetting, model: &ImperfectionModel) -> DensityMatrix {
    let povm = Povm::new(setting, rho.dim());
    unconditional_with_povm(rho, &povm, model)
}

pub(crate) fn unconditional_with_povm(rho: &DensityMatrix, povm: &Povm, model: &ImperfectionModel) -> DensityMatrix {
    let dim = rho.dim();
    let c = povm.amplitudes(Outcome::Excited);
    let s = povm.amplitudes(Outcome::Ground);
    let priors = model.occupancy.probabilities();
    let m = rho.matrix();
    let out = DMatrix::from_fn(dim, dim, |i, j| {
        let overlap = c[i] * c[j] + s[i] * s[j];
        let mut factor = 0.0;
        let mut power = 1.0;
        for p in &priors {
            factor += p * power;
            power *= overlap;
        }
        factor * m[(i, j)]
    });
    DensityMatrix::from_matrix_unchecked(out).normalized()
}

/// Everything the filter needs to replay one loop iteration.
#[derive(Debug, Clone)]
pub struct FilterModel {
    pub relaxation: RelaxationModel,
    pub model: ImperfectionModel,
    displacements: DisplacementGenerator,
}

impl FilterModel {
    pub fn new(relaxation: RelaxationModel, model: ImperfectionModel) -> Result<Self> {
        model.validate()?;
        let displacements = DisplacementGenerator::new(relaxation.dim())?;
        Ok(Self {
            relaxation,
            model,
            displacements,
        })
    }

    pub fn dim(&self) -> usize {
        self.relaxation.dim()
    }

    pub fn displacement(&self, alpha: f64) -> Option<FockOperator> {
        (alpha != 0.0).then(|| self.displacements.operator(alpha))
    }
}

/// A sample already sent through the field whose report has not arrived.
#[derive(Debug, Clone)]
pub struct InflightSample {
    povm: Povm,
    alpha: f64,
    displacement: Option<FockOperator>,
}

impl InflightSample {
    pub fn setting(&self) -> RamseySetting {
        self.povm.setting()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

fn displace(rho: &mut DensityMatrix, op: &Option<FockOperator>) {
    if let Some(op) = op {
        let m = op.matrix();
        *rho.matrix_mut() = m * rho.matrix() * m.transpose();
        rho.renormalize();
    }
}

/// Filter state. `rho_est` is synchronized with the report stream: it has
/// seen every assimilated sample's interaction, but not yet the
/// displacement that followed the newest one (`pending`).
#[derive(Debug, Clone)]
pub struct EstimatorState {
    rho_est: DensityMatrix,
    pending_alpha: f64,
    pending: Option<FockOperator>,
    inflight: VecDeque<InflightSample>,
    delay_samples: usize,
}

impl EstimatorState {
    pub fn new(initial: DensityMatrix, delay_samples: usize) -> Self {
        Self {
            rho_est: initial,
            pending_alpha: 0.0,
            pending: None,
            inflight: VecDeque::with_capacity(delay_samples + 1),
            delay_samples,
        }
    }

    pub fn rho_est(&self) -> &DensityMatrix {
        &self.rho_est
    }

    pub fn delay_samples(&self) -> usize {
        self.delay_samples
    }

    pub fn inflight(&self) -> impl Iterator<Item = &InflightSample> {
        self.inflight.iter()
    }

    pub fn inflight_len(&self) -> usize {
        self.inflight.len()
    }

    /// Registers the sample sent through the field this iteration. Its
    /// displacement is set later by [`EstimatorState::commit`].
    pub fn emit(&mut self, setting: RamseySetting) {
        self.inflight.push_back(InflightSample {
            povm: Povm::new(setting, self.rho_est.dim()),
            alpha: 0.0,
            displacement: None,
        });
    }

    /// Folds the oldest in-flight sample's report into `rho_est`.
    pub fn assimilate(&mut self, event: &DetectionEvent, filter: &FilterModel) -> Result<()> {
        check_event(event, &filter.model)?;
        let slot = self.inflight.pop_front().ok_or(Error::BufferUnderflow)?;
        let mut rho = self.rho_est.clone();
        displace(&mut rho, &self.pending);
        filter.relaxation.relax_in_place(&mut rho);
        self.rho_est = update_with_povm(&rho, event, &slot.povm, &filter.model)?;
        self.pending_alpha = slot.alpha;
        self.pending = slot.displacement;
        Ok(())
    }

    /// Records the displacement applied after the newest sample.
    pub fn commit(&mut self, alpha: f64, filter: &FilterModel) {
        let op = filter.displacement(alpha);
        match self.inflight.back_mut() {
            Some(slot) => {
                slot.alpha = alpha;
                slot.displacement = op;
            }
            None => {
                self.pending_alpha = alpha;
                self.pending = op;
            }
        }
    }

    /// One iteration in a single call: emit the current sample, assimilate
    /// the report that arrived (none during warm-up) and record the applied
    /// displacement.
    pub fn advance_iteration(
        &mut self,
        event: Option<&DetectionEvent>,
        setting_now: RamseySetting,
        alpha_applied: f64,
        filter: &FilterModel,
    ) -> Result<()> {
        self.emit(setting_now);
        if let Some(event) = event {
            self.assimilate(event, filter)?;
        }
        self.commit(alpha_applied, filter);
        Ok(())
    }

    /// `rho_est` with its pending displacement applied.
    pub fn filtered_state(&self) -> DensityMatrix {
        let mut rho = self.rho_est.clone();
        displace(&mut rho, &self.pending);
        rho
    }

    /// Best present-time state: `rho_est` carried through every in-flight
    /// sample with the outcome-averaged measurement map.
    pub fn control_state(&self, filter: &FilterModel) -> DensityMatrix {
        let mut rho = self.filtered_state();
        for slot in &self.inflight {
            filter.relaxation.relax_in_place(&mut rho);
            rho = unconditional_with_povm(&rho, &slot.povm, &filter.model);
            displace(&mut rho, &slot.displacement);
        }
        rho
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dissipation::build_propagator;
    use crate::fock::coherent_state;
    use crate::measurement::{interact_and_report, Occupancy, DEFAULT_PHI_0};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setting(phi_r: f64) -> RamseySetting {
        RamseySetting::new(phi_r, DEFAULT_PHI_0).unwrap()
    }

    fn filter(model: ImperfectionModel) -> FilterModel {
        FilterModel::new(build_propagator(65e-3, 0.05, 82e-6, 10).unwrap(), model).unwrap()
    }

    #[test]
    fn ideal_limit_is_projective_update() {
        let rho = coherent_state(3f64.sqrt(), 10).unwrap();
        let s = setting(-0.44);
        let out = update_on_event(&rho, &DetectionEvent::new(0, 1, 0), s, &ImperfectionModel::ideal()).unwrap();
        let povm = Povm::new(s, 10);
        let p = povm.probability(&rho, Outcome::Excited);
        let direct = povm.apply(&rho, Outcome::Excited).into_matrix() / p;
        assert!((out.matrix() - direct).amax() < 1e-12);
    }

    #[test]
    fn empty_event_no_atom_posterior() {
        let model = ImperfectionModel::default();
        let p = model.occupancy.probabilities();
        let expected = p[0] / (p[0] + p[1] * 0.65 + p[2] * 0.65 * 0.65);
        assert_abs_diff_eq!(expected, 0.674, epsilon = 1e-3);
        for rho in [
            coherent_state(1.7, 10).unwrap(),
            DensityMatrix::fock(5, 10).unwrap(),
            DensityMatrix::maximally_mixed(10).unwrap(),
        ] {
            let w = hypothesis_posterior(&rho, &DetectionEvent::new(0, 0, 0), setting(-1.24), &model).unwrap();
            assert_abs_diff_eq!(w.atom_count_weight(0), expected, epsilon = 1e-12);
            assert_abs_diff_eq!(w.total(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn every_event_gives_unit_trace() {
        let model = ImperfectionModel::default();
        let rho = coherent_state(1.5, 10).unwrap();
        for (e, g) in [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)] {
            let ev = DetectionEvent::new(0, e, g);
            let out = update_on_event(&rho, &ev, setting(0.36), &model).unwrap();
            assert_abs_diff_eq!(out.trace(), 1.0, epsilon = 1e-12);
            out.validate().unwrap();
            let w = hypothesis_posterior(&rho, &ev, setting(0.36), &model).unwrap();
            assert_abs_diff_eq!(w.total(), 1.0, epsilon = 1e-12);
            assert!(w.weights.iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn rejects_too_many_reports() {
        let model = ImperfectionModel::default();
        let rho = coherent_state(1.0, 10).unwrap();
        let err = update_on_event(&rho, &DetectionEvent::new(0, 2, 1), setting(0.0), &model);
        assert!(matches!(err, Err(Error::InvalidEvent { reported: 3, max_atoms: 2 })));
    }

    #[test]
    fn unconditional_map_properties() {
        let model = ImperfectionModel::default();
        let rho = coherent_state(1.6, 10).unwrap();
        let out = unconditional_map(&rho, setting(-0.44), &model);
        let raw = {
            // without the final renormalization
            let povm = Povm::new(setting(-0.44), 10);
            let p = model.occupancy.probabilities();
            let one: DMatrix<f64> = Outcome::BOTH.iter().map(|o| povm.apply(&rho, *o).into_matrix()).sum();
            let two: DMatrix<f64> = Outcome::BOTH
                .iter()
                .flat_map(|a| Outcome::BOTH.iter().map(move |b| (*a, *b)))
                .map(|(a, b)| povm.apply(&povm.apply(&rho, a), b).into_matrix())
                .sum();
            rho.matrix() * p[0] + one * p[1] + two * p[2]
        };
        assert_abs_diff_eq!(raw.trace(), 1.0, epsilon = 1e-14);
        assert!((out.matrix() - raw).amax() < 1e-14);
        assert!(out.purity() <= rho.purity() + 1e-12);
    }

    #[test]
    fn bayesian_average_matches_unconditional_map() {
        // diagonal state at dim 4: averaging the filter over sampled events
        // weighted by their probability reproduces the unconditional map
        let dim = 4;
        let model = ImperfectionModel::default();
        let s = setting(0.5);
        let rho = DensityMatrix::from_populations(&[0.1, 0.4, 0.3, 0.2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let runs = 40_000;
        let mut mean = DMatrix::zeros(dim, dim);
        for i in 0..runs {
            let (_, ev) = interact_and_report(&rho, s, &model, i, &mut rng);
            mean += update_on_event(&rho, &ev, s, &model).unwrap().matrix();
        }
        mean /= runs as f64;
        let expected = unconditional_map(&rho, s, &model);
        // unconditional map leaves diagonal states unchanged
        assert!((expected.matrix() - rho.matrix()).amax() < 1e-14);
        for n in 0..dim {
            assert_abs_diff_eq!(mean[(n, n)], expected.population(n), epsilon = 0.01);
        }
    }

    #[test]
    fn empty_buffer_control_state_is_rho_est() {
        let f = filter(ImperfectionModel::default());
        let est = EstimatorState::new(coherent_state(1.2, 10).unwrap(), 4);
        assert_eq!(&est.control_state(&f), est.rho_est());
    }

    #[test]
    fn diagonal_state_stays_diagonal_without_displacement() {
        let f = filter(ImperfectionModel::default());
        let mut est = EstimatorState::new(DensityMatrix::from_populations(&[0.1, 0.2, 0.4, 0.2, 0.1, 0., 0., 0., 0., 0.]).unwrap(), 4);
        for i in 0..4 {
            est.emit(setting(if i % 2 == 0 { -0.44 } else { -1.24 }));
            est.commit(0.0, &f);
        }
        assert_eq!(est.inflight_len(), 4);
        let c = est.control_state(&f);
        assert_eq!(c.max_coherence(), 0.0);
        assert_abs_diff_eq!(c.trace(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_delay_is_relax_update_displace() {
        let f = filter(ImperfectionModel::default());
        let rho0 = coherent_state(1.7, 10).unwrap();
        let s = setting(-0.44);
        let ev = DetectionEvent::new(0, 0, 1);
        let mut est = EstimatorState::new(rho0.clone(), 0);
        est.advance_iteration(Some(&ev), s, 0.07, &f).unwrap();
        let manual = {
            let r = f.relaxation.relax(&rho0).unwrap();
            let u = update_on_event(&r, &ev, s, &f.model).unwrap();
            u.conjugate(&crate::fock::displacement_exact(0.07, 10).unwrap()).unwrap()
        };
        assert!((est.filtered_state().matrix() - manual.matrix()).amax() < 1e-12);
        assert_eq!(est.inflight_len(), 0);
    }

    #[test]
    fn warmup_uses_unconditional_propagation() {
        let f = filter(ImperfectionModel::default());
        let rho0 = coherent_state(1.7, 10).unwrap();
        let mut est = EstimatorState::new(rho0.clone(), 2);
        est.advance_iteration(None, setting(-0.44), 0.0, &f).unwrap();
        est.advance_iteration(None, setting(-1.24), 0.0, &f).unwrap();
        assert_eq!(est.rho_est(), &rho0);
        let expected = {
            let mut r = rho0.clone();
            for s in [-0.44, -1.24] {
                r = unconditional_map(&f.relaxation.relax(&r).unwrap(), setting(s), &f.model);
            }
            r
        };
        assert!((est.control_state(&f).matrix() - expected.matrix()).amax() < 1e-13);
        // third iteration: the first report arrives and the window stays at 2
        est.advance_iteration(Some(&DetectionEvent::new(0, 1, 0)), setting(-0.44), 0.0, &f).unwrap();
        assert_eq!(est.inflight_len(), 2);
    }

    #[test]
    fn assimilate_without_sample_underflows() {
        let f = filter(ImperfectionModel::default());
        let mut est = EstimatorState::new(coherent_state(1.0, 10).unwrap(), 0);
        let err = est.assimilate(&DetectionEvent::new(0, 0, 0), &f);
        assert!(matches!(err, Err(Error::BufferUnderflow)));
    }

    #[test]
    fn long_run_preserves_state_invariants() {
        let f = filter(ImperfectionModel::default());
        let mut est = EstimatorState::new(coherent_state(3f64.sqrt(), 10).unwrap(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut queue = VecDeque::new();
        for i in 0..2000 {
            let s = setting(if i % 2 == 0 { -0.44 } else { -1.24 });
            est.emit(s);
            let e: u32 = rng.random_range(0..=1);
            let g: u32 = rng.random_range(0..=1);
            queue.push_back(DetectionEvent::new(i, e, g));
            if queue.len() > 4 {
                est.assimilate(&queue.pop_front().unwrap(), &f).unwrap();
            }
            let alpha = rng.random_range(-0.1..0.1);
            est.commit(alpha, &f);
            est.rho_est().validate().unwrap();
            est.control_state(&f).validate().unwrap();
        }
        assert_eq!(est.inflight_len(), 4);
    }

    #[test]
    fn occupancy_fixed_two_hypotheses() {
        let model = ImperfectionModel {
            occupancy: Occupancy::Fixed(2),
            detect_efficiency: 0.5,
            err_e: 0.0,
            err_g: 0.0,
        };
        let rho = DensityMatrix::fock(3, 10).unwrap();
        let w = hypothesis_posterior(&rho, &DetectionEvent::new(0, 1, 0), setting(-1.24), &model).unwrap();
        assert_abs_diff_eq!(w.atom_count_weight(2), 1.0, epsilon = 1e-15);
        assert_eq!(w.hypotheses.len(), 3);
    }
}
