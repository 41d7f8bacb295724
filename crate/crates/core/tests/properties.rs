use std::ops::ControlFlow;

use nalgebra::DMatrix;
use proptest::prelude::*;

use fock_feedback::controller::{build_lambda, choose_alpha, Controller, DEFAULT_DEADBAND};
use fock_feedback::dissipation::build_propagator;
use fock_feedback::estimator::{hypothesis_posterior, unconditional_map, update_on_event};
use fock_feedback::experiment::{trajectory_rng, LoopConfig, LoopEngine, StopRule};
use fock_feedback::fock::{coherent_state, displacement_exact, DensityMatrix};
use fock_feedback::measurement::{DetectionEvent, ImperfectionModel, RamseySetting, DEFAULT_PHI_0};
use fock_feedback::reconstruction::{ml_reconstruct, ProbeRecord, ProbeSample};

const DIM: usize = 10;

/// `G Gᵀ / Tr` for a random real `G`: a generic full-rank real state.
fn state_strategy(dim: usize) -> impl Strategy<Value = DensityMatrix> {
    prop::collection::vec(-1.0..1.0f64, dim * dim).prop_map(move |g| {
        let g = DMatrix::from_vec(dim, dim, g);
        let m = &g * g.transpose();
        let t = m.trace();
        DensityMatrix::from_matrix(m / t).unwrap()
    })
}

fn diagonal_strategy(dim: usize) -> impl Strategy<Value = DensityMatrix> {
    prop::collection::vec(0.0..1.0f64, dim)
        .prop_filter("non-zero weights", |w| w.iter().sum::<f64>() > 1e-3)
        .prop_map(|w| DensityMatrix::from_populations(&w).unwrap())
}

fn sensor() -> ImperfectionModel {
    ImperfectionModel::default()
}

fn f_true(ctrl: &Controller, rho: &DensityMatrix, alpha: f64) -> f64 {
    1.0 - ctrl.distance(&rho.conjugate(&displacement_exact(alpha, rho.dim()).unwrap()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn relaxation_keeps_states_valid(
        rho in state_strategy(DIM),
        t_c in 1e-3..1.0f64,
        n_th in 0.0..0.3f64,
    ) {
        let model = build_propagator(t_c, n_th, 82e-6, DIM).unwrap();
        let out = model.relax(&rho).unwrap();
        prop_assert!((out.trace() - 1.0).abs() < 1e-10);
        prop_assert!(out.min_eigenvalue() >= -1e-10);
        prop_assert!(out.validate().is_ok());
    }

    #[test]
    fn relaxation_is_a_semigroup(
        rho in state_strategy(DIM),
        t_c in 1e-3..1.0f64,
        n_th in 0.0..0.3f64,
        dt in 1e-6..1e-3f64,
    ) {
        let one = build_propagator(t_c, n_th, dt, DIM).unwrap();
        let two = build_propagator(t_c, n_th, 2.0 * dt, DIM).unwrap();
        let a = one.relax(&one.relax(&rho).unwrap()).unwrap();
        let b = two.relax(&rho).unwrap();
        prop_assert!((a.matrix() - b.matrix()).amax() < 1e-9);
    }

    #[test]
    fn relaxation_creates_no_coherence(rho in diagonal_strategy(DIM), n_th in 0.0..0.3f64) {
        let model = build_propagator(65e-3, n_th, 82e-6, DIM).unwrap();
        let out = model.relax(&rho).unwrap();
        prop_assert_eq!(out.max_coherence(), 0.0);
    }

    #[test]
    fn exact_displacement_preserves_trace(rho in state_strategy(DIM), alpha in -0.2..0.2f64) {
        let out = rho.conjugate(&displacement_exact(alpha, DIM).unwrap()).unwrap();
        prop_assert!((out.trace() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn displacements_compose(a in -0.1..0.1f64, b in -0.1..0.1f64) {
        let ab = displacement_exact(a, DIM).unwrap().compose(&displacement_exact(b, DIM).unwrap());
        let sum = displacement_exact(a + b, DIM).unwrap();
        prop_assert!((ab.matrix() - sum.matrix()).amax() < 1e-6);
    }

    #[test]
    fn coherent_diagonal_is_truncated_poisson(amplitude in 0.0..(DIM as f64 / 3.0).sqrt()) {
        let rho = coherent_state(amplitude, DIM).unwrap();
        let mean = amplitude * amplitude;
        let mut law: Vec<f64> = Vec::with_capacity(DIM);
        let mut term = (-mean).exp();
        for n in 0..DIM {
            if n > 0 {
                term *= mean / n as f64;
            }
            law.push(term);
        }
        let total: f64 = law.iter().sum();
        for n in 0..DIM {
            prop_assert!((rho.population(n) - law[n] / total).abs() < 1e-12);
        }
    }

    #[test]
    fn decisions_are_clamped(c1 in -10.0..10.0f64, c2 in -10.0..10.0f64, alpha_max in 1e-3..0.2f64) {
        let d = choose_alpha(c1, c2, alpha_max, DEFAULT_DEADBAND);
        prop_assert!(d.alpha.abs() <= alpha_max);
        prop_assert!(d.predicted_distance_drop >= 0.0);
    }

    #[test]
    fn quadratic_model_error_is_cubic(
        rho in state_strategy(DIM),
        n_t in 0usize..5,
        shape in 0.3..3.0f64,
    ) {
        let ctrl = Controller::new(build_lambda(n_t, shape, DIM).unwrap(), 0.1, DEFAULT_DEADBAND).unwrap();
        let d = ctrl.decide(&rho);
        prop_assert!(d.alpha.abs() <= 0.1);
        if d.alpha != 0.0 {
            let f0 = 1.0 - ctrl.distance(&rho);
            let quadratic = f0 + d.alpha * d.c1 + 0.5 * d.alpha * d.alpha * d.c2;
            let k = (quadratic - f_true(&ctrl, &rho, d.alpha)).abs() / d.alpha.abs().powi(3);
            prop_assert!(k <= 10.0, "K = {}", k);
        }
    }

    #[test]
    fn deterministic_loop_never_increases_distance(rho in state_strategy(DIM), n_t in 1usize..4) {
        let ctrl = Controller::new(build_lambda(n_t, 2.0, DIM).unwrap(), 0.1, DEFAULT_DEADBAND).unwrap();
        let mut rho = rho;
        let mut d = ctrl.distance(&rho);
        for _ in 0..40 {
            let alpha = ctrl.decide(&rho).alpha;
            rho = rho.conjugate(&displacement_exact(alpha, DIM).unwrap()).unwrap();
            let next = ctrl.distance(&rho);
            prop_assert!(next <= d + 1e-9, "{} -> {}", d, next);
            d = next;
        }
    }

    #[test]
    fn lambda_is_monotone_with_unit_peak(n_t in 0usize..DIM, shape in 0.2..5.0f64) {
        let w = build_lambda(n_t, shape, DIM).unwrap();
        let l = w.diagonal();
        prop_assert_eq!(l[n_t], 1.0);
        prop_assert!(l.iter().all(|&x| (0.0..=1.0).contains(&x)));
        for n in n_t + 1..DIM {
            prop_assert!(l[n] < l[n - 1]);
        }
        for n in 0..n_t {
            prop_assert!(l[n] < l[n + 1]);
        }
    }

    #[test]
    fn posterior_weights_are_normalized(
        rho in state_strategy(DIM),
        e in 0u32..3,
        g in 0u32..3,
        phi_r in -1.5..1.5f64,
    ) {
        prop_assume!(e + g <= 2);
        let setting = RamseySetting::new(phi_r, DEFAULT_PHI_0).unwrap();
        let event = DetectionEvent::new(0, e, g);
        let w = hypothesis_posterior(&rho, &event, setting, &sensor()).unwrap();
        prop_assert!((w.total() - 1.0).abs() < 1e-12);
        prop_assert!(w.weights.iter().all(|&x| x >= 0.0));
        let out = update_on_event(&rho, &event, setting, &sensor()).unwrap();
        prop_assert!((out.trace() - 1.0).abs() < 1e-12);
        prop_assert!(out.validate().is_ok());
    }

    #[test]
    fn unconditional_map_never_purifies(rho in state_strategy(DIM), phi_r in -1.5..1.5f64) {
        let setting = RamseySetting::new(phi_r, DEFAULT_PHI_0).unwrap();
        let out = unconditional_map(&rho, setting, &sensor());
        prop_assert!(out.purity() <= rho.purity() + 1e-12);
        prop_assert!((out.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_is_a_distribution(
        reports in prop::collection::vec((0usize..4, 0u32..3, 0u32..3), 1..60),
    ) {
        let phases = [1.17, 0.36, -0.44, -1.24];
        let records: Vec<ProbeRecord> = reports
            .chunks(5)
            .map(|chunk| ProbeRecord {
                samples: chunk
                    .iter()
                    .map(|&(k, e, g)| ProbeSample {
                        phi_r: phases[k],
                        phi_0: DEFAULT_PHI_0,
                        reported_e: e.min(2),
                        reported_g: g.min(2 - e.min(2)),
                    })
                    .collect(),
            })
            .collect();
        let rec = ml_reconstruct(&records, &sensor(), 8).unwrap();
        prop_assert!((rec.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        prop_assert!(rec.distribution.iter().all(|&p| p >= 0.0));
    }
}

fn short_config(iterations: usize) -> LoopConfig {
    LoopConfig {
        iterations,
        probe_samples: 0,
        ..LoopConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ideal_filter_tracks_the_truth(seed in any::<u64>(), control in any::<bool>(), relax in any::<bool>()) {
        let mut cfg = short_config(150).ideal();
        if !relax {
            cfg = cfg.lossless();
        }
        let engine = LoopEngine::new(cfg).unwrap();
        let init = engine.coherent_start().unwrap();
        let mut rng = trajectory_rng(seed, 0);
        let mut worst: f64 = 0.0;
        engine
            .simulate(&init, &mut rng, control, 150, StopRule::FixedTime, |v| {
                worst = worst.max((v.estimate.matrix() - v.truth.matrix()).amax());
                ControlFlow::Continue(())
            })
            .unwrap();
        prop_assert!(worst < 1e-8, "max deviation {}", worst);
    }

    #[test]
    fn truth_populations_stay_a_distribution(seed in any::<u64>()) {
        let engine = LoopEngine::new(short_config(300)).unwrap();
        let init = engine.coherent_start().unwrap();
        let mut rng = trajectory_rng(seed, 0);
        let mut ok = true;
        engine
            .simulate_default(&init, &mut rng, |v| {
                let p = v.truth.populations();
                let q = v.estimate.populations();
                ok &= (p.iter().sum::<f64>() - 1.0).abs() < 1e-9 && p.iter().all(|&x| x >= -1e-12);
                ok &= (q.iter().sum::<f64>() - 1.0).abs() < 1e-9 && q.iter().all(|&x| x >= -1e-12);
                ControlFlow::Continue(())
            })
            .unwrap();
        prop_assert!(ok);
    }

    #[test]
    fn same_seed_same_record(seed in any::<u64>()) {
        let cfg = LoopConfig { probe_samples: 10, ..short_config(200) };
        let a = fock_feedback::experiment::run_feedback_trajectory(&cfg, seed).unwrap();
        let b = fock_feedback::experiment::run_feedback_trajectory(&cfg, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
