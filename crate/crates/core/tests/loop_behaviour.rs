use std::ops::ControlFlow;

use fock_feedback::experiment::{
    recovery_metrics, run_ensemble, run_feedback_trajectory, run_jump_recovery, run_trial_and_error, trajectory_rng,
    tune_lambda, InitialStates, LoopConfig, LoopEngine, StopRule, TruthRelaxation,
};
use fock_feedback::fock::DensityMatrix;
use fock_feedback::Error;

fn quiet(iterations: usize) -> LoopConfig {
    LoopConfig {
        iterations,
        probe_samples: 0,
        ..LoopConfig::default()
    }
}

#[test]
fn one_trajectory_ensemble_equals_the_record() {
    let cfg = LoopConfig {
        iterations: 400,
        ..LoopConfig::default()
    };
    let record = run_feedback_trajectory(&cfg, 21).unwrap();
    let stats = run_ensemble(&cfg, 1, 21).unwrap();
    assert_eq!(stats.mean_p_est.len(), record.rows.len());
    for (i, row) in record.rows.iter().enumerate() {
        assert_eq!(stats.mean_p_est[i], row.p_est);
        assert_eq!(stats.mean_p_true[i], row.p_true);
        assert_eq!(stats.mean_abs_alpha[i], row.alpha.abs());
        assert_eq!(stats.mean_distance[i], row.distance);
    }
    assert_eq!(stats.terminal_p_true(), record.final_truth.populations());
    assert_eq!(stats.trajectories[0].probes, record.probes);
}

#[test]
fn ensembles_do_not_depend_on_the_thread_count() {
    let cfg = quiet(300);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_ensemble(&cfg, 37, 8).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(3));
    assert_eq!(one, run_ensemble(&cfg, 37, 8).unwrap());
    assert_ne!(one, run_ensemble(&cfg, 37, 9).unwrap());
}

#[test]
fn three_photon_state_lives_a_third_of_the_damping_time() {
    let cfg = LoopConfig {
        control: false,
        truth_relaxation: TruthRelaxation::Jumps,
        ..quiet(20_000)
    };
    let engine = LoopEngine::new(cfg.clone()).unwrap();
    let fock3 = DensityMatrix::fock(3, cfg.dim).unwrap();
    let init = InitialStates {
        truth: fock3.clone(),
        estimate: fock3,
    };
    let n = 500;
    let mut total = 0.0;
    for index in 0..n {
        let mut rng = trajectory_rng(77, index);
        let mut jump = None;
        engine
            .simulate(&init, &mut rng, false, cfg.iterations, StopRule::FixedTime, |v| {
                if v.truth.population(2) > v.truth.population(3) {
                    jump = Some(v.time_s);
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                }
            })
            .unwrap();
        total += jump.expect("every trajectory jumps within 20,000 iterations");
    }
    let mean = total / n as f64;
    let expected = cfg.t_c / 3.0;
    assert!((mean / expected - 1.0).abs() < 0.2, "mean first jump {mean} s vs {expected} s");
}

#[test]
fn actuator_is_quiet_between_jumps() {
    let cfg = quiet(2000);
    let (mut quiet_sum, mut quiet_n, mut busy_sum, mut busy_n) = (0.0, 0usize, 0.0, 0usize);
    for seed in 0..200 {
        let rec = run_feedback_trajectory(&cfg, seed).unwrap();
        let Some(start) = rec.converged_at else { continue };
        for row in &rec.rows[start + 1..] {
            let a = row.alpha.abs();
            if row.p_est[3] > 0.7 {
                quiet_sum += a;
                quiet_n += 1;
            } else if row.p_est[2] > 0.5 || row.p_est[4] > 0.5 {
                busy_sum += a;
                busy_n += 1;
            }
        }
    }
    assert!(quiet_n > 1000 && busy_n > 1000, "{quiet_n} quiet, {busy_n} recovering");
    let ratio = (quiet_sum / quiet_n as f64) / (busy_sum / busy_n as f64);
    assert!(ratio < 0.2, "quiet/recovery |alpha| ratio {ratio}");
}

#[test]
fn vacuous_threshold_accepts_the_first_attempt() {
    let cfg = LoopConfig {
        fidelity_threshold: 0.0,
        ..quiet(100)
    };
    let stats = run_trial_and_error(&cfg, 16, 3).unwrap();
    let tau = cfg.tau_iterations() as f64 * cfg.t_a;
    for t in &stats.trajectories {
        assert_eq!(t.attempts, 1);
        assert_eq!(t.convergence_time, Some(tau));
    }
}

#[test]
fn trial_and_error_resets_are_geometric() {
    let cfg = quiet(100);
    let stats = run_trial_and_error(&cfg, 400, 12).unwrap();
    let converged: Vec<usize> = stats
        .trajectories
        .iter()
        .filter(|t| t.convergence_time.is_some())
        .map(|t| t.attempts)
        .collect();
    assert_eq!(converged.len(), 400);
    let attempts: usize = converged.iter().sum();
    let p = converged.len() as f64 / attempts as f64;
    let first = converged.iter().filter(|&&a| a == 1).count() as f64 / converged.len() as f64;
    let second = converged.iter().filter(|&&a| a == 2).count() as f64 / converged.len() as f64;
    let sigma = (p * (1.0 - p) / converged.len() as f64).sqrt();
    assert!((first - p).abs() < 3.0 * sigma, "P(1 attempt) {first} vs pass rate {p}");
    let q = p * (1.0 - p);
    let sigma2 = (q * (1.0 - q) / converged.len() as f64).sqrt();
    assert!((second - q).abs() < 3.0 * sigma2 + 3.0 * sigma, "P(2 attempts) {second} vs {q}");
}

#[test]
fn recovery_needs_a_prior() {
    assert!(matches!(run_jump_recovery(&quiet(100), None, 4, 1), Err(Error::Config(_))));
    let short = vec![0.5, 0.5];
    assert!(matches!(
        run_jump_recovery(&quiet(100), Some(&short), 4, 1),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn recovery_without_false_belief_starts_crossed() {
    let cfg = quiet(800);
    let mut prior = vec![0.0; cfg.dim];
    prior[2] = 1.0;
    let stats = run_jump_recovery(&cfg, Some(&prior), 64, 2).unwrap();
    let m = recovery_metrics(&stats).unwrap();
    assert_eq!(m.crossing_time, Some(cfg.t_a));
    assert!(stats.mean_p_true.last().unwrap()[3] > stats.mean_p_true[0][3] + 0.2);
}

#[test]
fn tuning_table_follows_the_grid() {
    let cfg = LoopConfig {
        stop_rule: StopRule::FixedFidelity,
        ..quiet(400)
    };
    let one = tune_lambda(&cfg, &[1.5], 8, 1).unwrap();
    assert_eq!(one.best_shape, 1.5);
    assert_eq!(one.table.len(), 1);
    let three = tune_lambda(&cfg, &[0.5, 1.0, 2.0], 8, 1).unwrap();
    assert_eq!(three.table.len(), 3);
    assert!(three.table.iter().any(|&(s, _)| s == three.best_shape));
    assert!(tune_lambda(&cfg, &[], 8, 1).is_err());
}
