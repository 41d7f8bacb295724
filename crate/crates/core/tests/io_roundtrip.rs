use fock_feedback::experiment::{run_ensemble, run_recorded, LoopConfig};
use fock_feedback::io;
use fock_feedback::Error;

fn config(iterations: usize) -> LoopConfig {
    LoopConfig {
        iterations,
        ..LoopConfig::default()
    }
}

#[test]
fn trajectory_file_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trajectory.csv");
    let record = run_recorded(&config(250), 11, &[0, 100, 249]).unwrap();
    assert_eq!(record.snapshots.len(), 3);
    assert!(record.probes.is_some());
    io::write_trajectory(&path, &record).unwrap();
    assert_eq!(io::read_trajectory(&path).unwrap(), record);
}

#[test]
fn trajectory_columns_follow_the_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let cfg = LoopConfig {
        dim: 8,
        n_t: 2,
        ..config(20)
    };
    io::write_trajectory(&path, &run_recorded(&cfg, 1, &[]).unwrap()).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 6 + 2 * 8);
    assert!(lines.all(|l| l.split(',').count() == 22));
    assert_eq!(text.lines().count(), 21);
}

#[test]
fn truncated_trajectory_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    io::write_trajectory(&path, &run_recorded(&config(20), 1, &[]).unwrap()).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let cut: Vec<&str> = text.lines().take(10).collect();
    std::fs::write(&path, cut.join("\n") + "\n").unwrap();
    assert!(matches!(io::read_trajectory(&path), Err(Error::Format { .. })));
}

#[test]
fn probe_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("probes.csv");
    let stats = run_ensemble(&config(50), 12, 5).unwrap();
    let probes = stats.probes();
    assert_eq!(probes.len(), 12);
    io::write_probes(&path, &probes).unwrap();
    assert_eq!(io::read_probes(&path).unwrap(), probes);
}

#[test]
fn config_file_with_comments_and_expressions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loop.cfg");
    std::fs::write(
        &path,
        "# target\nn_t = 2   # two photons\nphi_0 = 0.256*pi\nT_c = inf\nphase_schedule = -0.44\n\nstop_rule = fixed_fidelity\n",
    )
    .unwrap();
    let cfg = io::parse_config(&path).unwrap();
    assert_eq!(cfg.n_t, 2);
    assert!(cfg.t_c.is_infinite());
    assert_eq!(cfg.phase_schedule, Some(vec![-0.44]));
    assert_eq!(io::parse_config_str(&io::render_config(&cfg), "echo").unwrap(), cfg);
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(io::parse_config(&dir.path().join("none.cfg")), Err(Error::Io { .. })));
}
