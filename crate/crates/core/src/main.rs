use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use fock_feedback::experiment::{
    recovery_metrics, run_ensemble, run_jump_recovery, run_recorded, run_trial_and_error, tune_lambda, EnsembleStats,
    LoopConfig, CONVERGENCE_FRACTION,
};
use fock_feedback::io::{self, RunManifest};
use fock_feedback::reconstruction::ml_reconstruct;
use fock_feedback::{Error, Result};

#[derive(Parser)]
#[command(name = "fock-feedback", version, about = "Photon-number feedback loop simulator")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the `seed` key of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// One feedback trajectory, recorded iteration by iteration.
    Run {
        #[command(flatten)]
        common: Common,
        /// Iterations at which to save the estimated density matrix.
        #[arg(long, value_delimiter = ',')]
        snapshots: Vec<usize>,
    },
    /// Feedback ensemble from the coherent start.
    Ensemble {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        trajectories: usize,
    },
    /// Trial-and-error preparation baseline.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        trajectories: usize,
    },
    /// Recovery from a one-photon loss with the estimator unaware of it.
    Recovery {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        trajectories: usize,
        /// Estimator prior as an `n,p` histogram, e.g. the
        /// `histogram_true.csv` of a fixed-fidelity ensemble.
        #[arg(long)]
        histogram: Option<PathBuf>,
    },
    /// Maximum-likelihood photon-number distribution from probe samples.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Probe file written by `run` or `ensemble`.
        #[arg(long, required = true, num_args = 1..)]
        probes: Vec<PathBuf>,
    },
    /// Grid search over the Gaussian width of the Lyapunov weights.
    LambdaTune {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 500)]
        trajectories: usize,
        /// Comma-separated widths.
        #[arg(long, default_value = "0.5,1,1.5,2,3")]
        grid: String,
    },
}

struct Session {
    out: PathBuf,
    manifest: RunManifest,
}

impl Session {
    fn open(command: &str, common: &Common, trajectories: Option<usize>) -> Result<(Self, LoopConfig)> {
        let mut config = match &common.config {
            Some(p) => io::parse_config(p)?,
            None => LoopConfig::default(),
        };
        if let Some(seed) = common.seed {
            config.seed = seed;
        }
        std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
        let manifest = RunManifest::start(command, &config, config.seed, trajectories);
        Ok((
            Self {
                out: common.out.clone(),
                manifest,
            },
            config,
        ))
    }

    /// Registers `name` as an output and returns its path.
    fn file(&mut self, name: &str) -> PathBuf {
        self.manifest.output(name);
        self.out.join(name)
    }

    fn summary(&mut self, key: &str, value: Option<f64>) {
        self.manifest.summary.push((key.to_string(), value));
    }

    fn close(mut self) -> Result<()> {
        let path = self.out.join("manifest.json");
        self.manifest.finish(&path)?;
        info!("wrote {}", path.display());
        Ok(())
    }
}

fn write_ensemble_files(s: &mut Session, stats: &EnsembleStats) -> Result<()> {
    if !stats.active.is_empty() {
        io::write_ensemble_series(&s.file("ensemble.csv"), stats)?;
    }
    io::write_trajectory_summaries(&s.file("trajectories.csv"), stats)?;
    io::write_convergence_curve(&s.file("convergence.csv"), &stats.convergence_curve())?;
    io::write_histogram(&s.file("histogram_true.csv"), &stats.terminal_p_true())?;
    io::write_histogram(&s.file("histogram_est.csv"), &stats.terminal_p_est())?;
    let probes = stats.probes();
    if !probes.is_empty() {
        io::write_probes(&s.file("probes.csv"), &probes)?;
    }
    s.summary("convergence_time_63_s", stats.convergence_time(CONVERGENCE_FRACTION));
    s.summary("terminal_p_true_target", Some(stats.terminal_p_true()[stats.n_t]));
    Ok(())
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| io::parse_real(x).map_err(|m| Error::Config(format!("--grid: {m}"))))
        .collect()
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { common, snapshots } => {
            let (mut s, config) = Session::open("run", &common, Some(1))?;
            if let Some(&bad) = snapshots.iter().find(|&&i| i >= config.iterations) {
                return Err(Error::Config(format!(
                    "snapshot iteration {bad} is beyond the last iteration {}",
                    config.iterations - 1
                )));
            }
            let record = run_recorded(&config, config.seed, &snapshots)?;
            let path = s.file("trajectory.csv");
            io::write_trajectory(&path, &record)?;
            let meta = io::trajectory_meta_path(&path);
            s.manifest.output(&meta.file_name().expect("file name").to_string_lossy());
            for (i, rho) in &record.snapshots {
                io::write_matrix(&s.file(&format!("snapshot_{i}.csv")), rho)?;
            }
            if let Some(p) = &record.probes {
                io::write_probes(&s.file("probes.csv"), std::slice::from_ref(p))?;
            }
            s.summary("stop_time_s", Some(record.stop_time_s));
            s.summary(
                "final_p_true_target",
                Some(record.final_truth.population(config.n_t)),
            );
            s.close()
        }
        Command::Ensemble { common, trajectories } => {
            let (mut s, config) = Session::open("ensemble", &common, Some(trajectories))?;
            let stats = run_ensemble(&config, trajectories, config.seed)?;
            write_ensemble_files(&mut s, &stats)?;
            if !stats.active.is_empty() {
                let half = stats.mean_p_true.len() / 2;
                s.summary("time_averaged_p_true_target", Some(stats.time_averaged_p_true(config.n_t, half)));
            }
            s.close()
        }
        Command::Baseline { common, trajectories } => {
            let (mut s, config) = Session::open("baseline", &common, Some(trajectories))?;
            let stats = run_trial_and_error(&config, trajectories, config.seed)?;
            write_ensemble_files(&mut s, &stats)?;
            let attempts = stats.trajectories.iter().map(|t| t.attempts as f64).sum::<f64>() / trajectories as f64;
            s.summary("mean_attempts", Some(attempts));
            s.close()
        }
        Command::Recovery {
            common,
            trajectories,
            histogram,
        } => {
            let (mut s, config) = Session::open("recovery", &common, Some(trajectories))?;
            let prior = histogram.as_deref().map(io::read_histogram).transpose()?;
            let stats = run_jump_recovery(&config, prior.as_deref(), trajectories, config.seed)?;
            write_ensemble_files(&mut s, &stats)?;
            let m = recovery_metrics(&stats)?;
            let metrics = [
                ("crossing_time_s", m.crossing_time),
                ("return_time_s", m.return_time),
                ("steady_p_target", Some(m.steady_p_target)),
                ("alpha_peak", Some(m.alpha_peak)),
                ("alpha_tail", Some(m.alpha_tail)),
            ];
            io::write_metrics(&s.file("recovery.csv"), &metrics)?;
            for (k, v) in metrics {
                s.summary(k, v);
            }
            s.close()
        }
        Command::Reconstruct { common, probes } => {
            let (mut s, config) = Session::open("reconstruct", &common, None)?;
            let mut records = Vec::new();
            for p in &probes {
                records.extend(io::read_probes(p)?);
            }
            info!("{} probe records", records.len());
            let rec = ml_reconstruct(&records, &config.sensor, config.dim)?;
            let dist = s.file("reconstruction.csv");
            let trace = s.file("log_likelihood.csv");
            io::write_reconstruction(&dist, &trace, &rec)?;
            s.summary("records", Some(records.len() as f64));
            s.summary("em_iterations", Some(rec.iterations as f64));
            s.summary("converged", Some(rec.converged as u8 as f64));
            s.summary("degenerate", Some(rec.degenerate as u8 as f64));
            s.close()
        }
        Command::LambdaTune {
            common,
            trajectories,
            grid,
        } => {
            let (mut s, config) = Session::open("lambda-tune", &common, Some(trajectories))?;
            let grid = parse_grid(&grid)?;
            let tuning = tune_lambda(&config, &grid, trajectories, config.seed)?;
            io::write_tuning(&s.file("tuning.csv"), &tuning)?;
            s.summary("best_lambda_shape", Some(tuning.best_shape));
            s.close()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .parse_default_env()
        .init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
