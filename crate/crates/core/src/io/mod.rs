//! Configuration files, data files and run manifests.

mod config;
mod files;
mod manifest;

pub use config::{parse_config, parse_config_str, parse_real, render_config, KEYS};
pub use files::{
    read_histogram, read_json, read_matrix, read_metrics, read_probes, read_trajectory, trajectory_header,
    trajectory_meta_path, write_convergence_curve, write_ensemble_series, write_histogram, write_json, write_matrix,
    write_metrics, write_probes, write_reconstruction, write_trajectory, write_trajectory_summaries, write_tuning,
};
pub use manifest::RunManifest;
