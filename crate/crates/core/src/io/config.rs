//! Flat `key = value` configuration files.
//!
//! One assignment per line, `#` starts a comment, keys are
//! case-insensitive. Reals accept a trailing `*pi` factor (`0.256*pi`) and
//! `inf`; lists are comma separated.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::{DistanceKind, LoopConfig, StopRule, TruthRelaxation};
use crate::measurement::Occupancy;

/// Every accepted key, in rendering order.
pub const KEYS: &[&str] = &[
    "dim",
    "t_a",
    "t_c",
    "n_th",
    "phi_0",
    "phase_schedule",
    "n_t",
    "alpha_max",
    "delay_samples",
    "mean_atoms",
    "max_atoms",
    "fixed_atoms",
    "detect_efficiency",
    "err_e",
    "err_g",
    "lambda_shape",
    "distance",
    "deadband",
    "control",
    "truth_relaxation",
    "stop_rule",
    "iterations",
    "fidelity_threshold",
    "fidelity_consecutive",
    "probe_samples",
    "probe_phases",
    "tau",
    "max_attempts",
    "seed",
];

pub fn parse_config(path: &Path) -> Result<LoopConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config_str(&text, &path.display().to_string())
}

/// Parses configuration text; `origin` names the source in errors.
pub fn parse_config_str(text: &str, origin: &str) -> Result<LoopConfig> {
    let mut cfg = LoopConfig::default();
    let mut mean_atoms = match cfg.sensor.occupancy {
        Occupancy::Poisson { mean, .. } => mean,
        Occupancy::Fixed(_) => 0.6,
    };
    let mut max_atoms = cfg.sensor.max_atoms();
    let mut fixed_atoms: Option<u32> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, found `{content}`")))?;
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim();
        if value.is_empty() {
            return Err(err(format!("missing value for `{key}`")));
        }
        let real = || parse_real(value).map_err(|m| err(format!("`{key}`: {m}")));
        let count = || {
            value
                .parse::<usize>()
                .map_err(|_| err(format!("`{key}`: expected a non-negative integer, found `{value}`")))
        };
        let list = || parse_list(value).map_err(|m| err(format!("`{key}`: {m}")));
        let positive = |x: f64| {
            if x > 0.0 {
                Ok(x)
            } else {
                Err(err(format!("`{key}` must be positive, found {x}")))
            }
        };
        let probability = |x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(x)
            } else {
                Err(err(format!("`{key}` = {x} is outside [0, 1]")))
            }
        };

        match key.as_str() {
            "dim" => {
                let d = count()?;
                if d < 2 {
                    return Err(err(format!("`dim` must be at least 2, found {d}")));
                }
                cfg.dim = d;
            }
            "t_a" => {
                let x = positive(real()?)?;
                if !x.is_finite() {
                    return Err(err("`t_a` must be finite".into()));
                }
                cfg.t_a = x;
            }
            "t_c" => cfg.t_c = positive(real()?)?,
            "n_th" => {
                let x = real()?;
                if !(x >= 0.0 && x.is_finite()) {
                    return Err(err(format!("`n_th` must be finite and non-negative, found {x}")));
                }
                cfg.n_th = x;
            }
            "phi_0" => cfg.phi_0 = positive(real()?)?,
            "phase_schedule" => {
                let l = list()?;
                if l.is_empty() {
                    return Err(err("`phase_schedule` is empty".into()));
                }
                cfg.phase_schedule = Some(l);
            }
            "n_t" => cfg.n_t = count()?,
            "alpha_max" => {
                let x = positive(real()?)?;
                if x > crate::fock::DISPLACEMENT_RANGE {
                    return Err(err(format!(
                        "`alpha_max` = {x} exceeds the displacement range {}",
                        crate::fock::DISPLACEMENT_RANGE
                    )));
                }
                cfg.alpha_max = x;
            }
            "delay_samples" => cfg.delay_samples = count()?,
            "mean_atoms" => {
                let x = real()?;
                if !(x >= 0.0 && x.is_finite()) {
                    return Err(err(format!("`mean_atoms` must be finite and non-negative, found {x}")));
                }
                mean_atoms = x;
            }
            "max_atoms" => {
                let k = count()?;
                if k == 0 {
                    return Err(err("`max_atoms` must be at least 1".into()));
                }
                max_atoms = k as u32;
            }
            "fixed_atoms" => fixed_atoms = Some(count()? as u32),
            "detect_efficiency" => cfg.sensor.detect_efficiency = probability(real()?)?,
            "err_e" => cfg.sensor.err_e = probability(real()?)?,
            "err_g" => cfg.sensor.err_g = probability(real()?)?,
            "lambda_shape" => cfg.lambda_shape = positive(real()?)?,
            "distance" => {
                cfg.distance = match value {
                    "lyapunov" => DistanceKind::Lyapunov,
                    "indicator" => DistanceKind::Indicator,
                    _ => return Err(err(format!("`distance` must be lyapunov or indicator, found `{value}`"))),
                }
            }
            "deadband" => {
                let x = real()?;
                if !(x >= 0.0) {
                    return Err(err(format!("`deadband` must be non-negative, found {x}")));
                }
                cfg.deadband = x;
            }
            "control" => cfg.control = parse_bool(value).ok_or_else(|| err(format!("`control` must be true or false, found `{value}`")))?,
            "truth_relaxation" => {
                cfg.truth_relaxation = match value {
                    "lindblad" => TruthRelaxation::Lindblad,
                    "jumps" => TruthRelaxation::Jumps,
                    _ => return Err(err(format!("`truth_relaxation` must be lindblad or jumps, found `{value}`"))),
                }
            }
            "stop_rule" => {
                cfg.stop_rule = match value {
                    "fixed_time" => StopRule::FixedTime,
                    "fixed_fidelity" => StopRule::FixedFidelity,
                    _ => return Err(err(format!("`stop_rule` must be fixed_time or fixed_fidelity, found `{value}`"))),
                }
            }
            "iterations" => {
                let k = count()?;
                if k == 0 {
                    return Err(err("`iterations` must be at least 1".into()));
                }
                cfg.iterations = k;
            }
            "fidelity_threshold" => cfg.fidelity_threshold = probability(real()?)?,
            "fidelity_consecutive" => {
                let k = count()?;
                if k == 0 {
                    return Err(err("`fidelity_consecutive` must be at least 1".into()));
                }
                cfg.fidelity_consecutive = k;
            }
            "probe_samples" => cfg.probe_samples = count()?,
            "probe_phases" => cfg.probe_phases = list()?,
            "tau" => cfg.tau = positive(real()?)?,
            "max_attempts" => {
                let k = count()?;
                if k == 0 {
                    return Err(err("`max_attempts` must be at least 1".into()));
                }
                cfg.max_attempts = k;
            }
            "seed" => {
                cfg.seed = value
                    .parse::<u64>()
                    .map_err(|_| err(format!("`seed` must be an unsigned integer, found `{value}`")))?
            }
            _ => return Err(err(format!("unknown key `{key}`"))),
        }
    }

    cfg.sensor.occupancy = match fixed_atoms {
        Some(k) => Occupancy::Fixed(k),
        None => Occupancy::Poisson {
            mean: mean_atoms,
            max_atoms,
        },
    };
    cfg.validate().map_err(|e| Error::Config(format!("{origin}: {e}")))?;
    Ok(cfg)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

/// A real with an optional `*pi`, `pi` or `π` factor.
pub fn parse_real(s: &str) -> std::result::Result<f64, String> {
    let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let s = compact.as_str();
    let lower = s.to_ascii_lowercase();
    let (number, factor) = if let Some(rest) = lower.strip_suffix("*pi") {
        (rest.to_string(), PI)
    } else if let Some(rest) = s.strip_suffix('π') {
        (rest.trim_end_matches('*').to_string(), PI)
    } else if lower == "pi" {
        ("1".to_string(), PI)
    } else {
        (lower.clone(), 1.0)
    };
    let x = match number.as_str() {
        "inf" | "+inf" | "infinity" => f64::INFINITY,
        "-inf" | "-infinity" => f64::NEG_INFINITY,
        "" if factor == PI => 1.0,
        n => n.parse::<f64>().map_err(|_| format!("expected a real number, found `{s}`"))?,
    };
    if x.is_nan() {
        return Err("NaN is not allowed".into());
    }
    Ok(x * factor)
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(parse_real)
        .collect()
}

fn real(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:?}")
    }
}

fn reals(xs: &[f64]) -> String {
    xs.iter().map(|&x| real(x)).collect::<Vec<_>>().join(", ")
}

/// Renders every key; parsing the result reproduces `cfg` exactly.
pub fn render_config(cfg: &LoopConfig) -> String {
    let mut out = String::new();
    let (mean, max, fixed) = match cfg.sensor.occupancy {
        Occupancy::Poisson { mean, max_atoms } => (mean, max_atoms, None),
        Occupancy::Fixed(k) => (0.6, k.max(1), Some(k)),
    };
    let mut put = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    put("dim", cfg.dim.to_string());
    put("t_a", real(cfg.t_a));
    put("t_c", real(cfg.t_c));
    put("n_th", real(cfg.n_th));
    put("phi_0", real(cfg.phi_0));
    if let Some(s) = &cfg.phase_schedule {
        put("phase_schedule", reals(s));
    }
    put("n_t", cfg.n_t.to_string());
    put("alpha_max", real(cfg.alpha_max));
    put("delay_samples", cfg.delay_samples.to_string());
    put("mean_atoms", real(mean));
    put("max_atoms", max.to_string());
    if let Some(k) = fixed {
        put("fixed_atoms", k.to_string());
    }
    put("detect_efficiency", real(cfg.sensor.detect_efficiency));
    put("err_e", real(cfg.sensor.err_e));
    put("err_g", real(cfg.sensor.err_g));
    put("lambda_shape", real(cfg.lambda_shape));
    put(
        "distance",
        match cfg.distance {
            DistanceKind::Lyapunov => "lyapunov",
            DistanceKind::Indicator => "indicator",
        }
        .into(),
    );
    put("deadband", real(cfg.deadband));
    put("control", cfg.control.to_string());
    put(
        "truth_relaxation",
        match cfg.truth_relaxation {
            TruthRelaxation::Lindblad => "lindblad",
            TruthRelaxation::Jumps => "jumps",
        }
        .into(),
    );
    put(
        "stop_rule",
        match cfg.stop_rule {
            StopRule::FixedTime => "fixed_time",
            StopRule::FixedFidelity => "fixed_fidelity",
        }
        .into(),
    );
    put("iterations", cfg.iterations.to_string());
    put("fidelity_threshold", real(cfg.fidelity_threshold));
    put("fidelity_consecutive", cfg.fidelity_consecutive.to_string());
    put("probe_samples", cfg.probe_samples.to_string());
    put("probe_phases", reals(&cfg.probe_phases));
    put("tau", real(cfg.tau));
    put("max_attempts", cfg.max_attempts.to_string());
    put("seed", cfg.seed.to_string());
    out
}
