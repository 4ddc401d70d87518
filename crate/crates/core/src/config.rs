//! Run configuration: defaults, an optional TOML file, and command-line
//! flags, merged in that order (flags win). Every randomized quantity flows
//! from the explicit `seed` — there is no wall-clock fallback — so a config
//! fully determines a run's outputs.

use crate::examples::ExampleId;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path}: {message}")]
    File { path: String, message: String },
    #[error("invalid value for `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("missing `{key}` (required when `example = \"linear\"` parameters are incomplete)")]
    Missing { key: String },
}

fn bad(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::BadValue {
        key: key.into(),
        message: message.into(),
    }
}

/// Observable pair for correlation runs; both coordinates use the same
/// function of the first Ω coordinate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Observable {
    /// F(x) = H(x) = x / L: bounded, nonconstant, finite trace norm.
    #[default]
    XOverL,
    /// The constant 1 — degenerate on purpose: all its covariances vanish,
    /// so a decay run reports insufficient signal.
    One,
}

impl Observable {
    pub fn parse(text: &str) -> Result<Observable, ConfigError> {
        match text {
            "x_over_l" => Ok(Observable::XOverL),
            "one" => Ok(Observable::One),
            other => Err(bad(
                "observable",
                format!("unknown observable {other:?}; choose `x_over_l` or `one`"),
            )),
        }
    }
}

/// A fully resolved run configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub example: ExampleId,
    pub nx: usize,
    pub ny: usize,
    pub samples_per_cell: usize,
    pub trajectories: usize,
    pub lags: Vec<usize>,
    pub seed: u64,
    pub eps0: f64,
    pub observable: Observable,
    pub out: PathBuf,
    pub force: bool,
    pub threads: Option<usize>,
}

/// The optional TOML file: every key optional, unknown keys rejected with
/// their name in the diagnostic.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub example: Option<String>,
    pub a: Option<i64>,
    pub b: Option<i64>,
    #[serde(alias = "L")]
    pub l: Option<f64>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub samples_per_cell: Option<usize>,
    pub trajectories: Option<usize>,
    pub lags: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub eps0: Option<f64>,
    pub observable: Option<String>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &std::path::Path) -> Result<FileConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Flag-level inputs, all optional; [`resolve`] merges them over a
/// [`FileConfig`] and the defaults.
#[derive(Debug, Default)]
pub struct Overrides {
    pub example: Option<String>,
    pub a: Option<i64>,
    pub b: Option<i64>,
    pub l: Option<f64>,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub samples_per_cell: Option<usize>,
    pub trajectories: Option<usize>,
    pub lags: Option<String>,
    pub seed: Option<u64>,
    pub eps0: Option<f64>,
    pub observable: Option<String>,
    pub out: Option<PathBuf>,
    pub force: bool,
    pub threads: Option<usize>,
}

/// Parses a lag list: either comma-separated integers (`"1,2,5"`) or an
/// inclusive range (`"1..20"`). Must be nonempty and strictly increasing.
pub fn parse_lags(text: &str) -> Result<Vec<usize>, ConfigError> {
    let text = text.trim();
    let lags: Vec<usize> = if let Some((lo, hi)) = text.split_once("..") {
        let lo: usize = lo
            .trim()
            .parse()
            .map_err(|e| bad("lags", format!("range start: {e}")))?;
        let hi: usize = hi
            .trim()
            .parse()
            .map_err(|e| bad("lags", format!("range end: {e}")))?;
        if lo > hi {
            return Err(bad("lags", format!("empty range {lo}..{hi}")));
        }
        (lo..=hi).collect()
    } else {
        text.split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad("lags", e.to_string()))?
    };
    validate_lags(&lags)?;
    Ok(lags)
}

fn validate_lags(lags: &[usize]) -> Result<(), ConfigError> {
    if lags.is_empty() {
        return Err(bad("lags", "need at least one lag"));
    }
    if lags.windows(2).any(|w| w[0] >= w[1]) {
        return Err(bad("lags", "must be strictly increasing"));
    }
    Ok(())
}

/// Defaults ← file ← flags, then validation. The default example is the
/// nonlinear one; the linear example needs `--a --b --L` (or file keys).
pub fn resolve(file: FileConfig, flags: Overrides) -> Result<RunConfig, ConfigError> {
    let example_name = flags
        .example
        .or(file.example)
        .unwrap_or_else(|| "nonlinear".into());
    let a = flags.a.or(file.a);
    let b = flags.b.or(file.b);
    let l = flags.l.or(file.l);
    let example = match example_name.as_str() {
        "nonlinear" => {
            if a.is_some() || b.is_some() || l.is_some() {
                return Err(bad(
                    "example",
                    "`nonlinear` takes no --a/--b/--L parameters",
                ));
            }
            ExampleId::Nonlinear
        }
        "linear" => ExampleId::Linear {
            a: a.ok_or(ConfigError::Missing { key: "a".into() })?,
            b: b.ok_or(ConfigError::Missing { key: "b".into() })?,
            l: l.ok_or(ConfigError::Missing { key: "L".into() })?,
        },
        other => {
            return Err(bad(
                "example",
                format!("unknown example {other:?}; choose `nonlinear` or `linear`"),
            ))
        }
    };

    let lags = match flags.lags {
        Some(text) => parse_lags(&text)?,
        None => match file.lags {
            Some(v) => {
                validate_lags(&v)?;
                v
            }
            None => (1..=20).collect(),
        },
    };

    let observable = match flags.observable.or(file.observable) {
        Some(text) => Observable::parse(&text)?,
        None => Observable::default(),
    };

    let cfg = RunConfig {
        example,
        observable,
        nx: flags.nx.or(file.nx).unwrap_or(64),
        ny: flags.ny.or(file.ny).unwrap_or(64),
        samples_per_cell: flags.samples_per_cell.or(file.samples_per_cell).unwrap_or(200),
        trajectories: flags.trajectories.or(file.trajectories).unwrap_or(10_000),
        lags,
        seed: flags.seed.or(file.seed).unwrap_or(0),
        eps0: flags.eps0.or(file.eps0).unwrap_or(0.04),
        out: flags.out.or(file.out).unwrap_or_else(|| PathBuf::from("runs")),
        force: flags.force,
        threads: flags.threads.or(file.threads),
    };

    for (key, v) in [
        ("nx", cfg.nx),
        ("ny", cfg.ny),
        ("samples_per_cell", cfg.samples_per_cell),
        ("trajectories", cfg.trajectories),
    ] {
        if v == 0 {
            return Err(bad(key, "must be positive"));
        }
    }
    if cfg.nx < 2 || cfg.ny < 2 {
        return Err(bad("nx", "grid needs at least 2 cells per axis"));
    }
    if !(cfg.eps0 > 0.0) || !cfg.eps0.is_finite() {
        return Err(bad("eps0", "must be positive and finite"));
    }
    if cfg.threads == Some(0) {
        return Err(bad("threads", "must be positive"));
    }
    Ok(cfg)
}

impl RunConfig {
    /// Canonical identity of the map being run.
    pub fn map_label(&self) -> String {
        match self.example {
            ExampleId::Nonlinear => "nonlinear".into(),
            ExampleId::Linear { a, b, l } => format!("linear a={a} b={b} L={l}"),
        }
    }

    /// Content key for the operator cache: a hash of everything the matrix
    /// bytes depend on (map identity, grid, sampling budget, seed).
    pub fn cache_key(&self) -> String {
        let mut canonical = String::new();
        let _ = write!(
            canonical,
            "map={};nx={};ny={};samples_per_cell={};seed={}",
            self.map_label(),
            self.nx,
            self.ny,
            self.samples_per_cell,
            self.seed
        );
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in &digest[..8] {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }
}
