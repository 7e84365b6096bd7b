use std::path::Path;

use serde::Deserialize;
use serde_json::Value;
use wigner_clt::chebyshev::{DEFAULT_K, DEFAULT_NODES};
use wigner_clt::ensemble::EnsembleSpec;
use wigner_clt::montecarlo::Statistic;

use crate::error::CliError;

fn default_k() -> usize {
    DEFAULT_K
}

fn default_nodes() -> usize {
    DEFAULT_NODES
}

fn default_p() -> usize {
    4
}

fn default_c() -> f64 {
    0.1
}

/// Run configuration shared by all subcommands. Each subcommand reads the
/// fields it needs and reports the missing ones as configuration errors.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    /// `"goe"`, `"gue"`, or `{beta, diag, offdiag}`.
    pub ensemble: Value,
    pub f: Option<String>,
    #[serde(default)]
    pub gamma: f64,
    pub n: Option<usize>,
    pub n_grid: Option<Vec<usize>>,
    pub replicas: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    pub statistic: Option<Statistic>,
    #[serde(default)]
    pub t_grid: Vec<f64>,
    #[serde(default)]
    pub synthetic: bool,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    /// Green-function check to run; the `--check` flag overrides it.
    pub check: Option<String>,
    /// Spectral parameters as `[re, im]` pairs.
    pub z: Option<Vec<[f64; 2]>>,
    pub delta: Option<f64>,
    /// Exponent `c` of the `S_c` domain.
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default)]
    pub probes: usize,
    #[serde(default = "default_p")]
    pub p: usize,
    pub grid: Option<[usize; 2]>,
    /// Replace the diagonal law by a point mass at zero.
    #[serde(default)]
    pub zero_diagonal: bool,
    pub budget: Option<f64>,
}

pub struct Config {
    pub raw: RawConfig,
    pub ensemble: EnsembleSpec,
    /// Canonical form used for hashing.
    pub canonical: Value,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let value: Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("malformed JSON: {e}")))?;
        let raw: RawConfig = serde_path_to_error::deserialize(value.clone())
            .map_err(|e| CliError::Config(format!("at '{}': {}", e.path(), e.inner())))?;
        let mut ensemble = match &raw.ensemble {
            Value::String(s) => match s.to_ascii_lowercase().as_str() {
                "goe" => EnsembleSpec::goe(),
                "gue" => EnsembleSpec::gue(),
                other => return Err(CliError::Config(format!("at 'ensemble': unknown preset '{other}'"))),
            },
            v => serde_path_to_error::deserialize(v.clone())
                .map_err(|e| CliError::Config(format!("at 'ensemble.{}': {}", e.path(), e.inner())))?,
        };
        if raw.zero_diagonal {
            ensemble = ensemble.with_zero_diagonal();
        }
        Ok(Config {
            raw,
            ensemble,
            canonical: value,
        })
    }

    pub fn f(&self) -> Result<&str, CliError> {
        self.raw.f.as_deref().ok_or_else(|| missing("f"))
    }

    pub fn n(&self) -> Result<usize, CliError> {
        self.raw.n.ok_or_else(|| missing("n"))
    }

    /// `n_grid`, falling back to `[n]`.
    pub fn n_grid(&self) -> Result<Vec<usize>, CliError> {
        match (&self.raw.n_grid, self.raw.n) {
            (Some(g), _) if g.is_empty() => Err(CliError::Config("at 'n_grid': empty grid".into())),
            (Some(g), _) => {
                if g.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(CliError::Config("at 'n_grid': must be strictly increasing".into()));
                }
                Ok(g.clone())
            }
            (None, Some(n)) => Ok(vec![n]),
            (None, None) => Err(missing("n_grid")),
        }
    }

    pub fn replicas(&self) -> Result<usize, CliError> {
        self.raw.replicas.ok_or_else(|| missing("replicas"))
    }

    pub fn z(&self) -> Result<Vec<num_complex::Complex64>, CliError> {
        let z = self.raw.z.as_ref().ok_or_else(|| missing("z"))?;
        if z.is_empty() {
            return Err(CliError::Config("at 'z': no spectral parameters".into()));
        }
        Ok(z.iter().map(|p| num_complex::Complex64::new(p[0], p[1])).collect())
    }

    pub fn delta(&self) -> Result<f64, CliError> {
        self.raw.delta.ok_or_else(|| missing("delta"))
    }
}

fn missing(key: &str) -> CliError {
    CliError::Config(format!("missing required key '{key}'"))
}
