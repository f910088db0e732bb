use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// Flags shared by every subcommand; each overrides the config file key of
/// the same name (with `-` replaced by `_`).
#[derive(Args, Debug, Default, Serialize)]
pub struct Overrides {
    /// JSON config file.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Catalog fixture name.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixture: Option<String>,
    /// Inline weight: `const:C`, `pow:A`, `axis-pow:A` or `log:S`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight: Option<String>,
    /// `euclidean` or `heisenberg`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geometry: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    /// Grid cells per axis.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cells: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// Also estimate the A_1 constant.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a1: Option<bool>,
    /// Also run the balance check for the pair (k^{1-p}, k).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub balance: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub balls: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    /// Boundary data: `fixture`, `x2-y2`, `affine`, `radial-sqrt` or `x`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Solution CSV written by `solve`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution: Option<PathBuf>,
    /// Largest oscillation radius.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r0: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub harnack_constant: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Map: `radial-exponential`, `identity`, `diag:a,b,..` or `linear:a,b,..` (row-major).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directions: Option<usize>,
    /// Grid cells per axis for weak residuals; 0 disables them.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_cells: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    /// Write PGM heatmaps.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pgm: Option<bool>,
    /// Probes per axis of the regular probe grid used by `diagnose`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_grid: Option<usize>,
    /// Random (x, ξ) pairs for ellipticity checks.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ellipticity_samples: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subcommand {
    Weights,
    Solve,
    Diagnose,
    Distortion,
    Catalog,
}

/// Fully resolved run configuration, written back as `resolved-config.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub subcommand: Option<Subcommand>,
    pub fixture: Option<String>,
    pub weight: Option<String>,
    pub geometry: String,
    pub dim: Option<usize>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub cells: usize,
    pub mask: degenlap::energy::Mask,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub t: Option<f64>,
    pub a1: Option<bool>,
    pub balance: bool,
    pub balls: usize,
    pub budget: usize,
    pub boundary: Option<String>,
    pub seed: u64,
    pub out: PathBuf,
    pub solution: Option<PathBuf>,
    pub r0: f64,
    pub harnack_constant: f64,
    pub epsilon: f64,
    pub map: Option<String>,
    pub points: usize,
    pub directions: usize,
    pub residual_cells: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub pgm: bool,
    pub probe_grid: Option<usize>,
    pub ellipticity_samples: usize,
    pub probes: Option<Vec<Vec<f64>>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            subcommand: None,
            fixture: None,
            weight: None,
            geometry: "euclidean".into(),
            dim: None,
            lo: None,
            hi: None,
            cells: 64,
            mask: degenlap::energy::Mask::Box,
            p: None,
            q: None,
            t: None,
            a1: None,
            balance: false,
            balls: 1024,
            budget: 1024,
            boundary: None,
            seed: 0,
            out: PathBuf::from("degenlap-out"),
            solution: None,
            r0: 0.25,
            harnack_constant: 1.0,
            epsilon: 0.1,
            map: None,
            points: 1000,
            directions: 64,
            residual_cells: 48,
            tolerance: 1e-10,
            max_iterations: 500,
            pgm: true,
            probe_grid: None,
            ellipticity_samples: 100_000,
            probes: None,
        }
    }
}

fn read_config(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(CliError::Config(format!("config {} is not a JSON object", path.display()))),
        Err(e) => Err(CliError::Config(format!("config {}: {e}", path.display()))),
    }
}

impl RunConfig {
    /// Config file keys, then command-line flags on top.
    pub fn resolve(sub: Subcommand, flags: &Overrides) -> Result<RunConfig, CliError> {
        let mut merged = match &flags.config {
            Some(path) => read_config(path)?,
            None => Map::new(),
        };
        let Value::Object(over) = serde_json::to_value(flags).map_err(|e| CliError::Config(e.to_string()))? else {
            unreachable!("flags serialize to an object")
        };
        merged.extend(over);
        merged.insert("subcommand".into(), serde_json::to_value(sub).expect("subcommand"));
        let cfg: RunConfig =
            serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if let Some(p) = self.p {
            if !(p > 1.0 && p.is_finite()) {
                return bad(format!("p must satisfy 1 < p < inf, got {p}"));
            }
        }
        if let (Some(lo), Some(hi)) = (self.lo, self.hi) {
            if !(lo < hi) {
                return bad(format!("lo must be below hi, got {lo} >= {hi}"));
            }
        }
        if self.fixture.is_some() && self.weight.is_some() {
            return bad("give either a fixture or an inline weight, not both".into());
        }
        if self.cells < 2 {
            return bad(format!("cells must be at least 2, got {}", self.cells));
        }
        if self.balls == 0 || self.budget == 0 {
            return bad("balls and budget must be positive".into());
        }
        if !(self.r0 > 0.0) {
            return bad(format!("r0 must be positive, got {}", self.r0));
        }
        if !matches!(self.geometry.as_str(), "euclidean" | "heisenberg") {
            return bad(format!("geometry must be `euclidean` or `heisenberg`, got `{}`", self.geometry));
        }
        if let Some(f) = &self.fixture {
            if !degenlap::catalog::FIXTURE_NAMES.contains(&f.as_str()) {
                return bad(format!("unknown fixture `{f}`"));
            }
        }
        Ok(())
    }
}
