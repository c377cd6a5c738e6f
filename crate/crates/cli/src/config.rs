use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Deserialize;

use crate::InputError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    LtiHinf,
    Robust,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExampleName {
    Pendulum,
    PowerSystem,
    Saturated,
    Random,
}

/// Flags shared by every command. Each one may also be given in the JSON
/// file passed with `--config` (same names, with underscores); flags win.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Problem document, example document, or a previous result.
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Artifact to write (JSON or CSV depending on the command).
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    /// Seed for randomized examples; replaces the seed stored in the input.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Integral gain scale.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Relative margin used to re-verify the reported gamma.
    #[arg(long)]
    pub gamma_tol: Option<f64>,
    /// Structure mask JSON for synthesis.
    #[arg(long, value_name = "PATH")]
    pub structure: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub t_final: Option<f64>,
    /// Fixed RK4 step instead of the adaptive integrator.
    #[arg(long)]
    pub fixed_step: Option<f64>,
    /// Built-in example to materialize.
    #[arg(long, value_enum)]
    pub name: Option<ExampleName>,
    /// File providing the gain `K` (synthesis result or document).
    #[arg(long, value_name = "PATH")]
    pub gain: Option<PathBuf>,
    /// Error threshold for the settling report.
    #[arg(long)]
    pub settle_tol: Option<f64>,
    #[arg(long)]
    pub omega_min: Option<f64>,
    #[arg(long)]
    pub omega_max: Option<f64>,
    #[arg(long)]
    pub n_omega: Option<usize>,
    /// Pendulum or power-system `beta`.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Uncertain gain of the saturated example.
    #[arg(long)]
    pub delta: Option<f64>,
    #[serde(skip)]
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
}

macro_rules! overlay {
    ($flags:expr, $file:expr, $($field:ident),*) => {
        RunConfig { $($field: $flags.$field.or($file.$field),)* config: $flags.config }
    };
}

impl RunConfig {
    /// Merge the config file (if any) underneath the command-line flags.
    pub fn resolve(self) -> Result<RunConfig, InputError> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| InputError(format!("cannot read config {}: {e}", path.display())))?;
        let file: RunConfig =
            serde_json::from_str(&text).map_err(|e| InputError(format!("config {}: {e}", path.display())))?;
        Ok(overlay!(
            self, file, input, output, seed, eps, gamma_tol, structure, mode, t_final, fixed_step, name, gain,
            settle_tol, omega_min, omega_max, n_omega, beta, delta
        ))
    }

    /// Check every path before any computation starts.
    pub fn validate(&self, needs_input: bool) -> Result<(), InputError> {
        if needs_input && self.input.is_none() {
            return Err(InputError("missing --input".into()));
        }
        for (flag, p) in [
            ("input", &self.input),
            ("structure", &self.structure),
            ("gain", &self.gain),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(InputError(format!("--{flag}: {} is not a readable file", p.display())));
                }
            }
        }
        let out = self
            .output
            .as_ref()
            .ok_or_else(|| InputError("missing --output".into()))?;
        if out.is_dir() {
            return Err(InputError(format!("--output: {} is a directory", out.display())));
        }
        let parent = out
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        if !parent.is_dir() {
            return Err(InputError(format!(
                "--output: directory {} does not exist",
                parent.display()
            )));
        }
        for (flag, v) in [
            ("eps", self.eps),
            ("gamma-tol", self.gamma_tol),
            ("t-final", self.t_final),
            ("fixed-step", self.fixed_step),
            ("settle-tol", self.settle_tol),
            ("omega-min", self.omega_min),
            ("omega-max", self.omega_max),
            ("beta", self.beta),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return Err(InputError(format!("--{flag} must be a positive number, got {v}")));
                }
            }
        }
        if let Some(d) = self.delta {
            if !d.is_finite() {
                return Err(InputError("--delta must be finite".into()));
            }
        }
        if let (Some(lo), Some(hi)) = (self.omega_min, self.omega_max) {
            if lo >= hi {
                return Err(InputError("--omega-min must be below --omega-max".into()));
            }
        }
        if self.n_omega.is_some_and(|n| n < 2) {
            return Err(InputError("--n-omega must be at least 2".into()));
        }
        Ok(())
    }

    pub fn output(&self) -> &Path {
        self.output.as_deref().expect("validated")
    }
}
