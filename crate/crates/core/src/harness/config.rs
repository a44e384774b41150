use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{field}: {msg}")]
    Range { field: &'static str, msg: String },
    #[error("parameters require tau > r and rho > r + tau (r = {r}, tau = {tau}, rho = {rho})")]
    Parameters { r: f64, tau: f64, rho: f64 },
    #[error("config parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    RandomAtomic { atoms: usize },
    CommonAtoms { atoms: usize, common: usize },
    DoublingLike,
    CantorLike,
    File { path: PathBuf },
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec::RandomAtomic { atoms: 24 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    pub monotonicity: f64,
    pub halfspace: f64,
    pub functional: f64,
    pub energy_a2: f64,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets { monotonicity: 100.0, halfspace: 1e3, functional: 100.0, energy_a2: 8.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dim: usize,
    pub alpha: f64,
    pub eps: f64,
    /// Deep-embedding depth `ρ`.
    pub rho: i32,
    /// Optional `(r, τ, ρ)` parameter triple for the straddling scheme.
    pub r_param: Option<f64>,
    pub tau_param: Option<f64>,
    pub rho_param: Option<f64>,
    /// Finest level `M` (atom resolution).
    pub resolution: i32,
    /// Coarsest level `N`.
    pub top_level: i32,
    pub c0: f64,
    pub gamma: f64,
    pub big_gamma: f64,
    pub c_en: f64,
    pub delta_rh: f64,
    pub trunc_delta: f64,
    pub trunc_r: f64,
    pub grid_samples: usize,
    pub energy_depth: Option<i32>,
    pub whitney_gamma: f64,
    pub bad_trials: usize,
    pub bad_levels: Vec<i32>,
    pub seed: u64,
    pub budgets: Budgets,
    pub generator: GeneratorSpec,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dim: 1,
            alpha: 0.0,
            eps: 0.25,
            rho: 2,
            r_param: None,
            tau_param: None,
            rho_param: None,
            resolution: 6,
            top_level: 0,
            c0: 4.0,
            gamma: 0.5,
            big_gamma: 4.0,
            c_en: 4.0,
            delta_rh: 0.05,
            trunc_delta: 1e-3,
            trunc_r: 16.0,
            grid_samples: 8,
            energy_depth: None,
            whitney_gamma: 2.0,
            bad_trials: 2000,
            bad_levels: vec![4, 6, 8],
            seed: 1,
            budgets: Budgets::default(),
            generator: GeneratorSpec::default(),
            output: None,
        }
    }
}

fn range(field: &'static str, ok: bool, msg: impl Into<String>) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Range { field, msg: msg.into() })
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, ConfigError> {
        let c: RunConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse { line: e.line(), msg: e.to_string() })?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = self.dim as f64;
        range("dim", self.dim == 1 || self.dim == 2, "must be 1 or 2")?;
        range("alpha", self.alpha >= 0.0 && self.alpha < n.min(1.0), "must lie in [0, min(n, 1))")?;
        range("eps", self.eps > 0.0 && self.eps < 1.0, "must lie in (0, 1)")?;
        range("rho", self.rho >= 1, "must be at least 1")?;
        range("resolution", (1..=12).contains(&self.resolution), "must lie in 1..=12")?;
        range("top_level", self.top_level < self.resolution && self.top_level >= -4, "must satisfy -4 <= N < M")?;
        range("c0", self.c0 > 1.0, "must exceed 1")?;
        range("gamma", self.gamma > 0.0 && self.gamma < 1.0, "must lie in (0, 1)")?;
        range("big_gamma", self.big_gamma > 1.0, "must exceed 1")?;
        range("c_en", self.c_en > 1.0, "must exceed 1")?;
        range("delta_rh", self.delta_rh > 0.0, "must be positive")?;
        range("trunc_delta", self.trunc_delta > 0.0 && self.trunc_delta < self.trunc_r, "need 0 < delta < R")?;
        range("grid_samples", self.grid_samples >= 1, "must be at least 1")?;
        range("energy_depth", self.energy_depth.map_or(true, |d| d >= 1), "must be at least 1")?;
        range("whitney_gamma", self.whitney_gamma > 1.0 && self.whitney_gamma <= 5.0, "must lie in (1, 5]")?;
        range("bad_levels", self.bad_levels.iter().all(|&k| (1..=16).contains(&k)), "levels must lie in 1..=16")?;
        if let (Some(r), Some(tau), Some(rho)) = (self.r_param, self.tau_param, self.rho_param) {
            if !(tau > r && rho > r + tau) {
                return Err(ConfigError::Parameters { r, tau, rho });
            }
        }
        if let GeneratorSpec::CommonAtoms { atoms, common } = self.generator {
            range("generator.common", common <= atoms, "cannot exceed atoms")?;
        }
        Ok(())
    }
}
