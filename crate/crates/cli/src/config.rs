//! Versioned JSON experiment configuration.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "experiment": "dyad",
//!   "params": { "gamma": 3.0 },
//!   "dt": 0.005,
//!   "T": 60,
//!   "seed": 1,
//!   "da": { "online": { "policy": { "kind": "adaptive", "b": 400, "delta": 1e-6, "w": 3, "criterion": "lsdf" } } },
//!   "diagnostics": { "kl-vs-equilibrium": true, "lag-trace": true }
//! }
//! ```
//!
//! `params` is checked against the schema of the chosen model; unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use cgnsda_core::em::EmConfig;
use cgnsda_core::models::{DyadParams, EmDyadParams, LdaParams, Linear2dParams};
use cgnsda_core::LagPolicy;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Dyad,
    Linear2d,
    Lda,
    EmDyad,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Dyad => "dyad",
            Experiment::Linear2d => "linear2d",
            Experiment::Lda => "lda",
            Experiment::EmDyad => "em-dyad",
        }
    }
}

/// Which posterior the run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Da {
    Filter,
    Smoother,
    Online { policy: LagPolicy },
}

impl Da {
    pub fn label(&self) -> String {
        match self {
            Da::Filter => "filter".into(),
            Da::Smoother => "smoother".into(),
            Da::Online { policy } => format!("online:{policy}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Diagnostics {
    pub kl_vs_equilibrium: bool,
    pub spectral_radii: bool,
    pub lag_trace: bool,
    pub nrmse: bool,
    pub acf: bool,
    pub kde: bool,
    pub plots: bool,
    /// Trajectories in the equilibrium ensemble.
    pub equilibrium_members: usize,
    /// Length in time units of each equilibrium ensemble member, and of the
    /// long runs behind the em-dyad ACF and PDF comparisons.
    pub equilibrium_length: f64,
    /// Largest ACF lag in time units.
    pub acf_max_lag: f64,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Diagnostics {
            kl_vs_equilibrium: false,
            spectral_radii: false,
            lag_trace: true,
            nrmse: true,
            acf: false,
            kde: false,
            plots: true,
            equilibrium_members: 100,
            equilibrium_length: 500.0,
            acf_max_lag: 5.0,
        }
    }
}

/// Optional overrides of the initial truth state and of the prior.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub x0: Option<Vec<f64>>,
    pub y0: Option<Vec<f64>>,
    /// Prior variance of each hidden component; the prior mean is zero.
    /// Unset means the model default (see `AnyModel::default_prior_cov`).
    pub prior_var: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: Experiment,
    #[serde(default)]
    pub params: serde_json::Value,
    pub dt: f64,
    #[serde(rename = "T", alias = "t_end")]
    pub t_end: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_da")]
    pub da: Da,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub diagnostics: Diagnostics,
    #[serde(default)]
    pub init: InitConfig,
    /// Online EM settings, used by `em-dyad` only.
    #[serde(default)]
    pub em: Option<EmConfig>,
}

fn default_da() -> Da {
    Da::Smoother
}

/// Model parameters resolved against the experiment's schema.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Dyad(DyadParams),
    Linear2d(Linear2dParams),
    Lda(LdaParams),
    EmDyad(EmDyadParams),
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(CliError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(CliError::Config(format!("T must be positive, got {}", self.t_end)));
        }
        let ratio = self.t_end / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(CliError::Config(format!("T / dt = {ratio} is not an integer")));
        }
        if let Da::Online { policy } = &self.da {
            policy.validate()?;
        }
        let d = &self.diagnostics;
        if d.kl_vs_equilibrium && (d.equilibrium_members == 0 || !(d.equilibrium_length > 0.0)) {
            return Err(CliError::Config("the equilibrium ensemble must be non-empty".into()));
        }
        if !(d.acf_max_lag > 0.0) {
            return Err(CliError::Config("acf-max-lag must be positive".into()));
        }
        if self.init.prior_var.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
            return Err(CliError::Config("init.prior_var must be positive".into()));
        }
        if let Some(em) = &self.em {
            if self.experiment != Experiment::EmDyad {
                return Err(CliError::Config("the em section applies to em-dyad only".into()));
            }
            em.validate()?;
        }
        self.model_params()?;
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn model_params(&self) -> CliResult<ModelParams> {
        fn parse<P: serde::de::DeserializeOwned + Default>(v: &serde_json::Value, what: &str) -> CliResult<P> {
            if v.is_null() {
                return Ok(P::default());
            }
            serde_json::from_value(v.clone()).map_err(|e| CliError::Config(format!("invalid {what} params: {e}")))
        }
        let p = match self.experiment {
            Experiment::Dyad => {
                let p: DyadParams = parse(&self.params, "dyad")?;
                p.validate()?;
                ModelParams::Dyad(p)
            }
            Experiment::Linear2d => {
                let p: Linear2dParams = parse(&self.params, "linear2d")?;
                p.validate()?;
                ModelParams::Linear2d(p)
            }
            Experiment::Lda => {
                let p: LdaParams = parse(&self.params, "lda")?;
                p.validate()?;
                ModelParams::Lda(p)
            }
            Experiment::EmDyad => {
                let p: EmDyadParams = parse(&self.params, "em-dyad")?;
                p.validate()?;
                ModelParams::EmDyad(p)
            }
        };
        Ok(p)
    }

    pub fn em_config(&self) -> EmConfig {
        self.em.clone().unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_dyad_config() {
        let c = ExperimentConfig::from_json(r#"{"schema_version": 1, "experiment": "dyad", "dt": 0.005, "T": 1}"#).unwrap();
        assert_eq!(c.n_steps(), 200);
        assert_eq!(c.da, Da::Smoother);
        assert_eq!(c.model_params().unwrap(), ModelParams::Dyad(DyadParams::default()));
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            r#"{"schema_version": 1, "experiment": "dyad", "dt": 0, "T": 1}"#,
            r#"{"schema_version": 1, "experiment": "dyad", "dt": 0.003, "T": 1}"#,
            r#"{"schema_version": 2, "experiment": "dyad", "dt": 0.005, "T": 1}"#,
            r#"{"schema_version": 1, "experiment": "dyad", "dt": 0.005, "T": 1, "params": {"gama": 1}}"#,
            r#"{"schema_version": 1, "experiment": "swirl", "dt": 0.005, "T": 1}"#,
            r#"{"schema_version": 1, "experiment": "dyad", "dt": 0.005, "T": 1, "da": {"online": {"policy": {"kind": "adaptive", "b": 10, "delta": 2.0}}}}"#,
        ];
        for text in bad {
            let e = ExperimentConfig::from_json(text).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn online_policy_round_trips() {
        let text = r#"{"schema_version": 1, "experiment": "lda", "dt": 0.005, "T": 2,
            "params": {"k_max": 1, "n_tracers": 6},
            "da": {"online": {"policy": {"kind": "fixed", "lag": 20}}}}"#;
        let c = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(c.da, Da::Online { policy: LagPolicy::Fixed { lag: 20 } });
        let back = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
