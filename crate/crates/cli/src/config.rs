//! Run configuration: a flat JSON object with typed keys.
//!
//! Rates and times are given in `time_unit` and converted to the per-hour
//! scale used by the library. Calibration works on the data's own
//! per-second scale.

use std::path::{Path, PathBuf};

use latent_alpha::calibration::optim::NelderMeadOptions;
use latent_alpha::calibration::EmOptions;
use latent_alpha::control::{Alpha, CostParams};
use latent_alpha::simulator::{JumpScheme, LatentScenario, StudyConfig};
use latent_alpha::{ChainPath, LatentChainSpec, ModelSpec};
use nalgebra::DMatrix;
use serde::Deserialize;

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ou,
    Jump,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    #[default]
    Hour,
    Second,
}

impl TimeUnit {
    /// Units of this kind per hour.
    pub fn per_hour(self) -> f64 {
        match self {
            TimeUnit::Hour => 1.0,
            TimeUnit::Second => 3600.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    #[default]
    Exact,
    Bernoulli,
}

/// A number, or the string `"infinite"`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum AlphaValue {
    Number(f64),
    Word(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<ModelKind>,
    #[serde(default)]
    pub time_unit: TimeUnit,

    pub theta: Option<Vec<f64>>,
    /// Generator rows; a frozen chain when absent.
    pub generator: Option<Vec<Vec<f64>>>,
    pub prior: Option<Vec<f64>>,
    pub kappa: Option<f64>,
    pub sigma: Option<f64>,
    pub mu: Option<f64>,

    pub a: Option<f64>,
    /// Tick size of the jump model; also the calibration tick by default.
    pub b: Option<f64>,
    pub beta: Option<f64>,
    pub phi: Option<f64>,
    pub alpha: Option<AlphaValue>,
    pub horizon: Option<f64>,
    pub steps: Option<usize>,
    pub f0: Option<f64>,
    pub n_init: Option<f64>,

    /// Fixed latent path: switch times and the 1-based states between them.
    /// Each path samples its own latent trajectory when absent.
    pub latent_jump_times: Option<Vec<f64>>,
    pub latent_states: Option<Vec<usize>>,
    #[serde(default)]
    pub jump_scheme: SchemeName,

    #[serde(default = "defaults::n_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::grid_slices")]
    pub grid_slices: usize,
    #[serde(default = "defaults::bins")]
    pub grid_bins: usize,
    #[serde(default = "defaults::bins")]
    pub histogram_bins: usize,
    #[serde(default = "defaults::sample_paths")]
    pub sample_paths: usize,
    pub out: Option<PathBuf>,

    pub tick: Option<f64>,
    #[serde(default = "defaults::states_min")]
    pub states_min: usize,
    #[serde(default = "defaults::states_max")]
    pub states_max: usize,
    #[serde(default = "defaults::em_rel_tol")]
    pub em_rel_tol: f64,
    #[serde(default = "defaults::em_max_iter")]
    pub em_max_iter: usize,
}

mod defaults {
    pub fn n_paths() -> usize {
        1000
    }
    pub fn grid_slices() -> usize {
        60
    }
    pub fn bins() -> usize {
        50
    }
    pub fn sample_paths() -> usize {
        5
    }
    pub fn states_min() -> usize {
        1
    }
    pub fn states_max() -> usize {
        3
    }
    pub fn em_rel_tol() -> f64 {
        1e-8
    }
    pub fn em_max_iter() -> usize {
        500
    }
}

fn missing(key: &str) -> CliError {
    CliError::Config(format!("missing key `{key}`"))
}

fn need<T: Clone>(v: &Option<T>, key: &str) -> CliResult<T> {
    v.clone().ok_or_else(|| missing(key))
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn scale(&self) -> f64 {
        self.time_unit.per_hour()
    }

    pub fn model_kind(&self) -> CliResult<ModelKind> {
        need(&self.model, "model")
    }

    /// Latent chain with the generator in per-hour units.
    pub fn chain(&self) -> CliResult<LatentChainSpec> {
        let theta = need(&self.theta, "theta")?;
        let j = theta.len();
        let prior = match &self.prior {
            Some(p) => p.clone(),
            None => vec![1.0 / j as f64; j],
        };
        let generator = match &self.generator {
            None => DMatrix::zeros(j, j),
            Some(rows) => {
                if rows.len() != j || rows.iter().any(|r| r.len() != j) {
                    return Err(CliError::Config(format!("generator must be {j}x{j}")));
                }
                DMatrix::from_fn(j, j, |r, c| rows[r][c] * self.scale())
            }
        };
        Ok(LatentChainSpec::new(theta, generator, prior)?)
    }

    pub fn model_spec(&self) -> CliResult<ModelSpec> {
        let chain = self.chain()?;
        let kappa = need(&self.kappa, "kappa")? * self.scale();
        let spec = match self.model_kind()? {
            ModelKind::Ou => ModelSpec::Ou {
                chain,
                kappa,
                sigma: need(&self.sigma, "sigma")? * self.scale().sqrt(),
            },
            ModelKind::Jump => ModelSpec::Jump {
                chain,
                mu: need(&self.mu, "mu")? * self.scale(),
                kappa,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Horizon in hours.
    pub fn horizon_hours(&self) -> CliResult<f64> {
        Ok(need(&self.horizon, "horizon")? / self.scale())
    }

    pub fn dt_hours(&self) -> CliResult<f64> {
        let steps = need(&self.steps, "steps")?;
        if steps == 0 {
            return Err(CliError::Config("`steps` must be positive".into()));
        }
        Ok(self.horizon_hours()? / steps as f64)
    }

    pub fn cost_params(&self) -> CliResult<CostParams> {
        let s = self.scale();
        let alpha = match need(&self.alpha, "alpha")? {
            AlphaValue::Number(x) => Alpha::Finite(x),
            AlphaValue::Word(w) if w == "infinite" => Alpha::Infinite,
            AlphaValue::Word(w) => {
                return Err(CliError::Config(format!(
                    "`alpha` must be a number or \"infinite\", got \"{w}\""
                )))
            }
        };
        let params = CostParams {
            a: need(&self.a, "a")? / s,
            b: self.b.unwrap_or(0.0),
            beta: need(&self.beta, "beta")?,
            phi: need(&self.phi, "phi")? * s,
            alpha,
            horizon: self.horizon_hours()?,
            n_init: need(&self.n_init, "n_init")?,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn latent(&self) -> CliResult<LatentScenario> {
        match (&self.latent_jump_times, &self.latent_states) {
            (None, None) => Ok(LatentScenario::Sampled),
            (Some(times), Some(states)) => {
                if states.contains(&0) {
                    return Err(CliError::Config("`latent_states` are 1-based".into()));
                }
                let times = times.iter().map(|t| t / self.scale()).collect();
                let states = states.iter().map(|s| s - 1).collect();
                let path = ChainPath::new(self.horizon_hours()?, times, states)?;
                let j = need(&self.theta, "theta")?.len();
                if path.states().iter().any(|&s| s >= j) {
                    return Err(CliError::Config(format!(
                        "`latent_states` must lie in 1..={j}"
                    )));
                }
                Ok(LatentScenario::Fixed(path))
            }
            _ => Err(CliError::Config(
                "`latent_jump_times` and `latent_states` must be given together".into(),
            )),
        }
    }

    pub fn study_config(&self) -> CliResult<StudyConfig> {
        let model = self.model_spec()?;
        let mut costs = self.cost_params()?;
        if let ModelKind::Jump = self.model_kind()? {
            costs.b = need(&self.b, "b")?;
            if !(costs.b > 0.0) {
                return Err(CliError::Config("`b` must be positive".into()));
            }
        }
        Ok(StudyConfig {
            model,
            costs,
            f0: need(&self.f0, "f0")?,
            dt: self.dt_hours()?,
            latent: self.latent()?,
            jump_scheme: match self.jump_scheme {
                SchemeName::Exact => JumpScheme::Exact,
                SchemeName::Bernoulli => JumpScheme::Bernoulli,
            },
            grid_slices: self.grid_slices,
            grid_bins: self.grid_bins,
            histogram_bins: self.histogram_bins,
            sample_paths: self.sample_paths,
        })
    }

    /// Calibration tick size: `tick`, else `b`.
    pub fn calibration_tick(&self) -> CliResult<f64> {
        self.tick.or(self.b).ok_or_else(|| missing("tick"))
    }

    pub fn em_options(&self) -> EmOptions {
        EmOptions {
            max_iter: self.em_max_iter,
            rel_tol: self.em_rel_tol,
            optimizer: NelderMeadOptions::default(),
        }
    }
}

/// Parses `"2"`, `"1..3"`, `"1..=3"` or `"1,2,4"`.
pub fn parse_states(text: &str) -> CliResult<Vec<usize>> {
    let bad = || CliError::Config(format!("cannot parse state range \"{text}\""));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let states: Vec<usize> = if let Some((lo, hi)) = text.split_once("..=") {
        (num(lo)?..=num(hi)?).collect()
    } else if let Some((lo, hi)) = text.split_once("..") {
        (num(lo)?..=num(hi)?).collect()
    } else {
        text.split(',').map(num).collect::<CliResult<_>>()?
    };
    if states.is_empty() || states.contains(&0) {
        return Err(bad());
    }
    Ok(states)
}
