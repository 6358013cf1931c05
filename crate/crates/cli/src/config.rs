//! Run configuration: a TOML file plus `--set key=value` overrides, and its
//! translation into a model specification.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use addams_frailty::data::DEFAULT_STRATUM;
use addams_frailty::hazard::PIENTER2_CUTPOINTS;
use addams_frailty::optim::BfgsOptions;
use addams_frailty::simulate::CovariateSpec;
use addams_frailty::*;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset CSV, relative to the config file.
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Confidence level of every reported interval.
    #[serde(default = "default_level")]
    pub level: f64,
    /// Stratum factor column; absent means one level.
    pub stratum: Option<String>,
    /// Optional per-cluster weight column.
    pub weight: Option<String>,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(rename = "unit")]
    pub units: Vec<UnitConfig>,
    #[serde(default)]
    pub frailty: FrailtyConfig,
    /// Parameter names held at their configured values.
    #[serde(default)]
    pub pins: Vec<String>,
    /// Start the optimizer from the configured values instead of data-driven defaults.
    #[serde(default)]
    pub start_from_config: bool,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub analyze: AnalyzeConfig,
    #[serde(default)]
    pub lrt: LrtConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("report")
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineFamily {
    #[default]
    Piecewise,
    Exponential,
    Weibull,
    GeneralizedGamma,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    #[serde(default)]
    pub family: BaselineFamily,
    /// Named cutpoint set; only `pienter2` is known.
    pub preset: Option<String>,
    pub cutpoints: Option<Vec<f64>>,
    /// One baseline per stratum level rather than one shared baseline.
    #[serde(default)]
    pub stratified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitConfig {
    pub name: String,
    #[serde(default)]
    pub covariates: Vec<String>,
    /// Regression coefficients in `covariates` order; zeros when absent.
    pub beta: Option<Vec<f64>>,
    /// Piecewise rates, or `rate`, `shape, scale`, `power, shape, scale`.
    pub baseline: Option<Vec<f64>>,
    /// Per-level baseline parameters for stratified baselines.
    #[serde(default)]
    pub baseline_by_level: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrailtyConfig {
    /// Level every other level is compared against; the first level by default.
    pub reference: Option<String>,
    #[serde(default)]
    pub strata: BTreeMap<String, StratumConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeName {
    #[default]
    Free,
    Gamma,
    Poisson,
    Binomial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default)]
    pub regime: RegimeName,
    /// Trial count of the binomial regime.
    pub trials: Option<u32>,
    /// Estimate `mu` for this level; the reference level is pinned by default.
    pub mu_free: Option<bool>,
    /// Share of simulated clusters in this level.
    pub probability: Option<f64>,
}

fn default_alpha() -> f64 {
    -0.1
}

fn default_gamma() -> f64 {
    0.5
}

fn default_mu() -> f64 {
    1.0
}

impl Default for StratumConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            gamma: default_gamma(),
            mu: default_mu(),
            regime: RegimeName::Free,
            trials: None,
            mu_free: None,
            probability: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub grad_tol: f64,
    pub step_tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let b = BfgsOptions::default();
        Self { grad_tol: b.grad_tol, step_tol: b.step_tol, max_iter: b.max_iter, restarts: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub n_clusters: usize,
    pub monitoring: MonitoringLaw,
    pub shared_monitoring: bool,
    pub covariates: Vec<CovariateSpec>,
    /// File name of the emitted dataset inside the output directory.
    pub file: String,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n_clusters: 1000,
            monitoring: MonitoringLaw::default(),
            shared_monitoring: true,
            covariates: Vec::new(),
            file: "simulated.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeConfig {
    /// Saved fit to analyse; relative to the config file.
    pub model: Option<PathBuf>,
    /// Treat the configured values as a known model instead of fitting.
    pub pinned: bool,
    pub categories: usize,
    /// Trajectory grid; `0, step, ..., grid_max` when absent.
    pub grid: Option<Vec<f64>>,
    pub grid_step: f64,
    pub grid_max: f64,
    /// Covariate values the trajectories are evaluated at.
    pub profile: BTreeMap<String, f64>,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            model: None,
            pinned: false,
            categories: 5,
            grid: None,
            grid_step: 1.0,
            grid_max: 80.0,
            profile: BTreeMap::new(),
        }
    }
}

impl AnalyzeConfig {
    pub fn time_grid(&self) -> Result<Vec<f64>, CliError> {
        if let Some(g) = &self.grid {
            return Ok(g.clone());
        }
        if !(self.grid_step > 0.0) || !(self.grid_max >= 0.0) {
            return Err(CliError::Config("analyze.grid_step must be positive and grid_max non-negative".into()));
        }
        let n = (self.grid_max / self.grid_step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| i as f64 * self.grid_step).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrtConfig {
    /// Regime imposed on every level of the null model.
    pub null_regime: Option<RegimeName>,
    pub null_trials: Option<u32>,
    /// Extra pins of the null model.
    pub null_pins: Vec<String>,
}

impl RunConfig {
    /// Parse `text`, apply `key=value` overrides and validate.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut value: toml::Table = text.parse().map_err(|e| CliError::Config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: RunConfig = toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("config: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    /// Load from a file; relative paths in the config resolve against its directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text, overrides)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let Some(d) = config.dataset.as_mut() {
            resolve(d);
        }
        if let Some(m) = config.analyze.model.as_mut() {
            resolve(m);
        }
        resolve(&mut config.output);
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.units.is_empty() {
            return bad("at least one [[unit]] is required".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("level must lie in (0, 1), got {}", self.level));
        }
        let mut names: Vec<&str> = self.units.iter().map(|u| u.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("unit names must be unique".into());
        }
        if let Some(r) = &self.frailty.reference {
            if !self.frailty.strata.is_empty() && !self.frailty.strata.contains_key(r) {
                return bad(format!("reference level `{r}` is not among the strata"));
            }
        }
        if self.frailty.strata.len() > 1 && self.stratum.is_none() {
            return bad("several strata need a `stratum` column".into());
        }
        if let Some(p) = &self.baseline.preset {
            if p != "pienter2" {
                return bad(format!("unknown baseline preset `{p}`"));
            }
            if self.baseline.family != BaselineFamily::Piecewise {
                return bad("a cutpoint preset needs the piecewise family".into());
            }
        }
        for u in &self.units {
            if let Some(b) = &u.beta {
                if b.len() != u.covariates.len() {
                    return bad(format!("unit `{}`: beta has {} entries for {} covariates", u.name, b.len(), u.covariates.len()));
                }
            }
        }
        Ok(())
    }

    /// Stratum levels with the reference first.
    pub fn levels(&self) -> Vec<(String, StratumConfig)> {
        if self.frailty.strata.is_empty() {
            let name = self.frailty.reference.clone().unwrap_or_else(|| DEFAULT_STRATUM.to_string());
            return vec![(name, StratumConfig::default())];
        }
        let reference = self.reference();
        let mut out = vec![(reference.clone(), self.frailty.strata[&reference].clone())];
        out.extend(self.frailty.strata.iter().filter(|(k, _)| **k != reference).map(|(k, v)| (k.clone(), v.clone())));
        out
    }

    pub fn reference(&self) -> String {
        self.frailty
            .reference
            .clone()
            .or_else(|| self.frailty.strata.keys().next().cloned())
            .unwrap_or_else(|| DEFAULT_STRATUM.to_string())
    }

    pub fn csv_options(&self) -> addams_frailty::data::CsvOptions {
        addams_frailty::data::CsvOptions { stratum_column: self.stratum.clone(), weight_column: self.weight.clone() }
    }

    fn cutpoints(&self) -> Vec<f64> {
        match (&self.baseline.preset, &self.baseline.cutpoints) {
            (Some(_), _) => PIENTER2_CUTPOINTS.to_vec(),
            (None, Some(c)) => c.clone(),
            (None, None) => vec![0.0],
        }
    }

    fn baseline(&self, unit: &UnitConfig, values: Option<&Vec<f64>>) -> Result<Baseline, CliError> {
        let err = |e: HazardError| CliError::Config(format!("unit `{}` baseline: {e}", unit.name));
        let take = |defaults: Vec<f64>| -> Result<Vec<f64>, CliError> {
            match values {
                Some(v) if v.len() != defaults.len() => Err(CliError::Config(format!(
                    "unit `{}`: baseline needs {} values, got {}",
                    unit.name,
                    defaults.len(),
                    v.len()
                ))),
                Some(v) => Ok(v.clone()),
                None => Ok(defaults),
            }
        };
        match self.baseline.family {
            BaselineFamily::Piecewise => {
                let cuts = self.cutpoints();
                let rates = take(vec![0.01; cuts.len()])?;
                Baseline::piecewise(cuts, rates).map_err(err)
            }
            BaselineFamily::Exponential => Baseline::exponential(take(vec![0.01])?[0]).map_err(err),
            BaselineFamily::Weibull => {
                let v = take(vec![1.0, 50.0])?;
                Baseline::weibull(v[0], v[1]).map_err(err)
            }
            BaselineFamily::GeneralizedGamma => {
                let v = take(vec![1.0, 1.0, 50.0])?;
                Baseline::generalized_gamma(v[0], v[1], v[2]).map_err(err)
            }
        }
    }

    /// Model built from the configured values, with a treatment-coded
    /// stratum design.
    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        let levels = self.levels();
        let mut units = Vec::new();
        for u in &self.units {
            let beta = u.beta.clone().unwrap_or_else(|| vec![0.0; u.covariates.len()]);
            let predictor = LinearPredictor::new(u.covariates.clone(), beta)
                .map_err(|e| CliError::Config(format!("unit `{}`: {e}", u.name)))?;
            let baselines = if self.baseline.stratified {
                levels
                    .iter()
                    .map(|(l, _)| self.baseline(u, u.baseline_by_level.get(l).or(u.baseline.as_ref())))
                    .collect::<Result<Vec<_>, _>>()?
            } else {
                vec![self.baseline(u, u.baseline.as_ref())?]
            };
            units.push(UnitModel { name: u.name.clone(), predictor, baselines });
        }
        let (ref_name, ref_cfg) = &levels[0];
        let mut columns = vec!["intercept".to_string()];
        columns.extend(levels[1..].iter().map(|(l, _)| l.clone()));
        let rows = (0..levels.len())
            .map(|i| {
                let mut row = vec![0.0; levels.len()];
                row[0] = 1.0;
                if i > 0 {
                    row[i] = 1.0;
                }
                StratumLevel { name: levels[i].0.clone(), row }
            })
            .collect();
        let coded = |f: fn(&StratumConfig) -> f64| -> Vec<f64> {
            let base = f(ref_cfg);
            std::iter::once(base).chain(levels[1..].iter().map(|(_, c)| f(c) - base)).collect()
        };
        for (l, c) in &levels {
            if !(c.gamma > 0.0) || !(c.mu > 0.0) || !c.alpha.is_finite() {
                return Err(CliError::Config(format!("stratum `{l}`: gamma and mu must be positive, alpha finite")));
            }
        }
        let mu_pinned: Vec<String> = levels
            .iter()
            .enumerate()
            .filter(|(i, (_, c))| !c.mu_free.unwrap_or(*i > 0))
            .map(|(_, (l, _))| l.clone())
            .collect();
        let mut beta0 = coded(|c| c.mu.ln());
        if mu_pinned.contains(ref_name) {
            beta0[0] = 0.0;
        }
        let frailty = FrailtyLink {
            columns,
            levels: rows,
            zeta: coded(|c| c.alpha),
            kappa: coded(|c| c.gamma.ln()),
            beta0,
            mu_pinned,
            reference: ref_name.clone(),
        };
        let regimes = levels
            .iter()
            .map(|(l, c)| regime(c.regime, c.trials).map_err(|m| CliError::Config(format!("stratum `{l}`: {m}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let spec = ModelSpec { units, stratified_baseline: self.baseline.stratified, frailty, regimes };
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }

    /// Pins for fitting: the configured ones plus the reference-mean intercept.
    pub fn fit_pins(&self, spec: &ModelSpec) -> Vec<String> {
        let mut pins = self.pins.clone();
        let link = &spec.frailty;
        if link.is_mu_pinned(&link.reference) && !pins.iter().any(|p| p == "beta0[intercept]") {
            pins.push("beta0[intercept]".into());
        }
        pins
    }

    pub fn fit_options(&self, spec: &ModelSpec) -> FitOptions {
        FitOptions {
            init: if self.start_from_config { Init::Template } else { Init::Default },
            pins: self.fit_pins(spec),
            bfgs: BfgsOptions {
                grad_tol: self.optimizer.grad_tol,
                step_tol: self.optimizer.step_tol,
                max_iter: self.optimizer.max_iter,
                ..BfgsOptions::default()
            },
            restarts: self.optimizer.restarts,
            seed: self.seed,
            level: self.level,
        }
    }

    /// Stratum probabilities in level order for the simulator.
    pub fn stratum_probs(&self) -> Vec<f64> {
        let levels = self.levels();
        if levels.iter().all(|(_, c)| c.probability.is_none()) {
            return Vec::new();
        }
        levels.iter().map(|(_, c)| c.probability.unwrap_or(0.0)).collect()
    }
}

pub fn regime(name: RegimeName, trials: Option<u32>) -> Result<BranchRegime, String> {
    Ok(match name {
        RegimeName::Free => BranchRegime::Free,
        RegimeName::Gamma => BranchRegime::Gamma,
        RegimeName::Poisson => BranchRegime::Poisson,
        RegimeName::Binomial => match trials {
            Some(t) if t >= 1 => BranchRegime::Binomial { trials: t },
            _ => return Err("the binomial regime needs `trials` >= 1".into()),
        },
    })
}

/// Set a dotted `key` to `value`, parsed as a TOML literal or else taken as a string.
fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
    let parsed: toml::Value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let path: Vec<&str> = key.trim().split('.').collect();
    let mut table = root;
    for part in &path[..path.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(CliError::Config(format!("override `{key}`: `{part}` is not a table"))),
        };
    }
    table.insert(path[path.len() - 1].to_string(), parsed);
    Ok(())
}
