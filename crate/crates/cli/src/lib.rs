//! Batch front end: `fit`, `simulate`, `analyze` and `lrt` driven by a TOML
//! run configuration, writing reports into an output directory.

pub mod config;
pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use addams_frailty::estimation::{frailty_summary, lrt_from_logliks, Domain};
use addams_frailty::*;
use serde_json::{json, Value};
use thiserror::Error;

pub use config::RunConfig;
use report::{cell, estimate, num, Table};

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "ADDAMS_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("data error: {0}")]
    Data(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("optimizer did not converge: {0}")]
    NonConvergence(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) | CliError::Io(_) => 1,
            CliError::NonConvergence(_) => 2,
            CliError::Config(_) => 3,
        }
    }
}

impl From<EstimationError> for CliError {
    fn from(e: EstimationError) -> Self {
        use EstimationError as E;
        match e {
            E::Identifiability(_) | E::UnknownParameter(_) | E::DimensionMismatch { .. } | E::InvalidInitialPoint(_) => {
                CliError::Config(e.to_string())
            }
            E::EmptyData | E::Likelihood(_) => CliError::Data(e.to_string()),
            other => CliError::NonConvergence(other.to_string()),
        }
    }
}

impl From<RiskError> for CliError {
    fn from(e: RiskError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    Simulate,
    Analyze,
    Lrt,
}

/// Run `command` and return the files written.
pub fn run(command: Command, config: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Output { dir: config.output.clone(), files: Vec::new(), failure: None };
    match command {
        Command::Fit => fit_command(config, &mut out)?,
        Command::Simulate => simulate_command(config, &mut out)?,
        Command::Analyze => analyze_command(config, &mut out)?,
        Command::Lrt => lrt_command(config, &mut out)?,
    }
    match out.failure {
        Some(e) => Err(e),
        None => Ok(out.files),
    }
}

/// Size the global worker pool from [`THREADS_ENV`] when set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

struct Output {
    dir: PathBuf,
    files: Vec<PathBuf>,
    /// Error reported after every file has been written.
    failure: Option<CliError>,
}

impl Output {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }

    fn json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        let p = self.path(name);
        report::write_json(&p, value)
    }

    fn table(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        let p = self.path(name);
        table.write(&p)
    }
}

fn load_dataset(config: &RunConfig, spec: &ModelSpec) -> Result<CurrentStatusDataset, CliError> {
    let path = config.dataset.as_ref().ok_or_else(|| CliError::Config("`dataset` is required".into()))?;
    let data = CurrentStatusDataset::read_csv_path(path, &config.csv_options()).map_err(|e| CliError::Data(e.to_string()))?;
    check_columns(spec, &data, config)?;
    Ok(data)
}

/// Units, strata and covariates referenced by the model must exist in the data.
fn check_columns(spec: &ModelSpec, data: &CurrentStatusDataset, config: &RunConfig) -> Result<(), CliError> {
    let levels: Vec<&str> = spec.frailty.levels.iter().map(|l| l.name.as_str()).collect();
    for c in &data.clusters {
        if !levels.contains(&c.stratum.as_str()) {
            let column = config.stratum.as_deref().unwrap_or("(none)");
            return Err(CliError::Config(format!(
                "cluster `{}` has stratum `{}` (column {column}) which is not a configured level",
                c.id, c.stratum
            )));
        }
        for r in &c.records {
            let unit = spec.unit_index(&r.unit).map_err(|_| {
                CliError::Config(format!("cluster `{}`: unit `{}` is not configured", c.id, r.unit))
            })?;
            for cov in spec.units[unit].predictor.covariate_names() {
                if !r.covariates.contains_key(cov) {
                    return Err(CliError::Config(format!("covariate column `{cov}` is missing from the dataset")));
                }
            }
        }
    }
    Ok(())
}

fn dataset_json(config: &RunConfig, data: &CurrentStatusDataset) -> Value {
    let records: usize = data.clusters.iter().map(|c| c.records.len()).sum();
    let mut events: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in data.clusters.iter().flat_map(|c| &c.records) {
        let e = events.entry(r.unit.as_str()).or_default();
        e.0 += 1;
        e.1 += r.event as usize;
    }
    let units: Vec<Value> =
        events.iter().map(|(u, (n, d))| json!({ "unit": u, "records": n, "events": d })).collect();
    json!({
        "path": config.dataset.as_ref().and_then(|p| p.file_name()).map(|f| f.to_string_lossy().to_string()),
        "clusters": data.clusters.len(),
        "records": records,
        "units": units,
    })
}

fn fit_json(model: &FittedModel, level: f64) -> Result<Value, CliError> {
    let r = &model.result;
    let parameters: Vec<Value> = r
        .names
        .iter()
        .zip(&r.estimates)
        .zip(&r.free)
        .map(|((n, e), &free)| {
            let mut v = estimate(e);
            v["name"] = json!(n);
            v["free"] = json!(free);
            v
        })
        .collect();
    let spec = model.spec();
    let mut baselines = Vec::new();
    for (u, unit) in spec.units.iter().enumerate() {
        for (b, base) in unit.baselines.iter().enumerate() {
            let names = base.param_names();
            let values = base.log_params();
            for (i, name) in names.iter().enumerate() {
                let natural = name.trim_start_matches("log_");
                let e = model
                    .estimate(
                        |s: &ModelSpec| s.units[u].baselines[b].log_params().get(i).map(|v| v.exp()),
                        Domain::Positive,
                        level,
                    )
                    .unwrap_or(Estimate::exact(values[i].exp()));
                let mut v = estimate(&e);
                v["unit"] = json!(unit.name);
                if spec.stratified_baseline {
                    v["level"] = json!(spec.frailty.levels[b].name);
                }
                v["parameter"] = json!(natural);
                baselines.push(v);
            }
        }
    }
    let frailty = frailty_summary(model, level)?;
    Ok(json!({
        "parameters": parameters,
        "baseline": baselines,
        "frailty": report::frailty_table(&frailty),
        "loglik": num(r.loglik),
        "aic": num(r.aic),
        "n_free": r.n_free,
        "convergence": {
            "converged": r.converged,
            "termination": r.termination,
            "iterations": r.iterations,
            "gradient_norm": num(r.gradient_norm),
            "clamped_clusters": r.clamped,
            "covariance_available": r.covariance.is_some(),
        },
    }))
}

fn model_json(spec: &ModelSpec) -> Value {
    let levels: Vec<Value> = spec
        .frailty
        .levels
        .iter()
        .zip(&spec.regimes)
        .map(|(l, r)| json!({ "level": l.name, "regime": regime_label(*r), "mu_pinned": spec.frailty.is_mu_pinned(&l.name) }))
        .collect();
    json!({
        "units": spec.units.iter().map(|u| u.name.clone()).collect::<Vec<_>>(),
        "reference": spec.frailty.reference,
        "stratified_baseline": spec.stratified_baseline,
        "levels": levels,
    })
}

fn regime_label(r: BranchRegime) -> String {
    match r {
        BranchRegime::Free => "free".into(),
        BranchRegime::Gamma => "gamma".into(),
        BranchRegime::Poisson => "poisson".into(),
        BranchRegime::Binomial { trials } => format!("binomial({trials})"),
    }
}

fn parameter_table(model: &FittedModel, level: f64) -> Result<(Table, Table), CliError> {
    let r = &model.result;
    let mut params = Table::new(&["name", "free", "estimate", "se", "lo", "hi"]);
    for ((n, e), free) in r.names.iter().zip(&r.estimates).zip(&r.free) {
        params.row(&[n.clone(), free.to_string(), cell(Some(e.value)), cell(e.se), cell(e.ci.map(|c| c.0)), cell(e.ci.map(|c| c.1))]);
    }
    let mut frailty = Table::new(&["level", "quantity", "estimate", "se", "lo", "hi"]);
    for s in frailty_summary(model, level)? {
        let rows = [("alpha", Some(s.alpha)), ("gamma", Some(s.gamma)), ("mu", Some(s.mu)), ("psi", s.psi), ("nu", s.nu), ("pi", s.pi)];
        for (q, e) in rows {
            if let Some(e) = e {
                frailty.row(&[s.level.clone(), q.into(), cell(Some(e.value)), cell(e.se), cell(e.ci.map(|c| c.0)), cell(e.ci.map(|c| c.1))]);
            }
        }
    }
    Ok((params, frailty))
}

fn non_convergence(model: &FittedModel, what: &str) -> Option<CliError> {
    (!model.result.converged).then(|| {
        CliError::NonConvergence(format!(
            "{what}: stopped with {} after {} iterations",
            model.result.termination, model.result.iterations
        ))
    })
}

fn fit_command(config: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let spec = config.model_spec()?;
    let data = load_dataset(config, &spec)?;
    let model = fit(&spec, &data, &config.fit_options(&spec))?;
    let report = json!({
        "command": "fit",
        "dataset": dataset_json(config, &data),
        "model": model_json(&spec),
        "level": num(config.level),
        "fit": fit_json(&model, config.level)?,
    });
    out.json("report.json", &report)?;
    let (params, frailty) = parameter_table(&model, config.level)?;
    out.table("parameters.csv", &params)?;
    out.table("frailty_table.csv", &frailty)?;
    let saved = serde_json::to_string_pretty(&model).map_err(|e| CliError::Io(e.to_string()))?;
    let p = out.path("model.json");
    report::write_file(&p, &(saved + "\n"))?;
    out.failure = non_convergence(&model, "fit");
    Ok(())
}

fn simulate_command(config: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let spec = config.model_spec()?;
    let s = &config.simulate;
    let sim = SimConfig {
        n_clusters: s.n_clusters,
        model: spec.clone(),
        monitoring: s.monitoring.clone(),
        shared_monitoring: s.shared_monitoring,
        stratum_probs: config.stratum_probs(),
        covariates: s.covariates.clone(),
        seed: config.seed,
    };
    let data = generate(&sim).map_err(|e| CliError::Config(e.to_string()))?;
    let p = out.path(&s.file);
    if let Some(dir) = p.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    let opts = addams_frailty::data::CsvOptions {
        stratum_column: config.stratum.clone().or_else(|| (spec.frailty.levels.len() > 1).then(|| "stratum".into())),
        weight_column: None,
    };
    data.write_csv_path(&p, &opts).map_err(|e| CliError::Io(e.to_string()))?;
    let mut ds = dataset_json(config, &data);
    ds["path"] = json!(s.file);
    out.json(
        "report.json",
        &json!({ "command": "simulate", "seed": config.seed, "model": model_json(&spec), "dataset": ds }),
    )
}

fn analysis_model(config: &RunConfig) -> Result<(FittedModel, &'static str, Option<CliError>), CliError> {
    if let Some(path) = &config.analyze.model {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let model: FittedModel =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        return Ok((model, "saved", None));
    }
    let spec = config.model_spec()?;
    if config.analyze.pinned {
        return Ok((FittedModel::pinned(spec)?, "pinned", None));
    }
    let data = load_dataset(config, &spec)?;
    let model = fit(&spec, &data, &config.fit_options(&spec))?;
    let failure = non_convergence(&model, "fit");
    Ok((model, "fitted", failure))
}

fn analyze_command(config: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let (model, source, failure) = analysis_model(config)?;
    let spec = model.spec();
    let level = config.level;
    let grid = config.analyze.time_grid()?;
    let units: Vec<String> = spec.units.iter().map(|u| u.name.clone()).collect();
    let profile = (!config.analyze.profile.is_empty()).then_some(&config.analyze.profile);

    let rc = match rc_table(&model, config.analyze.categories, level) {
        Ok(t) => Some(t),
        Err(RiskError::ContinuousStratum(l)) => {
            eprintln!("note: stratum `{l}` has a continuous frailty law; risk-category tables are skipped");
            None
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(t) = &rc {
        out.table("rc_table.csv", &report::rc_table_csv(t))?;
        out.table("hr_within.csv", &report::hr_within_csv(t))?;
        out.table("hr_across.csv", &report::hr_across_csv(t))?;
    }

    let mut curves = Vec::new();
    for lv in &spec.frailty.levels {
        let tr = trajectories(&model, &lv.name, &units, &grid, profile, level)?;
        let dir = format!("plots/{}", report::slug(&lv.name));
        let mut files = vec![format!("{dir}/rfv.csv"), format!("{dir}/conditional_mean.csv")];
        out.table(&files[0], &report::curve_csv(&tr.rfv.points))?;
        out.table(&files[1], &report::curve_csv(&tr.conditional_mean.points))?;
        for (u, c) in units.iter().zip(&tr.prevalence) {
            let f = format!("{dir}/prevalence_{}.csv", report::slug(u));
            out.table(&f, &report::curve_csv(&c.points))?;
            files.push(f);
        }
        let at = |c: &addams_frailty::risk::TrajectoryCurve| {
            c.points.last().map_or(Value::Null, |p| json!({ "time": num(p.time), "value": num(p.value), "lo": report::opt_num(p.lo), "hi": report::opt_num(p.hi) }))
        };
        curves.push(json!({
            "level": lv.name,
            "files": files,
            "rfv_at_end": at(&tr.rfv),
            "conditional_mean_at_end": at(&tr.conditional_mean),
        }));
    }
    let report = json!({
        "command": "analyze",
        "source": source,
        "model": model_json(&spec),
        "level": num(level),
        "categories": config.analyze.categories,
        "risk_categories": rc.as_ref().map_or(Value::Null, report::rc_json),
        "trajectories": curves,
    });
    out.json("report.json", &report)?;
    out.failure = failure;
    Ok(())
}

fn lrt_command(config: &RunConfig, out: &mut Output) -> Result<(), CliError> {
    let alt_spec = config.model_spec()?;
    let data = load_dataset(config, &alt_spec)?;
    let alt = fit(&alt_spec, &data, &config.fit_options(&alt_spec))?;
    let l = &config.lrt;
    let same = l.null_regime.is_none() && l.null_pins.is_empty();
    let null = if same {
        alt.clone()
    } else {
        let mut spec = alt_spec.clone();
        if let Some(name) = l.null_regime {
            let r = config::regime(name, l.null_trials).map_err(CliError::Config)?;
            spec.regimes = vec![r; spec.regimes.len()];
        }
        let mut opts = config.fit_options(&spec);
        opts.pins.extend(l.null_pins.iter().cloned());
        fit(&spec, &data, &opts)?
    };
    let df = alt.result.n_free as i64 - null.result.n_free as i64;
    let (statistic, p_value) = if same {
        (0.0, 1.0)
    } else if df < 1 {
        return Err(CliError::Config(format!("the null model must have fewer free parameters (difference {df})")));
    } else {
        let t = lrt_from_logliks(null.result.loglik, alt.result.loglik, df as usize)?;
        (t.statistic, t.p_value)
    };
    let summary = |m: &FittedModel| {
        json!({
            "model": model_json(&m.template),
            "loglik": num(m.result.loglik),
            "aic": num(m.result.aic),
            "n_free": m.result.n_free,
            "converged": m.result.converged,
        })
    };
    let report = json!({
        "command": "lrt",
        "dataset": dataset_json(config, &data),
        "null": summary(&null),
        "alternative": summary(&alt),
        "statistic": num(statistic),
        "df": df,
        "p_value": num(p_value),
    });
    out.json("report.json", &report)?;
    out.failure = non_convergence(&null, "null fit").or_else(|| non_convergence(&alt, "alternative fit"));
    Ok(())
}

/// Load the config at `path` with overrides and an optional output directory.
pub fn load_config(path: &Path, overrides: &[String], output: Option<&Path>) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::load(path, overrides)?;
    if let Some(o) = output {
        config.output = o.to_path_buf();
    }
    Ok(config)
}
