//! Datasets, experiment orchestration and report files.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use log::{info, warn};
use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::analysis::{max_momentum_eta0, momentum_gamma, ProblemConstants};
use crate::error::{domain, Error, Result};
use crate::influence::{analytic_gd_influence, analytic_momentum_influence, dynamic_advantage};
use crate::models::{Dataset, LossKind, LossModel};
use crate::optimizer::{self, NoiseMode, RunConfig, StepSize};
use crate::schedules::{self, NoiseSchedule, Recipe};
use crate::{seed, stats};

/// Two unit-spread Gaussian clusters centered at `±(distance/2) u` for a
/// random unit vector `u`. Labels alternate `+1, -1`.
pub fn gen_synthetic(d: usize, n: usize, distance: f64, seed: u64) -> Result<Dataset> {
    if d == 0 || n < 2 || !n.is_multiple_of(2) {
        return Err(domain(format!("need D >= 1 and an even N >= 2, got D = {d}, N = {n}")));
    }
    if !(distance >= 0.0) {
        return Err(domain(format!("cluster distance must be non-negative, got {distance}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Array1<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = u.dot(&u).sqrt();
    u /= norm;
    let mut x = Array2::zeros((n, d));
    let mut y = Array1::zeros(n);
    for (i, mut row) in x.outer_iter_mut().enumerate() {
        let label = if i % 2 == 0 { 1.0 } else { -1.0 };
        y[i] = label;
        for (k, v) in row.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = label * distance / 2.0 * u[k] + z;
        }
    }
    Dataset::new(x, Some(y))
}

/// Standardizes every column, then rescales all rows by one constant so the
/// largest row norm equals `target_max_norm`.
pub fn preprocess(data: &Dataset, target_max_norm: f64) -> Result<Dataset> {
    if !(target_max_norm > 0.0) || !target_max_norm.is_finite() {
        return Err(domain(format!("target norm must be positive, got {target_max_norm}")));
    }
    let mut x = data.features().clone();
    let n = x.nrows() as f64;
    for (j, mut col) in x.axis_iter_mut(Axis(1)).enumerate() {
        let mean = col.sum() / n;
        col -= mean;
        let sd = (col.dot(&col) / n).sqrt();
        if sd > 0.0 {
            col /= sd;
        } else {
            warn!("column {} has zero variance; left centered", j + 1);
        }
    }
    let max = x.outer_iter().map(|r| r.dot(&r).sqrt()).fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(domain("every feature is constant; cannot scale rows"));
    }
    x *= target_max_norm / max;
    data.with_features(x)
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Reads a dataset with header `x1,...,xD[,label]`.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => return Err(parse_err(1, "missing header")),
            Some((i, line)) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break (i + 1, line);
                }
            }
        }
    };
    let names: Vec<&str> = header.1.split(',').map(str::trim).collect();
    let has_label = names.last() == Some(&"label");
    let d = names.len() - usize::from(has_label);
    if d == 0 {
        return Err(parse_err(header.0, "header names no feature columns"));
    }
    for (k, name) in names[..d].iter().enumerate() {
        if *name != format!("x{}", k + 1) {
            return Err(parse_err(header.0, format!("expected column 'x{}', found '{name}'", k + 1)));
        }
    }
    let width = names.len();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != width {
            return Err(parse_err(lineno, format!("expected {width} fields, found {}", cells.len())));
        }
        for (k, cell) in cells.iter().enumerate() {
            let v: f64 =
                cell.parse().map_err(|_| parse_err(lineno, format!("field {} is not a number: '{cell}'", k + 1)))?;
            if k < d {
                values.push(v);
            } else {
                if v != 1.0 && v != -1.0 {
                    return Err(parse_err(lineno, format!("label must be 1 or -1, found '{cell}'")));
                }
                labels.push(v);
            }
        }
    }
    let n = values.len() / d;
    if n == 0 {
        return Err(parse_err(header.0 + 1, "no data rows"));
    }
    let x = Array2::from_shape_vec((n, d), values).map_err(|e| domain(e.to_string()))?;
    Dataset::new(x, has_label.then(|| Array1::from(labels)))
}

/// Writes a dataset in the format read by [`load_csv`].
pub fn write_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=data.d()).map(|k| format!("x{k}")).collect();
    if data.labels().is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for (i, row) in data.features().outer_iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if let Some(y) = data.labels() {
            rec.push(y[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic {
        #[serde(rename = "D")]
        d: usize,
        #[serde(rename = "N")]
        n: usize,
        #[serde(default = "default_distance")]
        distance: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_distance() -> f64 {
    10.0
}

impl DataSource {
    /// Raw, unscaled data.
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Csv(p) => load_csv(p),
            DataSource::Synthetic { d, n, distance, seed } => gen_synthetic(*d, *n, *distance, *seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EtaPolicy {
    Fixed(f64),
    /// `"default"`: `1/M`, or `eta0 / (2M)` with momentum.
    Named(NamedEta),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedEta {
    Default,
}

/// Starting point of every run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitPolicy {
    Zero,
    /// `theta_1 ~ N(0, scale^2 / D I)`, drawn once per experiment from the
    /// base seed. Independent of the data.
    Random {
        scale: f64,
    },
}

fn de_budget<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(de)? {
        Raw::Num(v) => Ok(v),
        Raw::Text(s) if matches!(s.to_ascii_lowercase().as_str(), "inf" | "infinity") => Ok(f64::INFINITY),
        Raw::Text(s) => Err(serde::de::Error::custom(format!("budget must be a number or \"inf\", got '{s}'"))),
    }
}

fn default_scale() -> f64 {
    10.0
}
#[allow(clippy::approx_constant)]
fn default_r() -> f64 {
    0.3927
}
fn default_clip() -> Option<f64> {
    Some(4.0)
}
fn default_eta() -> EtaPolicy {
    EtaPolicy::Fixed(0.1)
}
fn default_recipes() -> Vec<Recipe> {
    vec![Recipe::Uniform, Recipe::GdClosedForm]
}
fn default_t_min() -> usize {
    1
}
fn default_t_max() -> usize {
    100
}
fn default_repeats() -> usize {
    100
}
fn default_init() -> InitPolicy {
    InitPolicy::Zero
}

/// Experiment description, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: LossKind,
    pub data: DataSource,
    #[serde(default = "default_scale")]
    pub data_scale: f64,
    /// Budget in R-units; `"inf"` runs without noise.
    #[serde(rename = "R", default = "default_r", deserialize_with = "de_budget")]
    pub r: f64,
    #[serde(default = "default_clip")]
    pub clip: Option<f64>,
    #[serde(default = "default_eta")]
    pub eta: EtaPolicy,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "default_recipes")]
    pub recipes: Vec<Recipe>,
    #[serde(rename = "T_min", default = "default_t_min")]
    pub t_min: usize,
    #[serde(rename = "T_max", default = "default_t_max")]
    pub t_max: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_init")]
    pub init: InitPolicy,
    /// Contraction factor override; required for shaped recipes on logistic models.
    #[serde(default)]
    pub gamma: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(domain("repeats must be at least 1"));
        }
        if self.t_min == 0 || self.t_max < self.t_min {
            return Err(domain(format!("bad T grid {}..={}", self.t_min, self.t_max)));
        }
        if !(self.data_scale > 0.0) {
            return Err(domain("data_scale must be positive"));
        }
        if !(self.r > 0.0) {
            return Err(domain("R must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(domain("beta must lie in [0, 1)"));
        }
        if self.recipes.is_empty() {
            return Err(domain("no recipes to compare"));
        }
        Ok(())
    }

    pub fn noise_free(&self) -> bool {
        self.r.is_infinite()
    }
}

/// Everything derived from a config before any training.
#[derive(Debug, Clone)]
pub struct Setup {
    pub model: LossModel,
    pub smoothness: f64,
    pub eta: f64,
    /// Contraction of the GD iteration at `eta`, when known.
    pub gamma: Option<f64>,
    /// Contraction used for momentum schedules.
    pub momentum_gamma: Option<f64>,
    /// `alpha` of the analytic profile, when the problem constants are known.
    pub alpha: Option<f64>,
    pub init: Array1<f64>,
    /// Minimum of the quadratic loss.
    pub f_star: Option<f64>,
}

/// Contraction of GD with step `eta` under `M`-smoothness and `mu`-PL:
/// `1 - 2 mu eta (1 - M eta / 2)`. Equals `1 - mu/M` at `eta = 1/M`.
pub fn contraction(mu: f64, m: f64, eta: f64) -> f64 {
    1.0 - 2.0 * mu * eta * (1.0 - m * eta / 2.0)
}

pub fn setup(config: &ExperimentConfig, data: Arc<Dataset>) -> Result<Setup> {
    let model = LossModel::new(config.model, data, config.clip)?;
    let smoothness = model.smoothness_bound()?;
    let d = model.dim();
    let init = match config.init {
        InitPolicy::Zero => Array1::zeros(d),
        InitPolicy::Random { scale } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::combine(&[config.base_seed, seed::label_hash("init")]));
            let s = scale / (d as f64).sqrt();
            (0..d)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    s * z
                })
                .collect()
        }
    };
    let (spectrum, f_star) = match config.model {
        LossKind::Quadratic => (Some(model.estimate_spectrum()?), Some(model.quadratic_optimum()?.1)),
        LossKind::Logistic => (None, None),
    };
    let momentum = config.beta > 0.0;
    let (eta, eta0) = match config.eta {
        EtaPolicy::Fixed(e) => (e, momentum.then_some(2.0 * smoothness * e)),
        EtaPolicy::Named(NamedEta::Default) => {
            if momentum {
                let g = config.gamma.or(spectrum.map(|s| s.gamma()));
                let eta0 = match g {
                    Some(g) if g > 0.0 && g != config.beta => max_momentum_eta0(g, config.beta)?,
                    _ => 1.0,
                };
                (eta0 / (2.0 * smoothness), Some(eta0))
            } else {
                (1.0 / smoothness, None)
            }
        }
    };
    let gamma = config.gamma.or_else(|| spectrum.map(|s| contraction(s.mu_min, s.m_max, eta)));
    let momentum_gamma = match (config.gamma, spectrum, eta0) {
        (Some(g), _, _) => Some(g),
        (None, Some(s), Some(e0)) => Some(momentum_gamma(s.kappa(), e0)),
        _ => None,
    };
    let alpha = match (spectrum, f_star, model.lipschitz_bound()) {
        (Some(s), Some(fs), Ok(g)) if config.r.is_finite() => {
            let gap = model.loss(init.view()) - fs;
            ProblemConstants::derive(g, s.m_max, s.mu_min, d as f64, model.data().n() as f64, config.r, gap)
                .ok()
                .map(|c| c.alpha)
        }
        _ => None,
    };
    Ok(Setup { model, smoothness, eta, gamma, momentum_gamma, alpha, init, f_star })
}

fn need_gamma(g: Option<f64>, recipe: Recipe) -> Result<f64> {
    match g {
        Some(g) if g > 0.0 && g < 1.0 => Ok(g),
        Some(g) => Err(domain(format!("{recipe} needs a contraction factor in (0, 1), got {g}"))),
        None => Err(Error::Unsupported(format!("{recipe} needs a contraction factor; set \"gamma\""))),
    }
}

/// Schedule for `recipe` with `t` steps. In noise-free mode the shape is
/// built against a placeholder budget of 1.
pub fn build_schedule(recipe: Recipe, t: usize, config: &ExperimentConfig, setup: &Setup) -> Result<NoiseSchedule> {
    let r = if config.noise_free() { 1.0 } else { config.r };
    schedules::plan(r, |rr| match recipe {
        Recipe::Uniform => schedules::uniform_schedule(t, rr),
        Recipe::GdClosedForm => schedules::gd_closed_form(need_gamma(setup.gamma, recipe)?, t, rr),
        Recipe::DynamicInfluence => {
            let g = need_gamma(setup.gamma, recipe)?;
            let q = analytic_gd_influence(g, setup.alpha.unwrap_or(1.0), t)?;
            schedules::dynamic_from_influence(&q.q, rr)
        }
        Recipe::Exponential => {
            let base = schedules::gd_closed_form(need_gamma(setup.gamma, recipe)?, t, rr)?;
            Ok(schedules::fit_exponential(&base)?.schedule)
        }
        Recipe::MomentumDynamic => {
            schedules::momentum_dynamic(need_gamma(setup.momentum_gamma, recipe)?, config.beta, t, rr)
        }
        Recipe::Custom => Err(Error::Unsupported("custom schedules cannot be swept over T".into())),
    })
}

/// `T^2 Var(sqrt q)` of the analytic profile behind `recipe` at `t` steps.
fn influence_variance(recipe: Recipe, t: usize, config: &ExperimentConfig, setup: &Setup) -> Option<f64> {
    let q = if recipe == Recipe::MomentumDynamic {
        analytic_momentum_influence(setup.momentum_gamma?, config.beta, t).ok()?.q
    } else {
        let g = setup.gamma.filter(|g| *g > 0.0 && *g < 1.0)?;
        analytic_gd_influence(g, setup.alpha.unwrap_or(1.0), t).ok()?.q
    };
    dynamic_advantage(&q).ok()
}

/// Seed for repeat `i` of `recipe` at `t` steps.
pub fn run_seed(base: u64, recipe: Recipe, t: usize, i: usize) -> u64 {
    seed::combine(&[base, seed::label_hash(&recipe.to_string()), t as u64, i as u64])
}

/// Mean and spread of the final losses at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub t: usize,
    pub mean_loss: f64,
    pub std_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecipeResult {
    pub recipe: Recipe,
    /// Set when the recipe could not be run.
    pub error: Option<String>,
    pub best_t: Option<usize>,
    pub mean_loss: f64,
    pub std_loss: f64,
    /// `(e1 - e0) / e0` against the uniform recipe's best mean loss.
    pub rel_loss: Option<f64>,
    pub influence_variance: Option<f64>,
    pub runtime_ms: f64,
    pub curve: Vec<GridPoint>,
    /// Final losses of every repeat at `best_t`.
    pub best_losses: Vec<f64>,
    /// Largest ledger spend seen in any run.
    pub max_budget_spent: f64,
}

impl RecipeResult {
    fn failed(recipe: Recipe, err: &Error, runtime_ms: f64) -> Self {
        Self {
            recipe,
            error: Some(err.to_string()),
            best_t: None,
            mean_loss: f64::NAN,
            std_loss: f64::NAN,
            rel_loss: None,
            influence_variance: None,
            runtime_ms,
            curve: Vec::new(),
            best_losses: Vec::new(),
            max_budget_spent: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub scale: f64,
    pub r: f64,
    pub f_star: Option<f64>,
    pub gamma: Option<f64>,
    pub recipes: Vec<RecipeResult>,
}

/// Index of the smallest mean loss, ties going to the earlier (smaller) `T`.
fn best_index(curve: &[GridPoint]) -> usize {
    let mut best = 0;
    for (i, p) in curve.iter().enumerate() {
        if p.mean_loss < curve[best].mean_loss {
            best = i;
        }
    }
    best
}

fn run_recipe(recipe: Recipe, config: &ExperimentConfig, setup: &Setup) -> Result<RecipeResult> {
    let start = Instant::now();
    let ts: Vec<usize> = (config.t_min..=config.t_max).collect();
    let plans: Vec<NoiseSchedule> =
        ts.iter().map(|&t| build_schedule(recipe, t, config, setup)).collect::<Result<_>>()?;
    for p in &plans {
        p.ensure_feasible()?;
    }
    let (noise, ledger_budget) =
        if config.noise_free() { (NoiseMode::Zero, f64::INFINITY) } else { (NoiseMode::Gaussian, config.r) };
    let template = RunConfig::new(StepSize::Constant(setup.eta), 0)
        .beta(config.beta)
        .noise(noise)
        .init(setup.init.clone())
        .budget(ledger_budget)
        .track_losses(false);
    let jobs: Vec<(usize, usize)> = (0..ts.len()).flat_map(|k| (0..config.repeats).map(move |i| (k, i))).collect();
    let records: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(k, i)| {
            let mut cfg = template.clone();
            cfg.seed = run_seed(config.base_seed, recipe, ts[k], i);
            let rec = optimizer::run(&setup.model, &plans[k], &cfg)?;
            Ok((rec.final_loss, rec.budget_spent))
        })
        .collect::<Result<_>>()?;

    let mut max_spent: f64 = 0.0;
    let mut curve = Vec::with_capacity(ts.len());
    for (k, &t) in ts.iter().enumerate() {
        let chunk = &records[k * config.repeats..(k + 1) * config.repeats];
        let losses: Vec<f64> = chunk.iter().map(|r| r.0).collect();
        for r in chunk {
            assert!(r.1 <= ledger_budget, "run overspent: {} > {ledger_budget}", r.1);
            max_spent = max_spent.max(r.1);
        }
        curve.push(GridPoint { t, mean_loss: stats::mean(&losses), std_loss: stats::std_dev(&losses) });
    }
    let b = best_index(&curve);
    for p in &curve {
        assert!(!(p.mean_loss < curve[b].mean_loss), "grid search missed a better T");
    }
    let best_losses: Vec<f64> = records[b * config.repeats..(b + 1) * config.repeats].iter().map(|r| r.0).collect();
    let best_t = curve[b].t;
    Ok(RecipeResult {
        recipe,
        error: None,
        best_t: Some(best_t),
        mean_loss: curve[b].mean_loss,
        std_loss: curve[b].std_loss,
        rel_loss: None,
        influence_variance: influence_variance(recipe, best_t, config, setup),
        runtime_ms: start.elapsed().as_secs_f64() * 1e3,
        curve,
        best_losses,
        max_budget_spent: max_spent,
    })
}

/// Runs an experiment on already-preprocessed data.
pub fn run_experiment_on(config: &ExperimentConfig, data: Arc<Dataset>) -> Result<ExperimentReport> {
    config.validate()?;
    let setup = setup(config, data)?;
    info!(
        "experiment: model {} scale {} eta {:.4} gamma {:?}",
        config.model, config.data_scale, setup.eta, setup.gamma
    );
    let mut results: Vec<RecipeResult> = config
        .recipes
        .iter()
        .map(|&recipe| {
            let start = Instant::now();
            run_recipe(recipe, config, &setup).unwrap_or_else(|e| {
                warn!("recipe {recipe} failed: {e}");
                RecipeResult::failed(recipe, &e, start.elapsed().as_secs_f64() * 1e3)
            })
        })
        .collect();
    let e0 = results.iter().find(|r| r.recipe == Recipe::Uniform && r.error.is_none()).map(|r| r.mean_loss);
    if let Some(e0) = e0 {
        for r in results.iter_mut().filter(|r| r.error.is_none()) {
            r.rel_loss = Some(if r.recipe == Recipe::Uniform { 0.0 } else { (r.mean_loss - e0) / e0 });
        }
    }
    Ok(ExperimentReport {
        scale: config.data_scale,
        r: config.r,
        f_star: setup.f_star,
        gamma: setup.gamma,
        recipes: results,
    })
}

/// Loads, preprocesses and runs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let raw = config.data.load()?;
    run_experiment_on(config, Arc::new(preprocess(&raw, config.data_scale)?))
}

/// One experiment per data scale, on the same raw data.
pub fn scale_sweep(config: &ExperimentConfig, scales: &[f64]) -> Result<Vec<ExperimentReport>> {
    if scales.is_empty() || scales.iter().any(|s| !(*s > 0.0)) {
        return Err(domain("scales must be positive and non-empty"));
    }
    config.validate()?;
    let raw = config.data.load()?;
    scales
        .iter()
        .map(|&s| {
            let mut c = config.clone();
            c.data_scale = s;
            run_experiment_on(&c, Arc::new(preprocess(&raw, s)?))
        })
        .collect()
}

pub const REPORT_COLUMNS: [&str; 8] =
    ["recipe", "scale", "best_T", "mean_loss", "std_loss", "rel_loss", "influence_variance", "runtime_ms"];

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Report CSV with one row per recipe and scale. Failed recipes have empty cells.
pub fn write_report<W: Write>(reports: &[ExperimentReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for rep in reports {
        for r in &rep.recipes {
            let ok = r.error.is_none();
            w.write_record([
                r.recipe.to_string(),
                rep.scale.to_string(),
                r.best_t.map(|t| t.to_string()).unwrap_or_default(),
                opt_cell(ok.then_some(r.mean_loss)),
                opt_cell(ok.then_some(r.std_loss)),
                opt_cell(r.rel_loss),
                opt_cell(r.influence_variance),
                format!("{:.3}", r.runtime_ms),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Whitespace-separated plot data: one block per recipe with columns
/// `scale T mean_loss std_loss`, blocks separated by two blank lines.
pub fn write_plot_data<W: Write>(reports: &[ExperimentReport], mut out: W) -> Result<()> {
    let mut recipes: Vec<Recipe> = reports.iter().flat_map(|r| r.recipes.iter().map(|x| x.recipe)).collect();
    recipes.sort();
    recipes.dedup();
    for recipe in recipes {
        writeln!(out, "# {recipe}")?;
        writeln!(out, "# scale T mean_loss std_loss")?;
        for rep in reports {
            for r in rep.recipes.iter().filter(|r| r.recipe == recipe) {
                for p in &r.curve {
                    writeln!(out, "{} {} {} {}", rep.scale, p.t, p.mean_loss, p.std_loss)?;
                }
            }
        }
        writeln!(out)?;
        writeln!(out)?;
    }
    Ok(())
}
