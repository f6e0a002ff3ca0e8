//! Per-step noise influence: analytic profiles and retraining estimates.

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{check_influence, compute_t_hat};
use crate::error::{domain, Error, Result};
use crate::models::LossModel;
use crate::optimizer::{self, RunConfig};
use crate::schedules::{MomentumScheduleParams, NoiseSchedule};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InfluenceSource {
    AnalyticGd,
    AnalyticMomentum,
    Retrained,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfluenceProfile {
    pub q: Vec<f64>,
    pub source: InfluenceSource,
    /// Per-step fits, for retrained profiles.
    pub fits: Option<Vec<QuadraticFit>>,
}

impl InfluenceProfile {
    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

/// `q_t = gamma^(T-t) alpha`.
pub fn analytic_gd_influence(gamma: f64, alpha: f64, t: usize) -> Result<InfluenceProfile> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(domain(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if !(alpha > 0.0) || t == 0 {
        return Err(domain("need alpha > 0 and T >= 1"));
    }
    let q = (1..=t).map(|s| gamma.powi((t - s) as i32) * alpha).collect();
    Ok(InfluenceProfile { q, source: InfluenceSource::AnalyticGd, fits: None })
}

/// Momentum influence with the standard constants.
pub fn analytic_momentum_influence(gamma: f64, beta: f64, t: usize) -> Result<InfluenceProfile> {
    if !(beta < gamma) {
        return Err(domain(format!("momentum influence needs beta < gamma, got beta = {beta}, gamma = {gamma}")));
    }
    momentum_influence_with(gamma, beta, t, MomentumScheduleParams::standard(gamma, beta))
}

/// `q_t = c1 gamma^(T+t)` when `T <= T_hat`, else `gamma^(T_hat-1) c2 gamma^(T-t)`.
pub fn momentum_influence_with(
    gamma: f64,
    beta: f64,
    t: usize,
    params: MomentumScheduleParams,
) -> Result<InfluenceProfile> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(domain(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if !(0.0..1.0).contains(&beta) || beta >= gamma {
        return Err(domain(format!("need 0 <= beta < gamma, got beta = {beta}, gamma = {gamma}")));
    }
    if t == 0 {
        return Err(domain("T must be at least 1"));
    }
    let t_hat = params.t_hat.unwrap_or_else(|| compute_t_hat(gamma, beta).value);
    let q: Vec<f64> = if t <= t_hat {
        (1..=t).map(|s| params.c1 * gamma.powi((t + s) as i32)).collect()
    } else {
        let lead = gamma.powi(t_hat as i32 - 1) * params.c2;
        (1..=t).map(|s| lead * gamma.powi((t - s) as i32)).collect()
    };
    check_influence(&q)?;
    Ok(InfluenceProfile { q, source: InfluenceSource::AnalyticMomentum, fits: None })
}

/// Fit of `loss = c2 sigma^2 + c0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadraticFit {
    pub c0: f64,
    pub c2: f64,
    /// Root-mean-square residual.
    pub residual: f64,
}

/// Least squares of `loss` on `sigma^2` with an intercept.
pub fn quadratic_fit(points: &[(f64, f64)]) -> Result<QuadraticFit> {
    if points.len() < 3 {
        return Err(domain(format!("need at least 3 points, got {}", points.len())));
    }
    let xs: Vec<f64> = points.iter().map(|(s, _)| s * s).collect();
    let n = points.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = points.iter().map(|(_, l)| l).sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(domain("sigma values must not all be equal"));
    }
    let sxy: f64 = xs.iter().zip(points).map(|(x, (_, l))| (x - xm) * (l - ym)).sum();
    let c2 = sxy / sxx;
    let c0 = ym - c2 * xm;
    let sse: f64 = xs.iter().zip(points).map(|(x, (_, l))| (l - c0 - c2 * x).powi(2)).sum();
    Ok(QuadraticFit { c0, c2, residual: (sse / n).sqrt() })
}

/// Anything that can report a final loss for a schedule and seed.
pub trait FinalLoss: Sync {
    fn final_loss(&self, schedule: &NoiseSchedule, seed: u64) -> Result<f64>;
}

/// Retrains `model` with the optimizer for every query.
pub struct Retrainer<'a> {
    pub model: &'a LossModel,
    /// Template; the seed is replaced per query.
    pub config: RunConfig,
}

impl FinalLoss for Retrainer<'_> {
    fn final_loss(&self, schedule: &NoiseSchedule, seed: u64) -> Result<f64> {
        let mut cfg = self.config.clone();
        cfg.seed = seed;
        cfg.track_losses = false;
        Ok(optimizer::run(self.model, schedule, &cfg)?.final_loss)
    }
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo) || n == 0 {
        return Err(domain(format!("bad grid {lo}:{hi}:{n}")));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect())
}

/// Seven log-spaced points over `[20, 200]`.
pub fn default_sigma_grid() -> Vec<f64> {
    log_grid(20.0, 200.0, 7).expect("valid grid")
}

pub const DEFAULT_REPEATS: usize = 20;

/// Seed for repeat `rep` at step `t`. Shared by every grid point so that
/// the fit compares like with like.
fn influence_seed(seed: u64, t: usize, rep: usize) -> u64 {
    seed::combine(&[seed, t as u64, rep as u64])
}

/// Mean final losses over repeats for each grid point at step `t`; grid
/// points whose variant schedule breaks the budget are dropped.
fn grid_losses<F: FinalLoss>(
    trainer: &F,
    base: &NoiseSchedule,
    t: usize,
    grid: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let mut variants = Vec::new();
    for &sigma in grid {
        let v = base.with_step(t, sigma)?;
        if v.validate().feasible {
            variants.push((sigma, v));
        } else {
            warn!("skipping sigma = {sigma} at step {t}: variant exceeds the budget");
        }
    }
    let jobs: Vec<(usize, usize)> = (0..variants.len()).flat_map(|v| (0..repeats).map(move |r| (v, r))).collect();
    let losses: Vec<f64> = jobs
        .par_iter()
        .map(|&(v, r)| trainer.final_loss(&variants[v].1, influence_seed(seed, t, r)))
        .collect::<Result<_>>()?;
    Ok(variants
        .iter()
        .enumerate()
        .map(|(v, (sigma, _))| {
            let chunk = &losses[v * repeats..(v + 1) * repeats];
            (*sigma, chunk.iter().sum::<f64>() / repeats as f64)
        })
        .collect())
}

/// Influence of step `t` (1-based): vary `sigma_t` over `grid` with every
/// other step fixed, average `repeats` final losses per point and fit
/// `c2 sigma^2 + c0`. `c2` estimates `q_t` up to a scale shared across steps.
pub fn estimate_influence_retraining<F: FinalLoss>(
    trainer: &F,
    base: &NoiseSchedule,
    t: usize,
    grid: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<QuadraticFit> {
    if grid.len() < 3 {
        return Err(Error::Estimation(format!("sigma grid needs at least 3 points, got {}", grid.len())));
    }
    if repeats == 0 {
        return Err(domain("repeats must be at least 1"));
    }
    if t == 0 || t > base.len() {
        return Err(domain(format!("step {t} outside 1..={}", base.len())));
    }
    let points = grid_losses(trainer, base, t, grid, repeats, seed)?;
    if points.len() < 3 {
        return Err(Error::Estimation(format!("only {} feasible grid points at step {t}", points.len())));
    }
    quadratic_fit(&points).map_err(|e| Error::Estimation(e.to_string()))
}

/// Retrained estimate for every step of `base`.
///
/// Non-positive slopes are floored at `1e-6` of the largest slope so the
/// profile can drive a schedule; the raw fits are kept in `fits`.
pub fn estimate_influence_profile<F: FinalLoss>(
    trainer: &F,
    base: &NoiseSchedule,
    grid: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<InfluenceProfile> {
    let fits: Vec<QuadraticFit> = (1..=base.len())
        .into_par_iter()
        .map(|t| estimate_influence_retraining(trainer, base, t, grid, repeats, seed))
        .collect::<Result<_>>()?;
    let top = fits.iter().map(|f| f.c2).fold(f64::NEG_INFINITY, f64::max);
    if !(top > 0.0) {
        return Err(Error::Estimation("no step showed a positive influence".into()));
    }
    let floor = 1e-6 * top;
    let q = fits.iter().map(|f| f.c2.max(floor)).collect();
    Ok(InfluenceProfile { q, source: InfluenceSource::Retrained, fits: Some(fits) })
}

/// `T^2 Var(sqrt q)`: how much the influence-optimal schedule lowers the
/// weighted noise relative to the uniform one.
pub fn dynamic_advantage(q: &[f64]) -> Result<f64> {
    check_influence(q)?;
    let roots: Vec<f64> = q.iter().map(|v| v.sqrt()).collect();
    let t = roots.len() as f64;
    let m = roots.iter().sum::<f64>() / t;
    Ok(t * roots.iter().map(|r| (r - m).powi(2)).sum::<f64>())
}
