//! Noise schedules: per-step Gaussian noise scales under a total budget.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::analysis::{check_influence, compute_t_hat};
use crate::error::{domain, Error, Result};
use crate::influence;

/// Relative tolerance used when checking that a schedule fits its budget.
pub const BUDGET_TOLERANCE: f64 = 1e-9;

/// Fraction of the budget held back when planning schedules that are meant
/// to run to completion. The ledger grants a step only when its cost is
/// strictly below the residual, so a schedule that spends the budget
/// exactly would lose its final step.
pub const PLANNING_HEADROOM: f64 = 1e-10;

/// Budget to size a schedule with so that every planned step is granted.
pub fn planning_budget(r: f64) -> f64 {
    r * (1.0 - PLANNING_HEADROOM)
}

/// Builds a schedule against [`planning_budget`] and tags it with the full budget `r`.
pub fn plan<F>(r: f64, build: F) -> Result<NoiseSchedule>
where
    F: FnOnce(f64) -> Result<NoiseSchedule>,
{
    Ok(build(planning_budget(r))?.with_budget(r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    Uniform,
    DynamicInfluence,
    #[serde(alias = "dynamic")]
    GdClosedForm,
    MomentumDynamic,
    Exponential,
    Custom,
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Recipe::Uniform => "uniform",
            Recipe::DynamicInfluence => "dynamic_influence",
            Recipe::GdClosedForm => "gd_closed_form",
            Recipe::MomentumDynamic => "momentum_dynamic",
            Recipe::Exponential => "exponential",
            Recipe::Custom => "custom",
        };
        f.write_str(s)
    }
}

/// Per-step noise scales `sigma_1..sigma_T` with the budget they were sized for.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
    recipe: Recipe,
    budget: f64,
}

/// Result of [`NoiseSchedule::validate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    /// Spent R-units over the budget.
    pub consumed_fraction: f64,
}

impl NoiseSchedule {
    /// Wraps arbitrary noise scales. Feasibility is not checked here; see
    /// [`NoiseSchedule::validate`].
    pub fn custom(sigmas: Vec<f64>, budget: f64) -> Result<Self> {
        Self::new(sigmas, Recipe::Custom, budget)
    }

    fn new(sigmas: Vec<f64>, recipe: Recipe, budget: f64) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(domain("a schedule needs at least one step"));
        }
        if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(domain(format!("noise scales must be positive and finite, got {s}")));
        }
        if !(budget > 0.0) {
            return Err(domain(format!("budget must be positive, got {budget}")));
        }
        Ok(Self { sigmas, recipe, budget })
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn variances(&self) -> Vec<f64> {
        self.sigmas.iter().map(|s| s * s).collect()
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn recipe(&self) -> Recipe {
        self.recipe
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    /// Full-batch cost of each step, `1 / sigma_t^2`.
    pub fn step_costs(&self) -> Vec<f64> {
        self.sigmas.iter().map(|s| 1.0 / (s * s)).collect()
    }

    /// Total full-batch cost `sum_t 1 / sigma_t^2`.
    pub fn total_cost(&self) -> f64 {
        self.sigmas.iter().map(|s| 1.0 / (s * s)).sum()
    }

    pub fn validate(&self) -> Feasibility {
        let consumed = self.total_cost();
        Feasibility {
            feasible: consumed <= self.budget * (1.0 + BUDGET_TOLERANCE),
            consumed_fraction: consumed / self.budget,
        }
    }

    /// Errors with [`Error::Infeasible`] unless the schedule fits its budget.
    pub fn ensure_feasible(&self) -> Result<()> {
        if self.validate().feasible {
            Ok(())
        } else {
            Err(Error::Infeasible { consumed: self.total_cost(), budget: self.budget })
        }
    }

    /// Same noise scales, accounted against a different budget.
    pub fn with_budget(mut self, budget: f64) -> Self {
        self.budget = budget;
        self
    }

    /// Copy with step `t` (1-based) replaced by `sigma`.
    pub fn with_step(&self, t: usize, sigma: f64) -> Result<Self> {
        if t == 0 || t > self.len() {
            return Err(domain(format!("step {t} outside 1..={}", self.len())));
        }
        let mut sigmas = self.sigmas.clone();
        sigmas[t - 1] = sigma;
        Self::new(sigmas, Recipe::Custom, self.budget)
    }
}

/// `sigma_t^2 = T / R` for every step.
pub fn uniform_schedule(t: usize, r: f64) -> Result<NoiseSchedule> {
    if t == 0 {
        return Err(domain("T must be at least 1"));
    }
    let sigma = (t as f64 / r).sqrt();
    NoiseSchedule::new(vec![sigma; t], Recipe::Uniform, r)
}

/// Influence-optimal schedule `sigma_t^2 = (1/R) sum_i sqrt(q_i / q_t)`.
///
/// Saturates the budget and attains the minimum weighted noise
/// `(sum_t sqrt(q_t))^2`. Invariant under positive rescaling of `q`.
pub fn dynamic_from_influence(q: &[f64], r: f64) -> Result<NoiseSchedule> {
    check_influence(q)?;
    let roots: Vec<f64> = q.iter().map(|v| v.sqrt()).collect();
    let sum: f64 = roots.iter().sum();
    let sigmas = roots.iter().map(|rt| (sum / (r * rt)).sqrt()).collect();
    NoiseSchedule::new(sigmas, Recipe::DynamicInfluence, r)
}

/// Closed-form dynamic schedule for GD with influence `gamma^(T-t)`:
/// `sigma_t^2 = (1/R) (gamma^(-T/2) - 1) / (1 - sqrt(gamma)) * gamma^(t/2)`.
pub fn gd_closed_form(gamma: f64, t: usize, r: f64) -> Result<NoiseSchedule> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(domain(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if t == 0 {
        return Err(domain("T must be at least 1"));
    }
    let sg = gamma.sqrt();
    let scale = (sg.powi(-(t as i32)) - 1.0) / (1.0 - sg) / r;
    let sigmas = (1..=t).map(|step| (scale * sg.powi(step as i32)).sqrt()).collect();
    NoiseSchedule::new(sigmas, Recipe::GdClosedForm, r)
}

/// Constants of the momentum influence profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentumScheduleParams {
    pub c1: f64,
    pub c2: f64,
    /// Override for the branch threshold; computed from `(gamma, beta)` when `None`.
    pub t_hat: Option<usize>,
}

impl MomentumScheduleParams {
    /// `c1 = 2 / (gamma (gamma - beta^2))`, `c2 = gamma^(2 T_hat) / (gamma - beta^2)`.
    pub fn standard(gamma: f64, beta: f64) -> Self {
        let t_hat = compute_t_hat(gamma, beta).value;
        Self::with_t_hat(gamma, beta, t_hat)
    }

    pub fn with_t_hat(gamma: f64, beta: f64, t_hat: usize) -> Self {
        let denom = gamma - beta * beta;
        Self { c1: 2.0 / (gamma * denom), c2: gamma.powi(2 * t_hat as i32) / denom, t_hat: Some(t_hat) }
    }
}

/// Dynamic schedule for momentum GD, built from the momentum influence profile.
/// Requires `beta < gamma`.
pub fn momentum_dynamic(gamma: f64, beta: f64, t: usize, r: f64) -> Result<NoiseSchedule> {
    momentum_dynamic_with(gamma, beta, t, r, MomentumScheduleParams::standard(gamma, beta))
}

pub fn momentum_dynamic_with(
    gamma: f64,
    beta: f64,
    t: usize,
    r: f64,
    params: MomentumScheduleParams,
) -> Result<NoiseSchedule> {
    let q = influence::momentum_influence_with(gamma, beta, t, params)?;
    let mut s = dynamic_from_influence(&q.q, r)?;
    s.recipe = Recipe::MomentumDynamic;
    Ok(s)
}

/// Least-squares fit of `sigma_t = sigma0 * exp(-k t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentialFit {
    /// Fitted amplitude, before rescaling to the budget.
    pub sigma0: f64,
    pub k: f64,
    /// Fitted curve rescaled so that it spends the target's budget exactly.
    pub schedule: NoiseSchedule,
}

/// Fits `ln sigma_t = ln sigma0 - k t` by ordinary least squares over
/// `t = 1..T`, then rescales the curve to the target's budget.
pub fn fit_exponential(target: &NoiseSchedule) -> Result<ExponentialFit> {
    let n = target.len();
    let (sigma0, k) = if n < 2 {
        (target.sigmas[0], 0.0)
    } else {
        let ts: Vec<f64> = (1..=n).map(|t| t as f64).collect();
        let ys: Vec<f64> = target.sigmas.iter().map(|s| s.ln()).collect();
        let t_mean = ts.iter().sum::<f64>() / n as f64;
        let y_mean = ys.iter().sum::<f64>() / n as f64;
        let sxy: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - t_mean) * (y - y_mean)).sum();
        let sxx: f64 = ts.iter().map(|t| (t - t_mean).powi(2)).sum();
        let slope = sxy / sxx;
        ((y_mean - slope * t_mean).exp(), -slope)
    };
    let raw: Vec<f64> = (1..=n).map(|t| sigma0 * (-k * t as f64).exp()).collect();
    let cost: f64 = raw.iter().map(|s| 1.0 / (s * s)).sum();
    let rescale = (cost / target.budget).sqrt();
    let sigmas = raw.into_iter().map(|s| s * rescale).collect();
    let schedule = NoiseSchedule::new(sigmas, Recipe::Exponential, target.budget)?;
    Ok(ExponentialFit { sigma0, k, schedule })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::min_weighted_noise;
    use approx::assert_abs_diff_eq;

    fn sq(s: &NoiseSchedule) -> Vec<f64> {
        s.variances()
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs())
    }

    #[test]
    fn uniform_examples() {
        let s = uniform_schedule(4, 2.0).unwrap();
        for v in sq(&s) {
            assert_abs_diff_eq!(v, 2.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(s.total_cost(), 2.0, epsilon = 1e-12);
        assert_eq!(sq(&uniform_schedule(1, 1.0).unwrap()), vec![1.0]);
        let s = uniform_schedule(100, 0.3927).unwrap();
        assert_abs_diff_eq!(sq(&s)[0], 254.65, epsilon = 0.01);
        assert!(uniform_schedule(0, 1.0).is_err());
    }

    #[test]
    fn dynamic_examples() {
        let s = dynamic_from_influence(&[1.0, 1.0, 1.0], 3.0).unwrap();
        for v in sq(&s) {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
        let s = dynamic_from_influence(&[0.25, 1.0], 1.0).unwrap();
        let v = sq(&s);
        assert_abs_diff_eq!(v[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.total_cost(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(0.25 * v[0] + v[1], 2.25, epsilon = 1e-12);
        assert_abs_diff_eq!(sq(&dynamic_from_influence(&[4.0], 2.0).unwrap())[0], 0.5, epsilon = 1e-15);
        assert!(dynamic_from_influence(&[1.0, 0.0], 1.0).is_err());
    }

    /// Brute force over a grid of feasible two-step schedules.
    #[test]
    fn dynamic_two_step_matches_grid_search() {
        let (q, r) = ([0.25, 1.0], 1.0);
        let mut best = f64::INFINITY;
        for i in 1..100_000 {
            // Split the budget: 1/sigma_1^2 = f R, 1/sigma_2^2 = (1 - f) R.
            let f = i as f64 / 100_000.0;
            let v1 = 1.0 / (f * r);
            let v2 = 1.0 / ((1.0 - f) * r);
            best = best.min(r * (q[0] * v1 + q[1] * v2));
        }
        assert!((best - 2.25).abs() < 1e-6);
        let s = dynamic_from_influence(&q, r).unwrap();
        let v = sq(&s);
        assert!(r * (q[0] * v[0] + q[1] * v[1]) <= best + 1e-12);
    }

    #[test]
    fn gd_closed_form_examples() {
        let v = sq(&gd_closed_form(0.25, 2, 1.0).unwrap());
        assert_abs_diff_eq!(v[0], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 1.5, epsilon = 1e-12);
        for g in [0.1, 0.5, 0.99] {
            assert_abs_diff_eq!(sq(&gd_closed_form(g, 1, 4.0).unwrap())[0], 0.25, epsilon = 1e-12);
        }
        let v = sq(&gd_closed_form(0.25, 2, 2.0).unwrap());
        assert_abs_diff_eq!(v[0], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 0.75, epsilon = 1e-12);
        assert!(gd_closed_form(1.0, 3, 1.0).is_err());
        assert!(gd_closed_form(0.0, 3, 1.0).is_err());
    }

    #[test]
    fn momentum_examples() {
        // Increasing branch (T <= T_hat). With gamma = 0.25 the threshold is 1
        // for every admissible beta, so the branch is forced through the override.
        let gamma = 0.25;
        let params = MomentumScheduleParams::with_t_hat(gamma, 0.01, 2);
        let v = sq(&momentum_dynamic_with(gamma, 0.01, 2, 1.0, params).unwrap());
        assert_abs_diff_eq!(v[0], 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], 3.0, epsilon = 1e-12);

        for beta in [0.01, 0.2] {
            let v = sq(&momentum_dynamic(0.5, beta, 1, 2.0).unwrap());
            assert_abs_diff_eq!(v[0], 0.5, epsilon = 1e-12);
        }

        // beta -> 0 gives T_hat = 1, so every T > 1 uses the GD-shaped branch.
        let m = momentum_dynamic(0.6, 1e-9, 12, 0.4).unwrap();
        let g = gd_closed_form(0.6, 12, 0.4).unwrap();
        for (a, b) in m.sigmas().iter().zip(g.sigmas()) {
            assert!(rel_close(*a, *b, 1e-9));
        }
        assert!(momentum_dynamic(0.5, 0.5, 3, 1.0).is_err());
        assert!(momentum_dynamic(0.5, 0.7, 3, 1.0).is_err());
    }

    #[test]
    fn momentum_increasing_below_t_hat() {
        let (gamma, beta) = (0.9, 0.5);
        let t_hat = compute_t_hat(gamma, beta).value;
        assert_eq!(t_hat, 7);
        for t in 2..=t_hat {
            let s = momentum_dynamic(gamma, beta, t, 1.0).unwrap();
            assert!(s.sigmas().windows(2).all(|w| w[0] < w[1]), "T = {t}");
        }
        let s = momentum_dynamic(gamma, beta, 30, 1.0).unwrap();
        assert!(s.sigmas().windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn exponential_fit_examples() {
        let exact: Vec<f64> = (1..=20).map(|t| 2.0 * (-0.1 * t as f64).exp()).collect();
        let cost: f64 = exact.iter().map(|s| 1.0 / (s * s)).sum();
        let fit = fit_exponential(&NoiseSchedule::custom(exact.clone(), cost).unwrap()).unwrap();
        assert_abs_diff_eq!(fit.sigma0, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.k, 0.1, epsilon = 1e-9);
        for (a, b) in fit.schedule.sigmas().iter().zip(&exact) {
            assert!(rel_close(*a, *b, 1e-9));
        }

        let gamma = 0.8;
        let fit = fit_exponential(&gd_closed_form(gamma, 50, 0.5).unwrap()).unwrap();
        assert!(rel_close(fit.k, (1.0 / gamma).ln() / 4.0, 1e-9));
        assert!(rel_close(fit.schedule.total_cost(), 0.5, 1e-9));

        let fit = fit_exponential(&uniform_schedule(10, 2.0).unwrap()).unwrap();
        assert_abs_diff_eq!(fit.k, 0.0, epsilon = 1e-12);
        for v in sq(&fit.schedule) {
            assert_abs_diff_eq!(v, 5.0, epsilon = 1e-9);
        }

        let fit = fit_exponential(&uniform_schedule(1, 2.0).unwrap()).unwrap();
        assert_eq!(fit.k, 0.0);
    }

    #[test]
    fn validate_examples() {
        let f = uniform_schedule(4, 2.0).unwrap().validate();
        assert!(f.feasible);
        assert_abs_diff_eq!(f.consumed_fraction, 1.0, epsilon = 1e-12);
        let f = NoiseSchedule::custom(vec![1.0], 0.5).unwrap().validate();
        assert!(!f.feasible);
        assert_eq!(f.consumed_fraction, 2.0);
        let f = NoiseSchedule::custom(vec![2.0, 2.0], 1.0).unwrap().validate();
        assert!(f.feasible);
        assert_eq!(f.consumed_fraction, 0.5);
        assert!(NoiseSchedule::custom(vec![1.0], 0.5).unwrap().ensure_feasible().is_err());
        assert!(NoiseSchedule::custom(vec![1.0, -1.0], 1.0).is_err());
    }

    #[test]
    fn planned_schedule_stays_strictly_inside() {
        let s = plan(0.3927, |r| uniform_schedule(100, r)).unwrap();
        assert_eq!(s.budget(), 0.3927);
        assert!(s.total_cost() < 0.3927);
        assert!(s.validate().feasible);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn dynamic_saturates_budget(q in prop::collection::vec(1e-8f64..1e3, 1..100), r in 1e-3f64..100.0) {
                let s = dynamic_from_influence(&q, r).unwrap();
                prop_assert!((s.total_cost() - r).abs() <= 1e-9 * r);
                let w = min_weighted_noise(&q).unwrap();
                let achieved: f64 = r * q.iter().zip(s.variances()).map(|(a, v)| a * v).sum::<f64>();
                prop_assert!(rel_close(achieved, w.minimum, 1e-9));
            }

            #[test]
            fn dynamic_scale_invariant(q in prop::collection::vec(1e-4f64..1e2, 1..40), c in 1e-3f64..1e3) {
                let a = dynamic_from_influence(&q, 1.0).unwrap();
                let scaled: Vec<f64> = q.iter().map(|v| v * c).collect();
                let b = dynamic_from_influence(&scaled, 1.0).unwrap();
                for (x, y) in a.sigmas().iter().zip(b.sigmas()) {
                    prop_assert!(rel_close(*x, *y, 1e-12));
                }
            }

            #[test]
            fn closed_form_matches_influence(g in 0.01f64..0.99, t in 1usize..100, r in 1e-2f64..10.0) {
                let q: Vec<f64> = (1..=t).map(|s| g.powi((t - s) as i32)).collect();
                let a = gd_closed_form(g, t, r).unwrap();
                let b = dynamic_from_influence(&q, r).unwrap();
                for (x, y) in a.sigmas().iter().zip(b.sigmas()) {
                    prop_assert!(rel_close(*x, *y, 1e-9));
                }
                prop_assert!(a.sigmas().windows(2).all(|w| w[0] > w[1]));
            }
        }
    }
}
