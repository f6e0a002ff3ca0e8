//! Utility-bound analysis for private gradient descent under the
//! Polyak-Lojasiewicz condition.
//!
//! All bounds are reported as ERUB: the excess-risk upper bound divided by
//! the initial gap `f(theta_1) - f(theta*)`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::schedules::{self, NoiseSchedule};

/// Default search cap for [`compute_t_hat`].
pub const T_HAT_CAP: usize = 1_000_000;

/// Raw problem description, as read by the `analyze` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    /// Per-sample Lipschitz constant.
    #[serde(rename = "G")]
    pub g: f64,
    /// Smoothness constant of the empirical loss.
    #[serde(rename = "M")]
    pub m: f64,
    /// PL constant.
    pub mu: f64,
    /// Parameter dimension.
    #[serde(rename = "D")]
    pub d: f64,
    /// Sample count.
    #[serde(rename = "N")]
    pub n: f64,
    /// Budget in R-units.
    #[serde(rename = "R")]
    pub r: f64,
    /// `f(theta_1) - f(theta*)`.
    pub init_gap: f64,
    /// Momentum coefficient, zero for plain GD.
    #[serde(default)]
    pub beta: f64,
}

/// Problem constants with the derived `alpha`, `kappa` and `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProblemConstants {
    pub g: f64,
    pub m: f64,
    pub mu: f64,
    pub d: f64,
    pub n: f64,
    pub r: f64,
    pub init_gap: f64,
    /// `D G^2 / (2 R M N^2 init_gap)`.
    pub alpha: f64,
    /// Condition number `M / mu`.
    pub kappa: f64,
    /// Per-step contraction `1 - 1 / kappa`.
    pub gamma: f64,
}

impl ProblemConstants {
    pub fn derive(g: f64, m: f64, mu: f64, d: f64, n: f64, r: f64, init_gap: f64) -> Result<Self> {
        for (name, v) in [("G", g), ("M", m), ("mu", mu), ("D", d), ("N", n), ("R", r), ("init_gap", init_gap)] {
            if !(v > 0.0) {
                return Err(domain(format!("{name} must be positive, got {v}")));
            }
        }
        if m < mu {
            return Err(domain(format!("smoothness M = {m} is below the PL constant mu = {mu}")));
        }
        let kappa = m / mu;
        let inv_alpha = 2.0 * r * m * n * n * init_gap / (d * g * g);
        Ok(Self { g, m, mu, d, n, r, init_gap, alpha: 1.0 / inv_alpha, kappa, gamma: 1.0 - 1.0 / kappa })
    }

    pub fn from_spec(spec: &ProblemSpec) -> Result<Self> {
        Self::derive(spec.g, spec.m, spec.mu, spec.d, spec.n, spec.r, spec.init_gap)
    }

    /// ERUB of GD with step size `1/M` under `schedule`, using this problem's budget.
    pub fn erub_gd(&self, schedule: &NoiseSchedule) -> f64 {
        erub_gd(self.gamma, self.alpha, self.r, schedule.sigmas())
    }

    pub fn optimal_t_uniform(&self) -> usize {
        optimal_t_uniform(self.gamma, self.alpha)
    }

    pub fn optimal_t_dynamic(&self) -> usize {
        optimal_t_dynamic(self.gamma, self.alpha)
    }
}

/// Which schedule family a bound was evaluated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Uniform,
    Dynamic,
    MomentumUniform,
    MomentumDynamic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub erub: f64,
    pub t: usize,
    pub kind: ScheduleKind,
}

/// ERUB of private GD: `gamma^T + R * sum_t gamma^(T-t) * alpha * sigma_t^2`.
///
/// `0^0` is taken as 1, so for `gamma = 0` only the last step contributes.
pub fn erub_gd(gamma: f64, alpha: f64, r: f64, sigmas: &[f64]) -> f64 {
    let t_len = sigmas.len();
    let noise: f64 = sigmas.iter().enumerate().map(|(i, s)| gamma.powi((t_len - 1 - i) as i32) * alpha * s * s).sum();
    gamma.powi(t_len as i32) + r * noise
}

/// Closed form of [`erub_gd`] under the uniform schedule `sigma_t^2 = T/R`.
pub fn erub_uniform_closed_form(gamma: f64, alpha: f64, t: usize) -> f64 {
    let gt = gamma.powi(t as i32);
    gt + alpha * (1.0 - gt) * t as f64 / (1.0 - gamma)
}

/// Minimum of the weighted noise sum over budget-saturating schedules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedNoise {
    /// `(sum_t sqrt(q_t))^2`.
    pub minimum: f64,
    /// Excess of the uniform schedule over the minimum, `T^2 Var(sqrt(q))`.
    pub uniform_gap: f64,
}

/// Minimizes `R * sum_t q_t sigma_t^2` subject to `sum_t 1/sigma_t^2 = R`.
pub fn min_weighted_noise(q: &[f64]) -> Result<WeightedNoise> {
    check_influence(q)?;
    let roots: Vec<f64> = q.iter().map(|v| v.sqrt()).collect();
    let sum: f64 = roots.iter().sum();
    let t = q.len() as f64;
    let mean = sum / t;
    let var = roots.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / t;
    Ok(WeightedNoise { minimum: sum * sum, uniform_gap: t * t * var })
}

pub(crate) fn check_influence(q: &[f64]) -> Result<()> {
    if q.is_empty() {
        return Err(domain("influence sequence is empty"));
    }
    match q.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        Some(v) => Err(domain(format!("influences must be positive and finite, got {v}"))),
        None => Ok(()),
    }
}

/// Iteration count minimizing the uniform-schedule ERUB:
/// `ceil(ln(1 + ln(1/gamma) / alpha) / ln(1/gamma))`, at least 1.
pub fn optimal_t_uniform(gamma: f64, alpha: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    let l = (1.0 / gamma).ln();
    ceil_at_least_one((l / alpha).ln_1p() / l)
}

/// Iteration count minimizing the dynamic-schedule ERUB:
/// `ceil(2 log_{1/gamma}((alpha + (1 - sqrt(gamma))^2) / alpha))`, at least 1.
pub fn optimal_t_dynamic(gamma: f64, alpha: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    let l = (1.0 / gamma).ln();
    let gap = (1.0 - gamma.sqrt()).powi(2);
    ceil_at_least_one(2.0 * (gap / alpha).ln_1p() / l)
}

fn ceil_at_least_one(x: f64) -> usize {
    if x.is_finite() && x > 1.0 {
        x.ceil() as usize
    } else {
        1
    }
}

/// Contraction factor of momentum GD with `eta_t = eta0 / (2M)`: `1 - eta0 / kappa`.
pub fn momentum_gamma(kappa: f64, eta0: f64) -> f64 {
    1.0 - eta0 / kappa
}

/// Largest `eta0` for which the momentum-effect coefficient `zeta` stays
/// non-negative: `8 / (sqrt(1 + 64 beta gamma / ((gamma - beta)^2 (1 - beta)^3)) + 1)`.
pub fn max_momentum_eta0(gamma: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if gamma == beta {
        return Err(domain("the momentum bound requires beta != gamma"));
    }
    let a = beta * gamma / ((gamma - beta).powi(2) * (1.0 - beta).powi(3));
    Ok(8.0 / ((1.0 + 64.0 * a).sqrt() + 1.0))
}

/// `zeta = 1 - eta0/4 - beta gamma eta0^2 / ((gamma - beta)^2 (1 - beta)^3)`.
pub fn momentum_zeta(eta0: f64, gamma: f64, beta: f64) -> f64 {
    let a = beta * gamma / ((gamma - beta).powi(2) * (1.0 - beta).powi(3));
    1.0 - 0.25 * eta0 - a * eta0 * eta0
}

/// Whether `eta0` keeps `zeta >= 0`.
pub fn momentum_eta0_feasible(eta0: f64, gamma: f64, beta: f64) -> bool {
    eta0 > 0.0 && momentum_zeta(eta0, gamma, beta) >= -1e-12
}

fn check_beta(beta: f64) -> Result<()> {
    if (0.0..1.0).contains(&beta) {
        Ok(())
    } else {
        Err(domain(format!("momentum beta must lie in [0, 1), got {beta}")))
    }
}

/// Weighted noise term of momentum GD:
/// `sum_t gamma^(T-t) (1-beta)^2 / (1-beta^t)^2 * sum_{i<=t} beta^(2(t-i)) sigma_i^2`.
pub fn momentum_noise_term_u3(gamma: f64, beta: f64, sigmas: &[f64]) -> Result<f64> {
    check_beta(beta)?;
    let t_len = sigmas.len();
    let b2 = beta * beta;
    let mut inner = 0.0;
    let mut total = 0.0;
    for (i, s) in sigmas.iter().enumerate() {
        let t = i + 1;
        // inner_t = beta^2 * inner_{t-1} + sigma_t^2
        inner = b2 * inner + s * s;
        let w = (1.0 - beta) / (1.0 - beta.powi(t as i32));
        total += gamma.powi((t_len - t) as i32) * w * w * inner;
    }
    Ok(total)
}

/// Largest `t` with `gamma^(t-1) >= (1 - beta) / (1 - beta^t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct THat {
    pub value: usize,
    /// The scan hit its cap while the inequality still held.
    pub capped: bool,
}

pub fn compute_t_hat(gamma: f64, beta: f64) -> THat {
    compute_t_hat_capped(gamma, beta, T_HAT_CAP)
}

/// Linear scan for [`THat`]. The right-hand side never drops below `1 - beta`,
/// so the scan stops for good once `gamma^(t-1)` falls under that floor.
pub fn compute_t_hat_capped(gamma: f64, beta: f64, cap: usize) -> THat {
    let floor = 1.0 - beta;
    let mut best = 1;
    let mut lhs = 1.0;
    let mut beta_t = beta;
    for t in 1..=cap.max(1) {
        if t > 1 {
            lhs *= gamma;
            beta_t *= beta;
        }
        if lhs < floor {
            return THat { value: best, capped: false };
        }
        if lhs >= (1.0 - beta) / (1.0 - beta_t) {
            best = t;
        }
    }
    THat { value: best, capped: best == cap.max(1) }
}

/// ERUB of momentum GD: `gamma^T + 2 R eta0 alpha U3`.
pub fn erub_momentum(gamma: f64, alpha: f64, r: f64, eta0: f64, beta: f64, sigmas: &[f64]) -> Result<f64> {
    let u3 = momentum_noise_term_u3(gamma, beta, sigmas)?;
    Ok(gamma.powi(sigmas.len() as i32) + 2.0 * r * eta0 * alpha * u3)
}

/// Momentum iteration count for the uniform schedule:
/// `ceil(ln(1 + eta0 / (kappa alpha)) / ln(1/gamma))`.
pub fn optimal_t_momentum_uniform(gamma: f64, kappa: f64, alpha: f64, eta0: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    ceil_at_least_one((eta0 / (kappa * alpha)).ln_1p() / (1.0 / gamma).ln())
}

/// Momentum iteration count for the dynamic schedule (twice the uniform one).
pub fn optimal_t_momentum_dynamic(gamma: f64, kappa: f64, alpha: f64, eta0: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    ceil_at_least_one(2.0 * (eta0 / (kappa * alpha)).ln_1p() / (1.0 / gamma).ln())
}

/// Every quantity the `analyze` command reports.
#[derive(Debug, Clone, Serialize)]
pub struct Analysis {
    pub constants: ProblemConstants,
    pub beta: f64,
    pub uniform: BoundReport,
    pub dynamic: BoundReport,
    pub t_hat: Option<THat>,
    pub eta0: Option<f64>,
    pub momentum_gamma: Option<f64>,
    pub momentum_uniform: Option<BoundReport>,
    pub momentum_dynamic: Option<BoundReport>,
}

/// Evaluates the GD bounds, and the momentum bounds when `beta > 0`.
///
/// `eta0` defaults to the largest value keeping `zeta >= 0`, evaluated at
/// the GD contraction factor.
pub fn analyze(spec: &ProblemSpec) -> Result<Analysis> {
    let c = ProblemConstants::from_spec(spec)?;
    check_beta(spec.beta)?;
    let t_uni = c.optimal_t_uniform();
    let t_dyn = c.optimal_t_dynamic();
    let uniform = BoundReport {
        erub: c.erub_gd(&schedules::uniform_schedule(t_uni, c.r)?),
        t: t_uni,
        kind: ScheduleKind::Uniform,
    };
    let dynamic_erub = if c.gamma > 0.0 {
        c.erub_gd(&schedules::gd_closed_form(c.gamma, t_dyn, c.r)?)
    } else {
        c.erub_gd(&schedules::uniform_schedule(t_dyn, c.r)?)
    };
    let dynamic = BoundReport { erub: dynamic_erub, t: t_dyn, kind: ScheduleKind::Dynamic };

    let mut out = Analysis {
        constants: c,
        beta: spec.beta,
        uniform,
        dynamic,
        t_hat: None,
        eta0: None,
        momentum_gamma: None,
        momentum_uniform: None,
        momentum_dynamic: None,
    };
    if spec.beta > 0.0 && c.gamma > 0.0 && c.gamma != spec.beta {
        let eta0 = max_momentum_eta0(c.gamma, spec.beta)?;
        let gm = momentum_gamma(c.kappa, eta0);
        out.eta0 = Some(eta0);
        out.momentum_gamma = Some(gm);
        if gm > 0.0 && gm < 1.0 {
            out.t_hat = Some(compute_t_hat(gm, spec.beta));
            let tu = optimal_t_momentum_uniform(gm, c.kappa, c.alpha, eta0);
            let sched = schedules::uniform_schedule(tu, c.r)?;
            out.momentum_uniform = Some(BoundReport {
                erub: erub_momentum(gm, c.alpha, c.r, eta0, spec.beta, sched.sigmas())?,
                t: tu,
                kind: ScheduleKind::MomentumUniform,
            });
            if spec.beta < gm {
                let td = optimal_t_momentum_dynamic(gm, c.kappa, c.alpha, eta0);
                let sched = schedules::momentum_dynamic(gm, spec.beta, td, c.r)?;
                out.momentum_dynamic = Some(BoundReport {
                    erub: erub_momentum(gm, c.alpha, c.r, eta0, spec.beta, sched.sigmas())?,
                    t: td,
                    kind: ScheduleKind::MomentumDynamic,
                });
            }
        }
    }
    Ok(out)
}
