//! zCDP accounting for Gaussian-noised gradient steps.
//!
//! Costs are tracked in *R-units*: a step released with noise scale `sigma`
//! costs `1 / sigma^2`. The raw zCDP parameter of the same step is half of
//! that, so a run whose spent R-units total at most `R` is `R / 2`-zCDP.

use crate::error::{domain, Result};

/// Privacy cost of a single noised step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCost {
    /// Noise scale the step was released with.
    pub sigma: f64,
    /// Cost charged against the ledger, `1 / sigma^2` for a full batch.
    pub rho_r_units: f64,
}

impl StepCost {
    /// Full-batch Gaussian step.
    pub fn gaussian(sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self { sigma, rho_r_units: 1.0 / (sigma * sigma) })
    }

    /// Step on a batch drawn with replacement at `sample_rate`.
    pub fn subsampled(sigma: f64, sample_rate: f64) -> Result<Self> {
        Ok(Self { sigma, rho_r_units: subsampled_step_cost(sigma, sample_rate)? })
    }

    /// Raw zCDP parameter of this step.
    pub fn zcdp_rho(&self) -> f64 {
        0.5 * self.rho_r_units
    }
}

/// An `(epsilon, delta)`-DP guarantee.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpPoint {
    pub epsilon: f64,
    pub delta: f64,
}

impl DpPoint {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(domain(format!("epsilon must be >= 0, got {epsilon}")));
        }
        check_delta(delta)?;
        Ok(Self { epsilon, delta })
    }

    /// The `(epsilon, delta)` point implied by `rho`-zCDP.
    pub fn from_zcdp(rho: f64, delta: f64) -> Result<Self> {
        Ok(Self { epsilon: zcdp_to_dp(rho, delta)?, delta })
    }

    /// The zCDP parameter whose conversion at `delta` yields `epsilon`.
    pub fn to_zcdp(&self) -> Result<f64> {
        dp_to_zcdp(self.epsilon, self.delta)
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && !sigma.is_nan() {
        Ok(())
    } else {
        Err(domain(format!("noise scale must be positive, got {sigma}")))
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(domain(format!("delta must lie in (0, 1), got {delta}")))
    }
}

/// zCDP cost `1 / (2 sigma^2)` of the Gaussian mechanism with noise scale
/// `sigma` (in units of the query sensitivity).
pub fn gaussian_step_cost(sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(0.5 / (sigma * sigma))
}

/// Sequential composition: zCDP costs add.
pub fn compose(costs: &[f64]) -> Result<f64> {
    costs.iter().try_fold(0.0, |acc, &c| {
        if c >= 0.0 {
            Ok(acc + c)
        } else {
            Err(domain(format!("composed costs must be >= 0, got {c}")))
        }
    })
}

/// `rho`-zCDP implies `(rho + 2 sqrt(rho ln(1/delta)), delta)`-DP.
pub fn zcdp_to_dp(rho: f64, delta: f64) -> Result<f64> {
    if !(rho >= 0.0) {
        return Err(domain(format!("rho must be >= 0, got {rho}")));
    }
    check_delta(delta)?;
    Ok(rho + 2.0 * (rho * (1.0 / delta).ln()).sqrt())
}

/// Inverse of [`zcdp_to_dp`] for fixed `delta`.
///
/// Solving `rho + 2 sqrt(rho L) = epsilon` for `sqrt(rho)` gives the
/// positive root `sqrt(L + epsilon) - sqrt(L)` with `L = ln(1/delta)`.
pub fn dp_to_zcdp(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon >= 0.0) {
        return Err(domain(format!("epsilon must be >= 0, got {epsilon}")));
    }
    check_delta(delta)?;
    let l = (1.0 / delta).ln();
    // sqrt(L + eps) - sqrt(L) rewritten to avoid cancellation for small eps.
    let root = epsilon / ((l + epsilon).sqrt() + l.sqrt());
    Ok(root * root)
}

/// R-unit cost `p^2 / sigma^2` of one step on a batch sampled at rate `p`.
/// The constant factor of the subsampling bound is dropped.
pub fn subsampled_step_cost(sigma: f64, sample_rate: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if !(sample_rate > 0.0 && sample_rate <= 1.0) {
        return Err(domain(format!("sample rate must lie in (0, 1], got {sample_rate}")));
    }
    Ok(sample_rate * sample_rate / (sigma * sigma))
}

/// Outcome of a budget request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Granted,
    /// The caller must stop releasing steps.
    Denied,
}

impl Decision {
    pub fn is_granted(self) -> bool {
        self == Decision::Granted
    }
}

/// Residual-budget ledger for one run.
///
/// A request is granted only if its cost is strictly below the residual
/// budget, so the residual stays positive after every grant. The running
/// sum of granted costs is checked too, so that it never exceeds the total
/// after rounding.
#[derive(Debug, Clone)]
pub struct PrivacyLedger {
    total: f64,
    residual: f64,
    spent_sum: f64,
    spent: Vec<StepCost>,
}

impl PrivacyLedger {
    /// Opens a ledger with `total` R-units. `f64::INFINITY` is accepted as a
    /// non-private debugging sentinel.
    pub fn new(total: f64) -> Result<Self> {
        if !(total > 0.0) {
            return Err(domain(format!("budget must be positive, got {total}")));
        }
        Ok(Self { total, residual: total, spent_sum: 0.0, spent: Vec::new() })
    }

    pub fn request(&mut self, cost: StepCost) -> Decision {
        let sum = self.spent_sum + cost.rho_r_units;
        if cost.rho_r_units < self.residual && sum <= self.total {
            self.residual -= cost.rho_r_units;
            self.spent_sum = sum;
            self.spent.push(cost);
            Decision::Granted
        } else {
            Decision::Denied
        }
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn spent(&self) -> &[StepCost] {
        &self.spent
    }

    /// Sum of granted costs in R-units.
    pub fn spent_r_units(&self) -> f64 {
        self.spent_sum
    }

    /// zCDP parameter of everything released so far (half the R-unit spend).
    pub fn zcdp_rho(&self) -> f64 {
        0.5 * self.spent_r_units()
    }
}
