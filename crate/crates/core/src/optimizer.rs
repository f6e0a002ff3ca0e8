//! Private gradient descent: clipped gradients, Gaussian noise, a budget
//! ledger that can stop the run, and optional bias-corrected momentum.

use ndarray::{Array1, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::accountant::{Decision, PrivacyLedger, StepCost};
use crate::error::{domain, Error, Result};
use crate::models::LossModel;
use crate::schedules::{NoiseSchedule, BUDGET_TOLERANCE};

/// Source of standard normal noise vectors.
pub trait NoiseSource {
    /// Overwrites `out` with independent standard normal draws.
    fn fill(&mut self, out: &mut [f64]);

    /// Random index in `0..n`, used for batch sampling.
    fn index(&mut self, n: usize) -> usize;

    /// True when every draw is zero, so the sensitivity never matters.
    fn is_silent(&self) -> bool {
        false
    }
}

/// Seeded ChaCha8 stream.
#[derive(Debug, Clone)]
pub struct GaussianNoise {
    rng: ChaCha8Rng,
}

impl GaussianNoise {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl NoiseSource for GaussianNoise {
    fn fill(&mut self, out: &mut [f64]) {
        for v in out {
            *v = StandardNormal.sample(&mut self.rng);
        }
    }

    fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

/// No noise at all. Batch indices still come from a seeded stream.
#[derive(Debug, Clone)]
pub struct ZeroNoise {
    rng: ChaCha8Rng,
}

impl ZeroNoise {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl NoiseSource for ZeroNoise {
    fn fill(&mut self, out: &mut [f64]) {
        out.fill(0.0);
    }

    fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    fn is_silent(&self) -> bool {
        true
    }
}

/// Replays fixed vectors in order, cycling; for tests.
#[derive(Debug, Clone)]
pub struct FixedNoise {
    draws: Vec<Vec<f64>>,
    next: usize,
}

impl FixedNoise {
    pub fn new(draws: Vec<Vec<f64>>) -> Self {
        assert!(!draws.is_empty(), "need at least one draw");
        Self { draws, next: 0 }
    }
}

impl NoiseSource for FixedNoise {
    fn fill(&mut self, out: &mut [f64]) {
        let d = &self.draws[self.next % self.draws.len()];
        out.copy_from_slice(&d[..out.len()]);
        self.next += 1;
    }

    fn index(&mut self, n: usize) -> usize {
        self.next % n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    Gaussian,
    /// Noise-free debugging runs.
    Zero,
}

/// Adds `scale * nu` to `grad` with `nu` drawn from `noise`.
fn add_noise(grad: &mut Array1<f64>, scale: f64, noise: &mut dyn NoiseSource, buf: &mut [f64]) {
    noise.fill(buf);
    if scale == 0.0 {
        return;
    }
    for (g, n) in grad.iter_mut().zip(buf.iter()) {
        *g += scale * n;
    }
}

fn sensitivity_constant(model: &LossModel, noise: &dyn NoiseSource) -> Result<f64> {
    if noise.is_silent() {
        Ok(0.0)
    } else {
        model.lipschitz_bound()
    }
}

/// Clipped mean gradient plus `(G sigma / N) nu`, with `G` the model's
/// effective Lipschitz constant.
pub fn privatize_gradient(
    model: &LossModel,
    theta: ArrayView1<f64>,
    sigma: f64,
    noise: &mut dyn NoiseSource,
) -> Result<Array1<f64>> {
    if !(sigma > 0.0) {
        return Err(domain(format!("sigma must be positive, got {sigma}")));
    }
    let g = sensitivity_constant(model, noise)?;
    let mut grad = model.clipped_mean_gradient(theta);
    let mut buf = vec![0.0; model.dim()];
    add_noise(&mut grad, g * sigma / model.data().n() as f64, noise, &mut buf);
    Ok(grad)
}

fn check_beta(beta: f64) -> Result<()> {
    if (0.0..1.0).contains(&beta) {
        Ok(())
    } else {
        Err(domain(format!("beta must lie in [0, 1), got {beta}")))
    }
}

/// Momentum accumulator `v` and its bias-corrected estimate `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    beta: f64,
    v: Array1<f64>,
    m: Array1<f64>,
}

impl MomentumState {
    pub fn new(dim: usize, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self { beta, v: Array1::zeros(dim), m: Array1::zeros(dim) })
    }

    pub fn v(&self) -> &Array1<f64> {
        &self.v
    }

    pub fn m(&self) -> &Array1<f64> {
        &self.m
    }

    /// Folds in gradient `g` at step `t >= 1`.
    ///
    /// `v <- beta v + (1 - beta) g` and `m = v / (1 - beta^t)`. The estimate
    /// is advanced as `m <- m + w (g - m)` with `w = (1 - beta) / (1 - beta^t)`,
    /// which is the same quantity but reproduces a constant stream exactly.
    pub fn update(&mut self, g: ArrayView1<f64>, t: usize) -> Result<()> {
        if t == 0 {
            return Err(domain("momentum steps start at t = 1"));
        }
        let b = self.beta;
        self.v.zip_mut_with(&g, |v, g| *v = b * *v + (1.0 - b) * g);
        let w = (1.0 - b) / (1.0 - b.powi(t as i32));
        if w == 1.0 {
            self.m.assign(&g);
        } else {
            self.m.zip_mut_with(&g, |m, g| *m += w * (g - *m));
        }
        Ok(())
    }
}

/// One momentum step from `(v_t, m_t)`; returns `(v_{t+1}, m_{t+1})`.
pub fn momentum_update(
    v: ArrayView1<f64>,
    m: ArrayView1<f64>,
    g: ArrayView1<f64>,
    beta: f64,
    t: usize,
) -> Result<(Array1<f64>, Array1<f64>)> {
    check_beta(beta)?;
    let mut s = MomentumState { beta, v: v.to_owned(), m: m.to_owned() };
    s.update(g, t)?;
    Ok((s.v, s.m))
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepSize {
    Constant(f64),
    /// `eta_t` for `t = 1..`; the last entry repeats if the run is longer.
    PerStep(Vec<f64>),
}

impl StepSize {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            StepSize::Constant(e) => *e,
            StepSize::PerStep(v) => v[(t - 1).min(v.len() - 1)],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            StepSize::Constant(e) => *e > 0.0 && e.is_finite(),
            StepSize::PerStep(v) => !v.is_empty() && v.iter().all(|e| *e > 0.0 && e.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(domain("step sizes must be positive and finite"))
        }
    }

    /// `1 / M` for plain GD, `eta0 / (2M)` with momentum.
    pub fn default_for(smoothness: f64, momentum_eta0: Option<f64>) -> Self {
        match momentum_eta0 {
            None => StepSize::Constant(1.0 / smoothness),
            Some(eta0) => StepSize::Constant(eta0 / (2.0 * smoothness)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub eta: StepSize,
    pub beta: f64,
    pub seed: u64,
    pub noise: NoiseMode,
    /// Starting point; zeros when `None`.
    pub init: Option<Array1<f64>>,
    /// Ledger budget; the schedule's own budget when `None`.
    pub budget: Option<f64>,
    /// Evaluate the loss after every step. Off saves one data pass per step.
    pub track_losses: bool,
}

impl RunConfig {
    pub fn new(eta: StepSize, seed: u64) -> Self {
        Self { eta, beta: 0.0, seed, noise: NoiseMode::Gaussian, init: None, budget: None, track_losses: true }
    }

    pub fn beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn noise(mut self, noise: NoiseMode) -> Self {
        self.noise = noise;
        self
    }

    pub fn init(mut self, init: Array1<f64>) -> Self {
        self.init = Some(init);
        self
    }

    pub fn budget(mut self, budget: f64) -> Self {
        self.budget = Some(budget);
        self
    }

    pub fn track_losses(mut self, on: bool) -> Self {
        self.track_losses = on;
        self
    }

    fn source(&self) -> Box<dyn NoiseSource> {
        match self.noise {
            NoiseMode::Gaussian => Box::new(GaussianNoise::new(self.seed)),
            NoiseMode::Zero => Box::new(ZeroNoise::new(self.seed)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub initial_loss: f64,
    /// Loss after each granted step; empty when tracking is off.
    pub losses: Vec<f64>,
    pub final_loss: f64,
    pub steps_taken: usize,
    pub budget_spent: f64,
    pub budget: f64,
    pub seed: u64,
    pub schedule_id: String,
    /// Noise scale of each granted step.
    pub sigmas: Vec<f64>,
    /// Ledger spend after each granted step.
    pub cumulative_costs: Vec<f64>,
    #[serde(skip)]
    pub theta: Array1<f64>,
}

fn schedule_id(schedule: &NoiseSchedule) -> String {
    format!("{}/T={}", schedule.recipe(), schedule.len())
}

/// Full-batch private GD with optional momentum.
pub fn run(model: &LossModel, schedule: &NoiseSchedule, config: &RunConfig) -> Result<RunRecord> {
    let mut noise = config.source();
    run_with(model, schedule, config, noise.as_mut())
}

/// Like [`run`] but without the up-front feasibility check: the ledger
/// alone decides when the run stops.
pub fn run_unchecked(model: &LossModel, schedule: &NoiseSchedule, config: &RunConfig) -> Result<RunRecord> {
    let mut noise = config.source();
    let budget = config.budget.unwrap_or(schedule.budget());
    let n = model.data().n();
    descend(model, schedule, config, noise.as_mut(), budget, Batch::Full, StepCost::gaussian, n)
}

/// [`run`] with a caller-supplied noise stream.
pub fn run_with(
    model: &LossModel,
    schedule: &NoiseSchedule,
    config: &RunConfig,
    noise: &mut dyn NoiseSource,
) -> Result<RunRecord> {
    let budget = config.budget.unwrap_or(schedule.budget());
    if schedule.total_cost() > budget * (1.0 + BUDGET_TOLERANCE) {
        return Err(Error::Infeasible { consumed: schedule.total_cost(), budget });
    }
    let n = model.data().n();
    descend(model, schedule, config, noise, budget, Batch::Full, StepCost::gaussian, n)
}

enum Batch {
    Full,
    Sampled(usize),
}

#[allow(clippy::too_many_arguments)]
fn descend<C>(
    model: &LossModel,
    schedule: &NoiseSchedule,
    config: &RunConfig,
    noise: &mut dyn NoiseSource,
    budget: f64,
    batch: Batch,
    cost_of: C,
    divisor: usize,
) -> Result<RunRecord>
where
    C: Fn(f64) -> Result<StepCost>,
{
    config.eta.validate()?;
    let d = model.dim();
    let mut theta = match &config.init {
        Some(init) if init.len() != d => {
            return Err(domain(format!("init has dimension {}, model has {d}", init.len())))
        }
        Some(init) => init.clone(),
        None => Array1::zeros(d),
    };
    let momentum = config.beta > 0.0;
    let mut state = MomentumState::new(d, config.beta)?;
    let g_const = sensitivity_constant(model, noise)?;
    let mut ledger = PrivacyLedger::new(budget)?;
    let mut buf = vec![0.0; d];
    let mut indices = Vec::new();

    let initial_loss = model.loss(theta.view());
    let mut losses = Vec::new();
    let mut sigmas = Vec::new();
    let mut cumulative = Vec::new();

    for (i, &sigma) in schedule.sigmas().iter().enumerate() {
        let t = i + 1;
        if ledger.request(cost_of(sigma)?) == Decision::Denied {
            break;
        }
        let mut grad = match batch {
            Batch::Full => model.clipped_mean_gradient(theta.view()),
            Batch::Sampled(b) => {
                indices.clear();
                indices.extend((0..b).map(|_| noise.index(model.data().n())));
                model.clipped_gradient_over(theta.view(), indices.iter().copied())
            }
        };
        add_noise(&mut grad, g_const * sigma / divisor as f64, noise, &mut buf);
        let eta = config.eta.at(t);
        if momentum {
            state.update(grad.view(), t)?;
            theta.scaled_add(-eta, state.m());
        } else {
            theta.scaled_add(-eta, &grad);
        }
        sigmas.push(sigma);
        cumulative.push(ledger.spent_r_units());
        if config.track_losses {
            losses.push(model.loss(theta.view()));
        }
    }

    let final_loss = match losses.last() {
        Some(l) => *l,
        None => model.loss(theta.view()),
    };
    Ok(RunRecord {
        initial_loss,
        losses,
        final_loss,
        steps_taken: sigmas.len(),
        budget_spent: ledger.spent_r_units(),
        budget,
        seed: config.seed,
        schedule_id: schedule_id(schedule),
        sigmas,
        cumulative_costs: cumulative,
        theta,
    })
}

/// Batch size `max(N sqrt(R), 1)`, rounded and capped at `N`.
pub fn default_batch_size(n: usize, r: f64) -> usize {
    ((n as f64 * r.sqrt()).round() as usize).clamp(1, n.max(1))
}

/// Subsampled private SGD: `batch` indices drawn with replacement each step.
///
/// The schedule is sized against the amplified budget `R / p^2` (its own
/// budget); the ledger charges `p^2 / sigma^2` per step against
/// `config.budget`, which defaults to `p^2` times the schedule budget.
/// A batch of `N` is the full-batch run.
pub fn run_psgd(model: &LossModel, schedule: &NoiseSchedule, batch: usize, config: &RunConfig) -> Result<RunRecord> {
    let n = model.data().n();
    if batch == 0 || batch > n {
        return Err(domain(format!("batch size must lie in 1..={n}, got {batch}")));
    }
    let mut noise = config.source();
    if batch == n {
        return run_with(model, schedule, config, noise.as_mut());
    }
    let p = batch as f64 / n as f64;
    let budget = config.budget.unwrap_or(schedule.budget() * p * p);
    let consumed = schedule.total_cost() * p * p;
    if consumed > budget * (1.0 + BUDGET_TOLERANCE) {
        return Err(Error::Infeasible { consumed, budget });
    }
    descend(
        model,
        schedule,
        config,
        noise.as_mut(),
        budget,
        Batch::Sampled(batch),
        |sigma| StepCost::subsampled(sigma, p),
        batch,
    )
}

/// Empirical batch-noise constant: `n * RMS ||batch - full|| / sqrt(D)` over
/// `draws` batches of size `n` at `theta`.
pub fn estimate_batch_noise(
    model: &LossModel,
    theta: ArrayView1<f64>,
    batch: usize,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    let n = model.data().n();
    if batch == 0 || batch > n || draws == 0 {
        return Err(domain("need 1 <= batch <= N and at least one draw"));
    }
    let full = model.clipped_mean_gradient(theta);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..draws {
        let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..n)).collect();
        let diff = model.clipped_gradient_over(theta, idx) - &full;
        total += diff.dot(&diff);
    }
    Ok(batch as f64 * (total / draws as f64).sqrt() / (model.dim() as f64).sqrt())
}
