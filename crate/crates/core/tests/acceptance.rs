//! Acceptance suite. Runs every criterion in order and prints one line each.
//! Exits non-zero if any criterion fails.

// The budget 0.3927 is not pi/8.
#![allow(clippy::approx_constant)]

use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use noisesched::accountant::{dp_to_zcdp, zcdp_to_dp};
use noisesched::analysis::{compute_t_hat, momentum_noise_term_u3};
use noisesched::harness::{self, ExperimentConfig};
use noisesched::influence::{estimate_influence_profile, log_grid, Retrainer};
use noisesched::models::{Dataset, LossKind, LossModel};
use noisesched::optimizer::{self, GaussianNoise, MomentumState, NoiseMode, RunConfig, StepSize};
use noisesched::schedules::{self, NoiseSchedule, Recipe};
use noisesched::stats;

type Outcome = Result<String, String>;

struct Criterion {
    id: usize,
    name: &'static str,
    limit: Duration,
    check: fn() -> Outcome,
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

fn c1_accountant() -> Outcome {
    let rho = dp_to_zcdp(4.0, 1e-8).map_err(|e| e.to_string())?;
    let eps = zcdp_to_dp(0.1963, 1e-8).map_err(|e| e.to_string())?;
    ensure((0.1960..=0.1968).contains(&rho), || format!("dp_to_zcdp(4, 1e-8) = {rho}"))?;
    ensure((3.99..=4.01).contains(&eps), || format!("zcdp_to_dp(0.1963, 1e-8) = {eps}"))?;
    Ok(format!("rho = {rho:.6}, eps = {eps:.5}"))
}

/// Smallest `sum q_t / w_t` over cost splits `w = k / K` with positive integer
/// parts `k` summing to `K`.
fn grid_minimum(q: &[f64], k_total: usize) -> f64 {
    fn walk(q: &[f64], left: usize, k_total: usize, acc: f64, best: &mut f64) {
        if q.len() == 1 {
            let v = acc + q[0] * k_total as f64 / left as f64;
            if v < *best {
                *best = v;
            }
            return;
        }
        for k in 1..=left - (q.len() - 1) {
            walk(&q[1..], left - k, k_total, acc + q[0] * k_total as f64 / k as f64, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(q, k_total, k_total, 0.0, &mut best);
    best
}

fn c2_weighted_noise_identities() -> Outcome {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t = r.random_range(1..=64);
        let budget = 10f64.powf(r.random_range(-2.0..2.0));
        let q: Vec<f64> = (0..t).map(|_| 10f64.powf(r.random_range(-3.0..3.0))).collect();
        let dynamic = schedules::dynamic_from_influence(&q, budget).map_err(|e| e.to_string())?;
        let uniform = schedules::uniform_schedule(t, budget).map_err(|e| e.to_string())?;
        let weighted = |s: &NoiseSchedule| budget * q.iter().zip(s.variances()).map(|(a, v)| a * v).sum::<f64>();
        let root_sum: f64 = q.iter().map(|v| v.sqrt()).sum();
        let e = rel_err(weighted(&dynamic), root_sum * root_sum);
        ensure(e <= 1e-9, || format!("weighted noise off by {e:e} at T = {t}"))?;
        worst = worst.max(e);

        let mean = root_sum / t as f64;
        let var = q.iter().map(|v| (v.sqrt() - mean).powi(2)).sum::<f64>() / t as f64;
        let expect = (t * t) as f64 * var;
        let gap = weighted(&uniform) - weighted(&dynamic);
        // With T = 1 both schedules coincide and the gap is pure rounding.
        let scale = if t == 1 { weighted(&uniform) } else { expect };
        let e = (gap - expect).abs() / scale;
        ensure(e <= 1e-9, || format!("uniform gap {gap} vs T^2 Var {expect} at T = {t}"))?;
        worst = worst.max(e);
    }

    let mut brute = 0;
    for t in 1..=6 {
        let k_total = [0, 1000, 1000, 400, 120, 60, 40][t];
        for _ in 0..30 {
            let q: Vec<f64> = (0..t).map(|_| 10f64.powf(r.random_range(-2.0..2.0))).collect();
            let analytic = q.iter().map(|v| v.sqrt()).sum::<f64>().powi(2);
            let grid = grid_minimum(&q, k_total);
            ensure(grid >= analytic * (1.0 - 1e-12), || format!("grid {grid} beat analytic {analytic} at T = {t}"))?;
            brute += 1;
        }
    }
    Ok(format!("worst rel err {worst:.1e}; {brute} brute-force instances"))
}

fn c3_schedule_equivalence() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let gamma: f64 = r.random_range(0.01..0.999);
        let t = r.random_range(1..=100);
        let budget = 10f64.powf(r.random_range(-2.0..2.0));
        let alpha = 10f64.powf(r.random_range(-4.0..2.0));
        let q: Vec<f64> = (1..=t).map(|s| gamma.powi((t - s) as i32) * alpha).collect();
        let a = schedules::gd_closed_form(gamma, t, budget).map_err(|e| e.to_string())?;
        let b = schedules::dynamic_from_influence(&q, budget).map_err(|e| e.to_string())?;
        for (x, y) in a.sigmas().iter().zip(b.sigmas()) {
            worst = worst.max(rel_err(*x, *y));
        }
    }
    ensure(worst <= 1e-9, || format!("max rel diff {worst:e}"))?;
    Ok(format!("max rel diff {worst:.1e}"))
}

fn random_dataset(r: &mut ChaCha8Rng, n: usize, d: usize) -> Arc<Dataset> {
    let x = Array2::from_shape_fn((n, d), |_| normal(r));
    let y = Array1::from_shape_fn(n, |_| if r.random::<bool>() { 1.0 } else { -1.0 });
    Arc::new(Dataset::new(x, Some(y)).unwrap())
}

fn c4_privacy_fuzz() -> Outcome {
    let mut r = rng(4);
    let mut denied = 0;
    let mut steps = 0;
    for case in 0..100 {
        let data = random_dataset(&mut r, 40, 4);
        let kind = if r.random::<bool>() { LossKind::Quadratic } else { LossKind::Logistic };
        let model = LossModel::new(kind, data, Some(r.random_range(0.5..4.0))).unwrap();
        let t = r.random_range(1..=30);
        let sigmas: Vec<f64> = (0..t).map(|_| 10f64.powf(r.random_range(-0.5..1.5))).collect();
        let total: f64 = sigmas.iter().map(|s| 1.0 / (s * s)).sum();
        let batch = if r.random_range(0..3) == 0 { Some(r.random_range(1..40)) } else { None };
        let p = batch.map_or(1.0, |b| b as f64 / 40.0);
        // Budgets below, at and above the full cost; exact prefix sums probe the strict gate.
        let budget = match r.random_range(0..3) {
            0 => p * p * total * r.random_range(0.05..1.0),
            1 => p * p * sigmas[..r.random_range(1..=t)].iter().map(|s| 1.0 / (s * s)).sum::<f64>(),
            _ => p * p * total * r.random_range(1.0..2.0),
        };
        let schedule = NoiseSchedule::custom(sigmas.clone(), budget / (p * p)).unwrap();
        let cfg =
            RunConfig::new(StepSize::Constant(0.05), case).beta(if case % 2 == 0 { 0.0 } else { 0.7 }).budget(budget);
        let run = |s: &NoiseSchedule, c: &RunConfig| match batch {
            None => optimizer::run_unchecked(&model, s, c),
            Some(b) => optimizer::run_psgd(&model, s, b, c),
        };
        // PSGD refuses infeasible schedules up front; cap it to the ledger's view.
        let rec = if batch.is_some() && p * p * total > budget {
            let mut k = 0;
            let mut acc = 0.0;
            while k < t && acc + p * p / (sigmas[k] * sigmas[k]) <= budget {
                acc += p * p / (sigmas[k] * sigmas[k]);
                k += 1;
            }
            if k == 0 {
                continue;
            }
            run(&NoiseSchedule::custom(sigmas[..k].to_vec(), budget / (p * p)).unwrap(), &cfg)
        } else {
            run(&schedule, &cfg)
        }
        .map_err(|e| format!("case {case}: {e}"))?;

        let k = rec.steps_taken;
        let spent: f64 = sigmas[..k].iter().map(|s| p * p / (s * s)).sum();
        ensure(rec.budget_spent <= budget, || format!("case {case}: spent {} > R = {budget}", rec.budget_spent))?;
        ensure(spent <= budget * (1.0 + 1e-12), || format!("case {case}: recomputed spend {spent} > R = {budget}"))?;
        ensure(rec.sigmas == sigmas[..k], || format!("case {case}: granted steps are not a prefix"))?;
        if k < t {
            denied += 1;
            let next = p * p / (sigmas[k] * sigmas[k]);
            ensure(spent + next >= budget * (1.0 - 1e-12), || {
                format!("case {case}: step {} denied with room left", k + 1)
            })?;
        }
        // Nothing may happen after a denial: replaying only the granted prefix
        // must land on the same parameters bit for bit.
        if k > 0 {
            let prefix = NoiseSchedule::custom(sigmas[..k].to_vec(), f64::INFINITY).unwrap();
            let replay_cfg = cfg.clone().budget(f64::INFINITY);
            let replay = run(&prefix, &replay_cfg).map_err(|e| format!("case {case}: {e}"))?;
            ensure(replay.theta == rec.theta, || format!("case {case}: parameters moved after the last granted step"))?;
        }
        steps += k;
    }
    Ok(format!("{steps} steps granted, {denied} runs stopped by the ledger"))
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Array2<f64>, mut b: Array1<f64>) -> Array1<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[[i, c]].abs().total_cmp(&a[[j, c]].abs())).unwrap();
        for k in 0..n {
            a.swap([c, k], [p, k]);
        }
        b.swap(c, p);
        for i in c + 1..n {
            let f = a[[i, c]] / a[[c, c]];
            for k in c..n {
                a[[i, k]] -= f * a[[c, k]];
            }
            b[i] -= f * b[c];
        }
    }
    let mut x = Array1::zeros(n);
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[[i, k]] * x[k]).sum();
        x[i] = (b[i] - s) / a[[i, i]];
    }
    x
}

fn c5_convergence() -> Outcome {
    let mut r = rng(5);
    let (n, d) = (500, 20);
    let x = Array2::from_shape_fn((n, d), |(_, j)| normal(&mut r) * 10f64.powf(-(j as f64) / (d - 1) as f64));
    let data = Arc::new(Dataset::new(x.clone(), None).unwrap());
    let model = LossModel::quadratic(data, None).map_err(|e| e.to_string())?;
    let spec = model.estimate_spectrum().map_err(|e| e.to_string())?;
    let gamma = 1.0 - spec.mu_min / spec.m_max;

    let h = x.t().dot(&x) / n as f64;
    let rhs = x.t().dot(&Array1::ones(n)) / n as f64;
    let theta_star = solve(h, rhs);
    let f_star = model.loss(theta_star.view());

    let schedule = schedules::uniform_schedule(200, 1.0).map_err(|e| e.to_string())?;
    let cfg = RunConfig::new(StepSize::Constant(1.0 / spec.m_max), 0).noise(NoiseMode::Zero).budget(f64::INFINITY);
    let rec = optimizer::run(&model, &schedule, &cfg).map_err(|e| e.to_string())?;
    ensure(rec.steps_taken == 200, || format!("only {} steps ran", rec.steps_taken))?;
    let mut prev = rec.initial_loss - f_star;
    let mut worst = 0.0f64;
    for (t, l) in rec.losses.iter().enumerate() {
        let gap = l - f_star;
        ensure(gap <= gamma * prev * (1.0 + 1e-10), || format!("step {}: {gap:e} > gamma * {prev:e}", t + 1))?;
        worst = worst.max(gap / prev);
        prev = gap;
    }
    Ok(format!("kappa = {:.1}, gamma = {gamma:.5}, worst ratio {worst:.5}, final gap {prev:.3e}", spec.kappa()))
}

const C6_SEEDS: [u64; 3] = [1, 2, 3];

fn c6_config(seed: u64) -> ExperimentConfig {
    let json = format!(
        r#"{{"model": "quadratic", "data": {{"D": 20, "N": 500, "distance": 5, "seed": {seed}}},
            "data_scale": 5, "R": 0.3927, "clip": 4, "eta": "default",
            "recipes": ["uniform", "gd_closed_form"], "T_min": 1, "T_max": 100, "repeats": 100,
            "base_seed": {seed}, "init": {{"random": {{"scale": 1}}}}}}"#
    );
    ExperimentConfig::from_json(&json).unwrap()
}

fn c6_advantage() -> Outcome {
    let mut notes = Vec::new();
    for seed in C6_SEEDS {
        let cfg = c6_config(seed);
        let raw = cfg.data.load().map_err(|e| e.to_string())?;
        let data = Arc::new(harness::preprocess(&raw, cfg.data_scale).map_err(|e| e.to_string())?);
        let report = harness::run_experiment_on(&cfg, data.clone()).map_err(|e| e.to_string())?;
        let (uni, dy) = (&report.recipes[0], &report.recipes[1]);
        if let Some(e) = uni.error.as_ref().or(dy.error.as_ref()) {
            return Err(format!("seed {seed}: {e}"));
        }
        let f_star = report.f_star.unwrap();
        let t_dyn = dy.best_t.unwrap();
        ensure(dy.mean_loss <= uni.mean_loss, || {
            format!("seed {seed}: dynamic {} > uniform {}", dy.mean_loss, uni.mean_loss)
        })?;

        let setup = harness::setup(&cfg, data.clone()).map_err(|e| e.to_string())?;
        let init_gap = setup.model.loss(setup.init.view()) - f_star;
        let advantage = dy.influence_variance.unwrap() * init_gap;
        let mut quiet = cfg.clone();
        quiet.r = f64::INFINITY;
        quiet.recipes = vec![Recipe::Uniform];
        quiet.t_min = t_dyn;
        quiet.t_max = t_dyn;
        quiet.repeats = 1;
        let floor = harness::run_experiment_on(&quiet, data).map_err(|e| e.to_string())?.recipes[0].mean_loss - f_star;

        let (lo, hi) = stats::bootstrap_diff_ci(&uni.best_losses, &dy.best_losses, 2000, 0.95, seed);
        let triggered = advantage > 10.0 * floor;
        if triggered {
            ensure(lo > 0.0, || format!("seed {seed}: improvement CI [{lo:.2e}, {hi:.2e}] includes 0"))?;
        }
        notes.push(format!(
            "seed {seed}: T {}/{t_dyn}, rel {:+.3}%, CI [{lo:.1e}, {hi:.1e}]{}",
            uni.best_t.unwrap(),
            dy.rel_loss.unwrap() * 100.0,
            if triggered { " (CI required)" } else { "" }
        ));
    }
    Ok(notes.join("; "))
}

fn c7_influence() -> Outcome {
    let raw = harness::gen_synthetic(20, 500, 10.0, 1).map_err(|e| e.to_string())?;
    let data = Arc::new(harness::preprocess(&raw, 5.0).map_err(|e| e.to_string())?);
    let model = LossModel::quadratic(data, Some(4.0)).map_err(|e| e.to_string())?;
    let spec = model.estimate_spectrum().map_err(|e| e.to_string())?;
    let gamma = spec.gamma();
    let t = 50;
    let base = schedules::plan(0.3927, |r| schedules::uniform_schedule(t, r)).map_err(|e| e.to_string())?;
    let trainer = Retrainer { model: &model, config: RunConfig::new(StepSize::Constant(1.0 / spec.m_max), 0) };
    let grid = log_grid(20.0, 200.0, 7).unwrap();
    let profile = estimate_influence_profile(&trainer, &base, &grid, 20, 1).map_err(|e| e.to_string())?;
    let analytic: Vec<f64> = (1..=t).map(|s| gamma.powi((t - s) as i32)).collect();
    let rho = stats::spearman(&profile.q, &analytic);
    ensure(rho >= 0.9, || format!("Spearman {rho:.4} < 0.9"))?;
    Ok(format!("Spearman {rho:.4} (gamma = {gamma:.4})"))
}

fn c8_momentum_exactness() -> Outcome {
    let mut r = rng(8);
    let mut checked = 0;
    for _ in 0..100 {
        let d = r.random_range(1..10);
        let beta = r.random_range(0.0..0.999);
        let g = Array1::from_shape_fn(d, |_| normal(&mut r) * 10f64.powf(r.random_range(-3.0..3.0)));
        let mut state = MomentumState::new(d, beta).map_err(|e| e.to_string())?;
        for t in 1..=200 {
            state.update(g.view(), t).map_err(|e| e.to_string())?;
            ensure(*state.m() == g, || format!("beta = {beta}, step {t}: m != g"))?;
            checked += 1;
        }
    }

    for case in 0..10u64 {
        let data = random_dataset(&mut r, 60, 5);
        let model = LossModel::logistic(data, Some(2.0)).map_err(|e| e.to_string())?;
        let sigmas: Vec<f64> = (0..25).map(|_| r.random_range(1.0..20.0)).collect();
        let schedule = NoiseSchedule::custom(sigmas.clone(), f64::INFINITY).unwrap();
        let eta = 0.3;
        let gd = optimizer::run(&model, &schedule, &RunConfig::new(StepSize::Constant(eta), case))
            .map_err(|e| e.to_string())?;

        let mut noise = GaussianNoise::new(case);
        let mut state = MomentumState::new(model.dim(), 0.0).map_err(|e| e.to_string())?;
        let mut theta = Array1::zeros(model.dim());
        for (i, &s) in sigmas.iter().enumerate() {
            let g = optimizer::privatize_gradient(&model, theta.view(), s, &mut noise).map_err(|e| e.to_string())?;
            state.update(g.view(), i + 1).map_err(|e| e.to_string())?;
            theta.scaled_add(-eta, state.m());
            ensure(model.loss(theta.view()) == gd.losses[i], || {
                format!("case {case}: loss differs at step {}", i + 1)
            })?;
        }
        ensure(theta == gd.theta, || format!("case {case}: final parameters differ"))?;
    }
    Ok(format!("{checked} constant-stream steps exact; 10 beta = 0 trajectories bit-identical"))
}

fn c9_momentum_noise_term() -> Outcome {
    let mut r = rng(9);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let t = r.random_range(1..=100);
        let gamma = r.random_range(0.0..1.0);
        let sigmas: Vec<f64> = (0..t).map(|_| 10f64.powf(r.random_range(-1.0..1.0))).collect();
        let u3 = momentum_noise_term_u3(gamma, 0.0, &sigmas).map_err(|e| e.to_string())?;
        let gd: f64 = sigmas.iter().enumerate().map(|(i, s)| gamma.powi((t - 1 - i) as i32) * s * s).sum();
        worst = worst.max((u3 - gd).abs());
    }
    ensure(worst <= 1e-12, || format!("max abs diff {worst:e}"))?;

    let scan = (1..=10_000).filter(|&t| 0.9f64.powi(t - 1) >= (1.0 - 0.5) / (1.0 - 0.5f64.powi(t))).max().unwrap();
    let t_hat = compute_t_hat(0.9, 0.5);
    ensure(t_hat.value == 7 && scan == 7 && !t_hat.capped, || format!("T_hat = {:?}, scan = {scan}", t_hat))?;
    Ok(format!("max abs diff {worst:.1e}; T_hat(0.9, 0.5) = {}", t_hat.value))
}

fn c10_exponential_fit() -> Outcome {
    let mut r = rng(10);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let gamma: f64 = r.random_range(0.5..0.99);
        let budget = 10f64.powf(r.random_range(-2.0..2.0));
        let target = schedules::gd_closed_form(gamma, 100, budget).map_err(|e| e.to_string())?;
        let fit = schedules::fit_exponential(&target).map_err(|e| e.to_string())?;
        worst = worst.max(rel_err(fit.k, (1.0 / gamma).ln() / 4.0));
    }
    ensure(worst <= 1e-9, || format!("max rel err {worst:e}"))?;
    Ok(format!("max rel err {worst:.1e}"))
}

fn central_difference(f: impl Fn(&Array1<f64>) -> f64, theta: &Array1<f64>) -> Array1<f64> {
    Array1::from_shape_fn(theta.len(), |j| {
        let h = 1e-5 * theta[j].abs().max(1.0);
        let (mut up, mut down) = (theta.clone(), theta.clone());
        up[j] += h;
        down[j] -= h;
        (f(&up) - f(&down)) / (2.0 * h)
    })
}

fn vec_rel_err(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let diff = (a - b).mapv(|v| v * v).sum().sqrt();
    diff / b.mapv(|v| v * v).sum().sqrt().max(f64::MIN_POSITIVE)
}

fn c11_gradients() -> Outcome {
    let mut r = rng(11);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let kind = if case % 2 == 0 { LossKind::Quadratic } else { LossKind::Logistic };
        let (n, d) = (r.random_range(1..20), r.random_range(1..10));
        let data = random_dataset(&mut r, n, d);
        let model = LossModel::new(kind, data.clone(), None).map_err(|e| e.to_string())?;
        let theta = Array1::from_shape_fn(d, |_| normal(&mut r) / (d as f64).sqrt());

        let fd = central_difference(|th| model.loss(th.view()), &theta);
        let e = vec_rel_err(&model.gradient(theta.view()), &fd);
        ensure(e <= 1e-6, || format!("case {case} ({kind}): mean gradient rel err {e:e}"))?;
        worst = worst.max(e);

        let per = model.per_sample_gradients(theta.view());
        for i in 0..n {
            let row = data.features().row(i).to_owned().insert_axis(ndarray::Axis(0));
            let label = data.labels().map(|y| Array1::from_elem(1, y[i]));
            let single = LossModel::new(kind, Arc::new(Dataset::new(row, label).unwrap()), None).unwrap();
            let fd = central_difference(|th| single.loss(th.view()), &theta);
            let e = vec_rel_err(&per.row(i).to_owned(), &fd);
            ensure(e <= 1e-6, || format!("case {case} ({kind}): sample {i} rel err {e:e}"))?;
            worst = worst.max(e);
        }
    }
    Ok(format!("max rel err {worst:.1e}"))
}

fn main() {
    let secs = Duration::from_secs;
    let criteria = [
        Criterion { id: 1, name: "accountant fidelity", limit: Duration::from_millis(1), check: c1_accountant },
        Criterion { id: 2, name: "weighted-noise identities", limit: secs(10), check: c2_weighted_noise_identities },
        Criterion { id: 3, name: "schedule equivalence", limit: secs(1), check: c3_schedule_equivalence },
        Criterion { id: 4, name: "privacy safety fuzz", limit: secs(30), check: c4_privacy_fuzz },
        Criterion { id: 5, name: "convergence oracle", limit: secs(5), check: c5_convergence },
        Criterion { id: 6, name: "dynamic vs uniform advantage", limit: secs(300), check: c6_advantage },
        Criterion { id: 7, name: "influence estimation fidelity", limit: secs(600), check: c7_influence },
        Criterion { id: 8, name: "momentum exactness", limit: secs(1), check: c8_momentum_exactness },
        Criterion { id: 9, name: "momentum noise term", limit: secs(1), check: c9_momentum_noise_term },
        Criterion { id: 10, name: "exponential fit recovery", limit: secs(1), check: c10_exponential_fit },
        Criterion { id: 11, name: "gradient correctness", limit: secs(5), check: c11_gradients },
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut out = std::io::stdout().lock();
    for c in criteria.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
        let start = Instant::now();
        let result = (c.check)();
        let took = start.elapsed();
        let result = match result {
            Ok(msg) if took > c.limit => Err(format!("{msg}; took {took:.2?}, limit {:?}", c.limit)),
            other => other,
        };
        let (tag, msg) = match &result {
            Ok(m) => ("PASS", m),
            Err(m) => ("FAIL", m),
        };
        if result.is_err() {
            failed += 1;
        }
        writeln!(out, "{tag} [{:>2}] {} ({took:.2?}): {msg}", c.id, c.name).unwrap();
        out.flush().unwrap();
    }
    if failed > 0 {
        writeln!(out, "{failed} criteria failed").unwrap();
        std::process::exit(1);
    }
}
