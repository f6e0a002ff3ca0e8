use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use noisesched::accountant::{dp_to_zcdp, gaussian_step_cost, subsampled_step_cost, zcdp_to_dp};
use noisesched::analysis::{analyze, Analysis, ProblemSpec};
use noisesched::harness::{self, ExperimentConfig};
use noisesched::influence::{self, estimate_influence_profile, Retrainer};
use noisesched::models::{Dataset, LossKind, LossModel};
use noisesched::optimizer::{self, RunConfig, StepSize};
use noisesched::schedules::{self, NoiseSchedule, PLANNING_HEADROOM};
use noisesched::{Error, Result};

#[derive(Parser)]
#[command(name = "noisesched", version, about = "Private gradient descent with scheduled noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert between zCDP and (eps, delta)-DP, or price one noisy step.
    Account(AccountArgs),
    /// Bounds and iteration counts for a problem description (JSON).
    Analyze {
        /// JSON file; `-` reads standard input.
        problem: PathBuf,
    },
    /// Emit a noise schedule as CSV.
    Schedule(ScheduleArgs),
    /// Train once and emit the per-step trace as CSV.
    Train(TrainArgs),
    /// Estimate per-step influence by retraining.
    Influence(InfluenceArgs),
    /// Write a synthetic two-cluster dataset.
    GenData(GenDataArgs),
    /// Run a schedule comparison from a JSON config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Report CSV path; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write gnuplot-ready curves here.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Repeat an experiment over several data scales.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        scales: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
}

#[derive(Args)]
struct AccountArgs {
    #[arg(long, conflicts_with_all = ["eps", "sigma"])]
    rho: Option<f64>,
    #[arg(long, conflicts_with = "sigma")]
    eps: Option<f64>,
    #[arg(long, default_value_t = 1e-8)]
    delta: f64,
    #[arg(long)]
    sigma: Option<f64>,
    /// Sampling rate for a subsampled step.
    #[arg(long, requires = "sigma")]
    rate: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleRecipe {
    Uniform,
    Dynamic,
    Gd,
    Momentum,
    ExpFit,
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long, value_enum)]
    recipe: ScheduleRecipe,
    #[arg(long = "T")]
    t: usize,
    #[arg(long = "R")]
    r: f64,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value = "quadratic")]
    model: LossKind,
    /// Feature CSV, label in the last column.
    #[arg(long)]
    data: PathBuf,
    /// Standardize and rescale rows to this maximum norm first.
    #[arg(long)]
    scale: Option<f64>,
    /// Clipping norm; `0` disables clipping.
    #[arg(long, default_value_t = 4.0)]
    clip: f64,
    /// Step size; `1/M` when absent.
    #[arg(long)]
    eta: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Schedule CSV with a `sigma` column.
    #[arg(long)]
    schedule: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mini-batch size; full batch when absent.
    #[arg(long)]
    batch: Option<usize>,
    /// Ledger budget; the schedule's total cost when absent.
    #[arg(long = "R")]
    r: Option<f64>,
}

#[derive(Args)]
struct InfluenceArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long = "T")]
    t: usize,
    #[arg(long = "R")]
    r: f64,
    /// Noise grid as `lo:hi:n`, log-spaced.
    #[arg(long, default_value = "20:200:7")]
    grid: String,
    #[arg(long, default_value_t = influence::DEFAULT_REPEATS)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long = "D")]
    d: usize,
    #[arg(long = "N")]
    n: usize,
    #[arg(long, default_value_t = 10.0)]
    distance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn account(a: &AccountArgs) -> Result<String> {
    if let Some(sigma) = a.sigma {
        return Ok(match a.rate {
            Some(p) => format!("sigma={sigma} rate={p} r_unit_cost={}", subsampled_step_cost(sigma, p)?),
            None => {
                let c = gaussian_step_cost(sigma)?;
                format!("sigma={sigma} r_unit_cost={c} rho={}", c / 2.0)
            }
        });
    }
    match (a.rho, a.eps) {
        (Some(rho), _) => Ok(format!("rho={rho} delta={} eps={}", a.delta, zcdp_to_dp(rho, a.delta)?)),
        (None, Some(eps)) => Ok(format!("eps={eps} delta={} rho={}", a.delta, dp_to_zcdp(eps, a.delta)?)),
        (None, None) => Err(Error::Domain("give one of --rho, --eps or --sigma".into())),
    }
}

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

const ANALYZE_COLUMNS: [&str; 15] = [
    "alpha",
    "kappa",
    "gamma",
    "T_uniform",
    "erub_uniform",
    "T_dynamic",
    "erub_dynamic",
    "T_hat",
    "T_hat_capped",
    "eta0",
    "momentum_gamma",
    "T_momentum_uniform",
    "erub_momentum_uniform",
    "T_momentum_dynamic",
    "erub_momentum_dynamic",
];

fn write_analysis<W: Write>(a: &Analysis, out: W) -> Result<()> {
    let c = &a.constants;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ANALYZE_COLUMNS)?;
    w.write_record([
        c.alpha.to_string(),
        c.kappa.to_string(),
        c.gamma.to_string(),
        a.uniform.t.to_string(),
        a.uniform.erub.to_string(),
        a.dynamic.t.to_string(),
        a.dynamic.erub.to_string(),
        cell(a.t_hat.map(|h| h.value)),
        cell(a.t_hat.map(|h| h.capped)),
        cell(a.eta0),
        cell(a.momentum_gamma),
        cell(a.momentum_uniform.map(|b| b.t)),
        cell(a.momentum_uniform.map(|b| b.erub)),
        cell(a.momentum_dynamic.map(|b| b.t)),
        cell(a.momentum_dynamic.map(|b| b.erub)),
    ])?;
    w.flush()?;
    Ok(())
}

fn build_schedule(a: &ScheduleArgs) -> Result<NoiseSchedule> {
    let gamma = || a.gamma.ok_or_else(|| Error::Domain("this recipe needs --gamma".into()));
    schedules::plan(a.r, |r| match a.recipe {
        ScheduleRecipe::Uniform => schedules::uniform_schedule(a.t, r),
        ScheduleRecipe::Gd => schedules::gd_closed_form(gamma()?, a.t, r),
        ScheduleRecipe::Dynamic => {
            let q = influence::analytic_gd_influence(gamma()?, 1.0, a.t)?;
            schedules::dynamic_from_influence(&q.q, r)
        }
        ScheduleRecipe::Momentum => schedules::momentum_dynamic(gamma()?, a.beta, a.t, r),
        ScheduleRecipe::ExpFit => {
            Ok(schedules::fit_exponential(&schedules::gd_closed_form(gamma()?, a.t, r)?)?.schedule)
        }
    })
}

fn write_schedule<W: Write>(s: &NoiseSchedule, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "sigma", "sigma_sq", "r_unit_cost"])?;
    for (i, (sigma, cost)) in s.sigmas().iter().zip(s.step_costs()).enumerate() {
        w.write_record([(i + 1).to_string(), sigma.to_string(), (sigma * sigma).to_string(), cost.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the `sigma` column of a schedule CSV.
fn read_schedule(path: &Path, budget: Option<f64>) -> Result<NoiseSchedule> {
    let mut r = csv::Reader::from_path(path)?;
    let col = r
        .headers()?
        .iter()
        .position(|h| h.trim() == "sigma")
        .ok_or_else(|| Error::Parse { line: 1, message: "schedule has no `sigma` column".into() })?;
    let mut sigmas = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = rec.get(col).unwrap_or("");
        let v = field
            .trim()
            .parse::<f64>()
            .map_err(|e| Error::Parse { line: i + 2, message: format!("bad sigma '{field}': {e}") })?;
        sigmas.push(v);
    }
    let total: f64 = sigmas.iter().map(|s| 1.0 / (s * s)).sum();
    NoiseSchedule::custom(sigmas, budget.unwrap_or(total / (1.0 - PLANNING_HEADROOM)))
}

fn load_model(a: &ModelArgs) -> Result<(LossModel, f64)> {
    let mut data = harness::load_csv(&a.data)?;
    if let Some(s) = a.scale {
        data = harness::preprocess(&data, s)?;
    }
    let clip = (a.clip > 0.0).then_some(a.clip);
    let model = LossModel::new(a.model, Arc::new(data), clip)?;
    let eta = match a.eta {
        Some(e) => e,
        None => 1.0 / model.smoothness_bound()?,
    };
    Ok((model, eta))
}

fn train(a: &TrainArgs) -> Result<()> {
    let (model, eta) = load_model(&a.model)?;
    let schedule = read_schedule(&a.schedule, a.r)?;
    let cfg = RunConfig::new(StepSize::Constant(eta), a.seed).beta(a.beta);
    let rec = match a.batch {
        Some(b) => optimizer::run_psgd(&model, &schedule, b, &cfg)?,
        None => optimizer::run(&model, &schedule, &cfg)?,
    };
    info!("{} of {} steps, spent {} of {}", rec.steps_taken, schedule.len(), rec.budget_spent, rec.budget);
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record(["t", "loss", "sigma", "cumulative_cost"])?;
    w.write_record(["0".to_string(), rec.initial_loss.to_string(), String::new(), "0".to_string()])?;
    for t in 0..rec.steps_taken {
        w.write_record([
            (t + 1).to_string(),
            rec.losses[t].to_string(),
            rec.sigmas[t].to_string(),
            rec.cumulative_costs[t].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Domain(format!("grid must look like lo:hi:n, got '{s}'"));
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, n] = parts.as_slice() else { return Err(bad()) };
    let lo: f64 = lo.parse().map_err(|_| bad())?;
    let hi: f64 = hi.parse().map_err(|_| bad())?;
    let n: usize = n.parse().map_err(|_| bad())?;
    influence::log_grid(lo, hi, n)
}

fn estimate_influence(a: &InfluenceArgs) -> Result<()> {
    let (model, eta) = load_model(&a.model)?;
    let grid = parse_grid(&a.grid)?;
    let base = schedules::plan(a.r, |r| schedules::uniform_schedule(a.t, r))?;
    let trainer = Retrainer { model: &model, config: RunConfig::new(StepSize::Constant(eta), a.seed) };
    let profile = estimate_influence_profile(&trainer, &base, &grid, a.repeats, a.seed)?;
    let fits = profile.fits.as_deref().unwrap_or_default();
    let mut w = csv::Writer::from_writer(io::stdout().lock());
    w.write_record(["t", "q_hat", "c0", "residual"])?;
    for (i, (q, f)) in profile.q.iter().zip(fits).enumerate() {
        w.write_record([(i + 1).to_string(), q.to_string(), f.c0.to_string(), f.residual.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_json(&fs::read_to_string(path)?)
}

fn emit_reports(reports: &[harness::ExperimentReport], out: Option<&Path>, plot: Option<&Path>) -> Result<()> {
    harness::write_report(reports, output(out)?)?;
    if let Some(p) = plot {
        harness::write_plot_data(reports, BufWriter::new(File::create(p)?))?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Account(a) => println!("{}", account(&a)?),
        Command::Analyze { problem } => {
            let mut text = String::new();
            if problem.as_os_str() == "-" {
                io::stdin().read_to_string(&mut text)?;
            } else {
                text = fs::read_to_string(&problem)?;
            }
            let spec: ProblemSpec = serde_json::from_str(&text)?;
            write_analysis(&analyze(&spec)?, io::stdout().lock())?;
        }
        Command::Schedule(a) => write_schedule(&build_schedule(&a)?, io::stdout().lock())?,
        Command::Train(a) => train(&a)?,
        Command::Influence(a) => estimate_influence(&a)?,
        Command::GenData(a) => {
            let d: Dataset = harness::gen_synthetic(a.d, a.n, a.distance, a.seed)?;
            harness::write_csv(&d, &a.out)?;
        }
        Command::Experiment { config, out, plot } => {
            let report = harness::run_experiment(&read_config(&config)?)?;
            emit_reports(&[report], out.as_deref(), plot.as_deref())?;
        }
        Command::Sweep { config, scales, out, plot } => {
            let reports = harness::scale_sweep(&read_config(&config)?, &scales)?;
            emit_reports(&reports, out.as_deref(), plot.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
