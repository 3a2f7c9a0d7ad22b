//! Command-line front end. Every command is deterministic given its inputs,
//! flags and seed.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use interjm_core::benchmark::BenchmarkConfig;
use interjm_core::evaluation::{evaluate, MetricReport};
use interjm_core::inference::{LikelihoodMode, McmcConfig, Priors};
use interjm_core::model::{BaselineFamily, ModelSpec};
use interjm_core::prediction::{PredictionConfig, ScenarioChoice};
use interjm_core::simulation::{
    calibration_summary, simulate_dataset, split_train_test, CalibratedDefaults, CalibrationSummary,
    SimulatedSubject, SimulationScenario, TriggerSource,
};
use interjm_core::survival::AssociationForm;
use interjm_core::JointParams;
use serde::Serialize;

use crate::engine::{predict, PredictRequest, DEFAULT_DRAWS, DEFAULT_SEED};
use crate::error::{Error, Result};
use crate::io;
use crate::parallel;
use crate::service;

#[derive(Debug, Parser)]
#[command(name = "interjm", version, about = "Joint models with intermediate events")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset and split it into train and test files.
    Simulate(SimulateArgs),
    /// Fit a joint model and write the posterior draws.
    Fit(FitArgs),
    /// Dynamic survival prediction for one subject.
    Predict(PredictArgs),
    /// AUC and prediction error of dynamic predictions at one anchor.
    Evaluate(EvaluateArgs),
    /// Compare the joint model with the extrapolation comparator on simulated data.
    Benchmark(BenchmarkArgs),
    /// Serve predictions over HTTP.
    Serve(ServeArgs),
    /// Summaries of large simulated samples used to calibrate the generator.
    Calibrate(CalibrateArgs),
}

fn parse_scenario_label(s: &str) -> std::result::Result<u8, String> {
    let label: u8 = s
        .parse()
        .map_err(|_| format!("unknown scenario {s}; valid labels are 1, 2, 3"))?;
    SimulationScenario::standard(label).map_err(|e| e.to_string())?;
    Ok(label)
}

fn parse_scenario_choice(s: &str) -> std::result::Result<ScenarioChoice, String> {
    s.parse().map_err(|e: interjm_core::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_scenario_label)]
    pub scenario: u8,
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Generator defaults file (default: the shipped calibrated values).
    #[arg(long)]
    pub defaults: Option<PathBuf>,
    /// Whether the trigger threshold applies to the observed or the noiseless biomarker.
    #[arg(long, value_enum, default_value_t = Trigger::Observed)]
    pub trigger: Trigger,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Trigger {
    Observed,
    Noiseless,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Subject file (id, event_time, event_indicator, intermediate_time, covariates...).
    #[arg(long)]
    pub subjects: PathBuf,
    /// Measurement file (id, time, value).
    #[arg(long)]
    pub measurements: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Likelihood {
    Full,
    LongitudinalOnly,
    PriorOnly,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Baseline {
    Weibull,
    Bspline,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `wt` (drop and slope change), `extrapolation`, or a model specification JSON file.
    #[arg(long, default_value = "wt")]
    pub model: String,
    /// Association keyword (none, value, slope, value+slope, area, value+slope+area, value+slope-int).
    #[arg(long)]
    pub association: Option<String>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    /// Prior settings JSON file.
    #[arg(long)]
    pub priors: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub chains: usize,
    #[arg(long, default_value_t = 3000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 2)]
    pub thin: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Likelihood::Full)]
    pub likelihood: Likelihood,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Fitted model file.
    #[arg(long)]
    pub model: PathBuf,
    /// Request document in the service format; replaces the subject options.
    #[arg(long, conflicts_with_all = ["subjects", "measurements", "id", "t", "u", "u_grid", "scenario"])]
    pub request: Option<PathBuf>,
    #[arg(long, requires = "measurements")]
    pub subjects: Option<PathBuf>,
    #[arg(long, requires = "subjects")]
    pub measurements: Option<PathBuf>,
    /// Subject id within the dataset.
    #[arg(long, requires = "subjects")]
    pub id: Option<String>,
    /// Landmark time.
    #[arg(long)]
    pub t: Option<f64>,
    /// Horizon (a single grid point).
    #[arg(long, conflicts_with = "u_grid")]
    pub u: Option<f64>,
    /// Comma-separated horizons.
    #[arg(long, value_delimiter = ',')]
    pub u_grid: Option<Vec<f64>>,
    /// now, at=<tau>, never, observed or occurred=<rho>.
    #[arg(long, value_parser = parse_scenario_choice)]
    pub scenario: Option<ScenarioChoice>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub resample: bool,
    /// Output file (default: standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub t: f64,
    #[arg(long, default_value_t = 2.0)]
    pub dt: f64,
    /// Fitted model used to compute the predictions.
    #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
    pub model: Option<PathBuf>,
    /// Precomputed predictions (id, group, at_landmark, at_own_time).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Where to write the computed predictions.
    #[arg(long, requires = "model")]
    pub write_predictions: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_DRAWS)]
    pub m: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Benchmark configuration JSON; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Option<Vec<u8>>,
    #[arg(long, value_delimiter = ',')]
    pub anchors: Option<Vec<f64>>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// The full-size design (250 replications of 1500 subjects).
    #[arg(long)]
    pub full_scale: bool,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    /// Output directory for metrics.csv, summary.csv and report.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Fitted model files, as `path` (id = file stem) or `id=path`.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub defaults: Option<PathBuf>,
}

fn defaults(path: Option<&Path>) -> Result<CalibratedDefaults> {
    match path {
        Some(p) => io::load_defaults(p),
        None => Ok(io::shipped_defaults()?.defaults),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Serialize)]
struct TruthDocument<'a> {
    scenario: &'a SimulationScenario,
    truth: JointParams,
    seed: u64,
    calibration: CalibrationSummary,
    subjects: &'a [SimulatedSubjectTruth],
}

#[derive(Serialize)]
struct SimulatedSubjectTruth {
    id: String,
    random_effects: Vec<f64>,
    true_event_time: Option<f64>,
    censoring_time: f64,
    scheduled_intermediate: Option<f64>,
}

impl From<&SimulatedSubject> for SimulatedSubjectTruth {
    fn from(s: &SimulatedSubject) -> Self {
        Self {
            id: s.record.id.clone(),
            random_effects: s.random_effects.clone(),
            true_event_time: s.true_event_time,
            censoring_time: s.censoring_time,
            scheduled_intermediate: s.scheduled_intermediate,
        }
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut scenario = SimulationScenario::with_defaults(a.scenario, &defaults(a.defaults.as_deref())?)?;
    scenario.n = a.n;
    scenario.trigger = match a.trigger {
        Trigger::Observed => TriggerSource::Observed,
        Trigger::Noiseless => TriggerSource::Noiseless,
    };
    let (data, subjects) = simulate_dataset(&scenario, a.seed)?;
    let (train, test) = split_train_test(&data, a.seed)?;
    create_dir(&a.out)?;
    io::save_dataset(&train, &a.out.join("train_subjects.csv"), &a.out.join("train_measurements.csv"))?;
    io::save_dataset(&test, &a.out.join("test_subjects.csv"), &a.out.join("test_measurements.csv"))?;
    let latent: Vec<SimulatedSubjectTruth> = subjects.iter().map(Into::into).collect();
    let doc = TruthDocument {
        scenario: &scenario,
        truth: scenario.truth(),
        seed: a.seed,
        calibration: calibration_summary(&scenario, &subjects),
        subjects: &latent,
    };
    io::write_json(&a.out.join("truth.json"), &doc)
}

fn model_spec(a: &FitArgs) -> Result<ModelSpec> {
    let mut spec = match a.model.as_str() {
        "wt" => ModelSpec::drop_and_slope_change(),
        "extrapolation" => ModelSpec::extrapolation(),
        path => io::read_json(Path::new(path))?,
    };
    if let Some(k) = &a.association {
        spec.association = AssociationForm::from_keyword(k)?;
    }
    match a.baseline {
        Some(Baseline::Weibull) => spec.baseline = BaselineFamily::Weibull,
        Some(Baseline::Bspline) => {
            spec.baseline = BaselineFamily::BsplineLogHazard {
                basis: None,
                n_basis: 9,
            }
        }
        None => {}
    }
    Ok(spec)
}

fn cmd_fit(a: &FitArgs, threads: Option<usize>) -> Result<()> {
    let data = io::load_dataset(&a.data.subjects, &a.data.measurements)?;
    let spec = model_spec(a)?;
    let priors: Priors = match &a.priors {
        Some(p) => io::read_json(p)?,
        None => Priors::default(),
    };
    let config = McmcConfig {
        chains: a.chains,
        iterations: a.iterations,
        burn_in: a.burn_in,
        thin: a.thin,
        seed: a.seed,
        likelihood: match a.likelihood {
            Likelihood::Full => LikelihoodMode::Full,
            Likelihood::LongitudinalOnly => LikelihoodMode::LongitudinalOnly,
            Likelihood::PriorOnly => LikelihoodMode::PriorOnly,
        },
        ..McmcConfig::default()
    };
    let fitted = parallel::with_threads(threads, || parallel::fit(&data, &spec, &priors, &config))??;
    for w in &fitted.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    io::write_json(&a.out, &fitted)
}

fn write_output<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(p) => io::write_json(p, value),
        None => {
            let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
    }
}

fn model_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let fitted = io::load_fitted(&a.model)?;
    let request = match &a.request {
        Some(p) => io::read_json::<PredictRequest>(p)?,
        None => {
            let missing = |what: &str| Error::Usage(format!("--{what} is required without --request"));
            let t = a.t.ok_or_else(|| missing("t"))?;
            let u_grid = match (&a.u_grid, a.u) {
                (Some(g), _) => g.clone(),
                (None, Some(u)) => vec![u],
                (None, None) => return Err(missing("u")),
            };
            let (history, covariates, intermediate_time) = match (&a.subjects, &a.measurements) {
                (Some(s), Some(m)) => {
                    let data = io::load_dataset(s, m)?;
                    let id = a.id.as_deref().ok_or_else(|| missing("id"))?;
                    let subject = data
                        .get(id)
                        .ok_or_else(|| Error::Usage(format!("subject {id} is not in the dataset")))?;
                    let history = subject.history_until(t).iter().map(|m| (m.time, m.value)).collect();
                    (history, subject.covariates.clone(), subject.intermediate_time)
                }
                _ => (Vec::new(), Vec::new(), None),
            };
            PredictRequest {
                history,
                covariates,
                t,
                u_grid,
                scenario: a.scenario.ok_or_else(|| missing("scenario"))?,
                intermediate_time,
                m: a.m,
                seed: a.seed,
                resample: a.resample,
            }
        }
    };
    let response = predict(&fitted, &model_id(&a.model), &request).map_err(|e| Error::Usage(e.to_string()))?;
    write_output(a.out.as_deref(), &response)
}

fn cmd_evaluate(a: &EvaluateArgs, threads: Option<usize>) -> Result<()> {
    let data = io::load_dataset(&a.data.subjects, &a.data.measurements)?;
    let u = a.t + a.dt;
    let table = match (&a.model, &a.predictions) {
        (Some(model), _) => {
            let fitted = io::load_fitted(model)?;
            let config = PredictionConfig {
                m: a.m,
                seed: a.seed,
                ..PredictionConfig::default()
            };
            let table = parallel::with_threads(threads, || parallel::risk_table(&fitted, &data, a.t, u, &config))??;
            if let Some(p) = &a.write_predictions {
                io::save_risk_table(&table, p)?;
            }
            table
        }
        (None, Some(p)) => io::load_risk_table(p, a.t, u)?,
        (None, None) => return Err(Error::Usage("either --model or --predictions is required".into())),
    };
    let report: MetricReport = evaluate(&data, &table, a.t, a.dt)?;
    for d in &report.diagnostics {
        eprintln!("note: {d}");
    }
    write_output(a.out.as_deref(), &report)
}

fn cmd_benchmark(a: &BenchmarkArgs, threads: Option<usize>) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => io::read_json(p)?,
        None if a.full_scale => BenchmarkConfig::full_scale(),
        None => BenchmarkConfig {
            defaults: io::shipped_defaults()?.defaults,
            ..BenchmarkConfig::default()
        },
    };
    if a.full_scale {
        let full = BenchmarkConfig::full_scale();
        config.replications = full.replications;
        config.n = full.n;
        config.reduced_scale = false;
    }
    if let Some(v) = a.replications {
        config.replications = v;
    }
    if let Some(v) = a.n {
        config.n = v;
    }
    if let Some(v) = &a.scenarios {
        config.scenarios = v.clone();
    }
    if let Some(v) = &a.anchors {
        config.anchors = v.clone();
    }
    if let Some(v) = a.dt {
        config.delta_t = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    if let Some(v) = a.iterations {
        config.mcmc.iterations = v;
    }
    if let Some(v) = a.burn_in {
        config.mcmc.burn_in = v;
    }
    if let Some(v) = a.m {
        config.prediction.m = v;
    }
    let report = parallel::with_threads(threads, || parallel::run_benchmark(&config))??;
    create_dir(&a.out)?;
    let file = |name: &str| {
        let p = a.out.join(name);
        std::fs::File::create(&p).map_err(|e| Error::io(&p, e))
    };
    io::write_benchmark_rows(&report.rows, file("metrics.csv")?)?;
    io::write_metric_summaries(&report.summaries, file("summary.csv")?)?;
    io::write_json(&a.out.join("report.json"), &report)?;
    for f in &report.failures {
        eprintln!("replication {} of scenario {} failed: {}", f.replication, f.scenario, f.error);
    }
    for c in &report.comparisons {
        eprintln!(
            "scenario {}: WT better on AUC in {}/{} cells, on PE in {}/{}",
            c.scenario, c.auc_wins, c.cells, c.pe_wins, c.cells
        );
    }
    Ok(())
}

fn cmd_serve(a: &ServeArgs) -> Result<()> {
    let mut models = BTreeMap::new();
    for entry in &a.models {
        let (id, path) = match entry.split_once('=') {
            Some((id, path)) => (id.to_string(), PathBuf::from(path)),
            None => (model_id(Path::new(entry)), PathBuf::from(entry)),
        };
        let fitted = io::load_fitted(&path)?;
        if models.insert(id.clone(), Arc::new(fitted)).is_some() {
            return Err(Error::Usage(format!("model id '{id}' is given twice")));
        }
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Usage(format!("cannot start the service: {e}")))?;
    runtime.block_on(service::serve(a.addr, models, |addr| {
        eprintln!("listening on http://{addr}");
    }))
}

fn cmd_calibrate(a: &CalibrateArgs, threads: Option<usize>) -> Result<()> {
    use rayon::prelude::*;
    let defaults = defaults(a.defaults.as_deref())?;
    let summaries = parallel::with_threads(threads, || {
        [1u8, 2, 3]
            .par_iter()
            .map(|&label| {
                let mut s = SimulationScenario::with_defaults(label, &defaults)?;
                s.n = a.n;
                let (_, subjects) = simulate_dataset(&s, a.seed)?;
                Ok((label.to_string(), calibration_summary(&s, &subjects)))
            })
            .collect::<Result<BTreeMap<String, CalibrationSummary>>>()
    })??;
    write_output(None, &summaries)
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads;
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a, threads),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a, threads),
        Command::Benchmark(a) => cmd_benchmark(a, threads),
        Command::Serve(a) => cmd_serve(a),
        Command::Calibrate(a) => cmd_calibrate(a, threads),
    }
}
