//! Train/test comparison of the joint model with the extrapolation
//! comparator on simulated data.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, RiskPredictionTable};
use crate::inference::{fit, FittedJointModel, McmcConfig, Priors};
use crate::model::ModelSpec;
use crate::prediction::{subject_risk, PredictionConfig};
use crate::prelude::*;
use crate::simulation::{simulate_dataset, split_train_test, CalibratedDefaults, SimulationScenario};
use crate::stats::{derive_seed, quantiles};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BenchmarkModel {
    /// The joint model with the intermediate event in both submodels.
    #[serde(rename = "WT")]
    Wt,
    #[serde(rename = "extrapolation")]
    Extrapolation,
}

impl BenchmarkModel {
    pub const ALL: [Self; 2] = [Self::Wt, Self::Extrapolation];

    pub fn label(self) -> &'static str {
        match self {
            Self::Wt => "WT",
            Self::Extrapolation => "extrapolation",
        }
    }

    pub fn spec(self) -> ModelSpec {
        match self {
            Self::Wt => ModelSpec::drop_and_slope_change(),
            Self::Extrapolation => ModelSpec::extrapolation(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub scenarios: Vec<u8>,
    pub replications: usize,
    /// Subjects per simulated dataset, split evenly into train and test.
    pub n: usize,
    pub anchors: Vec<f64>,
    pub delta_t: f64,
    pub seed: u64,
    /// Marks runs below the full 250 × 1500 design.
    pub reduced_scale: bool,
    pub defaults: CalibratedDefaults,
    pub priors: Priors,
    pub mcmc: McmcConfig,
    pub prediction: PredictionConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            scenarios: vec![1, 2, 3],
            replications: 20,
            n: 300,
            anchors: vec![20.0, 22.0, 24.0],
            delta_t: 2.0,
            seed: 2024,
            reduced_scale: true,
            defaults: CalibratedDefaults::default(),
            priors: Priors::default(),
            mcmc: McmcConfig {
                chains: 1,
                iterations: 2000,
                burn_in: 1000,
                thin: 5,
                ..McmcConfig::default()
            },
            prediction: PredictionConfig {
                m: 200,
                ..PredictionConfig::default()
            },
        }
    }
}

impl BenchmarkConfig {
    /// The full-size design: 250 replications of 1500 subjects.
    pub fn full_scale() -> Self {
        Self {
            replications: 250,
            n: 1500,
            reduced_scale: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidParameter("at least one replication is required".into()));
        }
        if self.scenarios.is_empty() {
            return Err(Error::InvalidParameter("no scenarios selected".into()));
        }
        for &s in &self.scenarios {
            SimulationScenario::with_defaults(s, &self.defaults)?;
        }
        if self.anchors.is_empty() || self.anchors.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidParameter("anchor times must be positive".into()));
        }
        if !(self.delta_t > 0.0) {
            return Err(Error::InvalidParameter("Δt must be positive".into()));
        }
        self.mcmc.validate()?;
        self.priors.validate()
    }

    pub fn scenario(&self, label: u8) -> Result<SimulationScenario> {
        let mut s = SimulationScenario::with_defaults(label, &self.defaults)?;
        s.n = self.n;
        s.validate()?;
        Ok(s)
    }

    /// Seed of one replication of one scenario.
    pub fn replication_seed(&self, scenario: u8, replication: usize) -> u64 {
        derive_seed(derive_seed(self.seed, scenario as u64), replication as u64)
    }
}

/// One `(replication, model, anchor)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub replication: usize,
    pub scenario: u8,
    pub model: BenchmarkModel,
    pub anchor_t: f64,
    pub delta_t: f64,
    pub auc: Option<f64>,
    pub pe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub scenario: u8,
    pub replication: usize,
    pub error: String,
}

/// Risk predictions for the test subjects at risk at `t` (observed time `≥ t`).
pub fn risk_table(
    fitted: &FittedJointModel,
    test: &Dataset,
    t: f64,
    u: f64,
    config: &PredictionConfig,
) -> Result<RiskPredictionTable> {
    let rows = test
        .subjects
        .iter()
        .enumerate()
        .filter(|(_, s)| s.event_time >= t)
        .map(|(k, s)| subject_risk(fitted, s, t, u, config, k as u64))
        .collect::<Result<Vec<_>>>()?;
    Ok(RiskPredictionTable { t, u, rows })
}

/// Simulates one dataset, fits both models on the training half and scores
/// their predictions on the test half at every anchor.
pub fn run_replication(config: &BenchmarkConfig, scenario: u8, replication: usize) -> Result<Vec<BenchmarkRow>> {
    let seed = config.replication_seed(scenario, replication);
    let (data, _) = simulate_dataset(&config.scenario(scenario)?, derive_seed(seed, 0))?;
    let (train, test) = split_train_test(&data, derive_seed(seed, 1))?;
    let mut rows = Vec::new();
    for model in BenchmarkModel::ALL {
        let mcmc = McmcConfig {
            seed: derive_seed(seed, 2),
            ..config.mcmc.clone()
        };
        let fitted = fit(&train, &model.spec(), &config.priors, &mcmc)?;
        for (k, &t) in config.anchors.iter().enumerate() {
            let prediction = PredictionConfig {
                seed: derive_seed(seed, 3 + k as u64),
                ..config.prediction.clone()
            };
            let u = t + config.delta_t;
            let table = risk_table(&fitted, &test, t, u, &prediction)?;
            let (auc, pe) = match evaluate(&test, &table, t, config.delta_t) {
                Ok(r) => (r.auc, r.pe),
                Err(_) => (None, None),
            };
            rows.push(BenchmarkRow {
                replication,
                scenario,
                model,
                anchor_t: t,
                delta_t: config.delta_t,
                auc,
                pe,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub scenario: u8,
    pub model: BenchmarkModel,
    pub anchor_t: f64,
    pub metric: String,
    /// Cells with a defined value.
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Share of `(replication, anchor)` cells in which the joint model beats the
/// comparator. Cells of failed replications or with an undefined metric
/// count as losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario: u8,
    pub cells: usize,
    pub auc_wins: usize,
    pub pe_wins: usize,
    pub auc_win_fraction: f64,
    pub pe_win_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub rows: Vec<BenchmarkRow>,
    pub failures: Vec<ReplicationFailure>,
    pub summaries: Vec<MetricSummary>,
    pub comparisons: Vec<Comparison>,
}

impl BenchmarkReport {
    /// Builds the report from per-replication outcomes in any order.
    pub fn new(config: BenchmarkConfig, outcomes: Vec<(u8, usize, Result<Vec<BenchmarkRow>>)>) -> Self {
        let mut rows = Vec::new();
        let mut failures = Vec::new();
        for (scenario, replication, outcome) in outcomes {
            match outcome {
                Ok(r) => rows.extend(r),
                Err(e) => failures.push(ReplicationFailure {
                    scenario,
                    replication,
                    error: e.to_string(),
                }),
            }
        }
        rows.sort_by(|a, b| {
            (a.scenario, a.replication, a.model)
                .cmp(&(b.scenario, b.replication, b.model))
                .then(a.anchor_t.total_cmp(&b.anchor_t))
        });
        failures.sort_by_key(|f| (f.scenario, f.replication));
        let mut summaries = Vec::new();
        let mut comparisons = Vec::new();
        for &scenario in &config.scenarios {
            for model in BenchmarkModel::ALL {
                for &t in &config.anchors {
                    let cell = |r: &&BenchmarkRow| r.scenario == scenario && r.model == model && r.anchor_t == t;
                    for (metric, get) in [("auc", (|r: &BenchmarkRow| r.auc) as fn(&BenchmarkRow) -> Option<f64>), ("pe", |r| r.pe)] {
                        let values: Vec<f64> = rows.iter().filter(cell).filter_map(get).collect();
                        if values.is_empty() {
                            continue;
                        }
                        let q = quantiles(&values, &[0.0, 0.25, 0.5, 0.75, 1.0]);
                        summaries.push(MetricSummary {
                            scenario,
                            model,
                            anchor_t: t,
                            metric: metric.into(),
                            n: values.len(),
                            min: q[0],
                            q1: q[1],
                            median: q[2],
                            q3: q[3],
                            max: q[4],
                        });
                    }
                }
            }
            let cells = config.replications * config.anchors.len();
            let (mut auc_wins, mut pe_wins) = (0, 0);
            for rep in 0..config.replications {
                for &t in &config.anchors {
                    let find = |m: BenchmarkModel| {
                        rows.iter()
                            .find(|r| r.scenario == scenario && r.replication == rep && r.model == m && r.anchor_t == t)
                    };
                    if let (Some(w), Some(e)) = (find(BenchmarkModel::Wt), find(BenchmarkModel::Extrapolation)) {
                        if let (Some(a), Some(b)) = (w.auc, e.auc) {
                            auc_wins += (a > b) as usize;
                        }
                        if let (Some(a), Some(b)) = (w.pe, e.pe) {
                            pe_wins += (a < b) as usize;
                        }
                    }
                }
            }
            comparisons.push(Comparison {
                scenario,
                cells,
                auc_wins,
                pe_wins,
                auc_win_fraction: auc_wins as f64 / cells as f64,
                pe_win_fraction: pe_wins as f64 / cells as f64,
            });
        }
        Self {
            config,
            rows,
            failures,
            summaries,
            comparisons,
        }
    }
}

/// Runs every replication sequentially.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    config.validate()?;
    let mut outcomes = Vec::new();
    for &scenario in &config.scenarios {
        for rep in 0..config.replications {
            outcomes.push((scenario, rep, run_replication(config, scenario, rep)));
        }
    }
    Ok(BenchmarkReport::new(config.clone(), outcomes))
}
