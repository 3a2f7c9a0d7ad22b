//! Multi-threaded drivers. Each produces exactly the output of its
//! sequential counterpart in `interjm_core`, whatever the thread count.

use interjm_core::benchmark::{run_replication, BenchmarkConfig, BenchmarkReport};
use interjm_core::evaluation::RiskPredictionTable;
use interjm_core::inference::{assemble, run_chain, FittedJointModel, McmcConfig, Priors};
use interjm_core::prediction::{subject_risk, PredictionConfig};
use interjm_core::{Dataset, ModelSpec};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Runs the chains in parallel.
pub fn fit(data: &Dataset, spec: &ModelSpec, priors: &Priors, config: &McmcConfig) -> Result<FittedJointModel> {
    config.validate()?;
    priors.validate()?;
    let resolved = spec.resolve(data)?;
    let chains = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(data, &resolved, priors, config, c))
        .collect::<interjm_core::Result<Vec<_>>>()?;
    Ok(assemble(data, &resolved, priors, config, chains)?)
}

/// Risk predictions for every subject with observed time `≥ t`, one random
/// stream per subject position.
pub fn risk_table(
    fitted: &FittedJointModel,
    data: &Dataset,
    t: f64,
    u: f64,
    config: &PredictionConfig,
) -> Result<RiskPredictionTable> {
    let rows = data
        .subjects
        .par_iter()
        .enumerate()
        .filter(|(_, s)| s.event_time >= t)
        .map(|(k, s)| subject_risk(fitted, s, t, u, config, k as u64))
        .collect::<interjm_core::Result<Vec<_>>>()?;
    Ok(RiskPredictionTable { t, u, rows })
}

/// Runs the replications in parallel; failed replications are recorded in
/// the report.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    config.validate()?;
    let jobs: Vec<(u8, usize)> = config
        .scenarios
        .iter()
        .flat_map(|&s| (0..config.replications).map(move |r| (s, r)))
        .collect();
    let outcomes = jobs
        .into_par_iter()
        .map(|(s, r)| (s, r, run_replication(config, s, r)))
        .collect();
    Ok(BenchmarkReport::new(config.clone(), outcomes))
}

/// Runs `f` on a pool of `threads` workers (all cores when `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Usage(format!("cannot start worker threads: {e}")))?;
    Ok(pool.install(f))
}
