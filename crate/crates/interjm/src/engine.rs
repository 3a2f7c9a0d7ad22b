//! The prediction request and response documents shared by `interjm predict`
//! and the HTTP service, and the single code path that answers them.

use interjm_core::inference::FittedJointModel;
use interjm_core::prediction::{prediction_curve, PredictionConfig, PredictionScenario, ScenarioChoice};
use interjm_core::Measurement;
use serde::{Deserialize, Serialize};

pub const PREDICTION_SCHEMA_VERSION: &str = "interjm.prediction/1";

pub const DEFAULT_DRAWS: usize = 500;
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    /// `(time, value)` pairs observed up to `t`.
    #[serde(default)]
    pub history: Vec<(f64, f64)>,
    #[serde(default)]
    pub covariates: Vec<f64>,
    pub t: f64,
    pub u_grid: Vec<f64>,
    /// `now`, `at=<tau>`, `never`, `observed` or `occurred=<rho>`.
    pub scenario: ScenarioChoice,
    /// Recorded intermediate-event time, used by the `observed` scenario.
    #[serde(default)]
    pub intermediate_time: Option<f64>,
    #[serde(default, rename = "M", alias = "m")]
    pub m: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Draw parameter indices with replacement so `M` may exceed the
    /// number of posterior draws.
    #[serde(default)]
    pub resample: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictPoint {
    pub u: f64,
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub schema_version: String,
    pub model: String,
    pub t: f64,
    pub scenario: PredictionScenario,
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
    pub points: Vec<PredictPoint>,
}

/// A problem with one field of a request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PredictError {
    #[error("invalid request: {}", .0.iter().map(|e| format!("{}: {}", e.field, e.message)).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<FieldError>),
    #[error(transparent)]
    Engine(#[from] interjm_core::Error),
}

impl PredictRequest {
    /// Checks the request against a fitted model, listing every offending field.
    pub fn validate(&self, fitted: &FittedJointModel) -> Vec<FieldError> {
        let mut errors = Vec::new();
        let t = self.t;
        if !t.is_finite() || t < 0.0 {
            errors.push(FieldError::new("t", "must be a finite nonnegative time"));
        }
        if self.u_grid.is_empty() {
            errors.push(FieldError::new("u_grid", "must contain at least one time"));
        }
        for (k, &u) in self.u_grid.iter().enumerate() {
            if !u.is_finite() || u < t {
                errors.push(FieldError::new(format!("u_grid[{k}]"), format!("{u} is before t = {t}")));
            }
        }
        if self.u_grid.windows(2).any(|w| w[1] < w[0]) {
            errors.push(FieldError::new("u_grid", "must be sorted in increasing order"));
        }
        for (k, &(time, value)) in self.history.iter().enumerate() {
            if !time.is_finite() || time < 0.0 || time > t {
                errors.push(FieldError::new(
                    format!("history[{k}]"),
                    format!("measurement time {time} must lie in [0, t = {t}]"),
                ));
            }
            if !value.is_finite() {
                errors.push(FieldError::new(format!("history[{k}]"), "value must be finite"));
            }
        }
        let mut times: Vec<f64> = self.history.iter().map(|h| h.0).collect();
        times.sort_by(f64::total_cmp);
        if times.windows(2).any(|w| w[0] == w[1]) {
            errors.push(FieldError::new("history", "duplicate measurement times"));
        }
        let dim = fitted.covariate_names.len();
        if self.covariates.len() != dim {
            errors.push(FieldError::new(
                "covariates",
                format!("expected {dim} values ({}), got {}", fitted.covariate_names.join(", "), self.covariates.len()),
            ));
        }
        if self.covariates.iter().any(|c| !c.is_finite()) {
            errors.push(FieldError::new("covariates", "values must be finite"));
        }
        match self.m {
            Some(0) => errors.push(FieldError::new("M", "must be positive")),
            Some(m) if m > fitted.n_draws() && !self.resample => errors.push(FieldError::new(
                "M",
                format!("{m} exceeds the {} posterior draws; set resample to allow it", fitted.n_draws()),
            )),
            None if DEFAULT_DRAWS > fitted.n_draws() && !self.resample => errors.push(FieldError::new(
                "M",
                format!("the default of {DEFAULT_DRAWS} exceeds the {} posterior draws", fitted.n_draws()),
            )),
            _ => {}
        }
        if let Some(rho) = self.intermediate_time {
            if !rho.is_finite() || rho < 0.0 {
                errors.push(FieldError::new("intermediate_time", "must be a finite nonnegative time"));
            }
        }
        if errors.is_empty() {
            let u = self.u_grid[self.u_grid.len() - 1];
            if let Err(e) = self.resolved_scenario().validate(t, u) {
                errors.push(FieldError::new("scenario", e.to_string()));
            }
        }
        errors
    }

    pub fn resolved_scenario(&self) -> PredictionScenario {
        self.scenario.resolve(self.t, self.intermediate_time)
    }

    pub fn config(&self) -> PredictionConfig {
        PredictionConfig {
            m: self.m.unwrap_or(DEFAULT_DRAWS),
            seed: self.seed.unwrap_or(DEFAULT_SEED),
            resample: self.resample,
            ..PredictionConfig::default()
        }
    }
}

pub fn predict(fitted: &FittedJointModel, model: &str, request: &PredictRequest) -> Result<PredictResponse, PredictError> {
    let errors = request.validate(fitted);
    if !errors.is_empty() {
        return Err(PredictError::Invalid(errors));
    }
    let mut history: Vec<Measurement> = request.history.iter().map(|&(t, y)| Measurement::new(t, y)).collect();
    history.sort_by(|a, b| a.time.total_cmp(&b.time));
    let scenario = request.resolved_scenario();
    let config = request.config();
    let curve = prediction_curve(
        fitted,
        &history,
        &request.covariates,
        request.t,
        &request.u_grid,
        &scenario,
        &config,
    )?;
    Ok(PredictResponse {
        schema_version: PREDICTION_SCHEMA_VERSION.into(),
        model: model.into(),
        t: request.t,
        scenario,
        m: config.m,
        seed: config.seed,
        points: request
            .u_grid
            .iter()
            .zip(curve)
            .map(|(&u, r)| PredictPoint {
                u,
                median: r.median,
                ci_low: r.ci_low,
                ci_high: r.ci_high,
            })
            .collect(),
    })
}
