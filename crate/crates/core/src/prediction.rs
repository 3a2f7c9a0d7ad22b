//! Dynamic survival predictions `π(u | t) = P(T* ≥ u | T* > t, Y(t))` for a
//! subject outside the training data, under a hypothesis about the timing of
//! the intermediate event.

use core::fmt;
use core::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Measurement, SubjectRecord};
use crate::evaluation::{needs_own_time_prediction, Group, RiskPrediction};
use crate::error::{Error, Result};
use crate::inference::{FittedJointModel, NewSubjectConfig, NewSubjectSampler};
use crate::longitudinal::RandomEffects;
use crate::model::{HistoryFilter, JointParams, ModelSpec};
use crate::prelude::*;
use crate::stats::{derive_seed, quantile_sorted};
use crate::survival::cumulative_hazard;

/// Hypothesis about the intermediate event relative to the window `[t, u]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum PredictionScenario {
    /// The event happened at `rho ≤ t` and is part of the history.
    AlreadyOccurred { rho: f64 },
    /// The event will happen at `tau` with `t ≤ tau ≤ u`.
    OccursAt { tau: f64 },
    /// No event before the end of the window.
    NoneWithinWindow,
}

impl PredictionScenario {
    pub fn validate(&self, t: f64, u: f64) -> Result<()> {
        match *self {
            Self::AlreadyOccurred { rho } if !(rho >= 0.0 && rho <= t) => Err(Error::Scenario(format!(
                "already-occurred requires 0 <= rho <= t, got rho = {rho}, t = {t}"
            ))),
            Self::OccursAt { tau } if !(tau >= t && tau <= u) => Err(Error::Scenario(format!(
                "occurs-at time {tau} is outside [{t}, {u}]"
            ))),
            _ => Ok(()),
        }
    }

    /// Intermediate-event time as seen by the history up to `t`.
    pub fn history_rho(&self) -> Option<f64> {
        match *self {
            Self::AlreadyOccurred { rho } => Some(rho),
            _ => None,
        }
    }

    /// Intermediate-event time used by the hazard over the window.
    pub fn window_rho(&self) -> Option<f64> {
        match *self {
            Self::AlreadyOccurred { rho } => Some(rho),
            Self::OccursAt { tau } => Some(tau),
            Self::NoneWithinWindow => None,
        }
    }

    /// The scenario matching a subject's own status at `t`.
    pub fn observed(rho: Option<f64>, t: f64) -> Self {
        match rho {
            Some(r) if r <= t => Self::AlreadyOccurred { rho: r },
            _ => Self::NoneWithinWindow,
        }
    }
}

/// Scenario as written on the command line or in a request:
/// `now`, `at=<tau>`, `never`, `observed` or `occurred=<rho>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScenarioChoice {
    Now,
    At(f64),
    Never,
    Observed,
    Occurred(f64),
}

impl ScenarioChoice {
    /// `observed_rho` is the subject's recorded intermediate-event time, used by `observed`.
    pub fn resolve(&self, t: f64, observed_rho: Option<f64>) -> PredictionScenario {
        match *self {
            Self::Now => PredictionScenario::OccursAt { tau: t },
            Self::At(tau) => PredictionScenario::OccursAt { tau },
            Self::Never => PredictionScenario::NoneWithinWindow,
            Self::Observed => PredictionScenario::observed(observed_rho, t),
            Self::Occurred(rho) => PredictionScenario::AlreadyOccurred { rho },
        }
    }
}

impl FromStr for ScenarioChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let number = |v: &str| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Scenario(format!("'{v}' is not a finite number")))
        };
        match s.trim() {
            "now" => Ok(Self::Now),
            "never" => Ok(Self::Never),
            "observed" => Ok(Self::Observed),
            other => {
                if let Some(v) = other.strip_prefix("at=") {
                    Ok(Self::At(number(v)?))
                } else if let Some(v) = other.strip_prefix("occurred=") {
                    Ok(Self::Occurred(number(v)?))
                } else {
                    Err(Error::Scenario(format!(
                        "unknown scenario '{other}'; expected now, at=<tau>, never, observed or occurred=<rho>"
                    )))
                }
            }
        }
    }
}

impl fmt::Display for ScenarioChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Now => f.write_str("now"),
            Self::At(tau) => write!(f, "at={tau}"),
            Self::Never => f.write_str("never"),
            Self::Observed => f.write_str("observed"),
            Self::Occurred(rho) => write!(f, "occurred={rho}"),
        }
    }
}

impl Serialize for ScenarioChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ScenarioChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<Vec<f64>>,
}

impl PredictionResult {
    pub fn from_draws(mut values: Vec<f64>, keep: bool) -> Self {
        let kept = keep.then(|| values.clone());
        values.sort_by(f64::total_cmp);
        Self {
            median: quantile_sorted(&values, 0.5),
            ci_low: quantile_sorted(&values, 0.025),
            ci_high: quantile_sorted(&values, 0.975),
            draws: kept,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictionConfig {
    /// Number of Monte Carlo draws `M`.
    pub m: usize,
    pub seed: u64,
    /// Draw parameter indices with replacement, allowing `M` above the number
    /// of posterior draws.
    pub resample: bool,
    pub keep_draws: bool,
    pub new_subject: NewSubjectConfig,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self {
            m: 500,
            seed: 1,
            resample: false,
            keep_draws: false,
            new_subject: NewSubjectConfig::default(),
        }
    }
}

/// `exp{−∫_t^u h(s | b, θ) ds}` with the hazard following the scenario's
/// intermediate-event time.
pub fn conditional_survival(
    u: f64,
    t: f64,
    spec: &ModelSpec,
    params: &JointParams,
    effects: &RandomEffects,
    covariates: &[f64],
    scenario: &PredictionScenario,
) -> Result<f64> {
    if u < t {
        return Err(Error::InvalidParameter(format!("horizon {u} is before the landmark {t}")));
    }
    if u == t {
        return Ok(1.0);
    }
    let mut coefs = params.longitudinal.beta.clone();
    spec.trajectory.add_random_into(&mut coefs, &effects.0);
    let ctx = spec.hazard_context(&coefs, scenario.window_rho(), covariates);
    let h = cumulative_hazard(t, u, &ctx, &params.survival)?;
    Ok((-h.max(0.0)).exp())
}

/// Measurements usable by the model given the scenario (post-event values
/// are dropped for models fitted on pre-event data only).
fn usable_history<'a>(spec: &ModelSpec, history: &'a [Measurement], scenario: &PredictionScenario) -> &'a [Measurement] {
    match (spec.history, scenario.history_rho()) {
        (HistoryFilter::PreEventOnly, Some(rho)) => {
            let end = history.partition_point(|m| m.time < rho);
            &history[..end]
        }
        _ => history,
    }
}

/// Monte Carlo draws `π^m(u_k | t)` for every grid point, one inner vector
/// per draw. Each curve is nonincreasing along the grid.
pub fn prediction_draws(
    fitted: &FittedJointModel,
    history: &[Measurement],
    covariates: &[f64],
    t: f64,
    u_grid: &[f64],
    scenario: &PredictionScenario,
    config: &PredictionConfig,
) -> Result<Vec<Vec<f64>>> {
    if u_grid.is_empty() {
        return Err(Error::InvalidParameter("empty prediction grid".into()));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidParameter(format!("landmark time {t} must be finite and nonnegative")));
    }
    if u_grid.iter().any(|u| !u.is_finite() || *u < t) || u_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter(format!(
            "prediction grid must be sorted and not before the landmark {t}"
        )));
    }
    if history.windows(2).any(|w| w[1].time < w[0].time) {
        return Err(Error::InvalidData("history must be sorted by time".into()));
    }
    scenario.validate(t, u_grid[u_grid.len() - 1])?;
    if config.m == 0 {
        return Err(Error::InvalidParameter("the number of draws M must be positive".into()));
    }
    let available = fitted.n_draws();
    if available == 0 || (config.m > available && !config.resample) {
        return Err(Error::InsufficientDraws {
            requested: config.m,
            available,
        });
    }
    let spec = &fitted.spec;
    let history = usable_history(spec, history, scenario);
    let mut sampler = NewSubjectSampler::new(
        spec,
        history,
        covariates,
        scenario.history_rho(),
        t,
        config.new_subject.clone(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let picks: Vec<usize> = if config.resample {
        (0..config.m).map(|_| rng.random_range(0..available)).collect()
    } else {
        index::sample(&mut rng, available, config.m).into_vec()
    };
    let template = fitted.baseline_template()?;
    let mut out = Vec::with_capacity(config.m);
    for m in picks {
        let params = fitted.draws[m].to_params(&template);
        let b = sampler.draw(&params, &mut rng)?;
        let mut coefs = params.longitudinal.beta.clone();
        spec.trajectory.add_random_into(&mut coefs, &b.0);
        let ctx = spec.hazard_context(&coefs, scenario.window_rho(), covariates);
        let mut curve = Vec::with_capacity(u_grid.len());
        let mut h_max = 0.0f64;
        for &u in u_grid {
            let h = if u == t { 0.0 } else { cumulative_hazard(t, u, &ctx, &params.survival)? };
            h_max = h_max.max(h);
            curve.push((-h_max).exp());
        }
        out.push(curve);
    }
    Ok(out)
}

/// Posterior median and 95% interval of `π(u | t)` at each grid point. The
/// random-effect and parameter draws are shared across the grid.
pub fn prediction_curve(
    fitted: &FittedJointModel,
    history: &[Measurement],
    covariates: &[f64],
    t: f64,
    u_grid: &[f64],
    scenario: &PredictionScenario,
    config: &PredictionConfig,
) -> Result<Vec<PredictionResult>> {
    let draws = prediction_draws(fitted, history, covariates, t, u_grid, scenario, config)?;
    Ok((0..u_grid.len())
        .map(|k| PredictionResult::from_draws(draws.iter().map(|c| c[k]).collect(), config.keep_draws))
        .collect())
}

pub fn dynamic_prediction(
    fitted: &FittedJointModel,
    history: &[Measurement],
    covariates: &[f64],
    t: f64,
    u: f64,
    scenario: &PredictionScenario,
    config: &PredictionConfig,
) -> Result<PredictionResult> {
    let mut curve = prediction_curve(fitted, history, covariates, t, &[u], scenario, config)?;
    Ok(curve.remove(0))
}

/// Risk prediction for a subject of a test set at the anchor `(t, u)`:
/// `π(u | t)` under the subject's status at `t` and, when the subject is
/// censored within the window, `π(u | T_i)` from the same history and status.
/// `stream` selects an independent random stream for the subject.
pub fn subject_risk(
    fitted: &FittedJointModel,
    subject: &SubjectRecord,
    t: f64,
    u: f64,
    config: &PredictionConfig,
    stream: u64,
) -> Result<RiskPrediction> {
    let scenario = PredictionScenario::observed(subject.intermediate_time, t);
    let history = subject.history_until(t);
    let base = config.seed;
    let mut config = config.clone();
    config.seed = derive_seed(base, 2 * stream);
    let at_landmark = dynamic_prediction(fitted, history, &subject.covariates, t, u, &scenario, &config)?.median;
    let at_own_time = if needs_own_time_prediction(subject, t, u) {
        config.seed = derive_seed(base, 2 * stream + 1);
        let own = subject.event_time;
        Some(dynamic_prediction(fitted, history, &subject.covariates, own, u, &scenario, &config)?.median)
    } else {
        None
    };
    Ok(RiskPrediction {
        id: subject.id.clone(),
        group: Group::of(subject, t),
        at_landmark,
        at_own_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_choices_round_trip() {
        for s in ["now", "never", "observed", "at=3.5", "occurred=2"] {
            let c: ScenarioChoice = s.parse().unwrap();
            assert_eq!(c.to_string(), s);
        }
        assert!("later".parse::<ScenarioChoice>().is_err());
        assert!("at=x".parse::<ScenarioChoice>().is_err());
    }

    #[test]
    fn scenario_bounds() {
        assert!(PredictionScenario::OccursAt { tau: 5.0 }.validate(4.0, 6.0).is_ok());
        assert!(PredictionScenario::OccursAt { tau: 7.0 }.validate(4.0, 6.0).is_err());
        assert!(PredictionScenario::AlreadyOccurred { rho: 5.0 }.validate(4.0, 6.0).is_err());
        assert_eq!(
            PredictionScenario::observed(Some(3.0), 4.0),
            PredictionScenario::AlreadyOccurred { rho: 3.0 }
        );
        assert_eq!(PredictionScenario::observed(Some(5.0), 4.0), PredictionScenario::NoneWithinWindow);
    }

    #[test]
    fn summary_is_ordered() {
        let r = PredictionResult::from_draws(vec![0.9, 0.1, 0.5, 0.7, 0.3], false);
        assert!(r.ci_low <= r.median && r.median <= r.ci_high);
        assert_eq!(r.median, 0.5);
    }
}
