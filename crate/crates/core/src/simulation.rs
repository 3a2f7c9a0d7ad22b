//! Data generator with biomarker-triggered intermediate events.
//!
//! Each subject's biomarker follows the drop-and-slope-change trajectory
//! with subject-specific random effects. Visits are drawn uniformly over the
//! visit window; once the biomarker measured at a visit exceeds the trigger
//! threshold, the intermediate event happens at the next visit. Event times
//! are drawn by inverting the cumulative hazard
//! `h(t) = h₀(t) exp{R(t)ζ + α η(t)}` with a Weibull baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Measurement, SubjectRecord};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, lower_mul};
use crate::longitudinal::LongitudinalParams;
use crate::model::{JointParams, ModelSpec};
use crate::prelude::*;
use crate::survival::{cumulative_hazard, log_hazard, BaselineHazard, HazardContext, SurvivalParams};

pub const SCENARIO_LABELS: [u8; 3] = [1, 2, 3];

/// Which biomarker value the reintervention trigger looks at.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TriggerSource {
    /// The noisy measurement taken at the visit.
    #[default]
    Observed,
    /// The true trajectory value at the visit.
    Noiseless,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationScenario {
    pub label: u8,
    pub intercept: f64,
    pub slope: f64,
    /// Drop at the intermediate event (`β̃₃`).
    pub drop: f64,
    /// Slope change after the intermediate event (`β̃₄`).
    pub slope_change: f64,
    pub sigma: f64,
    /// Covariance of `(b₀, b₁, b̃₃, b̃₄)`, row-major 4 × 4.
    pub d: Vec<f64>,
    pub zeta: f64,
    pub alpha: f64,
    pub weibull_shape: f64,
    /// Time scale `λ` of the Weibull baseline `(ξ/λ)(t/λ)^{ξ−1}`.
    pub time_scale: f64,
    pub censoring_mean: f64,
    pub visit_window: [f64; 2],
    pub visits: usize,
    pub threshold: f64,
    #[serde(default)]
    pub trigger: TriggerSource,
    pub n: usize,
}

/// Values not fixed by the scenario definitions, chosen by simulation so
/// that roughly a third of subjects have an observed event, a third to a
/// half have an intermediate event and most events fall between t = 20 and
/// t = 26 (`interjm calibrate` prints these summaries).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedDefaults {
    pub sigma: f64,
    pub d_sd: [f64; 4],
    pub zeta: f64,
    pub alpha: f64,
    pub time_scale: f64,
    pub threshold: f64,
    pub visits: usize,
}

impl Default for CalibratedDefaults {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            d_sd: [3.0, 0.4, 8.0, 0.8],
            zeta: -0.5,
            alpha: 0.07,
            time_scale: 28.0,
            threshold: 35.0,
            visits: 10,
        }
    }
}

impl SimulationScenario {
    /// Scenario 1 (drop and slope change), 2 (drop only) or 3 (slope change
    /// only) with the calibrated defaults.
    pub fn standard(label: u8) -> Result<Self> {
        Self::with_defaults(label, &CalibratedDefaults::default())
    }

    pub fn with_defaults(label: u8, c: &CalibratedDefaults) -> Result<Self> {
        let (drop, slope_change) = match label {
            1 => (-15.5, -0.76),
            2 => (-15.5, 0.0),
            3 => (0.0, -0.76),
            other => {
                return Err(Error::Scenario(format!(
                    "unknown scenario {other}; valid labels are 1, 2, 3"
                )))
            }
        };
        let mut d = vec![0.0; 16];
        for k in 0..4 {
            d[k * 4 + k] = c.d_sd[k] * c.d_sd[k];
        }
        Ok(Self {
            label,
            intercept: 20.7,
            slope: 1.6,
            drop,
            slope_change,
            sigma: c.sigma,
            d,
            zeta: c.zeta,
            alpha: c.alpha,
            weibull_shape: 20.4,
            time_scale: c.time_scale,
            censoring_mean: 22.6,
            visit_window: [0.0, 50.0],
            visits: c.visits,
            threshold: c.threshold,
            trigger: TriggerSource::Observed,
            n: 300,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.d.len() != 16 {
            return Err(Error::Dimension {
                what: "random-effects covariance",
                expected: 16,
                got: self.d.len(),
            });
        }
        cholesky(&self.d, 4)?;
        let positive = [self.sigma, self.weibull_shape, self.time_scale, self.censoring_mean];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidParameter(
                "sigma, Weibull shape, time scale and censoring mean must be positive".into(),
            ));
        }
        if !(self.visit_window[1] > self.visit_window[0] && self.visit_window[0] >= 0.0) {
            return Err(Error::InvalidParameter("visit window must be an increasing nonnegative range".into()));
        }
        if self.n % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "the number of subjects must be even for the train/test split, got {}",
                self.n
            )));
        }
        Ok(())
    }

    /// The generating model in the joint-model parameterization.
    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec::drop_and_slope_change()
    }

    pub fn truth(&self) -> JointParams {
        JointParams {
            longitudinal: LongitudinalParams {
                beta: vec![self.intercept, self.slope, self.drop, self.slope_change],
                sigma: self.sigma,
                d: self.d.clone(),
            },
            survival: SurvivalParams {
                gamma: Vec::new(),
                zeta: self.zeta,
                alpha: vec![self.alpha],
                baseline: BaselineHazard::Weibull {
                    shape: self.weibull_shape,
                    scale: self.time_scale,
                },
            },
        }
    }
}

/// Latent quantities of a simulated subject, kept for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedSubject {
    pub record: SubjectRecord,
    pub random_effects: Vec<f64>,
    /// Event time before censoring (`None` beyond the horizon).
    pub true_event_time: Option<f64>,
    pub censoring_time: f64,
    /// Intermediate-event time implied by the visits, even when it falls
    /// after the observed time.
    pub scheduled_intermediate: Option<f64>,
}

/// Solves `H(0, T) = target` for `T` within `(0, horizon]` by safeguarded
/// Newton iteration on the cumulative hazard; `None` when the hazard does
/// not accumulate `target` before the horizon.
pub fn invert_cumulative_hazard(
    target: f64,
    ctx: &HazardContext,
    params: &SurvivalParams,
    horizon: f64,
) -> Result<Option<f64>> {
    let total = cumulative_hazard(0.0, horizon, ctx, params)?;
    if total < target {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, horizon);
    let (mut h_lo, mut h_hi) = (0.0, total);
    // start from the linear interpolant
    let mut t = horizon * (target / total).clamp(1e-6, 1.0 - 1e-6);
    let mut h_t = cumulative_hazard(0.0, t, ctx, params)?;
    for _ in 0..200 {
        let resid = h_t - target;
        if resid.abs() <= 1e-12 * target.max(1e-300) || hi - lo <= 1e-14 * horizon {
            return Ok(Some(t));
        }
        if resid > 0.0 {
            hi = t;
            h_hi = h_t;
        } else {
            lo = t;
            h_lo = h_t;
        }
        let slope = log_hazard(t, ctx, params).map(f64::exp).unwrap_or(f64::NAN);
        let mut next = t - resid / slope;
        if !(next > lo && next < hi) || !next.is_finite() {
            // secant on the bracket, then bisection as a last resort
            next = lo + (target - h_lo) / (h_hi - h_lo) * (hi - lo);
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            if (next - lo).min(hi - next) < 1e-3 * (hi - lo) {
                next = 0.5 * (lo + hi);
            }
        }
        h_t = h_lo + cumulative_hazard(lo, next, ctx, params)?;
        t = next;
    }
    Ok(Some(t))
}

/// Draws an event time given the subject's trajectory context: `T` with
/// `exp{−H(0, T)} = U`, `U ~ Uniform(0, 1)`.
pub fn simulate_event_time(
    ctx: &HazardContext,
    params: &SurvivalParams,
    horizon: f64,
    rng: &mut impl Rng,
) -> Result<Option<f64>> {
    let u: f64 = rng.random();
    let target = -(u.max(f64::MIN_POSITIVE)).ln();
    invert_cumulative_hazard(target, ctx, params, horizon)
}

/// Simulates one subject.
pub fn simulate_subject(
    scenario: &SimulationScenario,
    id: &str,
    rng: &mut impl Rng,
) -> Result<SimulatedSubject> {
    let spec = scenario.model_spec();
    let truth = scenario.truth();
    let l = cholesky(&scenario.d, 4)?;
    let z: Vec<f64> = (0..4).map(|_| rng.sample(StandardNormal)).collect();
    let mut b = vec![0.0; 4];
    lower_mul(&l, 4, &z, &mut b);
    let coefs = spec.trajectory.effective_coefficients(&truth.longitudinal.beta, &b);
    let [w0, w1] = scenario.visit_window;
    let mut visits: Vec<f64> = (0..scenario.visits).map(|_| w0 + (w1 - w0) * rng.random::<f64>()).collect();
    visits.sort_by(f64::total_cmp);

    // walk the visits with the pre-event trajectory until the trigger fires
    let mut rho = None;
    let mut values = Vec::with_capacity(visits.len());
    for (j, &t) in visits.iter().enumerate() {
        let eta = spec.trajectory.evaluate(t, rho, &[], &coefs, 0);
        let noise: f64 = rng.sample(StandardNormal);
        let y = eta + scenario.sigma * noise;
        values.push(y);
        let signal = match scenario.trigger {
            TriggerSource::Observed => y,
            TriggerSource::Noiseless => eta,
        };
        if rho.is_none() && signal > scenario.threshold {
            if let Some(&next) = visits.get(j + 1) {
                if next > 0.0 {
                    rho = Some(next);
                }
            }
        }
    }

    let horizon = w1;
    let ctx = spec.hazard_context(&coefs, rho, &[]);
    let event = simulate_event_time(&ctx, &truth.survival, horizon, rng)?;
    let censoring = Exp::new(1.0 / scenario.censoring_mean)
        .map_err(|e| Error::InvalidParameter(format!("{e}")))?
        .sample(rng);
    let event_time = event.unwrap_or(f64::INFINITY);
    let observed = event_time.min(censoring).min(horizon);
    let delta = event_time <= censoring.min(horizon);
    let realized_rho = rho.filter(|&r| r < observed);
    let measurements = visits
        .iter()
        .zip(&values)
        .filter(|(t, _)| **t <= observed)
        .map(|(&t, &y)| Measurement::new(t, y))
        .collect();
    let record = SubjectRecord::new(id, observed, delta, realized_rho, Vec::new(), measurements)?;
    Ok(SimulatedSubject {
        record,
        random_effects: b,
        true_event_time: event,
        censoring_time: censoring,
        scheduled_intermediate: rho,
    })
}

/// Simulates `scenario.n` subjects with ids `1..=n` from a seeded stream.
pub fn simulate_dataset(scenario: &SimulationScenario, seed: u64) -> Result<(Dataset, Vec<SimulatedSubject>)> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subjects = (1..=scenario.n)
        .map(|i| simulate_subject(scenario, &format!("{i}"), &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let data = Dataset::new(subjects.iter().map(|s| s.record.clone()).collect(), Vec::new())?;
    Ok((data, subjects))
}

/// Random 50/50 partition of the subjects.
pub fn split_train_test(data: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let (train_idx, test_idx) = order.split_at(n / 2);
    let mut train_idx = train_idx.to_vec();
    let mut test_idx = test_idx.to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |idx: &[usize]| {
        Dataset::new(
            idx.iter().map(|&i| data.subjects[i].clone()).collect(),
            data.covariate_names.clone(),
        )
    };
    Ok((pick(&train_idx)?, pick(&test_idx)?))
}

/// Summary statistics used to calibrate the unreported generator values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub event_fraction: f64,
    pub intermediate_fraction: f64,
    pub median_abs_association: f64,
    pub event_time_quantiles: [f64; 3],
}

pub fn calibration_summary(scenario: &SimulationScenario, subjects: &[SimulatedSubject]) -> CalibrationSummary {
    let n = subjects.len().max(1) as f64;
    let events: Vec<f64> = subjects
        .iter()
        .filter(|s| s.record.event)
        .map(|s| s.record.event_time)
        .collect();
    let spec = scenario.model_spec();
    let truth = scenario.truth();
    let assoc: Vec<f64> = subjects
        .iter()
        .map(|s| {
            let coefs = spec.trajectory.effective_coefficients(&truth.longitudinal.beta, &s.random_effects);
            let t = s.record.event_time;
            (scenario.alpha * spec.trajectory.evaluate(t, s.record.intermediate_time, &[], &coefs, 0)).abs()
        })
        .collect();
    let q = if events.is_empty() {
        vec![f64::NAN; 3]
    } else {
        crate::stats::quantiles(&events, &[0.25, 0.5, 0.75])
    };
    CalibrationSummary {
        event_fraction: events.len() as f64 / n,
        intermediate_fraction: subjects.iter().filter(|s| s.record.intermediate_time.is_some()).count() as f64 / n,
        median_abs_association: crate::stats::quantiles(&assoc, &[0.5])[0],
        event_time_quantiles: [q[0], q[1], q[2]],
    }
}
