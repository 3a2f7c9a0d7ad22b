//! Declarative model specification and the joint parameter vector.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Measurement, SubjectRecord};
use crate::error::{Error, Result};
use crate::linalg::cholesky;
use crate::longitudinal::{LongitudinalParams, TrajectorySpec};
use crate::prelude::*;
use crate::quadrature::QuadratureConfig;
use crate::spline::SplineBasis;
use crate::survival::{AssociationForm, BaselineHazard, HazardContext, SurvivalParams};

/// Baseline-hazard family. A B-spline family without an explicit basis gets
/// cubic splines with knots at event-time quantiles when resolved against
/// data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum BaselineFamily {
    Weibull,
    BsplineLogHazard {
        #[serde(default)]
        basis: Option<SplineBasis>,
        #[serde(default = "default_baseline_dim")]
        n_basis: usize,
    },
}

fn default_baseline_dim() -> usize {
    9
}

/// Which measurements the longitudinal submodel sees.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HistoryFilter {
    #[default]
    All,
    /// Drop measurements taken at or after the intermediate event.
    PreEventOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub trajectory: TrajectorySpec,
    pub association: AssociationForm,
    #[serde(default)]
    pub survival_covariates: Vec<usize>,
    pub baseline: BaselineFamily,
    #[serde(default)]
    pub history: HistoryFilter,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointParams {
    pub longitudinal: LongitudinalParams,
    pub survival: SurvivalParams,
}

impl ModelSpec {
    /// Drop-and-slope-change trajectory, current-value association, Weibull
    /// baseline.
    pub fn drop_and_slope_change() -> Self {
        Self {
            trajectory: TrajectorySpec::drop_and_slope_change(&[]),
            association: AssociationForm::value(),
            survival_covariates: Vec::new(),
            baseline: BaselineFamily::Weibull,
            history: HistoryFilter::All,
            quadrature: QuadratureConfig::default(),
        }
    }

    /// Random intercept and slope fitted to pre-event measurements only,
    /// with the same survival submodel as [`ModelSpec::drop_and_slope_change`].
    pub fn extrapolation() -> Self {
        Self {
            trajectory: TrajectorySpec::linear(&[]),
            history: HistoryFilter::PreEventOnly,
            ..Self::drop_and_slope_change()
        }
    }

    pub fn n_random(&self) -> usize {
        self.trajectory.n_random()
    }

    /// Fills in data-dependent defaults (baseline knots).
    pub fn resolve(&self, data: &Dataset) -> Result<ModelSpec> {
        let mut spec = self.clone();
        if let BaselineFamily::BsplineLogHazard { basis, n_basis } = &mut spec.baseline {
            if basis.is_none() {
                if *n_basis < 4 {
                    return Err(Error::InvalidParameter(format!(
                        "a cubic baseline needs at least 4 basis functions, got {n_basis}"
                    )));
                }
                let times: Vec<f64> = data.subjects.iter().map(|s| s.event_time).collect();
                let hi = times.iter().cloned().fold(0.0, f64::max);
                if !(hi > 0.0) {
                    return Err(Error::InvalidData("no positive follow-up times".into()));
                }
                let observed = data.event_times();
                let source = if observed.len() >= *n_basis { &observed } else { &times };
                let mut knots = SplineBasis::quantile_knots(source, *n_basis - 4);
                knots.retain(|&k| k > 0.0 && k < hi);
                *basis = Some(SplineBasis::bspline(3, knots, 0.0, hi)?);
            }
        }
        self.validate_data(data)?;
        Ok(spec)
    }

    fn validate_data(&self, data: &Dataset) -> Result<()> {
        let needed = self
            .trajectory
            .required_covariates()
            .max(self.survival_covariates.iter().map(|&i| i + 1).max().unwrap_or(0));
        if let Some(s) = data.subjects.first() {
            if s.covariates.len() < needed {
                return Err(Error::Dimension {
                    what: "covariates",
                    expected: needed,
                    got: s.covariates.len(),
                });
            }
        }
        Ok(())
    }

    /// Baseline hazard with the spec's structure and neutral values.
    pub fn baseline_template(&self) -> Result<BaselineHazard> {
        match &self.baseline {
            BaselineFamily::Weibull => Ok(BaselineHazard::Weibull {
                shape: 1.0,
                scale: 1.0,
            }),
            BaselineFamily::BsplineLogHazard { basis: Some(b), .. } => Ok(BaselineHazard::BsplineLogHazard {
                basis: b.clone(),
                coefficients: vec![0.0; b.dim()],
            }),
            BaselineFamily::BsplineLogHazard { basis: None, .. } => Err(Error::InvalidParameter(
                "baseline spline basis is unresolved; call resolve() with the training data".into(),
            )),
        }
    }

    /// Measurements the longitudinal submodel uses for `subject`.
    pub fn measurements<'a>(&self, subject: &'a SubjectRecord) -> &'a [Measurement] {
        match self.history {
            HistoryFilter::All => &subject.measurements,
            HistoryFilter::PreEventOnly => subject.pre_event_measurements(),
        }
    }

    pub fn hazard_context<'a>(
        &'a self,
        coefs: &'a [f64],
        rho: Option<f64>,
        covariates: &'a [f64],
    ) -> HazardContext<'a> {
        HazardContext {
            trajectory: &self.trajectory,
            coefs,
            rho,
            covariates,
            association: &self.association,
            survival_covariates: &self.survival_covariates,
            quadrature: &self.quadrature,
        }
    }

    /// Checks every dimension and constraint of `params` against the spec.
    pub fn validate_params(&self, params: &JointParams) -> Result<()> {
        let l = &params.longitudinal;
        let s = &params.survival;
        let checks = [
            ("fixed effects", self.trajectory.n_fixed(), l.beta.len()),
            ("random-effects covariance", self.n_random().pow(2), l.d.len()),
            ("survival covariate coefficients", self.survival_covariates.len(), s.gamma.len()),
            ("association coefficients", self.association.n_alpha(), s.alpha.len()),
        ];
        for (what, expected, got) in checks {
            if expected != got {
                return Err(Error::Dimension { what, expected, got });
            }
        }
        if !(l.sigma > 0.0) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {}", l.sigma)));
        }
        if self.n_random() > 0 {
            cholesky(&l.d, self.n_random())?;
        }
        s.baseline.validate()?;
        match (&self.baseline, &s.baseline) {
            (BaselineFamily::Weibull, BaselineHazard::Weibull { .. })
            | (BaselineFamily::BsplineLogHazard { .. }, BaselineHazard::BsplineLogHazard { .. }) => Ok(()),
            _ => Err(Error::InvalidParameter("baseline family does not match the spec".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_json_round_trip() {
        let spec = ModelSpec::extrapolation();
        let json = serde_json::to_string(&spec).unwrap();
        let back: ModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
        let minimal = r#"{
            "trajectory": {"pre_event": [{"feature": {"type": "intercept"}, "random": true}]},
            "association": "value+slope",
            "baseline": {"family": "bspline-log-hazard"}
        }"#;
        let parsed: ModelSpec = serde_json::from_str(minimal).unwrap();
        assert_eq!(parsed.association.n_alpha(), 2);
        assert_eq!(parsed.history, HistoryFilter::All);
    }

    #[test]
    fn resolve_places_baseline_knots() {
        let subjects = (0..20)
            .map(|i| SubjectRecord::new(format!("s{i}"), 1.0 + i as f64, i % 2 == 0, None, vec![], vec![]).unwrap())
            .collect();
        let data = Dataset::new(subjects, vec![]).unwrap();
        let spec = ModelSpec {
            baseline: BaselineFamily::BsplineLogHazard {
                basis: None,
                n_basis: 9,
            },
            ..ModelSpec::drop_and_slope_change()
        };
        assert!(spec.baseline_template().is_err());
        let resolved = spec.resolve(&data).unwrap();
        match resolved.baseline_template().unwrap() {
            BaselineHazard::BsplineLogHazard { basis, .. } => {
                assert_eq!(basis.dim(), 9);
                assert_eq!(basis.boundary(), (0.0, 20.0));
            }
            _ => panic!("expected spline baseline"),
        }
    }

    #[test]
    fn history_filter() {
        let s = SubjectRecord::new(
            "a",
            10.0,
            true,
            Some(5.0),
            vec![],
            vec![Measurement::new(1.0, 1.0), Measurement::new(5.0, 2.0), Measurement::new(6.0, 3.0)],
        )
        .unwrap();
        assert_eq!(ModelSpec::drop_and_slope_change().measurements(&s).len(), 3);
        assert_eq!(ModelSpec::extrapolation().measurements(&s).len(), 1);
    }
}
