//! Relative-risk submodel.
//!
//! ```text
//! h(t) = h₀(t) exp{γᵀw + R(t)ζ + f_{t<ρ}(t)ᵀα}      t < ρ
//! h(t) = h₀(t) exp{γᵀw + R(t)ζ + f_{t≥ρ}(t)ᵀα}      t ≥ ρ
//! ```
//!
//! The association functional `f` may use different features before and
//! after the intermediate event; `α` is aligned to the union of both lists.

use serde::{Deserialize, Serialize};

use crate::data::intermediate_indicator;
use crate::error::{Error, Result};
use crate::longitudinal::TrajectorySpec;
use crate::prelude::*;
use crate::quadrature::{integrate, QuadratureConfig};
use crate::spline::SplineBasis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum BaselineHazard {
    /// `log h₀(t) = B(t)ᵀc`, constant outside the basis boundary.
    BsplineLogHazard {
        basis: SplineBasis,
        coefficients: Vec<f64>,
    },
    /// `h₀(t) = (ξ/λ)(t/λ)^{ξ−1}`.
    Weibull { shape: f64, scale: f64 },
}

impl BaselineHazard {
    pub fn weibull(shape: f64, scale: f64) -> Result<Self> {
        let h = BaselineHazard::Weibull { shape, scale };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaselineHazard::Weibull { shape, scale } => {
                if !(*shape > 0.0 && shape.is_finite() && *scale > 0.0 && scale.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "weibull shape and scale must be positive, got {shape} and {scale}"
                    )));
                }
            }
            BaselineHazard::BsplineLogHazard {
                basis,
                coefficients,
            } => {
                if coefficients.len() != basis.dim() {
                    return Err(Error::Dimension {
                        what: "baseline coefficients",
                        expected: basis.dim(),
                        got: coefficients.len(),
                    });
                }
                if coefficients.iter().any(|c| !c.is_finite()) {
                    return Err(Error::NonFinite("baseline coefficients".into()));
                }
            }
        }
        Ok(())
    }

    pub fn log_h0(&self, t: f64) -> f64 {
        match self {
            BaselineHazard::Weibull { shape, scale } => {
                (shape / scale).ln() + (shape - 1.0) * (t / scale).ln()
            }
            BaselineHazard::BsplineLogHazard {
                basis,
                coefficients,
            } => basis.dot(t, coefficients, 0),
        }
    }

    /// Closed-form `∫_{t0}^{t1} h₀` for the Weibull family.
    pub fn weibull_cumulative(&self, t0: f64, t1: f64) -> Option<f64> {
        match self {
            BaselineHazard::Weibull { shape, scale } => {
                Some((t1 / scale).powf(*shape) - (t0 / scale).powf(*shape))
            }
            _ => None,
        }
    }

    /// Unconstrained parameter vector used by the sampler: `(log ξ, log λ)`
    /// or the spline coefficients.
    pub fn unconstrained(&self) -> Vec<f64> {
        match self {
            BaselineHazard::Weibull { shape, scale } => vec![shape.ln(), scale.ln()],
            BaselineHazard::BsplineLogHazard { coefficients, .. } => coefficients.clone(),
        }
    }

    pub fn set_unconstrained(&mut self, values: &[f64]) {
        match self {
            BaselineHazard::Weibull { shape, scale } => {
                *shape = values[0].exp();
                *scale = values[1].exp();
            }
            BaselineHazard::BsplineLogHazard { coefficients, .. } => {
                coefficients.copy_from_slice(values)
            }
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            BaselineHazard::Weibull { .. } => 2,
            BaselineHazard::BsplineLogHazard { coefficients, .. } => coefficients.len(),
        }
    }

    fn breakpoints(&self, out: &mut Vec<f64>) {
        if let BaselineHazard::BsplineLogHazard { basis, .. } = self {
            let (lo, hi) = basis.boundary();
            out.push(lo);
            out.push(hi);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AssocFeature {
    Value,
    Slope,
    Area,
    /// `R(t) · dη/dt`; zero before the intermediate event.
    SlopeInteraction,
}

impl AssocFeature {
    const ALL: [AssocFeature; 4] = [
        AssocFeature::Value,
        AssocFeature::Slope,
        AssocFeature::Area,
        AssocFeature::SlopeInteraction,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

/// Association features before and after the intermediate event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AssociationDef", into = "AssociationDef")]
pub struct AssociationForm {
    pre_event: Vec<AssocFeature>,
    post_event: Vec<AssocFeature>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AssociationDef {
    Keyword(String),
    Lists {
        pre_event: Vec<AssocFeature>,
        post_event: Vec<AssocFeature>,
    },
}

impl TryFrom<AssociationDef> for AssociationForm {
    type Error = Error;

    fn try_from(def: AssociationDef) -> Result<Self> {
        match def {
            AssociationDef::Keyword(k) => AssociationForm::from_keyword(&k),
            AssociationDef::Lists {
                pre_event,
                post_event,
            } => AssociationForm::new(pre_event, post_event),
        }
    }
}

impl From<AssociationForm> for AssociationDef {
    fn from(form: AssociationForm) -> Self {
        AssociationDef::Lists {
            pre_event: form.pre_event,
            post_event: form.post_event,
        }
    }
}

pub const ASSOCIATION_KEYWORDS: [&str; 7] = [
    "none",
    "value",
    "slope",
    "value+slope",
    "area",
    "value+slope+area",
    "value+slope-int",
];

impl AssociationForm {
    pub fn new(mut pre_event: Vec<AssocFeature>, mut post_event: Vec<AssocFeature>) -> Result<Self> {
        pre_event.sort();
        pre_event.dedup();
        post_event.sort();
        post_event.dedup();
        if pre_event.contains(&AssocFeature::SlopeInteraction) {
            return Err(Error::InvalidParameter(
                "slope-interaction is only defined after the intermediate event".into(),
            ));
        }
        if pre_event.is_empty() != post_event.is_empty() {
            return Err(Error::InvalidParameter(
                "association lists must both be empty or both be nonempty".into(),
            ));
        }
        Ok(Self {
            pre_event,
            post_event,
        })
    }

    pub fn none() -> Self {
        Self {
            pre_event: Vec::new(),
            post_event: Vec::new(),
        }
    }

    /// Same features on both sides of the event.
    pub fn same(features: Vec<AssocFeature>) -> Result<Self> {
        Self::new(features.clone(), features)
    }

    pub fn value() -> Self {
        Self::same(vec![AssocFeature::Value]).expect("valid form")
    }

    pub fn from_keyword(keyword: &str) -> Result<Self> {
        use AssocFeature::*;
        match keyword {
            "none" => Ok(Self::none()),
            "value" => Self::same(vec![Value]),
            "slope" => Self::same(vec![Slope]),
            "value+slope" => Self::same(vec![Value, Slope]),
            "area" => Self::same(vec![Area]),
            "value+slope+area" => Self::same(vec![Value, Slope, Area]),
            "value+slope-int" => Self::new(vec![Value, Slope], vec![Value, Slope, SlopeInteraction]),
            other => Err(Error::InvalidParameter(format!(
                "unknown association form '{other}', expected one of {}",
                ASSOCIATION_KEYWORDS.join(", ")
            ))),
        }
    }

    pub fn pre_event(&self) -> &[AssocFeature] {
        &self.pre_event
    }

    pub fn post_event(&self) -> &[AssocFeature] {
        &self.post_event
    }

    /// Features carrying a coefficient, in `α` order.
    pub fn union(&self) -> Vec<AssocFeature> {
        AssocFeature::ALL
            .into_iter()
            .filter(|f| self.pre_event.contains(f) || self.post_event.contains(f))
            .collect()
    }

    pub fn n_alpha(&self) -> usize {
        self.union().len()
    }

    /// Per-branch coefficient of every feature (indexed by feature), zero
    /// where the branch does not use it.
    pub fn branch_weights(&self, alpha: &[f64]) -> BranchWeights {
        let mut pre = [0.0; 4];
        let mut post = [0.0; 4];
        for (f, a) in self.union().into_iter().zip(alpha) {
            if self.pre_event.contains(&f) {
                pre[f.index()] = *a;
            }
            if self.post_event.contains(&f) {
                post[f.index()] = *a;
            }
        }
        BranchWeights { pre, post }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchWeights {
    pub pre: [f64; 4],
    pub post: [f64; 4],
}

impl BranchWeights {
    fn needs(&self, f: AssocFeature) -> bool {
        self.pre[f.index()] != 0.0 || self.post[f.index()] != 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalParams {
    pub gamma: Vec<f64>,
    pub zeta: f64,
    pub alpha: Vec<f64>,
    pub baseline: BaselineHazard,
}

/// Everything about one subject that the hazard depends on besides the
/// survival parameters.
#[derive(Debug, Clone, Copy)]
pub struct HazardContext<'a> {
    pub trajectory: &'a TrajectorySpec,
    /// Effective longitudinal coefficients `β + b` (see
    /// [`TrajectorySpec::effective_coefficients`]).
    pub coefs: &'a [f64],
    pub rho: Option<f64>,
    pub covariates: &'a [f64],
    pub association: &'a AssociationForm,
    /// Indices of the subject covariates entering `γᵀw`.
    pub survival_covariates: &'a [usize],
    pub quadrature: &'a QuadratureConfig,
}

impl HazardContext<'_> {
    fn check(&self, params: &SurvivalParams) -> Result<()> {
        if params.gamma.len() != self.survival_covariates.len() {
            return Err(Error::Dimension {
                what: "survival covariate coefficients",
                expected: self.survival_covariates.len(),
                got: params.gamma.len(),
            });
        }
        if params.alpha.len() != self.association.n_alpha() {
            return Err(Error::Dimension {
                what: "association coefficients",
                expected: self.association.n_alpha(),
                got: params.alpha.len(),
            });
        }
        if self.coefs.len() != self.trajectory.n_fixed() {
            return Err(Error::Dimension {
                what: "trajectory coefficients",
                expected: self.trajectory.n_fixed(),
                got: self.coefs.len(),
            });
        }
        params.baseline.validate()
    }

    fn covariate_effect(&self, gamma: &[f64]) -> f64 {
        self.survival_covariates
            .iter()
            .zip(gamma)
            .map(|(&k, g)| g * self.covariates[k])
            .sum()
    }

    /// `[value, slope, area, R·slope]`; only the features with a nonzero
    /// weight are computed.
    fn features(&self, t: f64, post: bool, weights: &BranchWeights) -> Result<[f64; 4]> {
        let mut f = [0.0; 4];
        let tr = self.trajectory;
        if weights.needs(AssocFeature::Value) {
            f[0] = tr.evaluate(t, self.rho, self.covariates, self.coefs, 0);
        }
        if weights.needs(AssocFeature::Slope) || weights.needs(AssocFeature::SlopeInteraction) {
            let slope = tr.evaluate(t, self.rho, self.covariates, self.coefs, 1);
            f[1] = slope;
            f[3] = if post { slope } else { 0.0 };
        }
        if weights.needs(AssocFeature::Area) {
            f[2] = tr.area(t, self.rho, self.covariates, self.coefs, self.quadrature)?;
        }
        Ok(f)
    }

    fn log_hazard_with(&self, t: f64, params: &SurvivalParams, offset: f64, weights: &BranchWeights) -> Result<f64> {
        let post = intermediate_indicator(t, self.rho);
        let f = self.features(t, post, weights)?;
        let w = if post { &weights.post } else { &weights.pre };
        let assoc: f64 = f.iter().zip(w).map(|(a, b)| a * b).sum();
        let zeta = if post { params.zeta } else { 0.0 };
        Ok(params.baseline.log_h0(t) + offset + zeta + assoc)
    }
}

/// Association feature vector at `t` in `α` order for the active branch;
/// features the branch does not use are reported as zero.
pub fn association_features(t: f64, ctx: &HazardContext) -> Result<Vec<f64>> {
    let union = ctx.association.union();
    let ones = vec![1.0; union.len()];
    let weights = ctx.association.branch_weights(&ones);
    let post = intermediate_indicator(t, ctx.rho);
    let f = ctx.features(t, post, &weights)?;
    let active = if post { &weights.post } else { &weights.pre };
    Ok(union
        .into_iter()
        .map(|feat| active[feat.index()] * f[feat.index()])
        .collect())
}

/// `log h(t)` for the subject described by `ctx`.
pub fn log_hazard(t: f64, ctx: &HazardContext, params: &SurvivalParams) -> Result<f64> {
    ctx.check(params)?;
    let weights = ctx.association.branch_weights(&params.alpha);
    let offset = ctx.covariate_effect(&params.gamma);
    let value = ctx.log_hazard_with(t, params, offset, &weights)?;
    if value.is_nan() || value == f64::INFINITY {
        return Err(Error::NonFinite(format!("log hazard at t = {t}")));
    }
    Ok(value)
}

/// `∫_{t0}^{t1} h(s) ds`, split at `ρ` when it falls inside the interval.
pub fn cumulative_hazard(t0: f64, t1: f64, ctx: &HazardContext, params: &SurvivalParams) -> Result<f64> {
    if !(t0 >= 0.0 && t1 >= t0) {
        return Err(Error::InvalidParameter(format!(
            "cumulative hazard needs 0 <= t0 <= t1, got [{t0}, {t1}]"
        )));
    }
    ctx.check(params)?;
    if t1 == t0 {
        return Ok(0.0);
    }
    let weights = ctx.association.branch_weights(&params.alpha);
    let offset = ctx.covariate_effect(&params.gamma);
    let no_association = weights.pre.iter().chain(&weights.post).all(|&w| w == 0.0);
    if no_association {
        if let Some(h0) = params.baseline.weibull_cumulative(t0, t1) {
            // piecewise-constant relative risk: exact
            return Ok(match ctx.rho {
                Some(r) if r < t1 => {
                    let split = r.max(t0);
                    let before = params.baseline.weibull_cumulative(t0, split).unwrap_or(0.0);
                    let after = params.baseline.weibull_cumulative(split, t1).unwrap_or(0.0);
                    offset.exp() * (before + params.zeta.exp() * after)
                }
                _ => offset.exp() * h0,
            });
        }
    }
    let mut breaks = Vec::new();
    if let Some(r) = ctx.rho {
        breaks.push(r);
    }
    params.baseline.breakpoints(&mut breaks);
    let mut failure = None;
    let integrand = |s: f64| match ctx.log_hazard_with(s, params, offset, &weights) {
        Ok(v) => v.exp(),
        Err(e) => {
            failure.get_or_insert(e);
            0.0
        }
    };
    let result = integrate(integrand, t0, t1, &breaks, ctx.quadrature);
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(result?.value)
}

/// `δ log h(T) − ∫_0^T h(s) ds`.
pub fn survival_loglik(
    event_time: f64,
    event: bool,
    ctx: &HazardContext,
    params: &SurvivalParams,
) -> Result<f64> {
    let mut ll = -cumulative_hazard(0.0, event_time, ctx, params)?;
    if event {
        ll += log_hazard(event_time, ctx, params)?;
    }
    Ok(ll)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario_one() -> (TrajectorySpec, Vec<f64>) {
        (
            TrajectorySpec::drop_and_slope_change(&[]),
            vec![20.7, 1.6, -15.5, -0.76],
        )
    }

    fn params(alpha: Vec<f64>, zeta: f64, shape: f64) -> SurvivalParams {
        SurvivalParams {
            gamma: vec![],
            zeta,
            alpha,
            baseline: BaselineHazard::Weibull { shape, scale: 1.0 },
        }
    }

    fn ctx<'a>(
        spec: &'a TrajectorySpec,
        coefs: &'a [f64],
        rho: Option<f64>,
        form: &'a AssociationForm,
        quad: &'a QuadratureConfig,
    ) -> HazardContext<'a> {
        HazardContext {
            trajectory: spec,
            coefs,
            rho,
            covariates: &[],
            association: form,
            survival_covariates: &[],
            quadrature: quad,
        }
    }

    #[test]
    fn weibull_hazard_at_one() {
        let (spec, coefs) = scenario_one();
        let form = AssociationForm::value();
        let q = QuadratureConfig::default();
        let c = ctx(&spec, &coefs, None, &form, &q);
        let lh = log_hazard(1.0, &c, &params(vec![0.0], 0.0, 20.4)).unwrap();
        assert!((lh.exp() - 20.4).abs() < 1e-12);
    }

    #[test]
    fn value_association_adds_alpha_eta() {
        let (spec, coefs) = scenario_one();
        let form = AssociationForm::value();
        let q = QuadratureConfig::default();
        let c = ctx(&spec, &coefs, Some(5.0), &form, &q);
        let p = params(vec![0.1], 0.0, 2.0);
        let base = p.baseline.log_h0(10.0);
        let lh = log_hazard(10.0, &c, &p).unwrap();
        assert!((lh - base - 1.74).abs() < 1e-12);
    }

    #[test]
    fn zeta_is_hazard_ratio_after_event() {
        let (spec, coefs) = scenario_one();
        let form = AssociationForm::none();
        let q = QuadratureConfig::default();
        let p = params(vec![], 2f64.ln(), 1.5);
        let with = log_hazard(6.0, &ctx(&spec, &coefs, Some(5.0), &form, &q), &p).unwrap();
        let without = log_hazard(6.0, &ctx(&spec, &coefs, None, &form, &q), &p).unwrap();
        assert!(((with - without).exp() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn slope_interaction_is_zero_before_event() {
        let (spec, coefs) = scenario_one();
        let form = AssociationForm::from_keyword("value+slope-int").unwrap();
        assert_eq!(form.n_alpha(), 3);
        let q = QuadratureConfig::default();
        let c = ctx(&spec, &coefs, Some(5.0), &form, &q);
        let before = association_features(3.0, &c).unwrap();
        assert_eq!(before[2], 0.0);
        assert!((before[1] - 1.6).abs() < 1e-12);
        let after = association_features(7.0, &c).unwrap();
        assert!((after[2] - 0.84).abs() < 1e-12);
        let all = AssociationForm::from_keyword("value+slope+area").unwrap();
        let c = ctx(&spec, &coefs, None, &all, &q);
        assert_eq!(association_features(4.0, &c).unwrap().len(), 3);
    }

    #[test]
    fn keywords_round_trip_and_reject_unknown() {
        for k in ASSOCIATION_KEYWORDS {
            let form = AssociationForm::from_keyword(k).unwrap();
            let json = serde_json::to_string(&form).unwrap();
            let back: AssociationForm = serde_json::from_str(&json).unwrap();
            assert_eq!(form, back);
        }
        let parsed: AssociationForm = serde_json::from_str("\"value+slope\"").unwrap();
        assert_eq!(parsed.n_alpha(), 2);
        assert!(AssociationForm::from_keyword("curvature").is_err());
        assert!(AssociationForm::new(vec![AssocFeature::SlopeInteraction], vec![AssocFeature::Value]).is_err());
    }

    #[test]
    fn weibull_cumulative_closed_form() {
        let (spec, coefs) = scenario_one();
        let form = AssociationForm::value();
        let q = QuadratureConfig::default();
        let c = ctx(&spec, &coefs, Some(0.7), &form, &q);
        // α = 0 exercises the quadrature path through branch weights of zero
        let p = params(vec![0.0], 0.0, 3.3);
        let h = cumulative_hazard(0.2, 1.4, &c, &p).unwrap();
        let exact = 1.4f64.powf(3.3) - 0.2f64.powf(3.3);
        assert!((h - exact).abs() < 1e-10 * exact);
    }

    #[test]
    fn constant_hazard_is_exact() {
        let (spec, coefs) = scenario_one();
        let form = AssociationForm::none();
        let q = QuadratureConfig::default();
        let c = ctx(&spec, &coefs, None, &form, &q);
        let p = SurvivalParams {
            gamma: vec![],
            zeta: 0.0,
            alpha: vec![],
            baseline: BaselineHazard::Weibull {
                shape: 1.0,
                scale: 0.5,
            },
        };
        assert!((cumulative_hazard(1.0, 4.0, &c, &p).unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn association_hazard_matches_trapezoid() {
        let (spec, coefs) = scenario_one();
        let form = AssociationForm::from_keyword("value+slope+area").unwrap();
        let q = QuadratureConfig::default();
        let c = ctx(&spec, &coefs, Some(2.5), &form, &q);
        let p = params(vec![0.05, -0.3, 0.002], -0.4, 1.7);
        let h = cumulative_hazard(0.5, 4.0, &c, &p).unwrap();
        let n = 200_000;
        let f = |s: f64| log_hazard(s, &c, &p).unwrap().exp();
        // trapezoid on each side of ρ
        let trap = |a: f64, b: f64, n: usize| {
            let dx = (b - a) / n as f64;
            let mut s = 0.5 * (f(a) + f(b - 1e-15));
            for i in 1..n {
                s += f(a + i as f64 * dx);
            }
            s * dx
        };
        let oracle = trap(0.5, 2.5, n / 2) + trap(2.5, 4.0, n / 2);
        assert!((h - oracle).abs() < 1e-7 * oracle, "{h} vs {oracle}");
    }

    #[test]
    fn survival_loglik_closed_form() {
        let (spec, coefs) = scenario_one();
        let form = AssociationForm::none();
        let q = QuadratureConfig::default();
        let c = ctx(&spec, &coefs, None, &form, &q);
        let p = params(vec![], 0.0, 2.0);
        let ll = survival_loglik(1.5, false, &c, &p).unwrap();
        assert!((ll + 2.25).abs() < 1e-12);
        let ll_event = survival_loglik(1.5, true, &c, &p).unwrap();
        assert!((ll_event - ll - (2.0f64 * 1.5).ln()).abs() < 1e-12);
    }

    #[test]
    fn hazard_ignores_rho_when_branches_agree() {
        let spec = TrajectorySpec::drop_and_slope_change(&[]);
        let coefs = vec![20.7, 1.6, 0.0, 0.0];
        let form = AssociationForm::from_keyword("value+slope").unwrap();
        let q = QuadratureConfig::default();
        let p = params(vec![0.03, 0.2], 0.0, 1.2);
        let with = cumulative_hazard(0.0, 9.0, &ctx(&spec, &coefs, Some(4.0), &form, &q), &p).unwrap();
        let without = cumulative_hazard(0.0, 9.0, &ctx(&spec, &coefs, None, &form, &q), &p).unwrap();
        assert!((with - without).abs() < 1e-10 * without);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (spec, coefs) = scenario_one();
        let form = AssociationForm::value();
        let q = QuadratureConfig::default();
        let c = ctx(&spec, &coefs, None, &form, &q);
        assert!(cumulative_hazard(2.0, 1.0, &c, &params(vec![0.0], 0.0, 1.0)).is_err());
        assert!(log_hazard(1.0, &c, &params(vec![], 0.0, 1.0)).is_err());
        assert!(BaselineHazard::weibull(-1.0, 1.0).is_err());
    }
}
