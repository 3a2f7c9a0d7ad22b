//! Piecewise mixed-effects trajectory.
//!
//! The true biomarker level is
//!
//! ```text
//! η(t) = x(t)ᵀβ + z(t)ᵀb                          t < ρ
//! η(t) = x(t)ᵀβ + z(t)ᵀb + x̃(t)ᵀβ̃ + z̃(t)ᵀb̃        t ≥ ρ
//! ```
//!
//! where the post-event design `x̃, z̃` is built from `R(t)` and `t₊`. A
//! [`TrajectorySpec`] lists the pre-event terms (always active) and the
//! post-event terms (active from `ρ` on). Every term has a fixed coefficient;
//! terms flagged `random` also carry a subject-specific deviation. The fixed
//! coefficient vector is laid out pre-event terms first, and the random
//! effect vector `b` is laid out the same way restricted to random terms, so
//! `b = (b, b̃)`.

use serde::{Deserialize, Serialize};

use crate::data::{intermediate_indicator, time_since_intermediate, Measurement, SubjectRecord};
use crate::error::{Error, Result};
use crate::prelude::*;
use crate::quadrature::{integrate, QuadratureConfig};
use crate::spline::SplineBasis;
use crate::stats::normal_log_density;

/// A design-vector builder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Feature {
    Intercept,
    Time,
    /// `R(t)`, the step at the intermediate event.
    EventIndicator,
    /// `t₊`, time elapsed since the intermediate event.
    TimeSinceEvent,
    Covariate { index: usize },
    TimeSpline { basis: SplineBasis },
    TimeSinceEventSpline { basis: SplineBasis },
    /// `feature(t) · w[covariate]`.
    Interaction { feature: Box<Feature>, covariate: usize },
}

/// Where a feature is being evaluated.
#[derive(Debug, Clone, Copy)]
struct Point<'a> {
    t: f64,
    t_plus: f64,
    post: bool,
    w: &'a [f64],
}

impl Feature {
    pub fn dim(&self) -> usize {
        match self {
            Feature::TimeSpline { basis } | Feature::TimeSinceEventSpline { basis } => basis.dim(),
            Feature::Interaction { feature, .. } => feature.dim(),
            _ => 1,
        }
    }

    fn covariate_bound(&self) -> Option<usize> {
        match self {
            Feature::Covariate { index } => Some(*index),
            Feature::Interaction { feature, covariate } => {
                Some(feature.covariate_bound().map_or(*covariate, |c| c.max(*covariate)))
            }
            _ => None,
        }
    }

    fn is_polynomial(&self) -> bool {
        match self {
            Feature::TimeSpline { .. } | Feature::TimeSinceEventSpline { .. } => false,
            Feature::Interaction { feature, .. } => feature.is_polynomial(),
            _ => true,
        }
    }

    /// Writes the feature's columns (value for `order = 0`, time derivative
    /// for `order = 1`) into `out`.
    fn fill(&self, pt: &Point, order: usize, out: &mut [f64]) {
        match self {
            Feature::Intercept => out[0] = if order == 0 { 1.0 } else { 0.0 },
            Feature::Time => out[0] = if order == 0 { pt.t } else { 1.0 },
            Feature::EventIndicator => out[0] = if order == 0 && pt.post { 1.0 } else { 0.0 },
            Feature::TimeSinceEvent => {
                out[0] = match (order, pt.post) {
                    (0, _) => pt.t_plus,
                    (_, true) => 1.0,
                    _ => 0.0,
                }
            }
            Feature::Covariate { index } => out[0] = if order == 0 { pt.w[*index] } else { 0.0 },
            Feature::TimeSpline { basis } => basis.derivative_into(pt.t, order, out),
            Feature::TimeSinceEventSpline { basis } => {
                if order > 0 && !pt.post {
                    out.iter_mut().for_each(|v| *v = 0.0);
                } else {
                    basis.derivative_into(pt.t_plus, order, out);
                }
            }
            Feature::Interaction { feature, covariate } => {
                feature.fill(pt, order, out);
                let w = pt.w[*covariate];
                out.iter_mut().for_each(|v| *v *= w);
            }
        }
    }

    /// `Σ_k coefs[k] · column_k` without materializing the columns.
    fn contribution(&self, pt: &Point, coefs: &[f64], order: usize) -> f64 {
        match self {
            Feature::TimeSpline { basis } => basis.dot(pt.t, coefs, order),
            Feature::TimeSinceEventSpline { basis } => {
                if order > 0 && !pt.post {
                    0.0
                } else {
                    basis.dot(pt.t_plus, coefs, order)
                }
            }
            Feature::Interaction { feature, covariate } => {
                pt.w[*covariate] * feature.contribution(pt, coefs, order)
            }
            _ => {
                let mut col = [0.0];
                self.fill(pt, order, &mut col);
                col[0] * coefs[0]
            }
        }
    }

    /// Closed-form `∫_a^b` of a polynomial feature on a segment that lies
    /// entirely in one branch. `None` for spline features.
    fn segment_integral(&self, a: f64, b: f64, rho: f64, post: bool, w: &[f64]) -> Option<f64> {
        Some(match self {
            Feature::Intercept => b - a,
            Feature::Time => 0.5 * (b * b - a * a),
            Feature::EventIndicator => {
                if post {
                    b - a
                } else {
                    0.0
                }
            }
            Feature::TimeSinceEvent => {
                if post {
                    0.5 * ((b - rho).powi(2) - (a - rho).powi(2))
                } else {
                    0.0
                }
            }
            Feature::Covariate { index } => w[*index] * (b - a),
            Feature::Interaction { feature, covariate } => {
                w[*covariate] * feature.segment_integral(a, b, rho, post, w)?
            }
            Feature::TimeSpline { .. } | Feature::TimeSinceEventSpline { .. } => return None,
        })
    }

    fn breakpoints(&self, rho: Option<f64>, out: &mut Vec<f64>) {
        match self {
            Feature::TimeSpline { basis } => out.extend_from_slice(basis.interior_knots()),
            Feature::TimeSinceEventSpline { basis } => {
                if let Some(r) = rho {
                    out.extend(basis.interior_knots().iter().map(|k| k + r));
                }
            }
            Feature::Interaction { feature, .. } => feature.breakpoints(rho, out),
            _ => {}
        }
    }

    fn label(&self, names: &[String]) -> String {
        let cov = |i: usize| names.get(i).cloned().unwrap_or_else(|| format!("w{i}"));
        match self {
            Feature::Intercept => "(Intercept)".to_string(),
            Feature::Time => "time".to_string(),
            Feature::EventIndicator => "R".to_string(),
            Feature::TimeSinceEvent => "t+".to_string(),
            Feature::Covariate { index } => cov(*index),
            Feature::TimeSpline { .. } => "B(t)".to_string(),
            Feature::TimeSinceEventSpline { .. } => "B(t+)".to_string(),
            Feature::Interaction { feature, covariate } => {
                format!("{}:{}", feature.label(names), cov(*covariate))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub feature: Feature,
    #[serde(default)]
    pub random: bool,
}

impl Term {
    pub fn fixed(feature: Feature) -> Self {
        Self {
            feature,
            random: false,
        }
    }

    pub fn random(feature: Feature) -> Self {
        Self {
            feature,
            random: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub pre_event: Vec<Term>,
    #[serde(default)]
    pub post_event: Vec<Term>,
}

/// Fixed effects `(β, β̃)`, residual standard deviation and the joint
/// covariance `D` of `(b, b̃)` (row-major, `q × q`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalParams {
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomEffects(pub Vec<f64>);

impl RandomEffects {
    pub fn zeros(q: usize) -> Self {
        Self(vec![0.0; q])
    }
}

impl TrajectorySpec {
    /// Linear trend with a drop at the event and a slope change afterwards,
    /// random effects on all four terms; `covariates` enter as fixed effects.
    pub fn drop_and_slope_change(covariates: &[usize]) -> Self {
        let mut pre = vec![Term::random(Feature::Intercept), Term::random(Feature::Time)];
        pre.extend(covariates.iter().map(|&i| Term::fixed(Feature::Covariate { index: i })));
        Self {
            pre_event: pre,
            post_event: vec![
                Term::random(Feature::EventIndicator),
                Term::random(Feature::TimeSinceEvent),
            ],
        }
    }

    /// Random intercept and slope, no post-event terms.
    pub fn linear(covariates: &[usize]) -> Self {
        let mut pre = vec![Term::random(Feature::Intercept), Term::random(Feature::Time)];
        pre.extend(covariates.iter().map(|&i| Term::fixed(Feature::Covariate { index: i })));
        Self {
            pre_event: pre,
            post_event: Vec::new(),
        }
    }

    /// Spline in time before the event and a spline in time-since-event
    /// afterwards (both random), with covariates as main effects and as
    /// interactions with both splines.
    pub fn spline_in_time_since(
        time_basis: SplineBasis,
        since_basis: SplineBasis,
        covariates: &[usize],
    ) -> Self {
        let mut pre = vec![
            Term::random(Feature::Intercept),
            Term::random(Feature::TimeSpline {
                basis: time_basis.clone(),
            }),
        ];
        let mut post = vec![Term::random(Feature::TimeSinceEventSpline {
            basis: since_basis.clone(),
        })];
        for &i in covariates {
            pre.push(Term::fixed(Feature::Covariate { index: i }));
            pre.push(Term::fixed(Feature::Interaction {
                feature: Box::new(Feature::TimeSpline {
                    basis: time_basis.clone(),
                }),
                covariate: i,
            }));
            post.push(Term::fixed(Feature::Interaction {
                feature: Box::new(Feature::TimeSinceEventSpline {
                    basis: since_basis.clone(),
                }),
                covariate: i,
            }));
        }
        Self {
            pre_event: pre,
            post_event: post,
        }
    }

    fn terms(&self) -> impl Iterator<Item = (&Term, bool)> {
        self.pre_event
            .iter()
            .map(|t| (t, false))
            .chain(self.post_event.iter().map(|t| (t, true)))
    }

    /// Length of `(β, β̃)`.
    pub fn n_fixed(&self) -> usize {
        self.terms().map(|(t, _)| t.feature.dim()).sum()
    }

    /// Length of `(b, b̃)`.
    pub fn n_random(&self) -> usize {
        self.terms().filter(|(t, _)| t.random).map(|(t, _)| t.feature.dim()).sum()
    }

    /// Length of the pre-event block `b`.
    pub fn n_random_pre(&self) -> usize {
        self.pre_event.iter().filter(|t| t.random).map(|t| t.feature.dim()).sum()
    }

    pub fn n_fixed_pre(&self) -> usize {
        self.pre_event.iter().map(|t| t.feature.dim()).sum()
    }

    /// Smallest covariate dimension the spec can be evaluated with.
    pub fn required_covariates(&self) -> usize {
        self.terms()
            .filter_map(|(t, _)| t.feature.covariate_bound())
            .map(|i| i + 1)
            .max()
            .unwrap_or(0)
    }

    /// Column of `(β, β̃)` that each random effect is attached to.
    pub fn random_columns(&self) -> Vec<usize> {
        let mut cols = Vec::new();
        let mut offset = 0;
        for (term, _) in self.terms() {
            let dim = term.feature.dim();
            if term.random {
                cols.extend(offset..offset + dim);
            }
            offset += dim;
        }
        cols
    }

    pub fn column_names(&self, covariate_names: &[String]) -> Vec<String> {
        let mut names = Vec::new();
        for (term, post) in self.terms() {
            let label = term.feature.label(covariate_names);
            let label = if post { format!("post:{label}") } else { label };
            let dim = term.feature.dim();
            if dim == 1 {
                names.push(label);
            } else {
                names.extend((1..=dim).map(|j| format!("{label}[{j}]")));
            }
        }
        names
    }

    pub fn has_spline_features(&self) -> bool {
        self.terms().any(|(t, _)| !t.feature.is_polynomial())
    }

    /// `β + scatter(b)`: the subject's coefficient on every column.
    pub fn effective_coefficients(&self, beta: &[f64], b: &[f64]) -> Vec<f64> {
        let mut coefs = beta.to_vec();
        self.add_random_into(&mut coefs, b);
        coefs
    }

    pub fn add_random_into(&self, coefs: &mut [f64], b: &[f64]) {
        for (col, value) in self.random_columns().into_iter().zip(b) {
            coefs[col] += value;
        }
    }

    /// Full design row `(x, x̃)` (or its time derivative) at `t`; the
    /// post-event part is zero before `ρ`.
    pub fn design_row(&self, t: f64, rho: Option<f64>, w: &[f64], order: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n_fixed());
        let post = intermediate_indicator(t, rho);
        let pt = Point {
            t,
            t_plus: time_since_intermediate(t, rho),
            post,
            w,
        };
        let mut offset = 0;
        for (term, is_post) in self.terms() {
            let dim = term.feature.dim();
            let slot = &mut out[offset..offset + dim];
            if is_post && !post {
                slot.iter_mut().for_each(|v| *v = 0.0);
            } else {
                term.feature.fill(&pt, order, slot);
            }
            offset += dim;
        }
    }

    /// `η(t)` (`order = 0`) or `dη/dt` (`order = 1`, right limit at `ρ`) for
    /// effective coefficients `coefs`.
    pub fn evaluate(&self, t: f64, rho: Option<f64>, w: &[f64], coefs: &[f64], order: usize) -> f64 {
        let post = intermediate_indicator(t, rho);
        let pt = Point {
            t,
            t_plus: time_since_intermediate(t, rho),
            post,
            w,
        };
        let mut offset = 0;
        let mut total = 0.0;
        for term in &self.pre_event {
            let dim = term.feature.dim();
            total += term.feature.contribution(&pt, &coefs[offset..offset + dim], order);
            offset += dim;
        }
        if post {
            for term in &self.post_event {
                let dim = term.feature.dim();
                total += term.feature.contribution(&pt, &coefs[offset..offset + dim], order);
                offset += dim;
            }
        }
        total
    }

    /// `∫_0^t η(s) ds`: closed form for polynomial terms, adaptive quadrature
    /// (split at `ρ` and at spline knots) for spline terms.
    pub fn area(
        &self,
        t: f64,
        rho: Option<f64>,
        w: &[f64],
        coefs: &[f64],
        quadrature: &QuadratureConfig,
    ) -> Result<f64> {
        if t <= 0.0 {
            return Ok(0.0);
        }
        // segments lying entirely in one branch
        let (pre_end, post_start) = match rho {
            Some(r) if r < t => (r, Some(r)),
            _ => (t, None),
        };
        let r = rho.unwrap_or(f64::INFINITY);
        let mut total = 0.0;
        let mut offset = 0;
        let mut numeric: Vec<(usize, &Term, bool)> = Vec::new();
        for (term, is_post) in self.terms() {
            let dim = term.feature.dim();
            let c = &coefs[offset..offset + dim];
            let f = &term.feature;
            if f.is_polynomial() {
                let pre_part = if is_post {
                    0.0
                } else {
                    f.segment_integral(0.0, pre_end, r, false, w).unwrap_or(0.0)
                };
                let post_part = post_start
                    .map(|s| f.segment_integral(s, t, r, true, w).unwrap_or(0.0))
                    .unwrap_or(0.0);
                total += c[0] * (pre_part + post_part);
            } else {
                numeric.push((offset, term, is_post));
            }
            offset += dim;
        }
        for (offset, term, is_post) in numeric {
            let dim = term.feature.dim();
            let c = &coefs[offset..offset + dim];
            let mut breaks = Vec::new();
            term.feature.breakpoints(rho, &mut breaks);
            if let Some(r) = rho {
                breaks.push(r);
            }
            let lower = if is_post {
                match post_start {
                    Some(s) => s,
                    None => continue,
                }
            } else {
                0.0
            };
            let integrand = |s: f64| {
                let post = intermediate_indicator(s, rho);
                let pt = Point {
                    t: s,
                    t_plus: time_since_intermediate(s, rho),
                    post,
                    w,
                };
                term.feature.contribution(&pt, c, 0)
            };
            total += integrate(integrand, lower, t, &breaks, quadrature)?.value;
        }
        Ok(total)
    }

    fn check(&self, w: &[f64], params: &LongitudinalParams, b: &RandomEffects) -> Result<()> {
        let p = self.n_fixed();
        if params.beta.len() != p {
            return Err(Error::Dimension {
                what: "fixed effects",
                expected: p,
                got: params.beta.len(),
            });
        }
        let q = self.n_random();
        if b.0.len() != q {
            return Err(Error::Dimension {
                what: "random effects",
                expected: q,
                got: b.0.len(),
            });
        }
        let needed = self.required_covariates();
        if w.len() < needed {
            return Err(Error::Dimension {
                what: "covariates",
                expected: needed,
                got: w.len(),
            });
        }
        Ok(())
    }
}

/// True biomarker value `η(t)`.
pub fn eta(
    spec: &TrajectorySpec,
    t: f64,
    rho: Option<f64>,
    w: &[f64],
    params: &LongitudinalParams,
    b: &RandomEffects,
) -> Result<f64> {
    spec.check(w, params, b)?;
    let coefs = spec.effective_coefficients(&params.beta, &b.0);
    Ok(spec.evaluate(t, rho, w, &coefs, 0))
}

/// `dη/dt`, taking the right limit (post-event slope) at `t = ρ`.
pub fn eta_slope(
    spec: &TrajectorySpec,
    t: f64,
    rho: Option<f64>,
    w: &[f64],
    params: &LongitudinalParams,
    b: &RandomEffects,
) -> Result<f64> {
    spec.check(w, params, b)?;
    let coefs = spec.effective_coefficients(&params.beta, &b.0);
    Ok(spec.evaluate(t, rho, w, &coefs, 1))
}

/// Cumulative effect `∫_0^t η(s) ds`.
pub fn eta_area(
    spec: &TrajectorySpec,
    t: f64,
    rho: Option<f64>,
    w: &[f64],
    params: &LongitudinalParams,
    b: &RandomEffects,
    quadrature: &QuadratureConfig,
) -> Result<f64> {
    spec.check(w, params, b)?;
    let coefs = spec.effective_coefficients(&params.beta, &b.0);
    spec.area(t, rho, w, &coefs, quadrature)
}

/// `Σ_j log N(y_j | η(t_j), σ²)` over the given measurements.
pub fn measurements_loglik(
    spec: &TrajectorySpec,
    measurements: &[Measurement],
    rho: Option<f64>,
    w: &[f64],
    coefs: &[f64],
    sigma: f64,
) -> f64 {
    measurements
        .iter()
        .map(|m| normal_log_density(m.value, spec.evaluate(m.time, rho, w, coefs, 0), sigma))
        .sum()
}

/// Gaussian measurement log-likelihood of one subject.
pub fn longitudinal_loglik(
    spec: &TrajectorySpec,
    subject: &SubjectRecord,
    params: &LongitudinalParams,
    b: &RandomEffects,
) -> Result<f64> {
    if !(params.sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "residual standard deviation must be positive, got {}",
            params.sigma
        )));
    }
    spec.check(&subject.covariates, params, b)?;
    let coefs = spec.effective_coefficients(&params.beta, &b.0);
    Ok(measurements_loglik(
        spec,
        &subject.measurements,
        subject.intermediate_time,
        &subject.covariates,
        &coefs,
        params.sigma,
    ))
}
