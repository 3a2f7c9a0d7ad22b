//! Bayesian fitting by Metropolis-within-Gibbs and posterior sampling of
//! random effects for new subjects.
//!
//! The sampler uses a centered parameterization: for the random columns of
//! the design it tracks `φ_i = β_R + b_i` instead of `b_i`, which makes the
//! update of `β_R` an exact Gibbs step and keeps `φ_i` weakly correlated
//! with the population parameters. Blocks per iteration:
//!
//! 1. `φ_i` for every subject: independence proposal from the Gaussian
//!    longitudinal conditional, corrected by the survival likelihood, then a
//!    scaled random-walk step.
//! 2. Fixed effects without random counterparts: Gaussian conditional
//!    proposal corrected by the survival likelihood.
//! 3. `β_R`: exact Gibbs.
//! 4. `D`: inverse-Wishart proposal built from the scatter of `φ_i − β_R`,
//!    corrected for the scale/correlation prior.
//! 5. `σ`: inverse-gamma proposal from the residual sum of squares,
//!    corrected for the half-t prior.
//! 6. Survival block `(γ, ζ, α, baseline)`: adaptive Metropolis during
//!    burn-in, frozen afterwards; Gibbs update of the smoothness precision
//!    for spline baselines.

pub mod diagnostics;
mod new_subject;
mod sampler;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::longitudinal::LongitudinalParams;
use crate::model::{JointParams, ModelSpec};
use crate::prelude::*;
use crate::stats::{mean, quantiles, variance};
use crate::survival::{AssocFeature, BaselineHazard, SurvivalParams};

pub use new_subject::{NewSubjectConfig, NewSubjectSampler};
pub use sampler::{log_posterior, run_chain, ChainOutput};

pub const FITTED_SCHEMA_VERSION: &str = "interjm.fitted/1";

/// Prior hyperparameters. Coefficient priors are normal with mean zero on
/// the scale of the data; scale parameters get half-t priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Priors {
    pub beta_sd: f64,
    pub gamma_sd: f64,
    pub zeta_sd: f64,
    pub alpha_sd: f64,
    pub half_t_df: f64,
    pub sigma_scale: f64,
    pub d_scale: f64,
    /// LKJ shape of the random-effects correlation matrix (1 = uniform).
    pub lkj_shape: f64,
    pub weibull_log_shape_sd: f64,
    pub weibull_log_scale_sd: f64,
    pub baseline_ridge_sd: f64,
    /// Gamma(shape, rate) prior on the second-order random-walk precision.
    pub smoothness_shape: f64,
    pub smoothness_rate: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            beta_sd: 100.0,
            gamma_sd: 10.0,
            zeta_sd: 10.0,
            alpha_sd: 10.0,
            half_t_df: 3.0,
            sigma_scale: 5.0,
            d_scale: 5.0,
            lkj_shape: 1.0,
            weibull_log_shape_sd: 3.0,
            weibull_log_scale_sd: 10.0,
            baseline_ridge_sd: 10.0,
            smoothness_shape: 1.0,
            smoothness_rate: 0.005,
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        let scales = [
            self.beta_sd,
            self.gamma_sd,
            self.zeta_sd,
            self.alpha_sd,
            self.half_t_df,
            self.sigma_scale,
            self.d_scale,
            self.lkj_shape,
            self.weibull_log_shape_sd,
            self.weibull_log_scale_sd,
            self.baseline_ridge_sd,
            self.smoothness_shape,
            self.smoothness_rate,
        ];
        if scales.iter().all(|s| *s > 0.0 && s.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter("all prior scales must be positive and finite".into()))
        }
    }
}

/// Which likelihood terms enter the posterior.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LikelihoodMode {
    #[default]
    Full,
    /// Survival submodel switched off; `γ, ζ, α` stay at zero.
    LongitudinalOnly,
    /// No data at all: the chain samples the prior.
    PriorOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McmcConfig {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Iterations (from the start, within burn-in) during which proposals adapt.
    pub adaptation_window: Option<usize>,
    pub target_acceptance: f64,
    pub seed: u64,
    /// Maximum stored random-effect draws per subject and chain.
    pub subject_draws: usize,
    pub likelihood: LikelihoodMode,
    /// Relative size of the perturbation applied to each chain's start.
    pub init_jitter: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chains: 2,
            iterations: 3000,
            burn_in: 1000,
            thin: 2,
            adaptation_window: None,
            target_acceptance: 0.35,
            seed: 1,
            subject_draws: 100,
            likelihood: LikelihoodMode::Full,
            init_jitter: 0.1,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::InvalidParameter("at least one chain is required".into()));
        }
        if self.iterations <= self.burn_in {
            return Err(Error::InvalidParameter(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidParameter("thinning must be at least 1".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::InvalidParameter("target acceptance must be in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn adaptation_end(&self) -> usize {
        self.adaptation_window.unwrap_or(self.burn_in).min(self.burn_in)
    }

    pub fn kept_per_chain(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// One posterior draw of θ. `baseline` holds `(ξ, λ)` for a Weibull
/// baseline and the log-hazard spline coefficients otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub d: Vec<f64>,
    pub gamma: Vec<f64>,
    pub zeta: f64,
    pub alpha: Vec<f64>,
    pub baseline: Vec<f64>,
}

pub fn baseline_values(h: &BaselineHazard) -> Vec<f64> {
    match h {
        BaselineHazard::Weibull { shape, scale } => vec![*shape, *scale],
        BaselineHazard::BsplineLogHazard { coefficients, .. } => coefficients.clone(),
    }
}

fn with_baseline_values(template: &BaselineHazard, values: &[f64]) -> BaselineHazard {
    match template {
        BaselineHazard::Weibull { .. } => BaselineHazard::Weibull {
            shape: values[0],
            scale: values[1],
        },
        BaselineHazard::BsplineLogHazard { basis, .. } => BaselineHazard::BsplineLogHazard {
            basis: basis.clone(),
            coefficients: values.to_vec(),
        },
    }
}

impl Draw {
    pub fn from_params(params: &JointParams) -> Self {
        let l = &params.longitudinal;
        let s = &params.survival;
        Self {
            beta: l.beta.clone(),
            sigma: l.sigma,
            d: l.d.clone(),
            gamma: s.gamma.clone(),
            zeta: s.zeta,
            alpha: s.alpha.clone(),
            baseline: baseline_values(&s.baseline),
        }
    }

    pub fn to_params(&self, template: &BaselineHazard) -> JointParams {
        JointParams {
            longitudinal: LongitudinalParams {
                beta: self.beta.clone(),
                sigma: self.sigma,
                d: self.d.clone(),
            },
            survival: SurvivalParams {
                gamma: self.gamma.clone(),
                zeta: self.zeta,
                alpha: self.alpha.clone(),
                baseline: with_baseline_values(template, &self.baseline),
            },
        }
    }

    /// Scalar components in [`parameter_names`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let q = (self.d.len() as f64).sqrt().round() as usize;
        let mut out = self.beta.clone();
        out.push(self.sigma);
        for i in 0..q {
            for j in i..q {
                out.push(self.d[i * q + j]);
            }
        }
        out.extend_from_slice(&self.gamma);
        out.push(self.zeta);
        out.extend_from_slice(&self.alpha);
        out.extend_from_slice(&self.baseline);
        out
    }
}

/// Names of the flattened parameter vector: fixed effects by design column,
/// `sigma`, the upper triangle of `D`, then the survival block.
pub fn parameter_names(spec: &ModelSpec, covariate_names: &[String]) -> Vec<String> {
    let mut names: Vec<String> = spec
        .trajectory
        .column_names(covariate_names)
        .into_iter()
        .map(|n| format!("beta[{n}]"))
        .collect();
    names.push("sigma".into());
    let q = spec.n_random();
    for i in 0..q {
        for j in i..q {
            names.push(format!("D[{},{}]", i + 1, j + 1));
        }
    }
    for &k in &spec.survival_covariates {
        let label = covariate_names.get(k).cloned().unwrap_or_else(|| format!("w{k}"));
        names.push(format!("gamma[{label}]"));
    }
    names.push("zeta".into());
    for f in spec.association.union() {
        let label = match f {
            AssocFeature::Value => "value",
            AssocFeature::Slope => "slope",
            AssocFeature::Area => "area",
            AssocFeature::SlopeInteraction => "slope-int",
        };
        names.push(format!("alpha[{label}]"));
    }
    match spec.baseline_template() {
        Ok(BaselineHazard::Weibull { .. }) => {
            names.push("weibull_shape".into());
            names.push("weibull_scale".into());
        }
        Ok(BaselineHazard::BsplineLogHazard { coefficients, .. }) => {
            names.extend((1..=coefficients.len()).map(|k| format!("log_h0[{k}]")));
        }
        Err(_) => {}
    }
    names
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEffects {
    pub id: String,
    /// Posterior mean of `b_i` over all kept iterations.
    pub mean: Vec<f64>,
    /// Thinned posterior draws of `b_i`.
    pub draws: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRate {
    pub block: String,
    pub chain: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub parameters: Vec<ParameterSummary>,
    pub acceptance: Vec<AcceptanceRate>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedJointModel {
    pub schema_version: String,
    pub spec: ModelSpec,
    pub priors: Priors,
    pub config: McmcConfig,
    pub covariate_names: Vec<String>,
    pub parameter_names: Vec<String>,
    /// Kept draws of all chains, chain after chain.
    pub draws: Vec<Draw>,
    pub chain_lengths: Vec<usize>,
    pub random_effects: Vec<SubjectEffects>,
    pub diagnostics: Diagnostics,
}

impl FittedJointModel {
    /// A model whose posterior is a point mass at `params`.
    pub fn point_mass(spec: ModelSpec, params: &JointParams, covariate_names: Vec<String>) -> Result<Self> {
        spec.validate_params(params)?;
        let parameter_names = parameter_names(&spec, &covariate_names);
        Ok(Self {
            schema_version: FITTED_SCHEMA_VERSION.into(),
            spec,
            priors: Priors::default(),
            config: McmcConfig::default(),
            covariate_names,
            parameter_names,
            draws: vec![Draw::from_params(params)],
            chain_lengths: vec![1],
            random_effects: Vec::new(),
            diagnostics: Diagnostics::default(),
        })
    }

    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn baseline_template(&self) -> Result<BaselineHazard> {
        self.spec.baseline_template()
    }

    pub fn params(&self, m: usize) -> Result<JointParams> {
        let draw = self.draws.get(m).ok_or(Error::InsufficientDraws {
            requested: m + 1,
            available: self.draws.len(),
        })?;
        Ok(draw.to_params(&self.baseline_template()?))
    }

    pub fn summary(&self, name: &str) -> Option<&ParameterSummary> {
        self.diagnostics.parameters.iter().find(|p| p.name == name)
    }

    /// Values of one flattened parameter across all draws.
    pub fn trace(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.parameter_names.iter().position(|n| n == name)?;
        Some(self.draws.iter().map(|d| d.flatten()[idx]).collect())
    }

    pub fn check_schema(&self) -> Result<()> {
        if self.schema_version != FITTED_SCHEMA_VERSION {
            return Err(Error::InvalidData(format!(
                "fitted model schema '{}' is not supported (expected '{}')",
                self.schema_version, FITTED_SCHEMA_VERSION
            )));
        }
        Ok(())
    }
}

/// Combines per-chain outputs (in chain order) into a fitted model with
/// summaries and convergence diagnostics.
pub fn assemble(
    data: &Dataset,
    spec: &ModelSpec,
    priors: &Priors,
    config: &McmcConfig,
    chains: Vec<ChainOutput>,
) -> Result<FittedJointModel> {
    if chains.is_empty() {
        return Err(Error::Sampler("no chains to assemble".into()));
    }
    let names = parameter_names(spec, &data.covariate_names);
    let flat: Vec<Vec<Vec<f64>>> = chains
        .iter()
        .map(|c| c.draws.iter().map(Draw::flatten).collect())
        .collect();
    let mut parameters = Vec::with_capacity(names.len());
    let mut warnings = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let per_chain: Vec<Vec<f64>> = flat.iter().map(|c| c.iter().map(|d| d[k]).collect()).collect();
        let all: Vec<f64> = per_chain.iter().flatten().copied().collect();
        let q = quantiles(&all, &[0.025, 0.975]);
        let constant = all.iter().all(|&v| v == all[0]);
        let rhat = if per_chain.iter().all(|c| c.len() >= 4) && !constant {
            Some(diagnostics::split_rhat(&per_chain))
        } else {
            None
        };
        let ess = if constant {
            None
        } else {
            Some(diagnostics::effective_sample_size(&per_chain)).filter(|v| v.is_finite())
        };
        if let Some(r) = rhat {
            if r > 1.1 {
                warnings.push(format!("{name}: split R-hat {r:.3} exceeds 1.1"));
            }
        }
        parameters.push(ParameterSummary {
            name: name.clone(),
            mean: mean(&all),
            sd: variance(&all).sqrt(),
            q025: q[0],
            q975: q[1],
            rhat: rhat.filter(|r| r.is_finite()),
            ess,
        });
    }
    let mut acceptance = Vec::new();
    for (c, out) in chains.iter().enumerate() {
        for (block, rate) in &out.acceptance {
            if *rate < 0.01 {
                warnings.push(format!("chain {c}: acceptance of {block} collapsed to {rate:.4}"));
            }
            acceptance.push(AcceptanceRate {
                block: block.clone(),
                chain: c,
                rate: *rate,
            });
        }
        warnings.extend(out.warnings.iter().map(|w| format!("chain {c}: {w}")));
    }
    let mut random_effects = Vec::with_capacity(data.len());
    let total_kept: usize = chains.iter().map(|c| c.kept).sum();
    for (i, subject) in data.subjects.iter().enumerate() {
        let q = spec.n_random();
        let mut m = vec![0.0; q];
        let mut draws = Vec::new();
        for c in &chains {
            for (acc, v) in m.iter_mut().zip(&c.effect_sums[i]) {
                *acc += v;
            }
            draws.extend(c.effect_draws[i].iter().cloned());
        }
        m.iter_mut().for_each(|v| *v /= total_kept.max(1) as f64);
        random_effects.push(SubjectEffects {
            id: subject.id.clone(),
            mean: m,
            draws,
        });
    }
    Ok(FittedJointModel {
        schema_version: FITTED_SCHEMA_VERSION.into(),
        spec: spec.clone(),
        priors: priors.clone(),
        config: config.clone(),
        covariate_names: data.covariate_names.clone(),
        parameter_names: names,
        chain_lengths: chains.iter().map(|c| c.draws.len()).collect(),
        draws: chains.into_iter().flat_map(|c| c.draws).collect(),
        random_effects,
        diagnostics: Diagnostics {
            parameters,
            acceptance,
            warnings,
        },
    })
}

/// Fits the joint model, running the chains one after another.
pub fn fit(data: &Dataset, spec: &ModelSpec, priors: &Priors, config: &McmcConfig) -> Result<FittedJointModel> {
    let resolved = spec.resolve(data)?;
    let chains = (0..config.chains)
        .map(|c| run_chain(data, &resolved, priors, config, c))
        .collect::<Result<Vec<_>>>()?;
    assemble(data, &resolved, priors, config, chains)
}
