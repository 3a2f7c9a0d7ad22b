//! Posterior sampling of random effects for a subject outside the training
//! data: `p(b | T* > t, Y(t), θ) ∝ p(Y(t) | b, θ) · exp{−H(0, t | b, θ)} · N(b; 0, D)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Measurement;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_inverse, cholesky_solve, lower_mul, solve_lower_transpose};
use crate::longitudinal::RandomEffects;
use crate::model::{JointParams, ModelSpec};
use crate::prelude::*;
use crate::survival::cumulative_hazard;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewSubjectConfig {
    /// Adaptive random-walk steps before the first draw.
    pub warmup: usize,
    /// Random-walk steps between consecutive draws.
    pub steps_per_draw: usize,
    pub target_acceptance: f64,
}

impl Default for NewSubjectConfig {
    fn default() -> Self {
        Self {
            warmup: 200,
            steps_per_draw: 5,
            target_acceptance: 0.35,
        }
    }
}

/// Random-walk Metropolis chain over a new subject's random effects that
/// persists across parameter draws: each call to [`NewSubjectSampler::draw`]
/// moves the chain a few steps under the supplied `θ` and returns its state.
///
/// When the history carries no post-event information only the pre-event
/// block is sampled; the post-event block is then drawn exactly from its
/// conditional prior given the pre-event block.
pub struct NewSubjectSampler<'a> {
    spec: &'a ModelSpec,
    covariates: &'a [f64],
    rho: Option<f64>,
    t: f64,
    config: NewSubjectConfig,
    /// Number of sampled components (all `q`, or the pre-event block).
    dim: usize,
    xtx: Vec<f64>,
    xty: Vec<f64>,
    yty: f64,
    n_obs: usize,
    state: Option<Vec<f64>>,
    log_scale: f64,
    steps: usize,
    accepted: usize,
    proposed: usize,
    coefs: Vec<f64>,
}

impl<'a> NewSubjectSampler<'a> {
    /// `rho` is the intermediate-event time as seen by the history (`None`
    /// when the event has not happened by `t`).
    pub fn new(
        spec: &'a ModelSpec,
        history: &[Measurement],
        covariates: &'a [f64],
        rho: Option<f64>,
        t: f64,
        config: NewSubjectConfig,
    ) -> Result<Self> {
        if let Some(m) = history.iter().find(|m| m.time > t) {
            return Err(Error::InvalidData(format!(
                "history measurement at {} is after the landmark time {t}",
                m.time
            )));
        }
        let needed = spec.trajectory.required_covariates();
        if covariates.len() < needed {
            return Err(Error::Dimension {
                what: "covariates",
                expected: needed,
                got: covariates.len(),
            });
        }
        let rho = rho.filter(|&r| r <= t);
        let p = spec.trajectory.n_fixed();
        let q = spec.n_random();
        let post_info = rho.is_some();
        let dim = if post_info { q } else { spec.trajectory.n_random_pre() };
        let mut xtx = vec![0.0; p * p];
        let mut xty = vec![0.0; p];
        let mut yty = 0.0;
        let mut row = vec![0.0; p];
        for m in history {
            spec.trajectory.design_row(m.time, rho, covariates, 0, &mut row);
            for a in 0..p {
                xty[a] += row[a] * m.value;
                for b in 0..p {
                    xtx[a * p + b] += row[a] * row[b];
                }
            }
            yty += m.value * m.value;
        }
        Ok(Self {
            spec,
            covariates,
            rho,
            t,
            config,
            dim,
            xtx,
            xty,
            yty,
            n_obs: history.len(),
            state: None,
            log_scale: (2.38 / (dim.max(1) as f64).sqrt()).ln(),
            steps: 0,
            accepted: 0,
            proposed: 0,
            coefs: vec![0.0; p],
        })
    }

    /// Acceptance rate of the random walk after warmup.
    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }

    fn exact_prior(&self) -> bool {
        self.n_obs == 0 && self.t <= 0.0
    }

    /// Log target of the sampled block (up to a constant), and the full
    /// effect vector padded with zeros for the unsampled post-event block.
    fn log_target(&mut self, b: &[f64], params: &JointParams, d_inv: &[f64]) -> f64 {
        let p = self.spec.trajectory.n_fixed();
        let q = self.spec.n_random();
        let dim = self.dim;
        let l = &params.longitudinal;
        let mut full = vec![0.0; q];
        full[..dim].copy_from_slice(b);
        self.coefs.copy_from_slice(&l.beta);
        self.spec.trajectory.add_random_into(&mut self.coefs, &full);
        let c = &self.coefs;
        let mut ss = self.yty;
        for a in 0..p {
            ss -= 2.0 * c[a] * self.xty[a];
            for k in 0..p {
                ss += c[a] * self.xtx[a * p + k] * c[k];
            }
        }
        let mut quad = 0.0;
        for a in 0..dim {
            for k in 0..dim {
                quad += b[a] * d_inv[a * dim + k] * b[k];
            }
        }
        let mut value = -0.5 * ss / (l.sigma * l.sigma) - 0.5 * quad;
        if self.t > 0.0 {
            let ctx = self.spec.hazard_context(&self.coefs, self.rho, self.covariates);
            match cumulative_hazard(0.0, self.t, &ctx, &params.survival) {
                Ok(h) => value -= h,
                Err(_) => return f64::NEG_INFINITY,
            }
        }
        value
    }

    /// Moves the chain under `params` and returns one draw of the full
    /// random-effects vector.
    pub fn draw(&mut self, params: &JointParams, rng: &mut impl Rng) -> Result<RandomEffects> {
        let q = self.spec.n_random();
        let dim = self.dim;
        let d = &params.longitudinal.d;
        if q == 0 {
            return Ok(RandomEffects(Vec::new()));
        }
        // covariance of the sampled block
        let mut d_block = vec![0.0; dim * dim];
        for a in 0..dim {
            for k in 0..dim {
                d_block[a * dim + k] = d[a * q + k];
            }
        }
        let block = if dim == 0 {
            Vec::new()
        } else if self.exact_prior() {
            let l = cholesky(&d_block, dim)?;
            let z: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let mut b = vec![0.0; dim];
            lower_mul(&l, dim, &z, &mut b);
            b
        } else {
            let d_inv = cholesky_inverse(&cholesky(&d_block, dim)?, dim);
            // proposal shape: Gaussian posterior ignoring the survival term
            let p = self.spec.trajectory.n_fixed();
            let cols = self.spec.trajectory.random_columns();
            let inv_var = 1.0 / (params.longitudinal.sigma * params.longitudinal.sigma);
            let mut prec = d_inv.clone();
            for a in 0..dim {
                for k in 0..dim {
                    prec[a * dim + k] += self.xtx[cols[a] * p + cols[k]] * inv_var;
                }
            }
            let prec_chol = cholesky(&prec, dim)?;
            let mut current = match self.state.take() {
                Some(s) => s,
                None => {
                    // start at the Gaussian posterior mode
                    let mut rhs = vec![0.0; dim];
                    for a in 0..dim {
                        let ca = cols[a];
                        let mut r = self.xty[ca];
                        for k in 0..p {
                            r -= self.xtx[ca * p + k] * params.longitudinal.beta[k];
                        }
                        rhs[a] = r * inv_var;
                    }
                    cholesky_solve(&prec_chol, dim, &mut rhs);
                    rhs
                }
            };
            let mut current_lp = self.log_target(&current, params, &d_inv);
            let steps = if self.steps == 0 {
                self.config.warmup + self.config.steps_per_draw
            } else {
                self.config.steps_per_draw
            };
            for _ in 0..steps.max(1) {
                let warm = self.steps < self.config.warmup;
                let mut z: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                solve_lower_transpose(&prec_chol, dim, &mut z);
                let s = self.log_scale.exp();
                let proposal: Vec<f64> = current.iter().zip(&z).map(|(c, e)| c + s * e).collect();
                let lp = self.log_target(&proposal, params, &d_inv);
                let accept_prob = if lp.is_nan() { 0.0 } else { (lp - current_lp).min(0.0).exp() };
                let accepted = rng.random::<f64>() < accept_prob;
                if accepted {
                    current = proposal;
                    current_lp = lp;
                }
                if warm {
                    let gain = 1.0 / ((self.steps + 1) as f64).powf(0.6);
                    self.log_scale += gain * (accept_prob - self.config.target_acceptance);
                } else {
                    self.proposed += 1;
                    self.accepted += accepted as usize;
                }
                self.steps += 1;
            }
            self.state = Some(current.clone());
            current
        };
        let mut full = vec![0.0; q];
        full[..dim].copy_from_slice(&block);
        if dim < q {
            conditional_prior_fill(d, q, dim, &mut full, rng)?;
        }
        Ok(RandomEffects(full))
    }
}

/// Fills `b[dim..]` with a draw from `b₂ | b₁ ~ N(D₂₁ D₁₁⁻¹ b₁, D₂₂ − D₂₁ D₁₁⁻¹ D₁₂)`.
fn conditional_prior_fill(d: &[f64], q: usize, dim: usize, b: &mut [f64], rng: &mut impl Rng) -> Result<()> {
    let rest = q - dim;
    let mut mean = vec![0.0; rest];
    let mut cov = vec![0.0; rest * rest];
    for a in 0..rest {
        for k in 0..rest {
            cov[a * rest + k] = d[(dim + a) * q + dim + k];
        }
    }
    if dim > 0 {
        let mut d11 = vec![0.0; dim * dim];
        for a in 0..dim {
            for k in 0..dim {
                d11[a * dim + k] = d[a * q + k];
            }
        }
        let l11 = cholesky(&d11, dim)?;
        let mut w = b[..dim].to_vec();
        cholesky_solve(&l11, dim, &mut w);
        for a in 0..rest {
            mean[a] = (0..dim).map(|k| d[(dim + a) * q + k] * w[k]).sum();
            let mut col: Vec<f64> = (0..dim).map(|k| d[k * q + dim + a]).collect();
            cholesky_solve(&l11, dim, &mut col);
            for c in 0..rest {
                let v: f64 = (0..dim).map(|k| d[(dim + c) * q + k] * col[k]).sum();
                cov[c * rest + a] -= v;
            }
        }
    }
    let l = cholesky(&cov, rest)?;
    let z: Vec<f64> = (0..rest).map(|_| rng.sample(StandardNormal)).collect();
    let mut e = vec![0.0; rest];
    lower_mul(&l, rest, &z, &mut e);
    for a in 0..rest {
        b[dim + a] = mean[a] + e[a];
    }
    Ok(())
}
