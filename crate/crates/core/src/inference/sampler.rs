use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{baseline_values, Draw, LikelihoodMode, McmcConfig, Priors};
use crate::data::{Dataset, SubjectRecord};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_inverse, cholesky_log_det, cholesky_solve, solve_lower_transpose};
use crate::longitudinal::RandomEffects;
use crate::model::{JointParams, ModelSpec};
use crate::prelude::*;
use crate::stats::{half_t_log_kernel, normal_log_density};
use crate::survival::{survival_loglik, BaselineHazard, SurvivalParams};

/// Everything one chain produced.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub draws: Vec<Draw>,
    /// Per subject: sum of `b_i` over kept iterations.
    pub effect_sums: Vec<Vec<f64>>,
    /// Per subject: thinned stored draws of `b_i`.
    pub effect_draws: Vec<Vec<Vec<f64>>>,
    pub kept: usize,
    pub acceptance: Vec<(String, f64)>,
    pub warnings: Vec<String>,
}

/// Sufficient statistics of one subject's measurements for the full design.
struct SubjectData<'a> {
    record: &'a SubjectRecord,
    xtx: Vec<f64>,
    xty: Vec<f64>,
    yty: f64,
    n_obs: usize,
}

fn prepare<'a>(data: &'a Dataset, spec: &ModelSpec) -> Vec<SubjectData<'a>> {
    let p = spec.trajectory.n_fixed();
    let mut row = vec![0.0; p];
    data.subjects
        .iter()
        .map(|s| {
            let mut xtx = vec![0.0; p * p];
            let mut xty = vec![0.0; p];
            let mut yty = 0.0;
            let ms = spec.measurements(s);
            for m in ms {
                spec.trajectory
                    .design_row(m.time, s.intermediate_time, &s.covariates, 0, &mut row);
                for a in 0..p {
                    xty[a] += row[a] * m.value;
                    for b in 0..p {
                        xtx[a * p + b] += row[a] * row[b];
                    }
                }
                yty += m.value * m.value;
            }
            SubjectData {
                record: s,
                xtx,
                xty,
                yty,
                n_obs: ms.len(),
            }
        })
        .collect()
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Draws from `N(P⁻¹ rhs, P⁻¹)` given the Cholesky factor of `P`; returns
/// the draw and the mean.
fn draw_from_precision(l: &[f64], n: usize, rhs: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let mut m = rhs.to_vec();
    cholesky_solve(l, n, &mut m);
    let mut z = normal_vec(rng, n);
    solve_lower_transpose(l, n, &mut z);
    let x = m.iter().zip(&z).map(|(a, b)| a + b).collect();
    (x, m)
}

/// `½ (x − m)ᵀ P (x − m)` with `P = L Lᵀ`.
fn half_quad(l: &[f64], n: usize, x: &[f64], m: &[f64]) -> f64 {
    let mut total = 0.0;
    for j in 0..n {
        // (Lᵀ r)_j = Σ_{i ≥ j} L[i][j] r_i
        let v: f64 = (j..n).map(|i| l[i * n + j] * (x[i] - m[i])).sum();
        total += v * v;
    }
    0.5 * total
}

fn gamma_draw(rng: &mut ChaCha8Rng, shape: f64, scale: f64) -> f64 {
    Gamma::new(shape, scale).map(|g| g.sample(rng)).unwrap_or(f64::NAN)
}

/// Draws `D ~ IW(psi, df)` via the Bartlett decomposition.
fn inverse_wishart(psi: &[f64], q: usize, df: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let psi_inv = cholesky_inverse(&cholesky(psi, q)?, q);
    let l = cholesky(&psi_inv, q)?;
    let mut a = vec![0.0; q * q];
    for i in 0..q {
        a[i * q + i] = gamma_draw(rng, 0.5 * (df - i as f64), 2.0).sqrt();
        for j in 0..i {
            a[i * q + j] = rng.sample(StandardNormal);
        }
    }
    // W = (L A)(L A)ᵀ, D = W⁻¹
    let mut la = vec![0.0; q * q];
    for i in 0..q {
        for j in 0..=i {
            la[i * q + j] = (j..=i).map(|k| l[i * q + k] * a[k * q + j]).sum();
        }
    }
    Ok(cholesky_inverse(&la, q))
}

/// Log prior density of `D` under half-t scales and an LKJ correlation
/// prior, including the Jacobian of `(scales, correlation) → D`.
fn d_log_prior(d: &[f64], q: usize, priors: &Priors) -> f64 {
    let mut total = 0.0;
    let scales: Vec<f64> = (0..q).map(|k| d[k * q + k].sqrt()).collect();
    for s in &scales {
        total += half_t_log_kernel(*s, priors.half_t_df, priors.d_scale) - q as f64 * s.ln();
    }
    if priors.lkj_shape != 1.0 && q > 1 {
        let mut corr = d.to_vec();
        for i in 0..q {
            for j in 0..q {
                corr[i * q + j] /= scales[i] * scales[j];
            }
        }
        if let Ok(l) = cholesky(&corr, q) {
            total += (priors.lkj_shape - 1.0) * cholesky_log_det(&l, q);
        } else {
            return f64::NEG_INFINITY;
        }
    }
    total
}

/// Weibull maximum likelihood without covariates, profiling out the scale.
fn weibull_profile_mle(subjects: &[SubjectData]) -> (f64, f64) {
    let events = subjects.iter().filter(|s| s.record.event && s.record.event_time > 0.0).count();
    let times: Vec<f64> = subjects.iter().map(|s| s.record.event_time.max(1e-12)).collect();
    if events == 0 {
        let mean = times.iter().sum::<f64>() / times.len().max(1) as f64;
        return (1.0, mean.max(1e-6) * times.len().max(1) as f64);
    }
    let d = events as f64;
    let sum_log_event: f64 = subjects
        .iter()
        .filter(|s| s.record.event && s.record.event_time > 0.0)
        .map(|s| s.record.event_time.ln())
        .sum();
    let profile = |log_shape: f64| {
        let k = log_shape.exp();
        let s: f64 = times.iter().map(|t| t.powf(k)).sum();
        let log_scale = (s / d).ln() / k;
        (d * k.ln() - d * k * log_scale + (k - 1.0) * sum_log_event - d, log_scale)
    };
    let (mut a, mut b) = (-3.0f64, 4.0f64);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - g * (b - a);
        let e = a + g * (b - a);
        if profile(c).0 > profile(e).0 {
            b = e;
        } else {
            a = c;
        }
    }
    let log_shape = 0.5 * (a + b);
    (log_shape.exp(), profile(log_shape).1.exp())
}

/// Second-difference penalty `cᵀKc` of a coefficient vector.
fn rw2_penalty(c: &[f64]) -> f64 {
    c.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]).powi(2)).sum()
}

struct Adaptive {
    dim: usize,
    log_scale: f64,
    base_chol: Vec<f64>,
    mean: Vec<f64>,
    cov: Vec<f64>,
    count: usize,
}

impl Adaptive {
    fn new(cov: &[f64], dim: usize) -> Self {
        let base_chol = cholesky(cov, dim).unwrap_or_else(|_| {
            let mut l = vec![0.0; dim * dim];
            for i in 0..dim {
                l[i * dim + i] = 0.1;
            }
            l
        });
        Self {
            dim,
            log_scale: (2.38 / (dim.max(1) as f64).sqrt()).ln(),
            base_chol,
            mean: vec![0.0; dim],
            cov: vec![0.0; dim * dim],
            count: 0,
        }
    }

    fn propose(&self, x: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let z = normal_vec(rng, self.dim);
        let s = self.log_scale.exp();
        (0..self.dim)
            .map(|i| x[i] + s * (0..=i).map(|k| self.base_chol[i * self.dim + k] * z[k]).sum::<f64>())
            .collect()
    }

    fn record(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        let d = self.dim;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        for i in 0..d {
            self.mean[i] += delta[i] / n;
        }
        for i in 0..d {
            for j in 0..d {
                self.cov[i * d + j] += delta[i] * (x[j] - self.mean[j]);
            }
        }
    }

    /// Replaces the proposal shape by the empirical covariance.
    fn refresh(&mut self) {
        if self.count < 2 {
            return;
        }
        let d = self.dim;
        let n = (self.count - 1) as f64;
        let mut c: Vec<f64> = self.cov.iter().map(|v| v / n).collect();
        for i in 0..d {
            c[i * d + i] += 1e-10 + 1e-6 * c[i * d + i].abs();
        }
        if let Ok(l) = cholesky(&c, d) {
            self.base_chol = l;
        }
    }
}

struct Chain<'a> {
    spec: &'a ModelSpec,
    priors: &'a Priors,
    config: &'a McmcConfig,
    subjects: Vec<SubjectData<'a>>,
    p: usize,
    q: usize,
    random: Vec<usize>,
    fixed: Vec<usize>,
    n_obs: usize,
    use_long: bool,
    use_surv: bool,
    update_surv_block: bool,
    beta_f: Vec<f64>,
    beta_r: Vec<f64>,
    phi: Vec<f64>,
    sigma: f64,
    d: Vec<f64>,
    d_inv: Vec<f64>,
    surv: SurvivalParams,
    block: Vec<f64>,
    n_gamma: usize,
    n_alpha: usize,
    tau: f64,
    surv_ll: Vec<f64>,
    rng: ChaCha8Rng,
    adaptive: Adaptive,
    rw_log_scale: f64,
    coefs: Vec<f64>,
    quadrature_failures: usize,
    accepted: [usize; 6],
    proposed: [usize; 6],
}

const BLOCKS: [&str; 6] = [
    "random effects (conditional)",
    "random effects (random walk)",
    "fixed effects",
    "random-effects covariance",
    "residual sd",
    "survival",
];

impl<'a> Chain<'a> {
    fn new(data: &'a Dataset, spec: &'a ModelSpec, priors: &'a Priors, config: &'a McmcConfig, chain: usize) -> Result<Self> {
        let subjects = prepare(data, spec);
        let p = spec.trajectory.n_fixed();
        let q = spec.n_random();
        let random = spec.trajectory.random_columns();
        let fixed: Vec<usize> = (0..p).filter(|c| !random.contains(c)).collect();
        let n_obs = subjects.iter().map(|s| s.n_obs).sum();
        let mode = config.likelihood;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(chain as u64);
        let template = spec.baseline_template()?;
        let n_gamma = spec.survival_covariates.len();
        let n_alpha = spec.association.n_alpha();
        let surv = SurvivalParams {
            gamma: vec![0.0; n_gamma],
            zeta: 0.0,
            alpha: vec![0.0; n_alpha],
            baseline: template,
        };
        let jitter = chain_jitter(config, chain);
        let mut chain = Self {
            spec,
            priors,
            config,
            subjects,
            p,
            q,
            random,
            fixed,
            n_obs,
            use_long: mode != LikelihoodMode::PriorOnly,
            use_surv: mode == LikelihoodMode::Full,
            update_surv_block: mode != LikelihoodMode::LongitudinalOnly,
            beta_f: Vec::new(),
            beta_r: Vec::new(),
            phi: Vec::new(),
            sigma: 1.0,
            d: Vec::new(),
            d_inv: Vec::new(),
            block: Vec::new(),
            surv,
            n_gamma,
            n_alpha,
            tau: 1.0,
            surv_ll: Vec::new(),
            rng,
            adaptive: Adaptive::new(&[], 0),
            rw_log_scale: 0.0,
            coefs: vec![0.0; p],
            quadrature_failures: 0,
            accepted: [0; 6],
            proposed: [0; 6],
        };
        chain.initialize(jitter)?;
        Ok(chain)
    }

    fn initialize(&mut self, jitter: f64) -> Result<()> {
        let (p, q) = (self.p, self.q);
        // pooled least squares for all fixed effects
        let mut xtx = vec![0.0; p * p];
        let mut xty = vec![0.0; p];
        let mut yty = 0.0;
        for s in &self.subjects {
            for k in 0..p * p {
                xtx[k] += s.xtx[k];
            }
            for k in 0..p {
                xty[k] += s.xty[k];
            }
            yty += s.yty;
        }
        let scale = (0..p).map(|k| xtx[k * p + k]).fold(0.0, f64::max).max(1.0);
        for k in 0..p {
            xtx[k * p + k] += 1e-8 * scale + 1e-8;
        }
        let mut beta = xty.clone();
        match cholesky(&xtx, p) {
            Ok(l) => cholesky_solve(&l, p, &mut beta),
            Err(_) => beta.iter_mut().for_each(|b| *b = 0.0),
        }
        if self.n_obs == 0 {
            beta.iter_mut().for_each(|b| *b = 0.0);
        }
        let mut ss = yty;
        for a in 0..p {
            ss -= 2.0 * beta[a] * xty[a];
            for b in 0..p {
                ss += beta[a] * (xtx[a * p + b] - if a == b { 1e-8 * scale + 1e-8 } else { 0.0 }) * beta[b];
            }
        }
        self.sigma = if self.n_obs > p && ss > 0.0 {
            (ss / (self.n_obs - p) as f64).sqrt()
        } else {
            self.priors.sigma_scale
        };
        for b in beta.iter_mut() {
            *b += jitter * (b.abs() + 0.1) * self.rng.sample::<f64, _>(StandardNormal);
        }
        self.sigma *= (jitter * self.rng.sample::<f64, _>(StandardNormal)).exp();
        self.beta_f = self.fixed.iter().map(|&c| beta[c]).collect();
        self.beta_r = self.random.iter().map(|&c| beta[c]).collect();

        // per-subject conditional means under a wide covariance, then D from
        // their scatter
        let mut d0 = vec![0.0; q * q];
        for k in 0..q {
            d0[k * q + k] = 25.0 * (self.beta_r[k].abs() + 1.0).powi(2);
        }
        self.set_d(d0)?;
        self.phi = vec![0.0; self.subjects.len() * q];
        for i in 0..self.subjects.len() {
            let (mean, _) = self.conditional_moments(i)?;
            self.phi[i * q..(i + 1) * q].copy_from_slice(&mean);
        }
        let mut d = self.scatter();
        let n = self.subjects.len().max(1) as f64;
        for k in 0..q * q {
            d[k] /= n;
        }
        for k in 0..q {
            let floor = 1e-2 * (self.beta_r[k].abs() + 0.1).powi(2);
            d[k * q + k] = d[k * q + k].max(floor) * (jitter * self.rng.sample::<f64, _>(StandardNormal)).exp();
        }
        if self.set_d(d.clone()).is_err() {
            let diag: Vec<f64> = (0..q * q).map(|k| if k % (q + 1) == 0 { d[k].max(1e-4) } else { 0.0 }).collect();
            self.set_d(diag)?;
        }
        for i in 0..self.subjects.len() {
            let (mean, _) = self.conditional_moments(i)?;
            self.phi[i * q..(i + 1) * q].copy_from_slice(&mean);
        }

        // survival block
        let (shape, scale) = weibull_profile_mle(&self.subjects);
        match &mut self.surv.baseline {
            BaselineHazard::Weibull { shape: s, scale: l } => {
                *s = shape;
                *l = scale;
            }
            BaselineHazard::BsplineLogHazard { basis, coefficients } => {
                // least-squares projection of the Weibull log hazard
                let (lo, hi) = basis.boundary();
                let k = basis.dim();
                let mut gram = vec![0.0; k * k];
                let mut rhs = vec![0.0; k];
                let mut row = vec![0.0; k];
                let weibull = BaselineHazard::Weibull { shape, scale };
                for g in 0..200 {
                    let t = lo + (hi - lo) * (g as f64 + 0.5) / 200.0;
                    basis.eval_into(t, &mut row);
                    let y = weibull.log_h0(t.max(1e-6));
                    for a in 0..k {
                        rhs[a] += row[a] * y;
                        for b in 0..k {
                            gram[a * k + b] += row[a] * row[b];
                        }
                    }
                }
                for a in 0..k {
                    gram[a * k + a] += 1e-8;
                }
                let l = cholesky(&gram, k)?;
                cholesky_solve(&l, k, &mut rhs);
                coefficients.copy_from_slice(&rhs);
                self.tau = 1.0;
            }
        }
        self.block = self.block_from_params();
        if jitter > 0.0 && self.update_surv_block {
            for v in self.block.iter_mut() {
                *v += 0.1 * jitter * (v.abs() + 0.1) * self.rng.sample::<f64, _>(StandardNormal);
            }
            let block = self.block.clone();
            self.apply_block(&block);
        }
        if self.use_surv {
            self.surv_ll = (0..self.subjects.len()).map(|i| self.subject_surv_ll(i, None, None)).collect();
            if self.surv_ll.iter().any(|v| !v.is_finite()) {
                return Err(Error::Sampler("non-finite posterior at initialization".into()));
            }
        } else {
            self.surv_ll = vec![0.0; self.subjects.len()];
        }
        let dim = self.block.len();
        let cov = if self.update_surv_block {
            self.optimize_block()
        } else {
            vec![0.0; dim * dim]
        };
        self.adaptive = Adaptive::new(&cov, dim);
        Ok(())
    }

    fn set_d(&mut self, d: Vec<f64>) -> Result<()> {
        if self.q == 0 {
            self.d = d;
            self.d_inv = Vec::new();
            return Ok(());
        }
        let l = cholesky(&d, self.q)?;
        self.d_inv = cholesky_inverse(&l, self.q);
        self.d = d;
        Ok(())
    }

    fn scatter(&self) -> Vec<f64> {
        let q = self.q;
        let mut s = vec![0.0; q * q];
        for i in 0..self.subjects.len() {
            let phi = &self.phi[i * q..(i + 1) * q];
            for a in 0..q {
                for b in 0..q {
                    s[a * q + b] += (phi[a] - self.beta_r[a]) * (phi[b] - self.beta_r[b]);
                }
            }
        }
        s
    }

    fn block_from_params(&self) -> Vec<f64> {
        let mut v = self.surv.gamma.clone();
        v.push(self.surv.zeta);
        v.extend_from_slice(&self.surv.alpha);
        v.extend(self.surv.baseline.unconstrained());
        v
    }

    fn params_from_block(&self, block: &[f64]) -> SurvivalParams {
        let g = self.n_gamma;
        let a = self.n_alpha;
        let mut baseline = self.surv.baseline.clone();
        baseline.set_unconstrained(&block[g + 1 + a..]);
        SurvivalParams {
            gamma: block[..g].to_vec(),
            zeta: block[g],
            alpha: block[g + 1..g + 1 + a].to_vec(),
            baseline,
        }
    }

    fn apply_block(&mut self, block: &[f64]) {
        self.surv = self.params_from_block(block);
        self.block = block.to_vec();
    }

    fn block_log_prior(&self, block: &[f64]) -> f64 {
        let pr = self.priors;
        let g = self.n_gamma;
        let a = self.n_alpha;
        let mut lp: f64 = block[..g].iter().map(|v| normal_log_density(*v, 0.0, pr.gamma_sd)).sum();
        lp += normal_log_density(block[g], 0.0, pr.zeta_sd);
        lp += block[g + 1..g + 1 + a]
            .iter()
            .map(|v| normal_log_density(*v, 0.0, pr.alpha_sd))
            .sum::<f64>();
        let base = &block[g + 1 + a..];
        match self.surv.baseline {
            BaselineHazard::Weibull { .. } => {
                lp += normal_log_density(base[0], 0.0, pr.weibull_log_shape_sd);
                lp += normal_log_density(base[1], 0.0, pr.weibull_log_scale_sd);
            }
            BaselineHazard::BsplineLogHazard { .. } => {
                lp -= 0.5 * self.tau * rw2_penalty(base);
                lp += base.iter().map(|v| normal_log_density(*v, 0.0, pr.baseline_ridge_sd)).sum::<f64>();
            }
        }
        lp
    }

    fn fill_coefs(&mut self, phi: &[f64], beta_f: &[f64]) {
        for (k, &c) in self.fixed.iter().enumerate() {
            self.coefs[c] = beta_f[k];
        }
        for (k, &c) in self.random.iter().enumerate() {
            self.coefs[c] = phi[k];
        }
    }

    /// Survival log-likelihood of subject `i` with optional replacement
    /// random-effect vector / survival parameters; `-∞` on quadrature failure.
    fn subject_surv_ll(&mut self, i: usize, phi: Option<&[f64]>, params: Option<&SurvivalParams>) -> f64 {
        let q = self.q;
        let phi_cur;
        let phi = match phi {
            Some(p) => p,
            None => {
                phi_cur = self.phi[i * q..(i + 1) * q].to_vec();
                &phi_cur
            }
        };
        let beta_f = self.beta_f.clone();
        self.fill_coefs(phi, &beta_f);
        let s = self.subjects[i].record;
        let params = params.unwrap_or(&self.surv);
        let ctx = self.spec.hazard_context(&self.coefs, s.intermediate_time, &s.covariates);
        match survival_loglik(s.event_time, s.event, &ctx, params) {
            Ok(v) if !v.is_nan() => v,
            _ => {
                self.quadrature_failures += 1;
                f64::NEG_INFINITY
            }
        }
    }

    fn all_surv_ll(&mut self, beta_f: Option<&[f64]>, params: Option<&SurvivalParams>) -> Vec<f64> {
        let saved = self.beta_f.clone();
        if let Some(b) = beta_f {
            self.beta_f = b.to_vec();
        }
        let out = (0..self.subjects.len()).map(|i| self.subject_surv_ll(i, None, params)).collect();
        self.beta_f = saved;
        out
    }

    /// Cholesky factor of the precision and mean of the Gaussian conditional
    /// of `φ_i` given everything but the survival likelihood.
    fn conditional_moments(&self, i: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let q = self.q;
        let p = self.p;
        let s = &self.subjects[i];
        let mut prec = self.d_inv.clone();
        let mut rhs = vec![0.0; q];
        for a in 0..q {
            rhs[a] = (0..q).map(|b| self.d_inv[a * q + b] * self.beta_r[b]).sum();
        }
        if self.use_long && s.n_obs > 0 {
            let inv_var = 1.0 / (self.sigma * self.sigma);
            for (a, &ca) in self.random.iter().enumerate() {
                for (b, &cb) in self.random.iter().enumerate() {
                    prec[a * q + b] += s.xtx[ca * p + cb] * inv_var;
                }
                let mut r = s.xty[ca];
                for (k, &cf) in self.fixed.iter().enumerate() {
                    r -= s.xtx[ca * p + cf] * self.beta_f[k];
                }
                rhs[a] += r * inv_var;
            }
        }
        let l = cholesky(&prec, q)?;
        let mut mean = rhs;
        cholesky_solve(&l, q, &mut mean);
        Ok((mean, l))
    }

    fn update_phi(&mut self, adapting: bool, iteration: usize) -> Result<()> {
        let q = self.q;
        if q == 0 {
            return Ok(());
        }
        let mut rw_accept = 0usize;
        for i in 0..self.subjects.len() {
            let (mean, l) = self.conditional_moments(i)?;
            let mut z = normal_vec(&mut self.rng, q);
            solve_lower_transpose(&l, q, &mut z);
            let proposal: Vec<f64> = mean.iter().zip(&z).map(|(m, e)| m + e).collect();
            if !self.use_surv {
                self.phi[i * q..(i + 1) * q].copy_from_slice(&proposal);
                continue;
            }
            self.proposed[0] += 1;
            let ll_new = self.subject_surv_ll(i, Some(&proposal), None);
            if self.rng.random::<f64>().ln() < ll_new - self.surv_ll[i] {
                self.phi[i * q..(i + 1) * q].copy_from_slice(&proposal);
                self.surv_ll[i] = ll_new;
                self.accepted[0] += 1;
            }
            // random-walk refinement scaled by the conditional covariance
            let current = self.phi[i * q..(i + 1) * q].to_vec();
            let mut z = normal_vec(&mut self.rng, q);
            solve_lower_transpose(&l, q, &mut z);
            let step = self.rw_log_scale.exp();
            let proposal: Vec<f64> = current.iter().zip(&z).map(|(c, e)| c + step * e).collect();
            self.proposed[1] += 1;
            let ll_new = self.subject_surv_ll(i, Some(&proposal), None);
            let log_ratio = ll_new - self.surv_ll[i] - half_quad(&l, q, &proposal, &mean) + half_quad(&l, q, &current, &mean);
            if self.rng.random::<f64>().ln() < log_ratio {
                self.phi[i * q..(i + 1) * q].copy_from_slice(&proposal);
                self.surv_ll[i] = ll_new;
                self.accepted[1] += 1;
                rw_accept += 1;
            }
        }
        if adapting && self.use_surv && !self.subjects.is_empty() {
            let rate = rw_accept as f64 / self.subjects.len() as f64;
            let gain = 1.0 / ((iteration + 1) as f64).powf(0.6);
            self.rw_log_scale = (self.rw_log_scale + gain * (rate - self.config.target_acceptance)).clamp(-5.0, 3.0);
        }
        Ok(())
    }

    fn update_beta_fixed(&mut self) -> Result<()> {
        let f = self.fixed.len();
        if f == 0 {
            return Ok(());
        }
        let p = self.p;
        let q = self.q;
        let mut prec = vec![0.0; f * f];
        let mut rhs = vec![0.0; f];
        let prior_prec = 1.0 / (self.priors.beta_sd * self.priors.beta_sd);
        for k in 0..f {
            prec[k * f + k] = prior_prec;
        }
        if self.use_long {
            let inv_var = 1.0 / (self.sigma * self.sigma);
            for (i, s) in self.subjects.iter().enumerate() {
                let phi = &self.phi[i * q..(i + 1) * q];
                for (a, &ca) in self.fixed.iter().enumerate() {
                    for (b, &cb) in self.fixed.iter().enumerate() {
                        prec[a * f + b] += s.xtx[ca * p + cb] * inv_var;
                    }
                    let mut r = s.xty[ca];
                    for (k, &cr) in self.random.iter().enumerate() {
                        r -= s.xtx[ca * p + cr] * phi[k];
                    }
                    rhs[a] += r * inv_var;
                }
            }
        }
        let l = cholesky(&prec, f)?;
        let (proposal, _) = draw_from_precision(&l, f, &rhs, &mut self.rng);
        if !self.use_surv {
            self.beta_f = proposal;
            return Ok(());
        }
        self.proposed[2] += 1;
        let ll_new = self.all_surv_ll(Some(&proposal), None);
        let delta: f64 = ll_new.iter().sum::<f64>() - self.surv_ll.iter().sum::<f64>();
        if self.rng.random::<f64>().ln() < delta {
            self.beta_f = proposal;
            self.surv_ll = ll_new;
            self.accepted[2] += 1;
        }
        Ok(())
    }

    fn update_beta_random(&mut self) -> Result<()> {
        let q = self.q;
        if q == 0 {
            return Ok(());
        }
        let n = self.subjects.len() as f64;
        let prior_prec = 1.0 / (self.priors.beta_sd * self.priors.beta_sd);
        let mut prec: Vec<f64> = self.d_inv.iter().map(|v| v * n).collect();
        for k in 0..q {
            prec[k * q + k] += prior_prec;
        }
        let mut sum = vec![0.0; q];
        for i in 0..self.subjects.len() {
            for k in 0..q {
                sum[k] += self.phi[i * q + k];
            }
        }
        let rhs: Vec<f64> = (0..q).map(|a| (0..q).map(|b| self.d_inv[a * q + b] * sum[b]).sum()).collect();
        let l = cholesky(&prec, q)?;
        self.beta_r = draw_from_precision(&l, q, &rhs, &mut self.rng).0;
        Ok(())
    }

    fn update_d(&mut self) -> Result<()> {
        let q = self.q;
        if q == 0 {
            return Ok(());
        }
        let n = self.subjects.len() as f64;
        let ridge = 1e-6;
        let mut psi = self.scatter();
        for k in 0..q {
            psi[k * q + k] += ridge;
        }
        let df = if n >= q as f64 { n } else { n + q as f64 };
        let weight = |d: &[f64], d_inv: &[f64]| -> f64 {
            let l = match cholesky(d, q) {
                Ok(l) => l,
                Err(_) => return f64::NEG_INFINITY,
            };
            let tr: f64 = (0..q).map(|k| d_inv[k * q + k]).sum();
            d_log_prior(d, q, self.priors) + 0.5 * (df - n + q as f64 + 1.0) * cholesky_log_det(&l, q) + 0.5 * ridge * tr
        };
        let proposal = match inverse_wishart(&psi, q, df, &mut self.rng) {
            Ok(d) => d,
            Err(_) => return Ok(()),
        };
        let proposal_inv = match cholesky(&proposal, q) {
            Ok(l) => cholesky_inverse(&l, q),
            Err(_) => return Ok(()),
        };
        self.proposed[3] += 1;
        let log_ratio = weight(&proposal, &proposal_inv) - weight(&self.d, &self.d_inv);
        if self.rng.random::<f64>().ln() < log_ratio {
            self.d = proposal;
            self.d_inv = proposal_inv;
            self.accepted[3] += 1;
        }
        Ok(())
    }

    fn residual_ss(&mut self) -> f64 {
        let p = self.p;
        let q = self.q;
        let mut total = 0.0;
        for i in 0..self.subjects.len() {
            let phi = self.phi[i * q..(i + 1) * q].to_vec();
            let beta_f = self.beta_f.clone();
            self.fill_coefs(&phi, &beta_f);
            let s = &self.subjects[i];
            let c = &self.coefs;
            let mut ss = s.yty;
            for a in 0..p {
                ss -= 2.0 * c[a] * s.xty[a];
                for b in 0..p {
                    ss += c[a] * s.xtx[a * p + b] * c[b];
                }
            }
            total += ss;
        }
        total.max(0.0)
    }

    fn update_sigma(&mut self) {
        let pr = self.priors;
        let prior = |s: f64| half_t_log_kernel(s, pr.half_t_df, pr.sigma_scale) + s.ln();
        self.proposed[4] += 1;
        if self.use_long && self.n_obs > 2 {
            let ss = self.residual_ss();
            let precision = gamma_draw(&mut self.rng, 0.5 * self.n_obs as f64, 2.0 / ss.max(1e-300));
            let proposal = 1.0 / precision.sqrt();
            if proposal.is_finite() && self.rng.random::<f64>().ln() < prior(proposal) - prior(self.sigma) {
                self.sigma = proposal;
                self.accepted[4] += 1;
            }
        } else {
            // no measurements: random walk on log σ against the prior
            let step = 0.8 * self.rng.sample::<f64, _>(StandardNormal);
            let proposal = self.sigma * step.exp();
            let accept = self.rng.random::<f64>().ln() < prior(proposal) - prior(self.sigma);
            if accept {
                self.sigma = proposal;
                self.accepted[4] += 1;
            }
        }
    }

    fn update_survival(&mut self, adapting: bool, iteration: usize) {
        if !self.update_surv_block || self.block.is_empty() {
            return;
        }
        let proposal = self.adaptive.propose(&self.block, &mut self.rng);
        let params = self.params_from_block(&proposal);
        let valid = params.baseline.validate().is_ok();
        let mut log_ratio = f64::NEG_INFINITY;
        let mut ll_new = Vec::new();
        if valid {
            let prior_delta = self.block_log_prior(&proposal) - self.block_log_prior(&self.block);
            if self.use_surv {
                ll_new = self.all_surv_ll(None, Some(&params));
                log_ratio = ll_new.iter().sum::<f64>() - self.surv_ll.iter().sum::<f64>() + prior_delta;
            } else {
                log_ratio = prior_delta;
            }
        }
        self.proposed[5] += 1;
        let accept_prob = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
        if self.rng.random::<f64>() < accept_prob {
            self.apply_block(&proposal);
            if self.use_surv {
                self.surv_ll = ll_new;
            }
            self.accepted[5] += 1;
        }
        if adapting {
            let gain = 1.0 / ((iteration + 1) as f64).powf(0.6);
            self.adaptive.log_scale += gain * (accept_prob - self.config.target_acceptance);
            let block = self.block.clone();
            self.adaptive.record(&block);
            let start = (20 * self.block.len()).max(100);
            if iteration >= start && iteration % 25 == 0 {
                self.adaptive.refresh();
            }
        }
        if let BaselineHazard::BsplineLogHazard { coefficients, .. } = &self.surv.baseline {
            let k = coefficients.len();
            let shape = self.priors.smoothness_shape + 0.5 * k.saturating_sub(2) as f64;
            let rate = self.priors.smoothness_rate + 0.5 * rw2_penalty(coefficients);
            let tau = gamma_draw(&mut self.rng, shape, 1.0 / rate);
            if tau.is_finite() && tau > 0.0 {
                self.tau = tau;
            }
        }
    }

    fn block_log_post(&mut self, block: &[f64]) -> f64 {
        let params = self.params_from_block(block);
        if params.baseline.validate().is_err() {
            return f64::NEG_INFINITY;
        }
        let ll = if self.use_surv {
            self.all_surv_ll(None, Some(&params)).iter().sum::<f64>()
        } else {
            0.0
        };
        ll + self.block_log_prior(block)
    }

    /// A few damped Newton steps on the survival block holding the
    /// longitudinal state fixed; returns the proposal covariance (inverse
    /// negative Hessian at the final point, or a diagonal fallback).
    fn optimize_block(&mut self) -> Vec<f64> {
        let d = self.block.len();
        let mut x = self.block.clone();
        let mut fx = self.block_log_post(&x);
        let mut cov = vec![0.0; d * d];
        for _ in 0..12 {
            let (grad, hess, steps) = self.numeric_derivatives(&x, fx);
            let neg: Vec<f64> = hess.iter().map(|v| -v).collect();
            let chol = cholesky(&neg, d);
            let direction = match &chol {
                Ok(l) => {
                    let mut g = grad.clone();
                    cholesky_solve(l, d, &mut g);
                    cov = cholesky_inverse(l, d);
                    g
                }
                // not concave here: scaled gradient step, diagonal proposal
                Err(_) => {
                    cov = vec![0.0; d * d];
                    for k in 0..d {
                        cov[k * d + k] = steps[k] * steps[k];
                    }
                    grad.iter().zip(&steps).map(|(g, h)| g * h * h).collect()
                }
            };
            let mut t = 1.0;
            let mut improved = false;
            for _ in 0..20 {
                let cand: Vec<f64> = x.iter().zip(&direction).map(|(a, b)| a + t * b).collect();
                let fc = self.block_log_post(&cand);
                if fc > fx {
                    improved = fc - fx > 1e-3;
                    x = cand;
                    fx = fc;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                break;
            }
        }
        self.apply_block(&x);
        if self.use_surv {
            self.surv_ll = self.all_surv_ll(None, None);
        }
        cov
    }

    /// Gradient, Hessian and per-coordinate curvature scales by central
    /// differences with steps of roughly one curvature unit.
    fn numeric_derivatives(&mut self, x: &[f64], fx: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = x.len();
        let mut steps = vec![0.0; d];
        let mut grad = vec![0.0; d];
        let mut hess = vec![0.0; d * d];
        let at = |x: &[f64], k: usize, h: f64| {
            let mut y = x.to_vec();
            y[k] += h;
            y
        };
        for k in 0..d {
            let mut h = 1e-3 * x[k].abs().max(0.1);
            let (mut fp, mut fm) = (0.0, 0.0);
            for _ in 0..30 {
                fp = self.block_log_post(&at(x, k, h));
                fm = self.block_log_post(&at(x, k, -h));
                let drop = 2.0 * fx - fp - fm;
                if !drop.is_finite() || drop > 10.0 {
                    h *= 0.25;
                } else if drop < 0.1 {
                    h *= 4.0;
                } else {
                    break;
                }
            }
            let drop = 2.0 * fx - fp - fm;
            grad[k] = if (fp - fm).is_finite() { (fp - fm) / (2.0 * h) } else { 0.0 };
            hess[k * d + k] = -drop / (h * h);
            steps[k] = if drop > 0.0 && drop.is_finite() { h / drop.sqrt() } else { h };
        }
        for j in 0..d {
            for k in 0..j {
                let (hj, hk) = (steps[j], steps[k]);
                let mut eval = |sj: f64, sk: f64| {
                    let mut y = x.to_vec();
                    y[j] += sj * hj;
                    y[k] += sk * hk;
                    self.block_log_post(&y)
                };
                let v = (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0)) / (4.0 * hj * hk);
                let v = if v.is_finite() { v } else { 0.0 };
                hess[j * d + k] = v;
                hess[k * d + j] = v;
            }
        }
        (grad, hess, steps)
    }

    fn current_draw(&self) -> Draw {
        let mut beta = vec![0.0; self.p];
        for (k, &c) in self.fixed.iter().enumerate() {
            beta[c] = self.beta_f[k];
        }
        for (k, &c) in self.random.iter().enumerate() {
            beta[c] = self.beta_r[k];
        }
        Draw {
            beta,
            sigma: self.sigma,
            d: self.d.clone(),
            gamma: self.surv.gamma.clone(),
            zeta: self.surv.zeta,
            alpha: self.surv.alpha.clone(),
            baseline: baseline_values(&self.surv.baseline),
        }
    }

    fn run(mut self) -> Result<ChainOutput> {
        let cfg = self.config;
        let n = self.subjects.len();
        let q = self.q;
        let adapt_end = cfg.adaptation_end();
        let kept_total = cfg.kept_per_chain();
        let store_every = kept_total.div_ceil(cfg.subject_draws.max(1)).max(1);
        let mut draws = Vec::with_capacity(kept_total);
        let mut effect_sums = vec![vec![0.0; q]; n];
        let mut effect_draws = vec![Vec::new(); n];
        let mut kept = 0;
        for it in 0..cfg.iterations {
            let adapting = it < adapt_end;
            self.update_phi(adapting, it)?;
            self.update_beta_fixed()?;
            self.update_beta_random()?;
            self.update_d()?;
            self.update_sigma();
            self.update_survival(adapting, it);
            if it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
                draws.push(self.current_draw());
                let store = kept % store_every == 0 && cfg.subject_draws > 0;
                for i in 0..n {
                    let b: Vec<f64> = (0..q).map(|k| self.phi[i * q + k] - self.beta_r[k]).collect();
                    for (acc, v) in effect_sums[i].iter_mut().zip(&b) {
                        *acc += v;
                    }
                    if store {
                        effect_draws[i].push(b);
                    }
                }
                kept += 1;
            }
        }
        let mut acceptance = Vec::new();
        for k in 0..BLOCKS.len() {
            if self.proposed[k] > 0 {
                acceptance.push((BLOCKS[k].to_string(), self.accepted[k] as f64 / self.proposed[k] as f64));
            }
        }
        let mut warnings = Vec::new();
        if self.quadrature_failures > 0 {
            warnings.push(format!(
                "{} survival likelihood evaluations failed and were rejected",
                self.quadrature_failures
            ));
        }
        Ok(ChainOutput {
            draws,
            effect_sums,
            effect_draws,
            kept,
            acceptance,
            warnings,
        })
    }
}

fn chain_jitter(config: &McmcConfig, chain: usize) -> f64 {
    if config.chains > 1 || chain > 0 {
        config.init_jitter
    } else {
        0.0
    }
}

/// Runs one chain (index `chain` selects the random stream).
pub fn run_chain(
    data: &Dataset,
    spec: &ModelSpec,
    priors: &Priors,
    config: &McmcConfig,
    chain: usize,
) -> Result<ChainOutput> {
    config.validate()?;
    priors.validate()?;
    data.validate()?;
    Chain::new(data, spec, priors, config, chain)?.run()
}

/// Unnormalized joint log posterior of `(θ, b_1..b_n)`.
pub fn log_posterior(
    data: &Dataset,
    spec: &ModelSpec,
    priors: &Priors,
    params: &JointParams,
    effects: &[RandomEffects],
) -> Result<f64> {
    spec.validate_params(params)?;
    if effects.len() != data.len() {
        return Err(Error::Dimension {
            what: "subjects with random effects",
            expected: data.len(),
            got: effects.len(),
        });
    }
    let q = spec.n_random();
    let l = &params.longitudinal;
    let s = &params.survival;
    let d_chol = if q > 0 { cholesky(&l.d, q)? } else { Vec::new() };
    let zeros = vec![0.0; q];
    let mut total = 0.0;
    for (subject, b) in data.subjects.iter().zip(effects) {
        let coefs = spec.trajectory.effective_coefficients(&l.beta, &b.0);
        total += crate::longitudinal::measurements_loglik(
            &spec.trajectory,
            spec.measurements(subject),
            subject.intermediate_time,
            &subject.covariates,
            &coefs,
            l.sigma,
        );
        let ctx = spec.hazard_context(&coefs, subject.intermediate_time, &subject.covariates);
        total += survival_loglik(subject.event_time, subject.event, &ctx, s)?;
        if q > 0 {
            total += crate::linalg::mvn_log_density(&b.0, &zeros, &d_chol, q);
        }
    }
    total += l.beta.iter().map(|v| normal_log_density(*v, 0.0, priors.beta_sd)).sum::<f64>();
    total += half_t_log_kernel(l.sigma, priors.half_t_df, priors.sigma_scale);
    if q > 0 {
        total += d_log_prior(&l.d, q, priors);
    }
    total += s.gamma.iter().map(|v| normal_log_density(*v, 0.0, priors.gamma_sd)).sum::<f64>();
    total += normal_log_density(s.zeta, 0.0, priors.zeta_sd);
    total += s.alpha.iter().map(|v| normal_log_density(*v, 0.0, priors.alpha_sd)).sum::<f64>();
    match &s.baseline {
        BaselineHazard::Weibull { shape, scale } => {
            total += normal_log_density(shape.ln(), 0.0, priors.weibull_log_shape_sd);
            total += normal_log_density(scale.ln(), 0.0, priors.weibull_log_scale_sd);
        }
        BaselineHazard::BsplineLogHazard { coefficients, .. } => {
            total += coefficients
                .iter()
                .map(|v| normal_log_density(*v, 0.0, priors.baseline_ridge_sd))
                .sum::<f64>();
        }
    }
    Ok(total)
}
