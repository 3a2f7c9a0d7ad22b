//! Convergence diagnostics over multiple chains of one scalar.

use crate::prelude::*;
use crate::stats::{mean, variance};

/// Split-R̂: every chain is cut in half and the halves are treated as
/// separate chains. Returns `NaN` when fewer than 4 draws per chain.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let halves = split(chains);
    if halves.len() < 2 || halves[0].len() < 2 {
        return f64::NAN;
    }
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|c| mean(c)).collect();
    let w = mean(&halves.iter().map(|c| variance(c)).collect::<Vec<_>>());
    let b = n * variance(&means);
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

fn split(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let len = chains.iter().map(Vec::len).min().unwrap_or(0);
    let half = len / 2;
    let mut out = Vec::new();
    for c in chains {
        let start = c.len() - 2 * half;
        out.push(&c[start..start + half]);
        out.push(&c[start + half..start + 2 * half]);
    }
    out
}

/// Effective sample size from multi-chain autocorrelations truncated with
/// Geyer's initial positive sequence.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let len = chains.iter().map(Vec::len).min().unwrap_or(0);
    let m = chains.len();
    if m == 0 || len < 4 {
        return f64::NAN;
    }
    let n = len as f64;
    let total = n * m as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(&c[..len])).collect();
    let w = mean(&chains.iter().map(|c| variance(&c[..len])).collect::<Vec<_>>());
    let b_over_n = if m > 1 { variance(&means) } else { 0.0 };
    let var_plus = (n - 1.0) / n * w + b_over_n;
    if !(var_plus > 0.0) {
        return total;
    }
    let autocov = |lag: usize| -> f64 {
        let mut acc = 0.0;
        for (c, mu) in chains.iter().zip(&means) {
            let c = &c[..len];
            let mut s = 0.0;
            for t in 0..len - lag {
                s += (c[t] - mu) * (c[t + lag] - mu);
            }
            acc += s / n;
        }
        acc / m as f64
    };
    let rho = |lag: usize| 1.0 - (w - autocov(lag)) / var_plus;
    let mut sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < len {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        // monotone sequence estimator
        let pair = pair.min(prev_pair);
        sum += pair;
        prev_pair = pair;
        k += 1;
    }
    let tau = (-1.0 + 2.0 * sum).max(1.0 / total.log10().max(1.0));
    (total / tau).min(total * total.log10().max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ar1(seed: u64, phi: f64, n: usize, shift: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                let e: f64 = rng.sample(rand_distr::StandardNormal);
                x = phi * x + e;
                x + shift
            })
            .collect()
    }

    #[test]
    fn rhat_near_one_for_mixed_chains() {
        let chains = vec![ar1(1, 0.0, 2000, 0.0), ar1(2, 0.0, 2000, 0.0)];
        assert!((split_rhat(&chains) - 1.0).abs() < 0.01);
    }

    #[test]
    fn rhat_flags_disagreeing_chains() {
        let chains = vec![ar1(1, 0.0, 500, 0.0), ar1(2, 0.0, 500, 3.0)];
        assert!(split_rhat(&chains) > 1.5);
    }

    #[test]
    fn ess_of_independent_and_correlated_draws() {
        let iid = vec![ar1(3, 0.0, 4000, 0.0), ar1(4, 0.0, 4000, 0.0)];
        let ess = effective_sample_size(&iid);
        assert!(ess > 6000.0 && ess < 10000.0, "{ess}");
        // AR(1) with φ = 0.9 has τ = (1 + φ)/(1 − φ) = 19
        let ar = vec![ar1(5, 0.9, 20000, 0.0), ar1(6, 0.9, 20000, 0.0)];
        let ess = effective_sample_size(&ar);
        let expected = 40000.0 / 19.0;
        assert!((ess / expected - 1.0).abs() < 0.25, "{ess} vs {expected}");
    }
}
