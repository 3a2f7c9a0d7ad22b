//! Small statistical helpers shared across modules.

use crate::prelude::*;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Log density of `N(mean, sd²)` at `x`.
#[inline]
pub fn normal_log_density(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -LN_SQRT_2PI - sd.ln() - 0.5 * z * z
}

/// Unnormalized log density of a half-t(df, scale) distribution on `x > 0`.
#[inline]
pub fn half_t_log_kernel(x: f64, df: f64, scale: f64) -> f64 {
    let z = x / scale;
    -0.5 * (df + 1.0) * (1.0 + z * z / df).ln()
}

/// Sample quantile with linear interpolation between order statistics
/// (the "type 7" definition). `sorted` must be sorted ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sorts a copy of `values` and returns the requested quantiles.
pub fn quantiles(values: &[f64], probs: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    probs.iter().map(|&p| quantile_sorted(&sorted, p)).collect()
}

/// Independent seed for substream `stream` of a run seeded with `seed`
/// (one SplitMix64 step over the combined value).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() as f64 - 1.0)
}
