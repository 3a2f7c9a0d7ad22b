//! Generalized least squares oracle for the longitudinal submodel.
#![allow(dead_code)]

use interjm_core::linalg::{cholesky, cholesky_inverse, spd_solve};
use interjm_core::{Dataset, Measurement, SubjectRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Random intercept and slope data without intermediate events.
pub fn linear_mixed_data(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subjects = (0..n)
        .map(|i| {
            let b0: f64 = 2.0 * rng.sample::<f64, _>(StandardNormal);
            let b1: f64 = 0.05 * b0 + 0.15 * rng.sample::<f64, _>(StandardNormal);
            let visits = rng.random_range(3..8);
            let measurements = (0..visits)
                .map(|k| {
                    let t = k as f64 + rng.random_range(0.0..0.5);
                    let y = 10.0 + b0 + (0.5 + b1) * t + rng.sample::<f64, _>(StandardNormal);
                    Measurement::new(t, y)
                })
                .collect();
            let event = rng.random_bool(0.5);
            SubjectRecord::new(format!("{i}"), 8.0 + rng.random_range(0.0..4.0), event, None, vec![], measurements)
                .unwrap()
        })
        .collect();
    Dataset::new(subjects, vec![]).unwrap()
}

/// `E[β | D, σ, y]` for the marginal model `y_i ~ N(X_i β, Z_i D Z_i' + σ² I)`
/// with the independent normal prior on β.
pub fn gls(data: &Dataset, d: &[f64], sigma: f64, prior_sd: f64) -> [f64; 2] {
    let mut a = [1.0 / (prior_sd * prior_sd), 0.0, 0.0, 1.0 / (prior_sd * prior_sd)];
    let mut r = [0.0; 2];
    for s in &data.subjects {
        let m = s.measurements.len();
        let mut v = vec![0.0; m * m];
        for (j, mj) in s.measurements.iter().enumerate() {
            for (k, mk) in s.measurements.iter().enumerate() {
                let zj = [1.0, mj.time];
                let zk = [1.0, mk.time];
                let mut c = 0.0;
                for p in 0..2 {
                    for q in 0..2 {
                        c += zj[p] * d[p * 2 + q] * zk[q];
                    }
                }
                v[j * m + k] = c + if j == k { sigma * sigma } else { 0.0 };
            }
        }
        let v_inv = cholesky_inverse(&cholesky(&v, m).unwrap(), m);
        for j in 0..m {
            for k in 0..m {
                let xj = [1.0, s.measurements[j].time];
                let xk = [1.0, s.measurements[k].time];
                for p in 0..2 {
                    r[p] += xj[p] * v_inv[j * m + k] * s.measurements[k].value;
                    for q in 0..2 {
                        a[p * 2 + q] += xj[p] * v_inv[j * m + k] * xk[q];
                    }
                }
            }
        }
    }
    let b = spd_solve(&a, 2, &r).unwrap();
    [b[0], b[1]]
}

