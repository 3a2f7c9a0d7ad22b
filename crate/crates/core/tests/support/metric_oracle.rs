//! Brute-force AUC and prediction-error oracles: every ordered subject pair
//! is classified and weighted straight from the definitions.
#![allow(dead_code)]

use interjm_core::evaluation::{Group, RiskPrediction, RiskPredictionTable};
use interjm_core::{Dataset, SubjectRecord};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const T: f64 = 10.0;
pub const DT: f64 = 2.0;
pub const U: f64 = T + DT;

#[derive(Clone, Debug)]
pub struct Case {
    pub time: f64,
    pub event: bool,
    pub rho: Option<f64>,
    pub pi: f64,
    pub own: f64,
}

pub fn build(cases: &[Case]) -> (Dataset, RiskPredictionTable) {
    let subjects = cases
        .iter()
        .enumerate()
        .map(|(k, c)| SubjectRecord::new(format!("s{k}"), c.time, c.event, c.rho, vec![], vec![]).unwrap())
        .collect();
    let data = Dataset::new(subjects, vec![]).unwrap();
    let rows = data
        .subjects
        .iter()
        .zip(cases)
        .map(|(s, c)| RiskPrediction {
            id: s.id.clone(),
            group: Group::of(s, T),
            at_landmark: c.pi,
            at_own_time: Some(c.own),
        })
        .collect();
    (data, RiskPredictionTable { t: T, u: U, rows })
}

pub fn in_a(c: &Case) -> bool {
    match c.rho {
        None => true,
        Some(r) => T < r,
    }
}

// Pair classes written out as in the estimator's definition.
pub fn omega(m: usize, ci: &Case, cj: &Case) -> bool {
    let same = in_a(ci) == in_a(cj);
    let i_window = ci.time > T && ci.time <= U;
    let j_after = cj.time > U;
    let j_cens_between = ci.time < cj.time && cj.time <= U && !cj.event;
    same && i_window
        && match m {
            1 => ci.event && j_after,
            2 => !ci.event && j_after,
            3 => ci.event && j_cens_between,
            4 => !ci.event && j_cens_between,
            _ => unreachable!(),
        }
}

pub fn nu(m: usize, ci: &Case, cj: &Case) -> f64 {
    match m {
        1 => 1.0,
        2 => 1.0 - ci.own,
        3 => cj.own,
        4 => (1.0 - ci.own) * cj.own,
        _ => unreachable!(),
    }
}

pub fn concordance(a: f64, b: f64) -> f64 {
    if a < b {
        1.0
    } else if a == b {
        0.5
    } else {
        0.0
    }
}

/// Returns (pooled AUC, per-class numerators / pooled denominator, pair counts).
pub fn auc_oracle(cases: &[Case]) -> (Option<f64>, [f64; 4], [usize; 4]) {
    let mut num = [0.0; 4];
    let mut den = [0.0; 4];
    let mut count = [0; 4];
    for group_a in [true, false] {
        for m in 1..=4 {
            for i in 0..cases.len() {
                for j in 0..cases.len() {
                    if i == j || in_a(&cases[i]) != group_a {
                        continue;
                    }
                    if omega(m, &cases[i], &cases[j]) {
                        let w = nu(m, &cases[i], &cases[j]);
                        num[m - 1] += concordance(cases[i].pi, cases[j].pi) * w;
                        den[m - 1] += w;
                        count[m - 1] += 1;
                    }
                }
            }
        }
    }
    let total: f64 = den.iter().sum();
    if total == 0.0 {
        return (None, [0.0; 4], count);
    }
    (Some(num.iter().sum::<f64>() / total), num.map(|x| x / total), count)
}

pub fn pe_oracle(cases: &[Case]) -> f64 {
    let mut total = 0.0;
    let mut n = 0.0;
    for group_a in [true, false] {
        let members: Vec<&Case> = cases.iter().filter(|c| in_a(c) == group_a && c.time >= T).collect();
        if members.is_empty() {
            continue;
        }
        let mut s = 0.0;
        for c in &members {
            let survived = if c.time >= U { 1.0 } else { 0.0 };
            let died = if c.event && c.time < U { 1.0 } else { 0.0 };
            let censored = if !c.event && c.time < U { 1.0 } else { 0.0 };
            s += survived * (1.0 - c.pi).powi(2)
                + died * (0.0 - c.pi).powi(2)
                + censored * (c.own * (1.0 - c.pi).powi(2) + (1.0 - c.own) * (0.0 - c.pi).powi(2));
        }
        let group_pe = s / members.len() as f64;
        total += group_pe * members.len() as f64;
        n += members.len() as f64;
    }
    total / n
}

pub fn random_cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let n = rng.random_range(4..=12);
    (0..n)
        .map(|_| {
            let time = (rng.random_range(8.0..14.5f64) * 4.0).round() / 4.0;
            let rho = if rng.random_bool(0.5) {
                Some(rng.random_range(0.0..time.min(13.0)))
            } else {
                None
            };
            Case {
                time,
                event: rng.random_bool(0.5),
                rho,
                pi: (rng.random_range(0..10) as f64) / 10.0 + 0.05,
                own: rng.random_range(0.0..1.0),
            }
        })
        .collect()
}

