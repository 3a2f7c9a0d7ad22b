use std::time::Instant;

use interjm_core::inference::{FittedJointModel, NewSubjectConfig, NewSubjectSampler};
use interjm_core::linalg::{cholesky, cholesky_inverse, spd_solve};
use interjm_core::longitudinal::{LongitudinalParams, RandomEffects};
use interjm_core::prediction::{
    conditional_survival, dynamic_prediction, prediction_curve, prediction_draws, PredictionConfig,
    PredictionScenario,
};
use interjm_core::survival::{BaselineHazard, SurvivalParams};
use interjm_core::{Error, JointParams, Measurement, ModelSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn d_matrix() -> Vec<f64> {
    vec![
        4.0, 0.2, 1.0, 0.0, //
        0.2, 0.09, 0.0, 0.01, //
        1.0, 0.0, 9.0, 0.1, //
        0.0, 0.01, 0.1, 0.04,
    ]
}

fn params(zeta: f64, alpha: f64, shape: f64, scale: f64) -> JointParams {
    JointParams {
        longitudinal: LongitudinalParams {
            beta: vec![20.7, 1.6, -15.5, -0.76],
            sigma: 2.0,
            d: d_matrix(),
        },
        survival: SurvivalParams {
            gamma: vec![],
            zeta,
            alpha: vec![alpha],
            baseline: BaselineHazard::Weibull { shape, scale },
        },
    }
}

fn model(zeta: f64, alpha: f64, shape: f64, scale: f64) -> FittedJointModel {
    FittedJointModel::point_mass(ModelSpec::drop_and_slope_change(), &params(zeta, alpha, shape, scale), vec![])
        .unwrap()
}

fn history() -> Vec<Measurement> {
    [(0.5, 21.0), (2.0, 24.5), (3.5, 26.0), (5.0, 29.5)]
        .iter()
        .map(|&(t, y)| Measurement::new(t, y))
        .collect()
}

#[test]
fn closed_form_with_a_single_draw() {
    let start = Instant::now();
    let xi = 1.7;
    let fitted = model(0.0, 0.0, xi, 1.0);
    let config = PredictionConfig {
        m: 1,
        ..PredictionConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let t: f64 = rand::Rng::random_range(&mut rng, 0.0..1.5);
        let u: f64 = t + rand::Rng::random_range(&mut rng, 0.0..1.0);
        let h: Vec<Measurement> = history().into_iter().filter(|m| m.time <= t).collect();
        let r = dynamic_prediction(&fitted, &h, &[], t, u, &PredictionScenario::NoneWithinWindow, &config).unwrap();
        let want = (-(u.powf(xi) - t.powf(xi))).exp();
        assert!((r.median - want).abs() < 1e-6, "t={t} u={u}: {} vs {want}", r.median);
        assert_eq!(r.ci_low, r.median);
    }
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn landmark_equal_to_horizon_gives_one() {
    let fitted = model(-0.5, 0.05, 3.0, 30.0);
    let config = PredictionConfig {
        m: 1,
        ..PredictionConfig::default()
    };
    for scenario in [
        PredictionScenario::NoneWithinWindow,
        PredictionScenario::OccursAt { tau: 5.0 },
        PredictionScenario::AlreadyOccurred { rho: 4.0 },
    ] {
        let r = dynamic_prediction(&fitted, &history(), &[], 5.0, 5.0, &scenario, &config).unwrap();
        assert_eq!((r.median, r.ci_low, r.ci_high), (1.0, 1.0, 1.0));
    }
}

#[test]
fn earlier_intermediate_event_helps_when_zeta_is_negative() {
    let spec = ModelSpec::drop_and_slope_change();
    let p = params(-0.7, 0.0, 3.0, 30.0);
    let b = RandomEffects(vec![1.0, 0.1, -2.0, 0.05]);
    let at = PredictionScenario::OccursAt { tau: 6.0 };
    let never = PredictionScenario::NoneWithinWindow;
    let a = conditional_survival(12.0, 5.0, &spec, &p, &b, &[], &at).unwrap();
    let n = conditional_survival(12.0, 5.0, &spec, &p, &b, &[], &never).unwrap();
    assert!(a > n, "{a} vs {n}");
    // numeric oracle: closed-form Weibull pieces with the hazard scaled by exp(ζ) after τ
    let h = |x: f64| (x / 30.0f64).powi(3);
    let want = (-(h(6.0) - h(5.0)) - (-0.7f64).exp() * (h(12.0) - h(6.0))).exp();
    assert!((a - want).abs() < 1e-10);
    assert_eq!(conditional_survival(5.0, 5.0, &spec, &p, &b, &[], &at).unwrap(), 1.0);
}

#[test]
fn occurs_at_horizon_matches_no_event() {
    let fitted = model(0.0, 0.03, 3.0, 30.0);
    let config = PredictionConfig {
        m: 200,
        ..PredictionConfig::default()
    };
    let a = dynamic_prediction(&fitted, &history(), &[], 5.0, 9.0, &PredictionScenario::OccursAt { tau: 9.0 }, &PredictionConfig { resample: true, ..config.clone() });
    let n = dynamic_prediction(&fitted, &history(), &[], 5.0, 9.0, &PredictionScenario::NoneWithinWindow, &PredictionConfig { resample: true, ..config });
    let (a, n) = (a.unwrap(), n.unwrap());
    assert!((a.median - n.median).abs() < 1e-9);
    assert!((a.ci_low - n.ci_low).abs() < 1e-9);
}

#[test]
fn curve_matches_pointwise_calls_and_is_monotone() {
    let fitted = model(-0.4, 0.04, 3.0, 30.0);
    let config = PredictionConfig {
        m: 100,
        resample: true,
        seed: 11,
        ..PredictionConfig::default()
    };
    let grid = [5.0, 6.0, 7.5, 9.0, 12.0];
    let scenario = PredictionScenario::OccursAt { tau: 7.0 };
    let curve = prediction_curve(&fitted, &history(), &[], 5.0, &grid, &scenario, &config).unwrap();
    assert_eq!((curve[0].median, curve[0].ci_low, curve[0].ci_high), (1.0, 1.0, 1.0));
    for (k, &u) in grid.iter().enumerate() {
        // an occurs-at time must lie inside the window
        let scenario = if u < 7.0 { PredictionScenario::NoneWithinWindow } else { scenario };
        let point = dynamic_prediction(&fitted, &history(), &[], 5.0, u, &scenario, &config).unwrap();
        assert_eq!(point, curve[k]);
        assert!(0.0 <= point.ci_low && point.ci_low <= point.median && point.median <= point.ci_high && point.ci_high <= 1.0);
    }
    assert!(curve.windows(2).all(|w| w[1].median <= w[0].median));
    let draws = prediction_draws(&fitted, &history(), &[], 5.0, &grid, &scenario, &config).unwrap();
    assert!(draws.iter().all(|c| c.windows(2).all(|w| w[1] <= w[0])));
}

#[test]
fn doubling_m_keeps_the_median_inside_the_interval() {
    let fitted = model(-0.4, 0.05, 3.0, 30.0);
    let base = PredictionConfig {
        m: 250,
        resample: true,
        seed: 4,
        ..PredictionConfig::default()
    };
    let scenario = PredictionScenario::NoneWithinWindow;
    let a = dynamic_prediction(&fitted, &history(), &[], 5.0, 15.0, &scenario, &base).unwrap();
    let b = dynamic_prediction(&fitted, &history(), &[], 5.0, 15.0, &scenario, &PredictionConfig { m: 500, ..base }).unwrap();
    let half_width = 0.5 * (a.ci_high - a.ci_low);
    assert!((b.median - a.median).abs() <= half_width);
}

#[test]
fn too_many_draws_without_resampling_is_an_error() {
    let fitted = model(0.0, 0.0, 2.0, 30.0);
    let err = dynamic_prediction(&fitted, &[], &[], 0.0, 1.0, &PredictionScenario::NoneWithinWindow, &PredictionConfig::default());
    assert!(matches!(err, Err(Error::InsufficientDraws { requested: 500, available: 1 })));
}

#[test]
fn invalid_scenarios_and_histories_are_rejected() {
    let fitted = model(0.0, 0.0, 2.0, 30.0);
    let config = PredictionConfig { m: 1, ..PredictionConfig::default() };
    let at = PredictionScenario::OccursAt { tau: 20.0 };
    assert!(matches!(dynamic_prediction(&fitted, &history(), &[], 5.0, 10.0, &at, &config), Err(Error::Scenario(_))));
    let late = PredictionScenario::AlreadyOccurred { rho: 6.0 };
    assert!(dynamic_prediction(&fitted, &history(), &[], 5.0, 10.0, &late, &config).is_err());
    assert!(dynamic_prediction(&fitted, &history(), &[], 4.0, 10.0, &PredictionScenario::NoneWithinWindow, &config).is_err());
}

/// With ζ = α = 0 the survival term does not involve `b`, so the posterior is
/// the Gaussian posterior of a linear mixed model.
#[test]
fn new_subject_posterior_matches_least_squares_oracle() {
    let spec = ModelSpec::drop_and_slope_change();
    let p = params(0.0, 0.0, 2.0, 30.0);
    let rho = 3.0;
    let times = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let truth = [1.5, 0.2, -2.0, 0.1];
    let beta = &p.longitudinal.beta;
    let rows: Vec<[f64; 4]> = times
        .iter()
        .map(|&t| {
            let r = if t >= rho { 1.0 } else { 0.0 };
            [1.0, t, r, r * (t - rho)]
        })
        .collect();
    let hist: Vec<Measurement> = rows
        .iter()
        .zip(&times)
        .enumerate()
        .map(|(k, (x, &t))| {
            let noise = [0.3, -0.5, 0.1, 0.4, -0.2, 0.6, -0.1][k];
            let y: f64 = (0..4).map(|a| x[a] * (beta[a] + truth[a])).sum::<f64>() + noise;
            Measurement::new(t, y)
        })
        .collect();
    let s2 = p.longitudinal.sigma.powi(2);
    let d_inv = cholesky_inverse(&cholesky(&p.longitudinal.d, 4).unwrap(), 4);
    let mut prec = d_inv.clone();
    let mut rhs = vec![0.0; 4];
    for (x, m) in rows.iter().zip(&hist) {
        let resid = m.value - (0..4).map(|a| x[a] * beta[a]).sum::<f64>();
        for a in 0..4 {
            rhs[a] += x[a] * resid / s2;
            for c in 0..4 {
                prec[a * 4 + c] += x[a] * x[c] / s2;
            }
        }
    }
    let mean = spd_solve(&prec, 4, &rhs).unwrap();
    let cov = cholesky_inverse(&cholesky(&prec, 4).unwrap(), 4);

    let config = NewSubjectConfig {
        warmup: 500,
        steps_per_draw: 10,
        ..NewSubjectConfig::default()
    };
    let mut sampler = NewSubjectSampler::new(&spec, &hist, &[], Some(rho), 6.0, config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 4000;
    let draws: Vec<Vec<f64>> = (0..n).map(|_| sampler.draw(&p, &mut rng).unwrap().0).collect();
    for a in 0..4 {
        let m = draws.iter().map(|b| b[a]).sum::<f64>() / n as f64;
        let sd = cov[a * 4 + a].sqrt();
        // loose bound on the Monte Carlo error of an autocorrelated chain
        assert!((m - mean[a]).abs() < 0.15 * sd, "component {a}: {m} vs {}", mean[a]);
        let v = draws.iter().map(|b| (b[a] - m).powi(2)).sum::<f64>() / n as f64;
        assert!((v / cov[a * 4 + a] - 1.0).abs() < 0.2, "component {a}: var {v} vs {}", cov[a * 4 + a]);
    }
    let rate = sampler.acceptance_rate().unwrap();
    assert!((0.15..=0.6).contains(&rate), "acceptance {rate}");
}

#[test]
fn new_subject_acceptance_with_survival_information() {
    let spec = ModelSpec::drop_and_slope_change();
    let p = params(-0.5, 0.05, 3.0, 30.0);
    let mut sampler = NewSubjectSampler::new(&spec, &history(), &[], None, 8.0, NewSubjectConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws: Vec<Vec<f64>> = (0..500).map(|_| sampler.draw(&p, &mut rng).unwrap().0).collect();
    let rate = sampler.acceptance_rate().unwrap();
    assert!((0.15..=0.6).contains(&rate), "acceptance {rate}");
    // post-event effects come from their conditional prior: spread close to D's
    let v: f64 = draws.iter().map(|b| b[2] * b[2]).sum::<f64>() / draws.len() as f64;
    assert!(v > 5.0 && v < 13.0, "{v}");
}

#[test]
fn scenario_json_shape() {
    let s: PredictionScenario = serde_json::from_str(r#"{"type":"occurs-at","tau":3.0}"#).unwrap();
    assert_eq!(s, PredictionScenario::OccursAt { tau: 3.0 });
}
