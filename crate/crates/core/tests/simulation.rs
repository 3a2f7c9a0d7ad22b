use interjm_core::inference::{fit, McmcConfig, Priors};
use interjm_core::linalg::spd_solve;
use interjm_core::prediction::{prediction_curve, PredictionConfig, PredictionScenario};
use interjm_core::simulation::{calibration_summary, simulate_dataset, split_train_test, SimulationScenario};
use interjm_core::ModelSpec;

#[test]
fn event_times_follow_the_weibull_baseline_without_association() {
    let scenario = SimulationScenario {
        zeta: 0.0,
        alpha: 0.0,
        censoring_mean: 1e12,
        n: 10_000,
        ..SimulationScenario::standard(1).unwrap()
    };
    let (_, subjects) = simulate_dataset(&scenario, 21).unwrap();
    let mut times: Vec<f64> = subjects.iter().map(|s| s.true_event_time.unwrap()).collect();
    times.sort_by(f64::total_cmp);
    let n = times.len() as f64;
    let cdf = |t: f64| 1.0 - (-(t / scenario.time_scale).powf(scenario.weibull_shape)).exp();
    let ks = times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let f = cdf(t);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0f64, f64::max);
    assert!(ks < 0.02, "KS distance {ks}");
}

/// With (almost) no measurement noise, subtracting the random-effect part
/// and regressing on the population design returns the scenario's fixed
/// effects.
#[test]
fn zero_noise_regression_recovers_scenario_coefficients() {
    for label in [1u8, 2, 3] {
        let scenario = SimulationScenario {
            sigma: 1e-12,
            n: 200,
            ..SimulationScenario::standard(label).unwrap()
        };
        let (_, subjects) = simulate_dataset(&scenario, 4).unwrap();
        let mut xtx = [0.0; 16];
        let mut xty = [0.0; 4];
        let mut post_rows = 0;
        for s in &subjects {
            let b = &s.random_effects;
            for m in &s.record.measurements {
                let (r, since) = match s.scheduled_intermediate {
                    Some(rho) if m.time >= rho => (1.0, m.time - rho),
                    _ => (0.0, 0.0),
                };
                post_rows += r as usize;
                let x = [1.0, m.time, r, since];
                let y = m.value - (b[0] + b[1] * m.time + b[2] * r + b[3] * since);
                for i in 0..4 {
                    xty[i] += x[i] * y;
                    for j in 0..4 {
                        xtx[i * 4 + j] += x[i] * x[j];
                    }
                }
            }
        }
        assert!(post_rows > 50);
        let beta = spd_solve(&xtx, 4, &xty).unwrap();
        let want = [scenario.intercept, scenario.slope, scenario.drop, scenario.slope_change];
        for k in 0..4 {
            assert!((beta[k] - want[k]).abs() < 1e-6, "scenario {label}: {beta:?} vs {want:?}");
        }
    }
}

#[test]
fn calibrated_defaults_meet_their_targets() {
    for label in [1u8, 2, 3] {
        let scenario = SimulationScenario { n: 10_000, ..SimulationScenario::standard(label).unwrap() };
        let (_, subjects) = simulate_dataset(&scenario, 1).unwrap();
        let c = calibration_summary(&scenario, &subjects);
        assert!((0.3..=0.6).contains(&c.event_fraction), "scenario {label}: {c:?}");
        assert!((0.2..=0.5).contains(&c.intermediate_fraction), "scenario {label}: {c:?}");
        assert!(c.median_abs_association <= 3.0, "scenario {label}: {c:?}");
    }
}

/// An intermediate event now lowers the biomarker and the hazard, so the
/// "occurs now" curve should lie above the "none in the window" curve.
#[test]
fn intermediate_event_now_improves_predicted_survival() {
    let scenario = SimulationScenario { n: 300, ..SimulationScenario::standard(1).unwrap() };
    let (data, _) = simulate_dataset(&scenario, 8).unwrap();
    let (train, test) = split_train_test(&data, 8).unwrap();
    let config = McmcConfig { chains: 1, iterations: 1500, burn_in: 500, thin: 5, seed: 2, ..McmcConfig::default() };
    let fitted = fit(&train, &ModelSpec::drop_and_slope_change(), &Priors::default(), &config).unwrap();
    let (t, u) = (20.0, 22.0);
    let grid: Vec<f64> = (1..=4).map(|k| t + 0.5 * k as f64).collect();
    let prediction = PredictionConfig { m: 100, seed: 3, ..PredictionConfig::default() };
    let (mut above, mut total) = (0, 0);
    for s in test.subjects.iter().filter(|s| s.event_time >= t && s.intermediate_time.is_none_or(|r| r > t)) {
        let history = s.history_until(t);
        let curve = |scenario: &PredictionScenario| {
            prediction_curve(&fitted, history, &s.covariates, t, &grid, scenario, &prediction).unwrap()
        };
        let now = curve(&PredictionScenario::OccursAt { tau: t });
        let none = curve(&PredictionScenario::NoneWithinWindow);
        total += 1;
        if now.iter().zip(&none).all(|(a, b)| a.median > b.median) {
            above += 1;
        }
    }
    assert!(total >= 10, "only {total} subjects at risk");
    assert!(above as f64 >= 0.9 * total as f64, "{above}/{total} subjects");
    assert!(grid.last() == Some(&u));
}
