#[path = "support/metric_oracle.rs"]
mod metric_oracle;

use interjm_core::evaluation::{auc, evaluate, prediction_error};
use metric_oracle::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn auc_and_pe_match_enumeration_oracles_on_random_datasets() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut seen = [[0usize; 4]; 2];
    for _ in 0..25 {
        let cases = random_cases(&mut rng);
        let (data, table) = build(&cases);
        let report = auc(&data, &table, T, DT).unwrap();
        let (want, want_components, want_counts) = auc_oracle(&cases);
        match (report.auc, want) {
            (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12, "{a} vs {b}"),
            (None, None) => assert!(!report.diagnostics.is_empty()),
            other => panic!("definedness differs: {other:?}"),
        }
        if let Some(c) = report.components {
            for m in 0..4 {
                assert!((c[m] - want_components[m]).abs() < 1e-12);
            }
            assert!((c.iter().sum::<f64>() - report.auc.unwrap()).abs() < 1e-12);
        }
        let counts: [usize; 4] = std::array::from_fn(|m| report.tallies[m].pairs);
        assert_eq!(counts, want_counts);
        for c in &cases {
            for m in 1..=4 {
                for other in &cases {
                    if !std::ptr::eq(c, other) && omega(m, c, other) {
                        seen[usize::from(!in_a(c))][m - 1] += 1;
                    }
                }
            }
        }
        let pe = prediction_error(&data, &table, T, U).unwrap();
        assert!((pe - pe_oracle(&cases)).abs() < 1e-12);
    }
    for group in seen {
        assert!(group.iter().all(|&c| c > 0), "pair classes not all covered: {seen:?}");
    }
}

fn case(time: f64, event: bool, rho: Option<f64>, pi: f64) -> Case {
    Case {
        time,
        event,
        rho,
        pi,
        own: 0.5,
    }
}

#[test]
fn single_concordant_pair() {
    let (data, table) = build(&[case(11.0, true, None, 0.2), case(13.0, false, None, 0.8)]);
    assert_eq!(auc(&data, &table, T, DT).unwrap().auc, Some(1.0));
}

#[test]
fn equal_predictions_give_one_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cases = random_cases(&mut rng);
    cases.push(case(11.0, true, None, 0.0));
    cases.push(case(13.0, false, None, 0.0));
    for c in &mut cases {
        c.pi = 0.4;
    }
    let (data, table) = build(&cases);
    assert_eq!(auc(&data, &table, T, DT).unwrap().auc, Some(0.5));
}

#[test]
fn six_subject_fixture() {
    // one subject (s3) censored within the window
    let cases = vec![
        case(10.5, true, None, 0.3),
        case(11.5, true, Some(4.0), 0.6),
        case(13.0, false, None, 0.7),
        Case { own: 0.8, ..case(11.0, false, None, 0.5) },
        case(12.5, false, Some(8.0), 0.9),
        case(14.0, true, None, 0.4),
    ];
    let (data, table) = build(&cases);
    let report = evaluate(&data, &table, T, DT).unwrap();
    let (want, _, counts) = auc_oracle(&cases);
    assert!((report.auc.unwrap() - want.unwrap()).abs() < 1e-12);
    assert_eq!(report.pair_counts, counts);
    assert!((report.pe.unwrap() - pe_oracle(&cases)).abs() < 1e-12);
}

#[test]
fn undefined_auc_reports_diagnostic() {
    let (data, table) = build(&[case(13.0, false, None, 0.5), case(14.0, true, None, 0.3)]);
    let r = auc(&data, &table, T, DT).unwrap();
    assert_eq!(r.auc, None);
    assert!(r.diagnostics[0].contains("undefined"));
}

#[test]
fn cross_group_pairs_are_excluded() {
    let (data, table) = build(&[case(11.0, true, None, 0.9), case(13.0, false, Some(5.0), 0.1)]);
    assert_eq!(auc(&data, &table, T, DT).unwrap().auc, None);
}

#[test]
fn pe_extremes() {
    let (data, table) = build(&[case(13.0, false, None, 1.0), case(14.0, true, Some(2.0), 1.0)]);
    assert_eq!(prediction_error(&data, &table, T, U).unwrap(), 0.0);
    let (data, table) = build(&[case(10.5, true, None, 1.0), case(11.0, true, Some(2.0), 1.0)]);
    assert_eq!(prediction_error(&data, &table, T, U).unwrap(), 1.0);
    let (data, table) = build(&[case(5.0, true, None, 1.0)]);
    assert!(prediction_error(&data, &table, T, U).is_err());
}

#[test]
fn missing_prediction_is_an_error() {
    let (data, mut table) = build(&[case(11.0, true, None, 0.2), case(13.0, false, None, 0.8)]);
    table.rows.pop();
    assert!(auc(&data, &table, T, DT).is_err());
}

fn arb_cases() -> impl Strategy<Value = Vec<Case>> {
    prop::collection::vec(
        (8.0..15.0f64, any::<bool>(), prop::option::of(0.0..13.0f64), 0.0..=1.0f64, 0.0..=1.0f64),
        2..12,
    )
    .prop_map(|v| {
        v.into_iter()
            .map(|(time, event, rho, pi, own)| Case {
                time,
                event,
                rho: rho.filter(|&r| r <= time),
                pi,
                own,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn auc_properties(cases in arb_cases()) {
        let (data, table) = build(&cases);
        let r = auc(&data, &table, T, DT).unwrap();
        if let Some(a) = r.auc {
            prop_assert!((0.0..=1.0).contains(&a));
            let flipped: Vec<Case> = cases.iter().map(|c| Case { pi: 1.0 - c.pi, ..c.clone() }).collect();
            let (d2, t2) = build(&flipped);
            let b = auc(&d2, &t2, T, DT).unwrap().auc.unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
            let squared: Vec<Case> = cases.iter().map(|c| Case { pi: c.pi * c.pi, ..c.clone() }).collect();
            let (d3, t3) = build(&squared);
            prop_assert!((auc(&d3, &t3, T, DT).unwrap().auc.unwrap() - a).abs() < 1e-12);
        }
        if cases.iter().all(|c| c.event || c.time <= T || c.time > U) {
            prop_assert_eq!(r.tallies[1].pairs + r.tallies[2].pairs + r.tallies[3].pairs, 0);
        }
    }

    #[test]
    fn pe_properties(cases in arb_cases(), early in prop::collection::vec((0.0..9.9f64, 0.0..=1.0f64), 0..4)) {
        let (data, table) = build(&cases);
        if let Ok(pe) = prediction_error(&data, &table, T, U) {
            prop_assert!(pe >= 0.0);
            let mut more = cases.clone();
            more.extend(early.iter().map(|&(time, pi)| case(time, true, None, pi)));
            let (d2, t2) = build(&more);
            prop_assert!((prediction_error(&d2, &t2, T, U).unwrap() - pe).abs() < 1e-12);
        }
    }
}

#[test]
fn increasing_transform_changes_pe() {
    let cases = vec![case(11.0, true, None, 0.5), case(13.0, false, None, 0.6)];
    let (data, table) = build(&cases);
    let squared: Vec<Case> = cases.iter().map(|c| Case { pi: c.pi * c.pi, ..c.clone() }).collect();
    let (d2, t2) = build(&squared);
    assert_eq!(auc(&data, &table, T, DT).unwrap().auc, auc(&d2, &t2, T, DT).unwrap().auc);
    assert_ne!(
        prediction_error(&data, &table, T, U).unwrap(),
        prediction_error(&d2, &t2, T, U).unwrap()
    );
}
