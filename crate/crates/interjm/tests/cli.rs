use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn interjm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_interjm")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = interjm(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_scenario_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = interjm(&["simulate", "--scenario", "9", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("unknown scenario 9; valid labels are 1, 2, 3"), "{stderr}");
    assert!(fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn simulate_fit_predict_evaluate_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sim = |name: &str| {
        let out = d.join(name);
        ok(&["simulate", "--scenario", "1", "--n", "80", "--seed", "7", "--out", s(&out)]);
        out
    };
    let (a, b) = (sim("a"), sim("b"));
    for f in ["train_subjects.csv", "train_measurements.csv", "test_subjects.csv", "test_measurements.csv", "truth.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let truth = json(&a.join("truth.json"));
    assert_eq!(truth["subjects"].as_array().unwrap().len(), 80);

    let fit = |name: &str, threads: &str| {
        let out = d.join(name);
        ok(&[
            "fit",
            "--subjects",
            s(&a.join("train_subjects.csv")),
            "--measurements",
            s(&a.join("train_measurements.csv")),
            "--iterations",
            "300",
            "--burn-in",
            "100",
            "--thin",
            "1",
            "--seed",
            "3",
            "--threads",
            threads,
            "--out",
            s(&out),
        ]);
        out
    };
    let m1 = fit("m1.json", "1");
    let m2 = fit("m2.json", "2");
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
    assert_eq!(json(&m1)["draws"].as_array().unwrap().len(), 400);

    let predict = |name: &str, u: &str| {
        let out = d.join(name);
        ok(&[
            "predict", "--model", s(&m1), "--subjects", s(&a.join("test_subjects.csv")), "--measurements",
            s(&a.join("test_measurements.csv")), "--id", "1", "--t", "10", "--u-grid", u, "--scenario", "now",
            "--m", "100", "--seed", "5", "--out", s(&out),
        ]);
        out
    };
    let p = json(&predict("p1.json", "10,10,10"));
    for point in p["points"].as_array().unwrap() {
        assert_eq!(point["median"], 1.0);
        assert_eq!(point["ci_low"], 1.0);
        assert_eq!(point["ci_high"], 1.0);
    }
    let (q1, q2) = (predict("q1.json", "11,14,18"), predict("q2.json", "11,14,18"));
    assert_eq!(fs::read(&q1).unwrap(), fs::read(&q2).unwrap());
    let medians: Vec<f64> = json(&q1)["points"].as_array().unwrap().iter().map(|p| p["median"].as_f64().unwrap()).collect();
    assert!(medians.windows(2).all(|w| w[1] <= w[0]), "{medians:?}");

    let evaluate = |name: &str, threads: &str| {
        let out = d.join(name);
        ok(&[
            "evaluate", "--subjects", s(&a.join("test_subjects.csv")), "--measurements",
            s(&a.join("test_measurements.csv")), "--model", s(&m1), "--t", "20", "--dt", "2", "--m", "50",
            "--threads", threads, "--out", s(&out),
        ]);
        out
    };
    let (e1, e2) = (evaluate("e1.json", "1"), evaluate("e2.json", "2"));
    assert_eq!(fs::read(&e1).unwrap(), fs::read(&e2).unwrap());
    let report = json(&e1);
    assert_eq!(report["u"], 22.0);
    assert!(report["pe"].as_f64().unwrap() >= 0.0);
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

#[test]
fn evaluate_from_precomputed_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(
        &d.join("subjects.csv"),
        "id,event_time,event_indicator,intermediate_time\n\
         s1,10.5,1,\ns2,11.5,1,\ns3,13,0,\ns4,14,1,\ns5,11,0,\ns6,12.5,0,\n",
    );
    write(
        &d.join("measurements.csv"),
        "id,time,value\ns1,0,20\ns2,0,21\ns3,0,22\ns4,0,23\ns5,0,24\ns6,0,25\n",
    );
    write(
        &d.join("predictions.csv"),
        "id,group,at_landmark,at_own_time\n\
         s1,A,0.3,\ns2,A,0.6,\ns3,A,0.7,\ns4,A,0.4,\ns5,A,0.5,0.8\ns6,A,0.9,\n",
    );
    let out = d.join("report.json");
    ok(&[
        "evaluate", "--subjects", s(&d.join("subjects.csv")), "--measurements", s(&d.join("measurements.csv")),
        "--predictions", s(&d.join("predictions.csv")), "--t", "10", "--dt", "2", "--out", s(&out),
    ]);
    let report = json(&out);
    // concordant weight 5 + 0.4 + 0.8 over 6 + 0.6 + 0.8 comparable weight
    assert!((report["auc"].as_f64().unwrap() - 6.2 / 7.4).abs() < 1e-12);
    // squared errors 0.09, 0.36, 0.01, 0.09, 0.36 and 0.8·0.25 + 0.2·0.25 over six at risk
    assert!((report["pe"].as_f64().unwrap() - 1.16 / 6.0).abs() < 1e-12);
}

#[test]
fn benchmark_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "benchmark", "--replications", "2", "--n", "60", "--scenarios", "1", "--iterations", "300",
            "--burn-in", "100", "--m", "40", "--out", s(&out),
        ]);
        out
    };
    let (a, b) = (run("a"), run("b"));
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "replication,scenario,model,anchor_t,delta_t,auc,pe");
    assert_eq!(lines.len(), 1 + 2 * 2 * 3);
    assert_eq!(metrics, fs::read_to_string(b.join("metrics.csv")).unwrap());
    assert!(a.join("summary.csv").exists());
    assert_eq!(json(&a.join("report.json"))["rows"].as_array().unwrap().len(), 12);
}
