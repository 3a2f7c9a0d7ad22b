//! Delimited-text datasets, JSON documents and report tables.
//!
//! A dataset is two UTF-8 CSV files with a header row: a subject file with
//! columns `id, event_time, event_indicator, intermediate_time` followed by
//! one column per baseline covariate (an empty `intermediate_time` means no
//! intermediate event), and a long-format measurement file with columns
//! `id, time, value`.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use interjm_core::benchmark::{BenchmarkRow, MetricSummary};
use interjm_core::evaluation::{Group, RiskPrediction, RiskPredictionTable};
use interjm_core::inference::{FittedJointModel, FITTED_SCHEMA_VERSION};
use interjm_core::simulation::CalibratedDefaults;
use interjm_core::{Dataset, Measurement, SubjectRecord};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUBJECT_COLUMNS: [&str; 4] = ["id", "event_time", "event_indicator", "intermediate_time"];
const MEASUREMENT_COLUMNS: [&str; 3] = ["id", "time", "value"];

fn csv_error(what: &str, e: csv::Error) -> Error {
    Error::Format(format!("{what}: {e}"))
}

fn header_index(what: &str, headers: &csv::StringRecord, required: &[&str]) -> Result<Vec<usize>> {
    let missing: Vec<&str> = required
        .iter()
        .filter(|c| !headers.iter().any(|h| h == **c))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(Error::Format(format!("{what}: missing column(s) {}", missing.join(", "))));
    }
    Ok(required
        .iter()
        .map(|c| headers.iter().position(|h| h == *c).unwrap())
        .collect())
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn number(what: &str, line: u64, column: &str, text: &str) -> Result<f64> {
    text.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Format(format!("{what} line {line}: column {column}: '{text}' is not a finite number")))
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r)
}

/// Reads a dataset from a subject file and a measurement file.
pub fn read_dataset<S: Read, M: Read>(subjects: S, measurements: M) -> Result<Dataset> {
    const WHAT: &str = "subject file";
    let mut rdr = reader(subjects);
    let headers = rdr.headers().map_err(|e| csv_error(WHAT, e))?.clone();
    let idx = header_index(WHAT, &headers, &SUBJECT_COLUMNS)?;
    let covariate_columns: Vec<usize> = (idx[3] + 1..headers.len()).collect();
    let covariate_names: Vec<String> = covariate_columns.iter().map(|&c| headers[c].to_string()).collect();
    let mut rows = Vec::new();
    let mut position: HashMap<String, usize> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(WHAT, e))?;
        let line = line_of(&record);
        let id = record[idx[0]].to_string();
        if id.is_empty() {
            return Err(Error::Format(format!("{WHAT} line {line}: empty id")));
        }
        let event_time = number(WHAT, line, "event_time", &record[idx[1]])?;
        let event = match &record[idx[2]] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Format(format!(
                    "{WHAT} line {line}: event_indicator must be 0 or 1, got '{other}'"
                )))
            }
        };
        let intermediate_time = match &record[idx[3]] {
            "" => None,
            text => Some(number(WHAT, line, "intermediate_time", text)?),
        };
        let covariates = covariate_columns
            .iter()
            .map(|&c| number(WHAT, line, &headers[c], &record[c]))
            .collect::<Result<Vec<_>>>()?;
        if position.insert(id.clone(), rows.len()).is_some() {
            return Err(Error::Format(format!("{WHAT} line {line}: duplicate subject id {id}")));
        }
        rows.push((line, id, event_time, event, intermediate_time, covariates, Vec::new()));
    }

    const MWHAT: &str = "measurement file";
    let mut rdr = reader(measurements);
    let headers = rdr.headers().map_err(|e| csv_error(MWHAT, e))?.clone();
    let midx = header_index(MWHAT, &headers, &MEASUREMENT_COLUMNS)?;
    let mut seen: BTreeSet<(usize, u64)> = BTreeSet::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(MWHAT, e))?;
        let line = line_of(&record);
        let id = &record[midx[0]];
        let time = number(MWHAT, line, "time", &record[midx[1]])?;
        let value = number(MWHAT, line, "value", &record[midx[2]])?;
        let &k = position
            .get(id)
            .ok_or_else(|| Error::Format(format!("{MWHAT} line {line}: subject {id} is not in the subject file")))?;
        if time < 0.0 {
            return Err(Error::Format(format!("{MWHAT} line {line}: negative time {time} for subject {id}")));
        }
        let event_time = rows[k].2;
        if time > event_time {
            return Err(Error::Format(format!(
                "{MWHAT} line {line}: time {time} is after the event time {event_time} of subject {id}"
            )));
        }
        if !seen.insert((k, time.to_bits())) {
            return Err(Error::Format(format!(
                "{MWHAT} line {line}: duplicate measurement for subject {id} at time {time}"
            )));
        }
        rows[k].6.push(Measurement::new(time, value));
    }
    let subjects = rows
        .into_iter()
        .map(|(line, id, t, event, rho, covs, ms)| {
            SubjectRecord::new(id, t, event, rho, covs, ms)
                .map_err(|e| Error::Format(format!("{WHAT} line {line}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(subjects, covariate_names)?)
}

pub fn write_dataset<S: Write, M: Write>(data: &Dataset, subjects: S, measurements: M) -> Result<()> {
    let mut w = csv::Writer::from_writer(subjects);
    let mut header: Vec<&str> = SUBJECT_COLUMNS.to_vec();
    header.extend(data.covariate_names.iter().map(String::as_str));
    w.write_record(&header).map_err(|e| csv_error("subject file", e))?;
    for s in &data.subjects {
        let mut row = vec![
            s.id.clone(),
            s.event_time.to_string(),
            if s.event { "1" } else { "0" }.to_string(),
            s.intermediate_time.map(|r| r.to_string()).unwrap_or_default(),
        ];
        row.extend(s.covariates.iter().map(f64::to_string));
        w.write_record(&row).map_err(|e| csv_error("subject file", e))?;
    }
    w.flush().map_err(|e| Error::Format(format!("subject file: {e}")))?;

    let mut w = csv::Writer::from_writer(measurements);
    w.write_record(MEASUREMENT_COLUMNS).map_err(|e| csv_error("measurement file", e))?;
    for s in &data.subjects {
        for m in &s.measurements {
            w.write_record([s.id.as_str(), &m.time.to_string(), &m.value.to_string()])
                .map_err(|e| csv_error("measurement file", e))?;
        }
    }
    w.flush().map_err(|e| Error::Format(format!("measurement file: {e}")))?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(subjects: &Path, measurements: &Path) -> Result<Dataset> {
    read_dataset(open(subjects)?, open(measurements)?).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{} / {}: {msg}", subjects.display(), measurements.display())),
        other => other,
    })
}

pub fn save_dataset(data: &Dataset, subjects: &Path, measurements: &Path) -> Result<()> {
    write_dataset(data, create(subjects)?, create(measurements)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Loads a fitted model, rejecting documents written under another schema.
pub fn load_fitted(path: &Path) -> Result<FittedJointModel> {
    let value: serde_json::Value = read_json(path)?;
    match value.get("schema_version").and_then(|v| v.as_str()) {
        Some(FITTED_SCHEMA_VERSION) => {}
        Some(other) => {
            return Err(Error::Format(format!(
                "{}: fitted model schema '{other}' is not supported (expected '{FITTED_SCHEMA_VERSION}')",
                path.display()
            )))
        }
        None => {
            return Err(Error::Format(format!(
                "{}: not a fitted model document (no schema_version)",
                path.display()
            )))
        }
    }
    let fitted: FittedJointModel =
        serde_json::from_value(value).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    fitted.check_schema()?;
    Ok(fitted)
}

/// The generator defaults shipped with the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefaultsDocument {
    pub provenance: String,
    pub defaults: CalibratedDefaults,
}

pub const SHIPPED_DEFAULTS: &str = include_str!("../config/calibrated_defaults.json");

pub fn shipped_defaults() -> Result<DefaultsDocument> {
    serde_json::from_str(SHIPPED_DEFAULTS).map_err(|e| Error::Format(format!("shipped defaults: {e}")))
}

/// Reads generator defaults from a file holding either a defaults document
/// or the bare defaults object.
pub fn load_defaults(path: &Path) -> Result<CalibratedDefaults> {
    let value: serde_json::Value = read_json(path)?;
    let inner = value.get("defaults").cloned().unwrap_or(value);
    serde_json::from_value(inner).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_benchmark_rows<W: Write>(rows: &[BenchmarkRow], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let err = |e| csv_error("benchmark rows", e);
    w.write_record(["replication", "scenario", "model", "anchor_t", "delta_t", "auc", "pe"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.replication.to_string(),
            r.scenario.to_string(),
            r.model.label().to_string(),
            r.anchor_t.to_string(),
            r.delta_t.to_string(),
            opt(r.auc),
            opt(r.pe),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Format(format!("benchmark rows: {e}")))
}

pub fn write_metric_summaries<W: Write>(rows: &[MetricSummary], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let err = |e| csv_error("benchmark summary", e);
    w.write_record(["scenario", "model", "anchor_t", "metric", "n", "min", "q1", "median", "q3", "max"])
        .map_err(err)?;
    for s in rows {
        w.write_record([
            s.scenario.to_string(),
            s.model.label().to_string(),
            s.anchor_t.to_string(),
            s.metric.clone(),
            s.n.to_string(),
            s.min.to_string(),
            s.q1.to_string(),
            s.median.to_string(),
            s.q3.to_string(),
            s.max.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Format(format!("benchmark summary: {e}")))
}

const RISK_COLUMNS: [&str; 4] = ["id", "group", "at_landmark", "at_own_time"];

/// Risk predictions as CSV with columns `id, group, at_landmark,
/// at_own_time`; the landmark and horizon are given separately.
pub fn write_risk_table<W: Write>(table: &RiskPredictionTable, w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let err = |e| csv_error("prediction table", e);
    w.write_record(RISK_COLUMNS).map_err(err)?;
    for r in &table.rows {
        let group = match r.group {
            Group::A => "A",
            Group::B => "B",
        };
        w.write_record([r.id.clone(), group.into(), r.at_landmark.to_string(), opt(r.at_own_time)])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Format(format!("prediction table: {e}")))
}

pub fn read_risk_table<R: Read>(r: R, t: f64, u: f64) -> Result<RiskPredictionTable> {
    const WHAT: &str = "prediction table";
    let mut rdr = reader(r);
    let headers = rdr.headers().map_err(|e| csv_error(WHAT, e))?.clone();
    let idx = header_index(WHAT, &headers, &RISK_COLUMNS)?;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(WHAT, e))?;
        let line = line_of(&record);
        let group = match &record[idx[1]] {
            "A" => Group::A,
            "B" => Group::B,
            other => return Err(Error::Format(format!("{WHAT} line {line}: group must be A or B, got '{other}'"))),
        };
        rows.push(RiskPrediction {
            id: record[idx[0]].to_string(),
            group,
            at_landmark: number(WHAT, line, "at_landmark", &record[idx[2]])?,
            at_own_time: match &record[idx[3]] {
                "" => None,
                text => Some(number(WHAT, line, "at_own_time", text)?),
            },
        });
    }
    Ok(RiskPredictionTable { t, u, rows })
}

pub fn load_risk_table(path: &Path, t: f64, u: f64) -> Result<RiskPredictionTable> {
    read_risk_table(open(path)?, t, u).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_risk_table(table: &RiskPredictionTable, path: &Path) -> Result<()> {
    write_risk_table(table, create(path)?)
}
