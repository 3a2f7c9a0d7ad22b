//! Subject records and the two time transforms induced by the intermediate
//! event: the indicator `R(t)` and the time elapsed since the event `t₊`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prelude::*;

/// `R(t)`: whether the intermediate event has happened by `t`. The boundary
/// is closed, so `R(ρ) = 1`.
#[inline]
pub fn intermediate_indicator(t: f64, rho: Option<f64>) -> bool {
    matches!(rho, Some(r) if t >= r)
}

/// `t₊ = max(0, t − ρ)`, zero when there is no intermediate event.
#[inline]
pub fn time_since_intermediate(t: f64, rho: Option<f64>) -> f64 {
    match rho {
        Some(r) if t > r => t - r,
        _ => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub time: f64,
    pub value: f64,
}

impl Measurement {
    pub fn new(time: f64, value: f64) -> Self {
        Self { time, value }
    }
}

/// One subject: observed time `T = min(T*, C)`, event indicator, optional
/// intermediate-event time, baseline covariates and biomarker measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub event_time: f64,
    pub event: bool,
    pub intermediate_time: Option<f64>,
    pub covariates: Vec<f64>,
    pub measurements: Vec<Measurement>,
}

impl SubjectRecord {
    /// Builds a record, sorting measurements by time and checking the
    /// invariants.
    pub fn new(
        id: impl Into<String>,
        event_time: f64,
        event: bool,
        intermediate_time: Option<f64>,
        covariates: Vec<f64>,
        mut measurements: Vec<Measurement>,
    ) -> Result<Self> {
        measurements.sort_by(|a, b| a.time.total_cmp(&b.time));
        let record = Self {
            id: id.into(),
            event_time,
            event,
            intermediate_time,
            covariates,
            measurements,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.id;
        if !(self.event_time >= 0.0) || !self.event_time.is_finite() {
            return Err(Error::InvalidData(format!(
                "subject {id}: event time {} must be finite and nonnegative",
                self.event_time
            )));
        }
        if let Some(rho) = self.intermediate_time {
            if !(rho > 0.0) || !rho.is_finite() {
                return Err(Error::InvalidData(format!(
                    "subject {id}: intermediate time {rho} must be finite and positive"
                )));
            }
        }
        if let Some(c) = self.covariates.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidData(format!("subject {id}: non-finite covariate {c}")));
        }
        let mut previous = f64::NEG_INFINITY;
        for m in &self.measurements {
            if !(m.time >= 0.0) || !m.time.is_finite() || !m.value.is_finite() {
                return Err(Error::InvalidData(format!(
                    "subject {id}: invalid measurement ({}, {})",
                    m.time, m.value
                )));
            }
            if m.time < previous {
                return Err(Error::InvalidData(format!(
                    "subject {id}: measurement times must be nondecreasing"
                )));
            }
            if m.time > self.event_time {
                return Err(Error::InvalidData(format!(
                    "subject {id}: measurement time {} exceeds event time {}",
                    m.time, self.event_time
                )));
            }
            previous = m.time;
        }
        Ok(())
    }

    pub fn intermediate_indicator(&self, t: f64) -> bool {
        intermediate_indicator(t, self.intermediate_time)
    }

    pub fn time_since_intermediate(&self, t: f64) -> f64 {
        time_since_intermediate(t, self.intermediate_time)
    }

    /// Measurements taken at or before `t`.
    pub fn history_until(&self, t: f64) -> &[Measurement] {
        let end = self.measurements.partition_point(|m| m.time <= t);
        &self.measurements[..end]
    }

    /// Measurements strictly before the intermediate event (all of them when
    /// there is none).
    pub fn pre_event_measurements(&self) -> &[Measurement] {
        match self.intermediate_time {
            Some(rho) => {
                let end = self.measurements.partition_point(|m| m.time < rho);
                &self.measurements[..end]
            }
            None => &self.measurements,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub subjects: Vec<SubjectRecord>,
    pub covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(subjects: Vec<SubjectRecord>, covariate_names: Vec<String>) -> Result<Self> {
        let dataset = Self {
            subjects,
            covariate_names,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.covariate_names.len();
        let mut ids: Vec<&str> = Vec::with_capacity(self.subjects.len());
        for s in &self.subjects {
            s.validate()?;
            if s.covariates.len() != dim {
                return Err(Error::InvalidData(format!(
                    "subject {}: expected {dim} covariates, found {}",
                    s.id,
                    s.covariates.len()
                )));
            }
            ids.push(&s.id);
        }
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidData(format!("duplicate subject id {}", w[0])));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SubjectRecord> {
        self.subjects.iter().find(|s| s.id == id)
    }

    pub fn measurement_times(&self) -> Vec<f64> {
        self.subjects
            .iter()
            .flat_map(|s| s.measurements.iter().map(|m| m.time))
            .collect()
    }

    pub fn event_times(&self) -> Vec<f64> {
        self.subjects.iter().filter(|s| s.event).map(|s| s.event_time).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indicator_examples() {
        assert!(!intermediate_indicator(2.0, Some(5.0)));
        assert!(intermediate_indicator(5.0, Some(5.0)));
        assert!(!intermediate_indicator(7.0, None));
    }

    #[test]
    fn time_since_examples() {
        assert_eq!(time_since_intermediate(3.0, Some(5.0)), 0.0);
        assert_eq!(time_since_intermediate(5.0, Some(5.0)), 0.0);
        assert_eq!(time_since_intermediate(7.5, Some(5.0)), 2.5);
        assert_eq!(time_since_intermediate(7.5, None), 0.0);
    }

    #[test]
    fn rejects_measurement_after_event() {
        let err = SubjectRecord::new("a", 3.0, true, None, vec![], vec![Measurement::new(4.0, 1.0)]);
        assert!(matches!(err, Err(Error::InvalidData(msg)) if msg.contains("exceeds event time")));
    }

    #[test]
    fn keeps_measurement_at_event_time() {
        let s = SubjectRecord::new("a", 3.0, true, None, vec![], vec![Measurement::new(3.0, 1.0)]);
        assert!(s.is_ok());
    }

    #[test]
    fn sorts_measurements_and_filters_history() {
        let s = SubjectRecord::new(
            "a",
            10.0,
            false,
            Some(4.0),
            vec![],
            vec![Measurement::new(5.0, 2.0), Measurement::new(1.0, 1.0), Measurement::new(4.0, 3.0)],
        )
        .unwrap();
        assert_eq!(s.measurements[0].time, 1.0);
        assert_eq!(s.history_until(4.0).len(), 2);
        assert_eq!(s.pre_event_measurements().len(), 1);
    }

    #[test]
    fn dataset_rejects_duplicates_and_ragged_covariates() {
        let a = SubjectRecord::new("a", 1.0, false, None, vec![1.0], vec![]).unwrap();
        let b = SubjectRecord::new("a", 2.0, false, None, vec![1.0], vec![]).unwrap();
        assert!(Dataset::new(vec![a.clone(), b], vec!["x".into()]).is_err());
        let c = SubjectRecord::new("c", 2.0, false, None, vec![], vec![]).unwrap();
        assert!(Dataset::new(vec![a, c], vec!["x".into()]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn indicator_monotone_and_time_since_piecewise_linear(
            rho in 0.01f64..50.0, t1 in 0.0f64..60.0, dt in 0.0f64..10.0
        ) {
            let t2 = t1 + dt;
            let (r1, r2) = (intermediate_indicator(t1, Some(rho)), intermediate_indicator(t2, Some(rho)));
            proptest::prop_assert!(r2 as u8 >= r1 as u8);
            let (s1, s2) = (time_since_intermediate(t1, Some(rho)), time_since_intermediate(t2, Some(rho)));
            proptest::prop_assert!(s1 >= 0.0);
            proptest::prop_assert!(s2 - s1 >= -1e-12 && s2 - s1 <= dt + 1e-12);
            if t1 >= rho {
                proptest::prop_assert!((s2 - s1 - dt).abs() < 1e-9);
            }
        }
    }
}
