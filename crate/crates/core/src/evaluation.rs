//! Predictive accuracy of dynamic predictions in the presence of an
//! intermediate event: a time-dependent AUC over subject pairs within the
//! groups defined by the intermediate-event status at `t`, and the expected
//! prediction error with censoring-adjusted terms.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SubjectRecord};
use crate::error::{Error, Result};
use crate::prelude::*;

/// Intermediate-event status at the landmark time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    /// No intermediate event by `t`.
    A,
    /// Intermediate event at or before `t`.
    B,
}

impl Group {
    pub fn of(subject: &SubjectRecord, t: f64) -> Self {
        match subject.intermediate_time {
            Some(rho) if t >= rho => Self::B,
            _ => Self::A,
        }
    }
}

/// Whether `π(u | T_i)` is needed for a subject: censored within `[t, u]`.
pub fn needs_own_time_prediction(subject: &SubjectRecord, t: f64, u: f64) -> bool {
    !subject.event && subject.event_time >= t && subject.event_time <= u
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskPrediction {
    pub id: String,
    pub group: Group,
    /// `π(u | t)` under the subject's status at `t`.
    pub at_landmark: f64,
    /// `π(u | T_i)`, present for subjects censored within the window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_own_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskPredictionTable {
    pub t: f64,
    /// Horizon `u = t + Δt`.
    pub u: f64,
    pub rows: Vec<RiskPrediction>,
}

impl RiskPredictionTable {
    pub fn get(&self, id: &str) -> Option<&RiskPrediction> {
        self.rows.iter().find(|r| r.id == id)
    }

    fn check_probability(id: &str, p: f64) -> Result<f64> {
        if (0.0..=1.0).contains(&p) {
            Ok(p)
        } else {
            Err(Error::Evaluation(format!("prediction {p} for subject {id} is not a probability")))
        }
    }

    /// Predictions aligned with the subjects at risk at `t`, in dataset order.
    /// `strict` selects `T > t` (pairs) rather than `T ≥ t` (prediction error).
    fn at_risk<'a>(&'a self, data: &'a Dataset, strict: bool) -> Result<Vec<Entry<'a>>> {
        let t = self.t;
        let mut out = Vec::new();
        for s in &data.subjects {
            let at_risk = if strict { s.event_time > t } else { s.event_time >= t };
            if !at_risk {
                continue;
            }
            let row = self.get(&s.id).ok_or_else(|| {
                Error::Evaluation(format!("no prediction for subject {} at risk at t = {t}", s.id))
            })?;
            let group = Group::of(s, t);
            if row.group != group {
                return Err(Error::Evaluation(format!(
                    "subject {} is tagged {:?} but its intermediate-event status at t = {t} is {group:?}",
                    s.id, row.group
                )));
            }
            let own = if needs_own_time_prediction(s, t, self.u) {
                let p = row.at_own_time.ok_or_else(|| {
                    Error::Evaluation(format!(
                        "subject {} is censored within ({t}, {}] and needs a prediction from its own censoring time",
                        s.id, self.u
                    ))
                })?;
                Some(Self::check_probability(&s.id, p)?)
            } else {
                None
            };
            out.push(Entry {
                subject: s,
                group,
                pi: Self::check_probability(&s.id, row.at_landmark)?,
                own,
            });
        }
        Ok(out)
    }
}

struct Entry<'a> {
    subject: &'a SubjectRecord,
    group: Group,
    pi: f64,
    own: Option<f64>,
}

/// Concordance-weighted pair sums for one class of pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PairTally {
    pub pairs: usize,
    /// `Σ ν · score` with score 1 for `π_i < π_j` and 0.5 for ties.
    pub numerator: f64,
    /// `Σ ν`.
    pub denominator: f64,
}

impl PairTally {
    fn add(&mut self, weight: f64, pi_i: f64, pi_j: f64) {
        self.pairs += 1;
        self.denominator += weight;
        let score = if pi_i < pi_j {
            1.0
        } else if pi_i == pi_j {
            0.5
        } else {
            0.0
        };
        self.numerator += weight * score;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub t: f64,
    pub delta_t: f64,
    pub u: f64,
    /// Pooled concordance over all pair classes and both groups; `None` when
    /// there are no comparable pairs.
    pub auc: Option<f64>,
    /// Contribution of each pair class; these add up to `auc`.
    pub components: Option<[f64; 4]>,
    /// Tallies per pair class, groups A and B combined.
    pub tallies: [PairTally; 4],
    pub auc_a: Option<f64>,
    pub auc_b: Option<f64>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeReport {
    pub t: f64,
    pub u: f64,
    pub pe: f64,
    pub pe_a: Option<f64>,
    pub pe_b: Option<f64>,
    pub n_at_risk_a: usize,
    pub n_at_risk_b: usize,
}

/// AUC and prediction error at one `(t, Δt)` anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub t: f64,
    pub delta_t: f64,
    pub u: f64,
    pub auc: Option<f64>,
    pub auc_components: Option<[f64; 4]>,
    pub pair_counts: [usize; 4],
    pub auc_a: Option<f64>,
    pub auc_b: Option<f64>,
    pub pe: Option<f64>,
    pub pe_a: Option<f64>,
    pub pe_b: Option<f64>,
    pub n_at_risk_a: usize,
    pub n_at_risk_b: usize,
    pub diagnostics: Vec<String>,
}

fn check_anchor(table: &RiskPredictionTable, t: f64, delta_t: f64) -> Result<f64> {
    if !(delta_t > 0.0) || !t.is_finite() {
        return Err(Error::Evaluation(format!("invalid anchor t = {t}, Δt = {delta_t}")));
    }
    let u = t + delta_t;
    if table.t != t || (table.u - u).abs() > 1e-9 * u.abs().max(1.0) {
        return Err(Error::Evaluation(format!(
            "prediction table is for t = {}, u = {} but the anchor is t = {t}, u = {u}",
            table.t, table.u
        )));
    }
    Ok(u)
}

pub fn auc(data: &Dataset, table: &RiskPredictionTable, t: f64, delta_t: f64) -> Result<AucReport> {
    let u = check_anchor(table, t, delta_t)?;
    let entries = table.at_risk(data, true)?;
    let mut by_group = [[PairTally::default(); 4], [PairTally::default(); 4]];
    for (ii, i) in entries.iter().enumerate() {
        let (ti, di) = (i.subject.event_time, i.subject.event);
        if ti > u {
            continue;
        }
        let g = i.group as usize;
        for (jj, j) in entries.iter().enumerate() {
            if ii == jj || j.group != i.group {
                continue;
            }
            let (tj, dj) = (j.subject.event_time, j.subject.event);
            let (class, weight) = if tj > u {
                if di {
                    (0, 1.0)
                } else {
                    (1, 1.0 - i.own.unwrap_or(1.0))
                }
            } else if ti < tj && !dj {
                let nu3 = j.own.unwrap_or(1.0);
                if di {
                    (2, nu3)
                } else {
                    (3, (1.0 - i.own.unwrap_or(1.0)) * nu3)
                }
            } else {
                continue;
            };
            by_group[g][class].add(weight, i.pi, j.pi);
        }
    }
    let mut tallies = [PairTally::default(); 4];
    for g in &by_group {
        for (m, tally) in g.iter().enumerate() {
            tallies[m].pairs += tally.pairs;
            tallies[m].numerator += tally.numerator;
            tallies[m].denominator += tally.denominator;
        }
    }
    let ratio = |ts: &[PairTally; 4]| {
        let den: f64 = ts.iter().map(|x| x.denominator).sum();
        let num: f64 = ts.iter().map(|x| x.numerator).sum();
        (den > 0.0).then(|| num / den)
    };
    let den: f64 = tallies.iter().map(|x| x.denominator).sum();
    let mut diagnostics = Vec::new();
    let auc = ratio(&tallies);
    if auc.is_none() {
        diagnostics.push(format!(
            "AUC undefined at t = {t}, Δt = {delta_t}: no comparable pairs among {} subjects at risk",
            entries.len()
        ));
    }
    let components = auc.map(|_| core::array::from_fn(|m| tallies[m].numerator / den));
    Ok(AucReport {
        t,
        delta_t,
        u,
        auc,
        components,
        tallies,
        auc_a: ratio(&by_group[0]),
        auc_b: ratio(&by_group[1]),
        diagnostics,
    })
}

pub fn prediction_error_report(data: &Dataset, table: &RiskPredictionTable, t: f64, u: f64) -> Result<PeReport> {
    if !(u > t) {
        return Err(Error::Evaluation(format!("horizon u = {u} must exceed t = {t}")));
    }
    check_anchor(table, t, u - t)?;
    let entries = table.at_risk(data, false)?;
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for e in &entries {
        let (ti, di, pi) = (e.subject.event_time, e.subject.event, e.pi);
        let loss = if ti >= u {
            (1.0 - pi) * (1.0 - pi)
        } else if di {
            pi * pi
        } else {
            let own = e.own.unwrap_or(1.0);
            own * (1.0 - pi) * (1.0 - pi) + (1.0 - own) * pi * pi
        };
        sums[e.group as usize] += loss;
        counts[e.group as usize] += 1;
    }
    let n = counts[0] + counts[1];
    if n == 0 {
        return Err(Error::Evaluation(format!("no subjects at risk at t = {t}")));
    }
    let per = |g: usize| (counts[g] > 0).then(|| sums[g] / counts[g] as f64);
    Ok(PeReport {
        t,
        u,
        pe: (sums[0] + sums[1]) / n as f64,
        pe_a: per(0),
        pe_b: per(1),
        n_at_risk_a: counts[0],
        n_at_risk_b: counts[1],
    })
}

pub fn prediction_error(data: &Dataset, table: &RiskPredictionTable, t: f64, u: f64) -> Result<f64> {
    prediction_error_report(data, table, t, u).map(|r| r.pe)
}

/// AUC and prediction error at `(t, t + Δt)`. A failure of either metric is
/// recorded as a diagnostic with the metric left empty.
pub fn evaluate(data: &Dataset, table: &RiskPredictionTable, t: f64, delta_t: f64) -> Result<MetricReport> {
    let a = auc(data, table, t, delta_t)?;
    let mut diagnostics = a.diagnostics;
    let pe = match prediction_error_report(data, table, t, t + delta_t) {
        Ok(r) => Some(r),
        Err(e) => {
            diagnostics.push(e.to_string());
            None
        }
    };
    Ok(MetricReport {
        t,
        delta_t,
        u: a.u,
        auc: a.auc,
        auc_components: a.components,
        pair_counts: core::array::from_fn(|m| a.tallies[m].pairs),
        auc_a: a.auc_a,
        auc_b: a.auc_b,
        pe: pe.as_ref().map(|r| r.pe),
        pe_a: pe.as_ref().and_then(|r| r.pe_a),
        pe_b: pe.as_ref().and_then(|r| r.pe_b),
        n_at_risk_a: pe.as_ref().map_or(0, |r| r.n_at_risk_a),
        n_at_risk_b: pe.as_ref().map_or(0, |r| r.n_at_risk_b),
        diagnostics,
    })
}
