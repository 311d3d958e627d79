//! Benchmark-style evaluation: miss rate, mAP and soft mAP, minADE, minFDE
//! and Brier-minFDE over a set of multimodal predictions.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::Point;
use crate::training::{average_displacement, final_displacement, MatchCriterion, TrainingError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no records to evaluate")]
    Empty,
    #[error("record {id}: {message}")]
    Record { id: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One scenario's prediction, ground truth and match criterion.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub scenario_id: usize,
    pub trajectories: Vec<Vec<Point>>,
    pub confidences: Vec<f64>,
    pub truth: Vec<Point>,
    pub criterion: MatchCriterion,
}

impl EvalRecord {
    fn check(&self) -> Result<(), MetricsError> {
        let bad = |message: String| Err(MetricsError::Record { id: self.scenario_id, message });
        if self.trajectories.is_empty() {
            return bad("no modes".into());
        }
        if self.trajectories.len() != self.confidences.len() {
            return bad(format!(
                "{} trajectories but {} confidences",
                self.trajectories.len(),
                self.confidences.len()
            ));
        }
        if self.confidences.iter().any(|c| !c.is_finite()) {
            return bad("non-finite confidence".into());
        }
        if self.trajectories.iter().any(|t| t.len() != self.truth.len()) || self.truth.is_empty() {
            return bad(format!("trajectory length differs from the {}-step ground truth", self.truth.len()));
        }
        Ok(())
    }

    fn record_err(&self, e: TrainingError) -> MetricsError {
        MetricsError::Record {
            id: self.scenario_id,
            message: e.to_string(),
        }
    }

    /// Match flag for every mode.
    pub fn matches(&self) -> Result<Vec<bool>, MetricsError> {
        self.check()?;
        self.trajectories
            .iter()
            .map(|t| self.criterion.is_match(t, &self.truth).map_err(|e| self.record_err(e)))
            .collect()
    }

    fn displacements(&self) -> Result<Vec<(f64, f64)>, MetricsError> {
        self.check()?;
        self.trajectories
            .iter()
            .map(|t| {
                let ade = average_displacement(t, &self.truth).map_err(|e| self.record_err(e))?;
                let fde = final_displacement(t, &self.truth).map_err(|e| self.record_err(e))?;
                Ok((ade, fde))
            })
            .collect()
    }

    /// Same record restricted to its first `k` modes.
    pub fn truncated(&self, k: usize) -> Self {
        Self {
            trajectories: self.trajectories.iter().take(k).cloned().collect(),
            confidences: self.confidences.iter().take(k).copied().collect(),
            ..self.clone()
        }
    }
}

fn non_empty(records: &[EvalRecord]) -> Result<(), MetricsError> {
    if records.is_empty() {
        Err(MetricsError::Empty)
    } else {
        Ok(())
    }
}

fn all_matches(records: &[EvalRecord]) -> Result<Vec<Vec<bool>>, MetricsError> {
    records.par_iter().map(EvalRecord::matches).collect()
}

/// Fraction of records where no mode matches.
pub fn miss_rate(records: &[EvalRecord]) -> Result<f64, MetricsError> {
    non_empty(records)?;
    let matches = all_matches(records)?;
    Ok(miss_rate_from(&matches))
}

fn miss_rate_from(matches: &[Vec<bool>]) -> f64 {
    let misses = matches.iter().filter(|m| !m.iter().any(|&x| x)).count();
    misses as f64 / matches.len() as f64
}

/// `(minADE, minFDE)` averaged over records.
pub fn min_displacement(records: &[EvalRecord]) -> Result<(f64, f64), MetricsError> {
    non_empty(records)?;
    let d: Vec<Vec<(f64, f64)>> = records.par_iter().map(EvalRecord::displacements).collect::<Result<_, _>>()?;
    Ok(min_displacement_from(&d))
}

fn min_displacement_from(d: &[Vec<(f64, f64)>]) -> (f64, f64) {
    let n = d.len() as f64;
    let ade: f64 = d.iter().map(|r| r.iter().map(|x| x.0).fold(f64::INFINITY, f64::min)).sum();
    let fde: f64 = d.iter().map(|r| r.iter().map(|x| x.1).fold(f64::INFINITY, f64::min)).sum();
    (ade / n, fde / n)
}

/// minFDE plus `(1 - p)^2` for the FDE-minimizing mode's confidence `p`.
pub fn brier_min_fde(records: &[EvalRecord]) -> Result<f64, MetricsError> {
    non_empty(records)?;
    for r in records {
        if r.confidences.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            return Err(MetricsError::Record {
                id: r.scenario_id,
                message: "confidence outside [0, 1]".into(),
            });
        }
    }
    let d: Vec<Vec<(f64, f64)>> = records.par_iter().map(EvalRecord::displacements).collect::<Result<_, _>>()?;
    Ok(brier_from(records, &d))
}

fn brier_from(records: &[EvalRecord], d: &[Vec<(f64, f64)>]) -> f64 {
    let total: f64 = records
        .iter()
        .zip(d)
        .map(|(r, modes)| {
            let mut best = 0;
            for (k, m) in modes.iter().enumerate() {
                if m.1 < modes[best].1 {
                    best = k;
                }
            }
            modes[best].1 + (1.0 - r.confidences[best]).powi(2)
        })
        .sum();
    total / records.len() as f64
}

/// Average precision of a ranked list of true/false positive flags against
/// `positives` ground-truth objects, using the interpolated precision
/// envelope.
pub fn average_precision(ranked: &[bool], positives: usize) -> f64 {
    if positives == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(ranked.len());
    let mut tp = 0usize;
    for (i, &hit) in ranked.iter().enumerate() {
        tp += usize::from(hit);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    let mut envelope = 0.0f64;
    let mut ap = 0.0;
    for i in (0..ranked.len()).rev() {
        envelope = envelope.max(precision[i]);
        if ranked[i] {
            ap += envelope;
        }
    }
    ap / positives as f64
}

fn ranking(records: &[EvalRecord], matches: &[Vec<bool>], soft: bool) -> Vec<bool> {
    let mut pool: Vec<(f64, usize, usize)> = records
        .iter()
        .enumerate()
        .flat_map(|(r, rec)| rec.confidences.iter().enumerate().map(move |(k, &c)| (c, r, k)))
        .collect();
    pool.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut claimed = vec![false; records.len()];
    let mut ranked = Vec::with_capacity(pool.len());
    for (_, r, k) in pool {
        if !matches[r][k] {
            ranked.push(false);
        } else if !claimed[r] {
            claimed[r] = true;
            ranked.push(true);
        } else if !soft {
            ranked.push(false);
        }
    }
    ranked
}

/// Detection-style AP over all `(record, mode)` predictions. Duplicate
/// matches of an already detected record count as false positives, or are
/// left out of the ranking when `soft` is set.
pub fn mean_average_precision(records: &[EvalRecord], soft: bool) -> Result<f64, MetricsError> {
    non_empty(records)?;
    let matches = all_matches(records)?;
    Ok(average_precision(&ranking(records, &matches, soft), records.len()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub miss_rate: f64,
    pub map: f64,
    pub soft_map: f64,
    pub min_ade: f64,
    pub min_fde: f64,
    pub brier_min_fde: f64,
}

pub const REPORT_COLUMNS: &str = "MR,mAP,soft_mAP,minADE,minFDE,b_minFDE";

impl MetricsReport {
    pub fn csv_fields(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.miss_rate, self.map, self.soft_map, self.min_ade, self.min_fde, self.brier_min_fde
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "MR {:.4}  mAP {:.4}  soft mAP {:.4}  minADE {:.3} m  minFDE {:.3} m  b-minFDE {:.3} m",
            self.miss_rate, self.map, self.soft_map, self.min_ade, self.min_fde, self.brier_min_fde
        )
    }
}

/// Every metric in one pass.
pub fn evaluate(records: &[EvalRecord]) -> Result<MetricsReport, MetricsError> {
    non_empty(records)?;
    let matches = all_matches(records)?;
    let d: Vec<Vec<(f64, f64)>> = records.par_iter().map(EvalRecord::displacements).collect::<Result<_, _>>()?;
    let (min_ade, min_fde) = min_displacement_from(&d);
    Ok(MetricsReport {
        miss_rate: miss_rate_from(&matches),
        map: average_precision(&ranking(records, &matches, false), records.len()),
        soft_map: average_precision(&ranking(records, &matches, true), records.len()),
        min_ade,
        min_fde,
        brier_min_fde: brier_from(records, &d),
    })
}

/// Metrics rows keyed by mode count, as CSV with a `modes` column first.
pub fn write_report_csv<W: Write>(mut out: W, rows: &[(usize, MetricsReport)]) -> std::io::Result<()> {
    writeln!(out, "modes,{REPORT_COLUMNS}")?;
    for (k, r) in rows {
        writeln!(out, "{k},{}", r.csv_fields())?;
    }
    Ok(())
}
