//! Prediction files: one JSON record per scenario and line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::{AgentClass, Point};

#[derive(Debug, Error)]
pub enum PredictionError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub scenario_id: usize,
    /// `[K][T̂]` points in the global frame.
    pub trajectories: Vec<Vec<Point>>,
    pub confidences: Vec<f64>,
    pub agent_class: AgentClass,
    /// Focal speed at the last observed step, for velocity-aware matching.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focal_speed: Option<f64>,
    /// Focal heading at the last observed step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focal_heading: Option<f64>,
}

pub fn write_predictions_to<W: Write>(mut out: W, records: &[PredictionRecord]) -> Result<(), PredictionError> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), PredictionError> {
    write_predictions_to(BufWriter::new(File::create(path)?), records)
}

pub fn read_predictions_from<R: BufRead>(input: R) -> Result<Vec<PredictionRecord>, PredictionError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord = serde_json::from_str(&line).map_err(|e| PredictionError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if record.trajectories.len() != record.confidences.len() {
            return Err(PredictionError::Malformed {
                line: i + 1,
                message: format!(
                    "{} trajectories but {} confidences",
                    record.trajectories.len(),
                    record.confidences.len()
                ),
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, PredictionError> {
    read_predictions_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_optional_keys() {
        let r = PredictionRecord {
            scenario_id: 3,
            trajectories: vec![vec![[0.1, 0.2], [1.0 / 3.0, -2.5]]],
            confidences: vec![0.7],
            agent_class: AgentClass::Cyclist,
            focal_speed: None,
            focal_heading: Some(0.3),
        };
        let mut buf = Vec::new();
        write_predictions_to(&mut buf, std::slice::from_ref(&r)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(!text.contains("focal_speed"));
        assert_eq!(read_predictions_from(&buf[..]).unwrap(), vec![r]);
    }

    #[test]
    fn bad_line_is_located() {
        let text = "\n{\"scenario_id\": 1}\n";
        let err = read_predictions_from(text.as_bytes()).unwrap_err().to_string();
        assert!(err.starts_with("line 2"), "{err}");
    }
}
