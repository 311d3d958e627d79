use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use super::{Scenario, ScenarioError};

const FIELDS: [&str; 6] = ["map", "agents", "focal_index", "future", "latent_branch", "agent_class"];

pub fn write_dataset_to<W: Write>(mut out: W, scenarios: &[Scenario]) -> Result<(), ScenarioError> {
    for s in scenarios {
        let line = serde_json::to_string(s).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// One JSON object per line; empty input writes an empty file.
pub fn write_dataset(path: impl AsRef<Path>, scenarios: &[Scenario]) -> Result<(), ScenarioError> {
    write_dataset_to(BufWriter::new(File::create(path)?), scenarios)
}

fn field<T: DeserializeOwned>(obj: &Map<String, Value>, name: &str, line: usize) -> Result<T, ScenarioError> {
    let value = obj.get(name).ok_or_else(|| ScenarioError::Malformed {
        line,
        field: Some(name.to_string()),
        message: "missing".into(),
    })?;
    T::deserialize(value).map_err(|e| ScenarioError::Malformed {
        line,
        field: Some(name.to_string()),
        message: e.to_string(),
    })
}

fn parse_line(text: &str, line: usize) -> Result<Scenario, ScenarioError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ScenarioError::Malformed {
        line,
        field: None,
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| ScenarioError::Malformed {
        line,
        field: None,
        message: "expected a JSON object".into(),
    })?;
    if let Some(unknown) = obj.keys().find(|k| !FIELDS.contains(&k.as_str())) {
        return Err(ScenarioError::Malformed {
            line,
            field: Some(unknown.clone()),
            message: "unknown field".into(),
        });
    }
    let scenario = Scenario {
        map: field(obj, "map", line)?,
        agents: field(obj, "agents", line)?,
        focal_index: field(obj, "focal_index", line)?,
        future: field(obj, "future", line)?,
        latent_branch: field(obj, "latent_branch", line)?,
        agent_class: field(obj, "agent_class", line)?,
    };
    scenario.validate().map_err(|e| ScenarioError::Malformed {
        line,
        field: None,
        message: e.to_string(),
    })?;
    Ok(scenario)
}

/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn read_dataset_from<R: Read>(input: R) -> Result<Vec<Scenario>, ScenarioError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Scenario>, ScenarioError> {
    read_dataset_from(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupt_line_names_line_one() {
        let err = read_dataset_from("{".as_bytes()).unwrap_err();
        assert!(matches!(err, ScenarioError::Malformed { line: 1, .. }), "{err}");
        assert!(err.to_string().starts_with("line 1"));
    }

    #[test]
    fn wrong_field_type_names_the_field() {
        let text = r#"{"map":[],"agents":[],"focal_index":"zero","future":[],"latent_branch":{"index":0,"prior":1.0},"agent_class":"vehicle"}"#;
        let err = read_dataset_from(format!("\n{text}\n").as_bytes()).unwrap_err();
        match err {
            ScenarioError::Malformed { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field.as_deref(), Some("focal_index"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn empty_input_is_empty_dataset() {
        let mut buf = Vec::new();
        write_dataset_to(&mut buf, &[]).unwrap();
        assert!(buf.is_empty());
        assert!(read_dataset_from(buf.as_slice()).unwrap().is_empty());
    }
}
