//! Versioned binary checkpoints: the magic `MSEQ1`, a length-prefixed JSON
//! header with the training state and tensor manifest, then every tensor
//! as raw little-endian f64 in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Model;
use crate::numerics::{AdamW, Array, ParamEntry};
use crate::training::{EpochLog, TrainConfig, Trainer, TrainingError};

pub const MAGIC: &[u8; 6] = b"MSEQ1\n";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Training(#[from] TrainingError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Role {
    Param,
    FirstMoment,
    SecondMoment,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    role: Role,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TrainConfig,
    history_steps: usize,
    future_steps: usize,
    epoch: usize,
    optimizer_step: u64,
    log: Vec<EpochLog>,
    tensors: Vec<TensorInfo>,
}

fn tensors(trainer: &Trainer) -> Vec<(TensorInfo, &Array)> {
    let entries = trainer.model.params.entries();
    let mut out = Vec::with_capacity(3 * entries.len());
    let groups: [(Role, Vec<&Array>); 3] = [
        (Role::Param, entries.iter().map(|e| &e.value).collect()),
        (Role::FirstMoment, trainer.optimizer.first_moment.iter().collect()),
        (Role::SecondMoment, trainer.optimizer.second_moment.iter().collect()),
    ];
    for (role, arrays) in groups {
        for (e, a) in entries.iter().zip(arrays) {
            out.push((
                TensorInfo {
                    name: e.name.clone(),
                    shape: a.shape().to_vec(),
                    dtype: "f64".into(),
                    role,
                },
                a,
            ));
        }
    }
    out
}

pub fn save_to<W: Write>(mut out: W, trainer: &Trainer) -> Result<(), CheckpointError> {
    let tensors = tensors(trainer);
    let header = Header {
        config: trainer.config.clone(),
        history_steps: trainer.model.config.history_steps,
        future_steps: trainer.model.config.future_steps,
        epoch: trainer.epoch,
        optimizer_step: trainer.optimizer.step,
        log: trainer.log.clone(),
        tensors: tensors.iter().map(|(t, _)| t.clone()).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(std::io::Error::from)?;
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for (_, a) in tensors {
        for x in a.data() {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save(path: &Path, trainer: &Trainer) -> Result<(), CheckpointError> {
    save_to(BufWriter::new(File::create(path)?), trainer)
}

pub fn load_from<R: Read>(mut input: R) -> Result<Trainer, CheckpointError> {
    let mut magic = [0u8; 6];
    input.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 30 {
        return Err(CheckpointError::Corrupt(format!("header of {len} bytes")));
    }
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;

    let model_config = header.config.model_config(header.history_steps, header.future_steps);
    let mut model = Model::new(model_config, header.config.seed).map_err(TrainingError::from)?;
    let mut params = Vec::new();
    let mut first = Vec::new();
    let mut second = Vec::new();
    let mut buf = [0u8; 8];
    for t in &header.tensors {
        if t.dtype != "f64" {
            return Err(CheckpointError::Corrupt(format!("{}: unsupported dtype {}", t.name, t.dtype)));
        }
        let n: usize = t.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            input
                .read_exact(&mut buf)
                .map_err(|_| CheckpointError::Corrupt(format!("{}: truncated data", t.name)))?;
            data.push(f64::from_le_bytes(buf));
        }
        let value = Array::new(t.shape.clone(), data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        match t.role {
            Role::Param => params.push(ParamEntry {
                name: t.name.clone(),
                value,
            }),
            Role::FirstMoment => first.push(value),
            Role::SecondMoment => second.push(value),
        }
    }
    if input.read(&mut buf)? != 0 {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    model
        .params
        .load(params)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    if first.len() != model.params.len() || second.len() != model.params.len() {
        return Err(CheckpointError::Corrupt("optimizer state does not cover every parameter".into()));
    }
    let mut optimizer = AdamW::new(header.config.optimizer_config(), &model.params);
    optimizer.first_moment = first;
    optimizer.second_moment = second;
    optimizer.step = header.optimizer_step;
    Ok(Trainer {
        config: header.config,
        model,
        optimizer,
        epoch: header.epoch,
        log: header.log,
    })
}

pub fn load(path: &Path) -> Result<Trainer, CheckpointError> {
    load_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_fork_scenario, ForkConfig};

    #[test]
    fn round_trip_preserves_everything() {
        let s = generate_fork_scenario(0, &ForkConfig { history_steps: 4, future_steps: 6, ..Default::default() }).unwrap();
        let config = TrainConfig { hidden: 8, heads: 2, layers: 1, modes: 2, epochs: 2, ..Default::default() };
        let mut t = Trainer::new(config, &s).unwrap();
        t.run_epoch(std::slice::from_ref(&s)).unwrap();
        let mut bytes = Vec::new();
        save_to(&mut bytes, &t).unwrap();
        let back = load_from(&bytes[..]).unwrap();
        assert_eq!(back.model.params.entries(), t.model.params.entries());
        assert_eq!(back.optimizer, t.optimizer);
        assert_eq!(back.epoch, 1);
        assert!(matches!(load_from(&bytes[1..]), Err(CheckpointError::BadMagic)));
        assert!(load_from(&bytes[..bytes.len() - 3]).is_err());
    }
}
