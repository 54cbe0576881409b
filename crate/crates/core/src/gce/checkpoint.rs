// SPDX-License-Identifier: Apache-2.0

//! Checkpoint files: a magic/version line, one JSON header line (network
//! architecture, training config, history, parameter table), then every
//! parameter as little-endian `f64` in table order.
//!
//! Wall-clock times stay out of the checkpoint so that identical training
//! runs produce identical bytes; they go to the separate training log.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::{ClassifierConfig, EpochRecord, ModelRole, TrainedModel};
use crate::error::{Error, Result};
use crate::nn::{Architecture, Network, Param};

const MAGIC: &str = "BIASAMP-CKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: String,
    input_size: usize,
    num_classes: usize,
    role: ModelRole,
    config: ClassifierConfig,
    history: Vec<HistoryEntry>,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct HistoryEntry {
    epoch: usize,
    mean_loss: f64,
    train_acc: f64,
    lr: f64,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn checkpoint_bytes(model: &TrainedModel) -> Vec<u8> {
    let net = &model.network;
    let header = Header {
        architecture: net.arch.id(),
        input_size: net.input_size,
        num_classes: net.num_classes,
        role: model.role,
        config: model.config.clone(),
        history: model
            .history
            .iter()
            .map(|h| HistoryEntry {
                epoch: h.epoch,
                mean_loss: h.mean_loss,
                train_acc: h.train_acc,
                lr: h.lr,
            })
            .collect(),
        params: net
            .params
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect(),
    };
    let mut out = format!("{MAGIC} {VERSION}\n").into_bytes();
    out.extend(serde_json::to_vec(&header).expect("header serializes"));
    out.push(b'\n');
    for p in &net.params {
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Write the checkpoint and record its path in `weights_ref`.
pub fn save_checkpoint(model: &mut TrainedModel, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, checkpoint_bytes(model)).map_err(|e| Error::io(path, e))?;
    model.weights_ref = Some(path.to_path_buf());
    Ok(())
}

/// Content hash of the checkpoint bytes.
pub fn model_hash(model: &TrainedModel) -> String {
    crate::hashing::content_hash(&checkpoint_bytes(model))
}

/// One JSON line per epoch: epoch, mean loss, accuracy, lr, wall time.
pub fn write_training_log(model: &TrainedModel, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for h in &model.history {
        out.extend(serde_json::to_vec(h).expect("serializable"));
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel> {
    let err = |m: String| Error::Checkpoint {
        path: path.to_path_buf(),
        message: m,
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);

    let mut magic = String::new();
    reader.read_line(&mut magic).map_err(|e| Error::io(path, e))?;
    let version = magic
        .trim_end()
        .strip_prefix(MAGIC)
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| err("not a checkpoint file".into()))?;
    if version != VERSION {
        return Err(err(format!("unsupported checkpoint version {version}")));
    }

    let mut header_line = String::new();
    reader.read_line(&mut header_line).map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_str(&header_line).map_err(|e| err(e.to_string()))?;
    let arch: Architecture = header.architecture.parse()?;

    let mut body = Vec::new();
    reader.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    let mut values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));

    let expected = Network::new(arch, header.input_size, header.num_classes, 0)?;
    if expected.params.len() != header.params.len() {
        return Err(err("parameter table does not match architecture".into()));
    }
    let mut params = Vec::with_capacity(header.params.len());
    for (entry, template) in header.params.into_iter().zip(&expected.params) {
        if entry.name != template.name || entry.shape != template.shape {
            return Err(err(format!("unexpected parameter {} {:?}", entry.name, entry.shape)));
        }
        let len: usize = entry.shape.iter().product();
        let data: Vec<f64> = values.by_ref().take(len).collect();
        if data.len() != len {
            return Err(err(format!("truncated data for {}", entry.name)));
        }
        params.push(Param {
            name: entry.name,
            shape: entry.shape,
            data,
        });
    }
    if body.len() % 8 != 0 || values.next().is_some() {
        return Err(err("trailing bytes after parameter data".into()));
    }

    Ok(TrainedModel {
        network: Network {
            arch,
            input_size: header.input_size,
            num_classes: header.num_classes,
            params,
        },
        config: header.config,
        history: header
            .history
            .into_iter()
            .map(|h| EpochRecord {
                epoch: h.epoch,
                mean_loss: h.mean_loss,
                train_acc: h.train_acc,
                lr: h.lr,
            })
            .collect(),
        role: header.role,
        weights_ref: Some(path.to_path_buf()),
    })
}
