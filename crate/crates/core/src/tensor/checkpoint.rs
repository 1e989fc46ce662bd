//! "SZG1" parameter checkpoints.
//!
//! Layout: magic `SZG1`, `u32` little-endian header length, JSON header
//! `{role, seed, network, tensors: [{name, shape}]}`, then every tensor's values
//! as little-endian `f64` in header order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{LayerParams, Network, Parameters};
use super::Tensor;
use crate::container;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SZG1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointRole {
    Generator,
    Discriminator,
    Trunk,
    Head,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    role: CheckpointRole,
    seed: u64,
    network: Network,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub role: CheckpointRole,
    pub network: Network,
    pub params: Parameters,
}

pub fn encode_checkpoint(role: CheckpointRole, network: &Network, params: &Parameters) -> Result<Vec<u8>> {
    network.check_params(params)?;
    let tensors = params.tensors();
    let header = Header {
        role,
        seed: params.seed,
        network: network.clone(),
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let payload: Vec<f64> = tensors.iter().flat_map(|(_, t)| t.data().iter().copied()).collect();
    container::encode(MAGIC, &header, &payload)
}

pub fn write_checkpoint(path: &Path, role: CheckpointRole, network: &Network, params: &Parameters) -> Result<()> {
    let bytes = encode_checkpoint(role, network, params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
    let (header, payload): (Header, Vec<f64>) = container::decode(path, bytes, MAGIC, false)?;
    let mut offset = 0;
    let mut halves: BTreeMap<String, (Option<Tensor>, Option<Tensor>)> = BTreeMap::new();
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let data = payload
            .get(offset..offset + n)
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                offset: 0,
                message: format!("payload too short for {}", entry.name),
            })?
            .to_vec();
        offset += n;
        let tensor = Tensor::new(entry.shape.clone(), data)?;
        let (layer, part) = entry.name.rsplit_once('.').ok_or_else(|| {
            Error::Config(format!("tensor name {} lacks a .weight/.bias suffix", entry.name))
        })?;
        let slot = halves.entry(layer.to_string()).or_default();
        match part {
            "weight" => slot.0 = Some(tensor),
            "bias" => slot.1 = Some(tensor),
            other => return Err(Error::Config(format!("unknown tensor kind {other}"))),
        }
    }
    if offset != payload.len() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("{} trailing payload values", payload.len() - offset),
        });
    }
    let mut layers = BTreeMap::new();
    for (name, (w, b)) in halves {
        match (w, b) {
            (Some(weight), Some(bias)) => {
                layers.insert(name, LayerParams { weight, bias });
            }
            _ => return Err(Error::Config(format!("layer {name} lacks weight or bias"))),
        }
    }
    let params = Parameters::new(header.seed, layers);
    header.network.check_params(&params)?;
    Ok(Checkpoint {
        role: header.role,
        network: header.network,
        params,
    })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(path, &bytes)
}
