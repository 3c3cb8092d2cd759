//! Single-file model checkpoint:
//!
//! ```text
//! b"SSNN" | u32 format version | u64 header length | JSON header
//!         | u64 value count | little-endian f64 values
//! ```
//!
//! The header carries the network structure, label normalizations, the
//! initialization seed and the training configuration. The values are the
//! network's state vector (parameters, then running statistics, per layer).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{NetSpec, Network};
use super::train::TrainConfig;
use super::NeuralError;
use crate::norm::ChannelNorm;

const MAGIC: &[u8; 4] = b"SSNN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub spec: NetSpec,
    pub input_norm: Option<ChannelNorm>,
    pub output_norm: Option<ChannelNorm>,
    pub init_seed: u64,
    pub train: Option<TrainConfig>,
}

/// A trained network plus what is needed to interpret its inputs/outputs.
#[derive(Debug, Clone)]
pub struct Model {
    pub net: Network,
    pub input_norm: Option<ChannelNorm>,
    pub output_norm: Option<ChannelNorm>,
    pub init_seed: u64,
    pub train: Option<TrainConfig>,
}

impl Model {
    pub fn to_bytes(&self) -> Result<Vec<u8>, NeuralError> {
        let header = CheckpointHeader {
            spec: self.net.spec().clone(),
            input_norm: self.input_norm.clone(),
            output_norm: self.output_norm.clone(),
            init_seed: self.init_seed,
            train: self.train.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| NeuralError::Format(e.to_string()))?;
        let values = self.net.state_vector();
        let mut out = Vec::with_capacity(24 + json.len() + values.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NeuralError> {
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8], NeuralError> {
            let s = bytes
                .get(at..at + n)
                .ok_or_else(|| NeuralError::Format("truncated checkpoint".into()))?;
            at += n;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(NeuralError::Format("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(NeuralError::Format(format!(
                "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let hlen = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let header: CheckpointHeader =
            serde_json::from_slice(take(hlen)?).map_err(|e| NeuralError::Format(e.to_string()))?;
        let count = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let raw = take(count.checked_mul(8).ok_or_else(|| NeuralError::Format("bad count".into()))?)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if at != bytes.len() {
            return Err(NeuralError::Format("trailing bytes after weights".into()));
        }
        let mut net = Network::new(header.spec, header.init_seed)?;
        net.load_state_vector(&values)?;
        Ok(Model {
            net,
            input_norm: header.input_norm,
            output_norm: header.output_norm,
            init_seed: header.init_seed,
            train: header.train,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
