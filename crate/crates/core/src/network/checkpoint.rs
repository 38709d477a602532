//! Single-file checkpoint: magic line, little-endian u64 header length, JSON
//! header, then little-endian f32 blobs in header order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{UNet, UNetConfig};
use crate::error::{ensure, Error, Result};
use crate::tensor::{Adam, AdamConfig};

pub const CHECKPOINT_MAGIC: &[u8] = b"SAINETCKPT1\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in f32 elements from the start of the payload.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: UNetConfig,
    /// Last completed epoch (1-based); 0 for an untrained model.
    pub epoch: usize,
    pub global_step: u64,
    pub adam: AdamConfig,
    pub adam_step_count: u64,
    pub blobs: Vec<BlobInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub payload: Vec<f32>,
}

impl Checkpoint {
    fn blob(&self, name: &str) -> Option<(&BlobInfo, &[f32])> {
        self.header.blobs.iter().find(|b| b.name == name).map(|b| {
            let len: usize = b.shape.iter().product();
            (b, &self.payload[b.offset..b.offset + len])
        })
    }

    fn fetch(&self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let (info, data) = self.blob(name).ok_or_else(|| Error::data(format!("checkpoint has no tensor {name}")))?;
        if info.shape != shape {
            let dim =
                info.shape.iter().zip(shape).position(|(a, b)| a != b).unwrap_or(info.shape.len().min(shape.len()));
            return Err(Error::data(format!(
                "{name}: dimension {dim} differs, checkpoint shape {:?} vs model shape {:?}",
                info.shape, shape
            )));
        }
        Ok(data.iter().map(|&v| v as f64).collect())
    }

    /// Build the model described by the header and load its weights.
    pub fn model(&self) -> Result<UNet> {
        let net = UNet::new(self.header.config.clone())?;
        self.load_into(&net)?;
        Ok(net)
    }

    /// Copy weights into an existing model, checking every shape.
    pub fn load_into(&self, net: &UNet) -> Result<()> {
        for (name, t) in net.named_parameters() {
            t.assign(&self.fetch(&name, t.shape())?)?;
        }
        Ok(())
    }

    /// Optimizer with the stored moments and step count.
    pub fn optimizer(&self, net: &UNet) -> Result<Adam> {
        let mut adam = Adam::new(self.header.adam)?.with_f32_storage(true);
        adam.state.step_count = self.header.adam_step_count;
        if self.header.adam_step_count > 0 {
            for (name, t) in net.named_parameters() {
                adam.state.first_moment.push(self.fetch(&format!("adam.m.{name}"), t.shape())?);
                adam.state.second_moment.push(self.fetch(&format!("adam.v.{name}"), t.shape())?);
            }
        }
        Ok(adam)
    }
}

/// Write atomically (temporary file then rename) so an interrupted save
/// never replaces a good checkpoint.
pub fn save_checkpoint(path: &Path, net: &UNet, adam: &Adam, epoch: usize, global_step: u64) -> Result<()> {
    let mut blobs = Vec::new();
    let mut payload: Vec<f32> = Vec::new();
    let mut push = |name: String, shape: &[usize], data: &[f64]| {
        blobs.push(BlobInfo { name, shape: shape.to_vec(), offset: payload.len() });
        payload.extend(data.iter().map(|&v| v as f32));
    };
    let named = net.named_parameters();
    for (name, t) in &named {
        push(name.clone(), t.shape(), &t.data());
    }
    if adam.state.step_count > 0 {
        ensure!(adam.state.first_moment.len() == named.len(), "optimizer state does not match the model");
        for (i, (name, t)) in named.iter().enumerate() {
            push(format!("adam.m.{name}"), t.shape(), &adam.state.first_moment[i]);
            push(format!("adam.v.{name}"), t.shape(), &adam.state.second_moment[i]);
        }
    }
    let header = CheckpointHeader {
        config: net.config.clone(),
        epoch,
        global_step,
        adam: adam.config,
        adam_step_count: adam.state.step_count,
        blobs,
    };
    let header_json = serde_json::to_vec(&header).map_err(|e| Error::format(path, e.to_string()))?;

    let mut bytes = Vec::with_capacity(CHECKPOINT_MAGIC.len() + 8 + header_json.len() + payload.len() * 4);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for v in &payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let m = CHECKPOINT_MAGIC.len();
    if bytes.len() < m + 8 || &bytes[..m] != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a SAINETCKPT1 checkpoint"));
    }
    let hlen = u64::from_le_bytes(bytes[m..m + 8].try_into().unwrap()) as usize;
    let body = m + 8 + hlen;
    if bytes.len() < body {
        return Err(Error::format(path, "truncated header"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[m + 8..body]).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    let rest = &bytes[body..];
    let expected: usize = header.blobs.iter().map(|b| b.shape.iter().product::<usize>()).sum();
    if rest.len() != expected * 4 {
        return Err(Error::format(
            path,
            format!("payload holds {} bytes, header describes {}", rest.len(), expected * 4),
        ));
    }
    for b in &header.blobs {
        if b.offset + b.shape.iter().product::<usize>() > expected {
            return Err(Error::format(path, format!("blob {} lies outside the payload", b.name)));
        }
    }
    let payload = rest.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(Checkpoint { header, payload })
}
