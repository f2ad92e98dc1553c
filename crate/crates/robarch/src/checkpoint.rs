//! Checkpoint container: an 8-byte little-endian manifest length, a JSON
//! manifest (format version, dtype, architecture config, tensor directory
//! with byte offsets), then the raw tensor data as concatenated
//! little-endian f32 blobs in manifest order. Parameters come first,
//! normalization running statistics after, so load∘save is the identity on
//! both.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ArchConfig;
use crate::error::{Error, Result};
use crate::net::Network;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the blob section.
    offset: u64,
    /// Element count.
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    dtype: String,
    config: ArchConfig,
    params: Vec<Entry>,
    buffers: Vec<Entry>,
}

fn push_entry(entries: &mut Vec<Entry>, name: &str, tensor: &Tensor<f32>, offset: &mut u64) {
    entries.push(Entry {
        name: name.to_string(),
        shape: tensor.shape().to_vec(),
        offset: *offset,
        len: tensor.numel() as u64,
    });
    *offset += 4 * tensor.numel() as u64;
}

fn push_blob(blob: &mut Vec<u8>, tensor: &Tensor<f32>) {
    for &v in tensor.data() {
        blob.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes the network (architecture, parameters, running statistics).
pub fn save_checkpoint(net: &Network<f32>, path: &Path) -> Result<()> {
    let mut params = Vec::new();
    let mut buffers = Vec::new();
    let mut blob = Vec::new();
    let mut offset = 0u64;

    for p in net.params() {
        push_entry(&mut params, &p.name, &p.tensor, &mut offset);
        push_blob(&mut blob, &p.tensor);
    }
    for s in net.running_stats() {
        push_entry(&mut buffers, &format!("{}.running_mean", s.name), &s.mean, &mut offset);
        push_blob(&mut blob, &s.mean);
        push_entry(&mut buffers, &format!("{}.running_var", s.name), &s.var, &mut offset);
        push_blob(&mut blob, &s.var);
    }

    let manifest = Manifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        dtype: "f32".into(),
        config: net.config.clone(),
        params,
        buffers,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;

    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    file.write_all(&manifest_bytes)?;
    file.write_all(&blob)?;
    file.flush()?;
    Ok(())
}

fn read_tensor(blob: &[u8], entry: &Entry) -> Result<Tensor<f32>> {
    let numel: usize = entry.shape.iter().product();
    if numel as u64 != entry.len {
        return Err(Error::Checkpoint(format!(
            "entry {}: shape {:?} disagrees with len {}",
            entry.name, entry.shape, entry.len
        )));
    }
    let start = entry.offset as usize;
    let end = start + 4 * numel;
    if end > blob.len() {
        return Err(Error::Checkpoint(format!(
            "entry {} reaches byte {end} of a {}-byte blob section",
            entry.name,
            blob.len()
        )));
    }
    let data = blob[start..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor::new(entry.shape.clone(), data))
}

/// Reconstructs a network from a checkpoint file, bit-exact in parameters
/// and running statistics.
pub fn load_checkpoint(path: &Path) -> Result<Network<f32>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 8 {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let manifest_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if 8 + manifest_len > bytes.len() {
        return Err(Error::Checkpoint("truncated manifest".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[8..8 + manifest_len])
        .map_err(|e| Error::Checkpoint(format!("manifest parse error: {e}")))?;

    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unknown format version {} (this build reads {CHECKPOINT_FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    if manifest.dtype != "f32" {
        return Err(Error::Checkpoint(format!(
            "unsupported dtype {:?}",
            manifest.dtype
        )));
    }

    let blob = &bytes[8 + manifest_len..];
    let expected: u64 = manifest
        .params
        .iter()
        .chain(&manifest.buffers)
        .map(|e| 4 * e.len)
        .sum();
    if blob.len() as u64 != expected {
        return Err(Error::Checkpoint(format!(
            "blob length mismatch: manifest promises {expected} bytes, file holds {}",
            blob.len()
        )));
    }

    let mut net = Network::<f32>::instantiate(&manifest.config, 0);
    if manifest.params.len() != net.params().len()
        || manifest.buffers.len() != 2 * net.running_stats().len()
    {
        return Err(Error::Checkpoint(format!(
            "tensor inventory mismatch: manifest lists {} params / {} buffers, architecture has {} / {}",
            manifest.params.len(),
            manifest.buffers.len(),
            net.params().len(),
            2 * net.running_stats().len()
        )));
    }

    let param_slots: HashMap<String, usize> = net
        .params()
        .iter()
        .enumerate()
        .map(|(i, p)| (p.name.clone(), i))
        .collect();
    for entry in &manifest.params {
        let &slot = param_slots
            .get(&entry.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {}", entry.name)))?;
        let tensor = read_tensor(blob, entry)?;
        let target = &mut net.params_mut()[slot];
        if tensor.shape() != target.tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {}: checkpoint {:?}, architecture {:?}",
                entry.name,
                tensor.shape(),
                target.tensor.shape()
            )));
        }
        target.tensor = tensor;
    }

    let stat_slots: HashMap<String, usize> = net
        .running_stats()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.name.clone(), i))
        .collect();
    for entry in &manifest.buffers {
        let (base, is_mean) = if let Some(base) = entry.name.strip_suffix(".running_mean") {
            (base, true)
        } else if let Some(base) = entry.name.strip_suffix(".running_var") {
            (base, false)
        } else {
            return Err(Error::Checkpoint(format!(
                "unknown buffer {}",
                entry.name
            )));
        };
        let &slot = stat_slots
            .get(base)
            .ok_or_else(|| Error::Checkpoint(format!("unknown buffer {}", entry.name)))?;
        let tensor = read_tensor(blob, entry)?;
        let target = &mut net.running_stats_mut()[slot];
        let dest = if is_mean { &mut target.mean } else { &mut target.var };
        if tensor.shape() != dest.shape() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {}: checkpoint {:?}, architecture {:?}",
                entry.name,
                tensor.shape(),
                dest.shape()
            )));
        }
        *dest = tensor;
    }

    Ok(net)
}
