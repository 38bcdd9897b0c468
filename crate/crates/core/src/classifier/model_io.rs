//! Model files: 8-byte magic, u32 version, u32 header length, JSON header,
//! then every parameter and buffer as little-endian f32 in declaration order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::Network;
use super::spec::{build_arch, NetworkSpec};
use crate::error::{Error, Result};
use crate::imaging::ImageType;
use crate::io_util::write_atomic;

pub const MODEL_MAGIC: &[u8; 8] = b"EEGRCNN\0";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub spec: NetworkSpec,
    pub seed: u64,
    /// Length of each stored blob.
    pub blobs: Vec<usize>,
    /// Free-form provenance (training config, dataset counts, ...).
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

pub fn model_bytes(net: &Network<f32>, meta: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let state: Vec<&[f32]> = net.layers.iter().flat_map(|l| l.state()).collect();
    let header = ModelHeader {
        spec: net.spec.clone(),
        seed: net.seed,
        blobs: state.iter().map(|b| b.len()).collect(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * header.blobs.iter().sum::<usize>());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for blob in state {
        out.extend(blob.iter().flat_map(|v| v.to_le_bytes()));
    }
    Ok(out)
}

pub fn save_model(net: &Network<f32>, path: &Path, meta: &BTreeMap<String, String>) -> Result<()> {
    let bytes = model_bytes(net, meta)?;
    write_atomic(path, |w| w.write_all(&bytes))
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::ModelFormat(format!(
            "truncated file while reading {what}"
        )));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn read_u32(bytes: &mut &[u8], what: &str) -> Result<u32> {
    let b = take(bytes, 4, what)?;
    Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn parse_model(mut bytes: &[u8]) -> Result<(Network<f32>, ModelHeader)> {
    let cur = &mut bytes;
    if take(cur, 8, "magic")? != MODEL_MAGIC {
        return Err(Error::ModelFormat("not a model file (bad magic)".into()));
    }
    let version = read_u32(cur, "version")?;
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let hlen = read_u32(cur, "header length")? as usize;
    let header: ModelHeader = serde_json::from_slice(take(cur, hlen, "header")?)
        .map_err(|e| Error::ModelFormat(format!("header: {e}")))?;
    let mut net = Network::<f32>::new(header.spec.clone(), header.seed)?;
    let mut slots: Vec<&mut Vec<f32>> = net.layers.iter_mut().flat_map(|l| l.state_mut()).collect();
    if slots.len() != header.blobs.len() {
        return Err(Error::ModelFormat(format!(
            "header lists {} blobs, spec needs {}",
            header.blobs.len(),
            slots.len()
        )));
    }
    for (i, (slot, &len)) in slots.iter_mut().zip(&header.blobs).enumerate() {
        if slot.len() != len {
            return Err(Error::ModelFormat(format!(
                "blob {i} holds {len} values, spec needs {}",
                slot.len()
            )));
        }
        let raw = take(cur, 4 * len, "parameters")?;
        for (v, b) in slot.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
    }
    if !cur.is_empty() {
        return Err(Error::ModelFormat(format!("{} trailing bytes", cur.len())));
    }
    Ok((net, header))
}

pub fn load_model(path: &Path) -> Result<(Network<f32>, ModelHeader)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_model(&bytes).map_err(|e| match e {
        Error::ModelFormat(m) => Error::ModelFormat(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Loads a model and checks that it is the shipped architecture for `image_type`.
pub fn load_model_for(path: &Path, image_type: ImageType) -> Result<(Network<f32>, ModelHeader)> {
    let (net, header) = load_model(path)?;
    if net.spec != build_arch(image_type) {
        return Err(Error::ModelFormat(format!(
            "{} does not hold the {image_type} architecture",
            path.display()
        )));
    }
    Ok((net, header))
}
