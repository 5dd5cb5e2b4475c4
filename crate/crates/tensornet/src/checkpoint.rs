//! Checkpoint file layout:
//!
//! ```text
//! b"TNETCKPT" | u32 LE format version | u64 LE header length | header JSON | payload
//! ```
//!
//! The payload is every parameter tensor's values as little-endian `f64`, in
//! header order. The header records shapes, the payload length and its SHA-256.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::features::{FeatureSpec, Normalizer};
use crate::network::{Architecture, Network};
use crate::tensor::Tensor;
use crate::{NetError, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"TNETCKPT";

/// A network plus the seed it was trained from and free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub seed: u64,
    pub metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    architecture: Architecture,
    spec: FeatureSpec,
    outputs: usize,
    seed: u64,
    normalizer: Normalizer,
    tensors: Vec<TensorEntry>,
    payload_bytes: u64,
    payload_sha256: String,
    metadata: serde_json::Value,
}

fn corrupt(msg: impl Into<String>) -> NetError {
    NetError::Corrupt(msg.into())
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut w: W) -> Result<()> {
    let net = &ckpt.network;
    let mut payload = Vec::with_capacity(net.num_params() * 8);
    for t in net.params() {
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        architecture: net.architecture().clone(),
        spec: *net.spec(),
        outputs: net.outputs(),
        seed: ckpt.seed,
        normalizer: net.normalizer().clone(),
        tensors: net
            .param_names()
            .into_iter()
            .zip(net.params())
            .map(|(name, t)| TensorEntry { name, shape: t.shape().to_vec() })
            .collect(),
        payload_bytes: payload.len() as u64,
        payload_sha256: format!("{:x}", Sha256::digest(&payload)),
        metadata: ckpt.metadata.clone(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| NetError::Config(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint; with `expected` set, the stored feature layout must match it.
pub fn read_checkpoint<R: Read>(mut r: R, expected: Option<&FeatureSpec>) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing checkpoint magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(NetError::Version { found: version, expected: FORMAT_VERSION });
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..];
    if hlen > body.len() {
        return Err(corrupt("header extends past end of file"));
    }
    let header: Header =
        serde_json::from_slice(&body[..hlen]).map_err(|e| corrupt(format!("unreadable header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(NetError::Version { found: header.format_version, expected: FORMAT_VERSION });
    }
    let payload = &body[hlen..];
    if payload.len() as u64 != header.payload_bytes {
        return Err(corrupt(format!("payload has {} bytes, header declares {}", payload.len(), header.payload_bytes)));
    }
    if format!("{:x}", Sha256::digest(payload)) != header.payload_sha256 {
        return Err(corrupt("payload checksum mismatch"));
    }
    if let Some(exp) = expected {
        if *exp != header.spec {
            return Err(NetError::SpecMismatch(format!(
                "stored {:?} ({} channels per step), requested {:?} ({} channels per step)",
                header.spec,
                header.spec.per_step_width(),
                exp,
                exp.per_step_width()
            )));
        }
    }

    // Weights are overwritten below; the generator only fixes the shapes.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = Network::new(header.spec, header.architecture, header.outputs, &mut rng)?;
    let shapes: Vec<Vec<usize>> = net.params().iter().map(|t| t.shape().to_vec()).collect();
    if shapes.len() != header.tensors.len()
        || shapes.iter().zip(&header.tensors).any(|(s, e)| *s != e.shape)
        || net.param_names().iter().zip(&header.tensors).any(|(n, e)| *n != e.name)
    {
        return Err(corrupt("tensor list does not match the declared architecture"));
    }
    let mut values = Vec::with_capacity(shapes.len());
    let mut chunks = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for shape in shapes {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = chunks.by_ref().take(n).collect();
        if data.len() != n {
            return Err(corrupt("payload shorter than declared tensors"));
        }
        values.push(Tensor::new(shape, data)?);
    }
    if chunks.next().is_some() {
        return Err(corrupt("payload longer than declared tensors"));
    }
    net.load_params(values)?;
    net.set_normalizer(header.normalizer)?;
    Ok(Checkpoint { network: net, seed: header.seed, metadata: header.metadata })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let f = File::create(path)?;
    write_checkpoint(ckpt, BufWriter::new(f))
}

pub fn load_checkpoint(path: &Path, expected: Option<&FeatureSpec>) -> Result<Checkpoint> {
    let f = File::open(path)?;
    read_checkpoint(BufReader::new(f), expected)
}
