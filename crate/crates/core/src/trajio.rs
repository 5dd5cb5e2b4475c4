//! Binary rollout datasets.
//!
//! ```text
//! b"QFDIDATA" | u32 LE format version | u64 LE header length | header JSON | payload
//! ```
//!
//! The payload stores each record column by column as little-endian `f64`:
//! the 12 state columns, the 4 commanded-wrench columns, then the 6 residual
//! columns when present. The header describes every record and carries the
//! payload's SHA-256.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::ControllerKind;
use crate::quadsim::{FaultSchedule, Output, QuadParams, SimConfig, State, Trajectory, Wrench, INPUT_DIM, OUTPUT_DIM, STATE_DIM};
use crate::train::{RolloutRecord, TrainConfig};
use crate::{Error, Result};

pub const DATASET_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"QFDIDATA";

/// Generation context stored alongside the rollouts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub seed: u64,
    pub epoch: u64,
    pub params: QuadParams,
    pub reference: QuadParams,
    pub sim: SimConfig,
    pub controller: ControllerKind,
    pub fault_levels: Vec<f64>,
    pub trained_motor: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub info: DatasetInfo,
    pub records: Vec<RolloutRecord>,
}

#[derive(Serialize, Deserialize)]
struct RecordEntry {
    ic_index: usize,
    level_index: usize,
    schedule: FaultSchedule,
    samples: usize,
    diverged_at: Option<usize>,
    residuals: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    info: DatasetInfo,
    records: Vec<RecordEntry>,
    payload_bytes: u64,
    payload_sha256: String,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn push_columns<const N: usize>(out: &mut Vec<u8>, rows: impl Iterator<Item = [f64; N]> + Clone) {
    for c in 0..N {
        for row in rows.clone() {
            out.extend_from_slice(&row[c].to_le_bytes());
        }
    }
}

fn take_columns<const N: usize>(payload: &[u8], pos: &mut usize, n: usize) -> Result<Vec<[f64; N]>> {
    let bytes = N * n * 8;
    let chunk = payload.get(*pos..*pos + bytes).ok_or_else(|| format_err("payload shorter than declared"))?;
    *pos += bytes;
    let mut rows = vec![[0.0; N]; n];
    for (i, b) in chunk.chunks_exact(8).enumerate() {
        rows[i % n][i / n] = f64::from_le_bytes(b.try_into().expect("8-byte chunk"));
    }
    Ok(rows)
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(ds.records.len());
    for rec in &ds.records {
        let n = rec.traj.len();
        if rec.traj.inputs.len() != n || rec.resid.as_ref().is_some_and(|r| r.len() != n) {
            return Err(Error::Shape(format!("record {} has inconsistent column lengths", entries.len())));
        }
        push_columns(&mut payload, rec.traj.states.iter().map(|s| s.0));
        push_columns(&mut payload, rec.traj.inputs.iter().map(|u| u.0));
        if let Some(r) = &rec.resid {
            push_columns(&mut payload, r.iter().map(|o| o.0));
        }
        entries.push(RecordEntry {
            ic_index: rec.ic_index,
            level_index: rec.level_index,
            schedule: rec.schedule,
            samples: n,
            diverged_at: rec.traj.diverged_at,
            residuals: rec.resid.is_some(),
        });
    }
    let header = Header {
        format_version: DATASET_VERSION,
        info: ds.info.clone(),
        records: entries,
        payload_bytes: payload.len() as u64,
        payload_sha256: hex::encode(Sha256::digest(&payload)),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(format_err("not a dataset file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != DATASET_VERSION {
        return Err(format_err(format!("dataset format version {version} is not supported (expected {DATASET_VERSION})")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let json = bytes.get(20..20 + hlen).ok_or_else(|| format_err("truncated header"))?;
    let header: Header = serde_json::from_slice(json)?;
    let payload = &bytes[20 + hlen..];
    if payload.len() as u64 != header.payload_bytes {
        return Err(format_err(format!("payload has {} bytes, header declares {}", payload.len(), header.payload_bytes)));
    }
    if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
        return Err(format_err("payload checksum mismatch"));
    }
    let mut pos = 0;
    let mut records = Vec::with_capacity(header.records.len());
    for e in header.records {
        let states = take_columns::<STATE_DIM>(payload, &mut pos, e.samples)?.into_iter().map(State).collect();
        let inputs = take_columns::<INPUT_DIM>(payload, &mut pos, e.samples)?.into_iter().map(Wrench).collect();
        let resid = if e.residuals {
            Some(take_columns::<OUTPUT_DIM>(payload, &mut pos, e.samples)?.into_iter().map(Output).collect())
        } else {
            None
        };
        records.push(RolloutRecord {
            ic_index: e.ic_index,
            level_index: e.level_index,
            schedule: e.schedule,
            traj: Trajectory { states, inputs, diverged_at: e.diverged_at },
            resid,
        });
    }
    if pos != payload.len() {
        return Err(format_err("payload longer than the declared records"));
    }
    Ok(Dataset { info: header.info, records })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_dataset(ds, BufWriter::new(File::create(path)?))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

/// Counts accompanying a dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub rollouts: usize,
    pub dropped_divergence: usize,
    pub fault_levels: Vec<f64>,
    /// Rollouts per fault level, before divergence drops.
    pub rollouts_per_level: Vec<usize>,
    /// Training windows per fault level, after divergence drops.
    pub windows_per_level: Vec<usize>,
    pub dataset_sha256: String,
}

impl Manifest {
    pub fn build(ds: &Dataset, cfg: &TrainConfig, dataset_bytes: &[u8]) -> Result<Self> {
        let levels = ds.info.fault_levels.len();
        let mut rollouts_per_level = vec![0; levels];
        for r in &ds.records {
            *rollouts_per_level
                .get_mut(r.level_index)
                .ok_or_else(|| format_err(format!("level index {} out of range", r.level_index)))? += 1;
        }
        let data = crate::train::rollouts_to_samples(&ds.records, cfg, ds.info.sim.horizon)?;
        Ok(Manifest {
            seed: ds.info.seed,
            rollouts: ds.records.len(),
            dropped_divergence: data.dropped,
            fault_levels: ds.info.fault_levels.clone(),
            rollouts_per_level,
            windows_per_level: data.per_level,
            dataset_sha256: hex::encode(Sha256::digest(dataset_bytes)),
        })
    }
}
