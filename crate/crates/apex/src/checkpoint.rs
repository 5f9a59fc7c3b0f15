//! Binary model checkpoints.
//!
//! Layout: the 8 bytes `APEXMDL1`, a little-endian `u32` version (1), a
//! `u32` byte length followed by a UTF-8 JSON header (architecture, input
//! mode, loss), `u32` counts of parameters and running statistics, then the
//! parameters in layout order and the running statistics, all as
//! little-endian `f32`.

use std::io::{Cursor, Read};
use std::path::Path;

use apex_core::losses::LossKind;
use apex_core::network::{ArchConfig, ModelParams};
use apex_core::trainer::InputMode;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::{fsutil, AppError, AppResult};

pub const MAGIC: &[u8; 8] = b"APEXMDL1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub arch: ArchConfig,
    pub input_mode: InputMode,
    pub loss: LossKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams, input_mode: InputMode, loss: LossKind) -> Self {
        Self {
            header: CheckpointHeader {
                arch: params.arch().clone(),
                input_mode,
                loss,
            },
            params,
        }
    }
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>, String> {
    if ckpt.header.arch != *ckpt.params.arch() {
        return Err("header architecture does not match parameters".into());
    }
    let header = serde_json::to_vec(&ckpt.header).map_err(|e| e.to_string())?;
    let p = &ckpt.params;
    let mut out = Vec::with_capacity(28 + header.len() + 4 * (p.values().len() + p.running().len()));
    out.extend_from_slice(MAGIC);
    let err = |e: std::io::Error| e.to_string();
    out.write_u32::<LittleEndian>(VERSION).map_err(err)?;
    out.write_u32::<LittleEndian>(header.len() as u32).map_err(err)?;
    out.extend_from_slice(&header);
    out.write_u32::<LittleEndian>(p.values().len() as u32).map_err(err)?;
    out.write_u32::<LittleEndian>(p.running().len() as u32).map_err(err)?;
    for &v in p.values().iter().chain(p.running()) {
        out.write_f32::<LittleEndian>(v as f32).map_err(err)?;
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, String> {
    let mut r = Cursor::new(bytes);
    let io = |e: std::io::Error| format!("truncated checkpoint: {e}");
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let header_len = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let remaining = bytes.len().saturating_sub(r.position() as usize);
    if header_len > remaining {
        return Err("truncated checkpoint header".into());
    }
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header).map_err(io)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&header).map_err(|e| format!("header: {e}"))?;
    let n_values = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let n_running = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let remaining = bytes.len() - r.position() as usize;
    if remaining != 4 * (n_values + n_running) {
        return Err(format!(
            "payload is {remaining} bytes, expected {}",
            4 * (n_values + n_running)
        ));
    }
    let mut read = |n: usize| -> Result<Vec<f64>, String> {
        let mut v = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(&mut v).map_err(io)?;
        Ok(v.into_iter().map(f64::from).collect())
    };
    let values = read(n_values)?;
    let running = read(n_running)?;
    let params = ModelParams::from_parts(header.arch.clone(), values, running).map_err(|e| e.to_string())?;
    Ok(Checkpoint { header, params })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> AppResult<()> {
    let bytes = encode(ckpt).map_err(AppError::Validation)?;
    fsutil::atomic_write(path, &bytes)
}

pub fn read_checkpoint(path: &Path) -> AppResult<Checkpoint> {
    let bytes = fsutil::read(path)?;
    decode(&bytes).map_err(|m| AppError::format(path, m))
}
