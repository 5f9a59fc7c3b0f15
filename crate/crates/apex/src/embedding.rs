//! Binary per-song embedding files.
//!
//! Layout: the 8 bytes `APEXEMB1`, then little-endian `u32` fields
//! `version` (1), `n_segments`, `n_layers` (4) and `dim` (768), then
//! `n_segments * 4 * 768` little-endian `f32` values, segment-major, then
//! layer-major, then dimension.

use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use apex_core::data::SegmentEmbeddingSet;
use apex_core::{EMBED_DIM, N_LAYERS};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::{fsutil, AppError, AppResult};

pub const MAGIC: &[u8; 8] = b"APEXEMB1";
pub const VERSION: u32 = 1;
pub const EXTENSION: &str = "apexemb";
const HEADER_LEN: usize = 8 + 4 * 4;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("format error: {0}")]
    Format(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl EmbeddingError {
    fn into_app(self, path: &Path) -> AppError {
        match self {
            EmbeddingError::Io(e) => AppError::io(path, e),
            other => AppError::format(path, other.to_string()),
        }
    }
}

/// Encodes an embedding set. Values are narrowed to `f32`.
pub fn encode(set: &SegmentEmbeddingSet) -> Result<Vec<u8>, EmbeddingError> {
    if (set.n_layers(), set.dim()) != (N_LAYERS, EMBED_DIM) {
        return Err(EmbeddingError::Dimension(format!(
            "layer shape ({}, {}) is not ({N_LAYERS}, {EMBED_DIM})",
            set.n_layers(),
            set.dim()
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * set.values().len());
    out.extend_from_slice(MAGIC);
    for v in [VERSION, set.n_segments() as u32, N_LAYERS as u32, EMBED_DIM as u32] {
        out.write_u32::<LittleEndian>(v)?;
    }
    for &v in set.values() {
        out.write_f32::<LittleEndian>(v as f32)?;
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], song_id: &str) -> Result<SegmentEmbeddingSet, EmbeddingError> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(EmbeddingError::Format(format!("bad magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(EmbeddingError::Format(format!("unsupported version {version}")));
    }
    let n_segments = r.read_u32::<LittleEndian>()? as usize;
    let n_layers = r.read_u32::<LittleEndian>()? as usize;
    let dim = r.read_u32::<LittleEndian>()? as usize;
    if n_segments == 0 {
        return Err(EmbeddingError::Dimension("n_segments is 0".into()));
    }
    if (n_layers, dim) != (N_LAYERS, EMBED_DIM) {
        return Err(EmbeddingError::Dimension(format!(
            "declared shape ({n_layers}, {dim}) is not ({N_LAYERS}, {EMBED_DIM})"
        )));
    }
    let n = n_segments * n_layers * dim;
    let mut values = vec![0f32; n];
    r.read_f32_into::<LittleEndian>(&mut values)?;
    if (r.position() as usize) != bytes.len() {
        return Err(EmbeddingError::Format(format!(
            "{} trailing bytes after payload",
            bytes.len() - r.position() as usize
        )));
    }
    let values = values.into_iter().map(f64::from).collect();
    SegmentEmbeddingSet::new(song_id, n_segments, n_layers, dim, values)
        .map_err(|e| EmbeddingError::Dimension(e.to_string()))
}

pub fn read_embedding(path: &Path, song_id: &str) -> AppResult<SegmentEmbeddingSet> {
    let bytes = fsutil::read(path)?;
    decode(&bytes, song_id).map_err(|e| e.into_app(path))
}

pub fn write_embedding(path: &Path, set: &SegmentEmbeddingSet) -> AppResult<()> {
    let bytes = encode(set).map_err(|e| e.into_app(path))?;
    fsutil::atomic_write(path, &bytes)
}

/// Default file location of a song inside an embedding store.
pub fn store_path(store: &Path, song_id: &str) -> PathBuf {
    store.join(format!("{song_id}.{EXTENSION}"))
}

/// Loads the embeddings of `song_id` from `store`.
pub fn load_embeddings(store: &Path, song_id: &str) -> AppResult<SegmentEmbeddingSet> {
    read_embedding(&store_path(store, song_id), song_id)
}
