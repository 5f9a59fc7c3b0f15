//! Line-delimited JSON song manifest.
//!
//! Each line holds one object with the keys `song_id`, `platform`, `streams`,
//! `likes`, the five aesthetic ratings (all numbers or all `null`),
//! `released_at` (RFC 3339 or `null`) and `embedding_ref`. The optional keys
//! `audio_hash`, `streams_score` and `likes_score` are accepted and written
//! back when present. Any other key is rejected.

use std::collections::HashSet;
use std::path::Path;

use apex_core::data::{Aesthetics, Platform, SongRecord, Timestamp, AESTHETIC_NAMES};
use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::{fsutil, AppError, AppResult};

const REQUIRED: [&str; 4] = ["song_id", "platform", "streams", "likes"];
const KNOWN: [&str; 14] = [
    "song_id",
    "platform",
    "streams",
    "likes",
    "coherence",
    "musicality",
    "memorability",
    "clarity",
    "naturalness",
    "released_at",
    "embedding_ref",
    "audio_hash",
    "streams_score",
    "likes_score",
];

/// A manifest line: the song record plus any score columns it carried.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub record: SongRecord,
    pub streams_score: Option<f64>,
    pub likes_score: Option<f64>,
}

impl From<SongRecord> for ManifestRow {
    fn from(record: SongRecord) -> Self {
        Self {
            record,
            streams_score: None,
            likes_score: None,
        }
    }
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value, String> {
    obj.get(key).ok_or_else(|| format!("missing field {key}"))
}

fn string_field(obj: &Map<String, Value>, key: &str) -> Result<String, String> {
    field(obj, key)?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| format!("field {key} must be a string"))
}

fn count_field(obj: &Map<String, Value>, key: &str) -> Result<u64, String> {
    field(obj, key)?
        .as_u64()
        .ok_or_else(|| format!("field {key} must be a non-negative integer"))
}

fn optional_number(obj: &Map<String, Value>, key: &str) -> Result<Option<f64>, String> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_f64()
            .map(Some)
            .ok_or_else(|| format!("field {key} must be a number or null")),
    }
}

fn parse_timestamp(s: &str) -> Result<Timestamp, String> {
    let t = DateTime::parse_from_rfc3339(s).map_err(|e| format!("released_at {s:?}: {e}"))?;
    if t.timestamp_subsec_nanos() != 0 {
        return Err(format!("released_at {s:?} has sub-second precision"));
    }
    Ok(Timestamp(t.timestamp()))
}

fn format_timestamp(t: Timestamp) -> AppResult<String> {
    DateTime::<Utc>::from_timestamp(t.0, 0)
        .map(|d| d.to_rfc3339_opts(SecondsFormat::Secs, true))
        .ok_or_else(|| AppError::Validation(format!("timestamp {} out of range", t.0)))
}

fn parse_row(line: &str) -> Result<ManifestRow, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
    let obj = value.as_object().ok_or("expected a JSON object")?;
    if let Some(k) = obj.keys().find(|k| !KNOWN.contains(&k.as_str())) {
        return Err(format!("unknown field {k}"));
    }
    for k in REQUIRED {
        field(obj, k)?;
    }
    let song_id = string_field(obj, "song_id")?;
    if song_id.is_empty() {
        return Err("song_id is empty".into());
    }
    let platform_name = string_field(obj, "platform")?;
    let platform =
        Platform::parse(&platform_name).ok_or_else(|| format!("unknown platform {platform_name:?}"))?;
    let streams = count_field(obj, "streams")?;
    let likes = count_field(obj, "likes")?;

    let mut ratings = Vec::with_capacity(5);
    for name in AESTHETIC_NAMES {
        field(obj, name)?;
        ratings.push(optional_number(obj, name)?);
    }
    let aesthetics = match ratings.iter().filter(|r| r.is_some()).count() {
        0 => None,
        5 => {
            let mut a = [0.0; 5];
            for (slot, r) in a.iter_mut().zip(&ratings) {
                *slot = r.unwrap_or_default();
            }
            Some(Aesthetics::new(a).map_err(|e| e.to_string())?)
        }
        _ => return Err("aesthetic ratings must be all present or all null".into()),
    };

    let released_at = match field(obj, "released_at")? {
        Value::Null => None,
        Value::String(s) => Some(parse_timestamp(s)?),
        _ => return Err("field released_at must be a string or null".into()),
    };
    let embedding_ref = string_field(obj, "embedding_ref")?;
    let audio_hash = match obj.get("audio_hash") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err("field audio_hash must be a string or null".into()),
    };
    Ok(ManifestRow {
        record: SongRecord {
            song_id,
            platform,
            streams,
            likes,
            aesthetics,
            released_at,
            embedding_ref,
            audio_hash,
        },
        streams_score: optional_number(obj, "streams_score")?,
        likes_score: optional_number(obj, "likes_score")?,
    })
}

/// Parses manifest text. Blank lines are skipped; line numbers start at 1.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRow>, String> {
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = parse_row(line).map_err(|e| format!("line {}: {e}", i + 1))?;
        if !seen.insert(row.record.song_id.clone()) {
            return Err(format!("line {}: duplicate song_id {}", i + 1, row.record.song_id));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_manifest(path: &Path) -> AppResult<Vec<ManifestRow>> {
    let text = fsutil::read_string(path)?;
    parse_manifest(&text).map_err(|m| AppError::format(path, m))
}

/// Song records only, in file order.
pub fn load_manifest(path: &Path) -> AppResult<Vec<SongRecord>> {
    Ok(read_manifest(path)?.into_iter().map(|r| r.record).collect())
}

#[derive(Serialize)]
struct Line<'a> {
    song_id: &'a str,
    platform: &'static str,
    streams: u64,
    likes: u64,
    coherence: Option<f64>,
    musicality: Option<f64>,
    memorability: Option<f64>,
    clarity: Option<f64>,
    naturalness: Option<f64>,
    released_at: Option<String>,
    embedding_ref: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    audio_hash: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    streams_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    likes_score: Option<f64>,
}

pub fn format_manifest(rows: &[ManifestRow]) -> AppResult<String> {
    let mut out = String::new();
    for row in rows {
        let r = &row.record;
        let a = r.aesthetics.map(|a| a.0);
        let pick = |k: usize| a.map(|v| v[k]);
        let line = Line {
            song_id: &r.song_id,
            platform: r.platform.as_str(),
            streams: r.streams,
            likes: r.likes,
            coherence: pick(0),
            musicality: pick(1),
            memorability: pick(2),
            clarity: pick(3),
            naturalness: pick(4),
            released_at: r.released_at.map(format_timestamp).transpose()?,
            embedding_ref: &r.embedding_ref,
            audio_hash: r.audio_hash.as_deref(),
            streams_score: row.streams_score,
            likes_score: row.likes_score,
        };
        out.push_str(&serde_json::to_string(&line).map_err(|e| AppError::Validation(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> AppResult<()> {
    fsutil::atomic_write(path, format_manifest(rows)?.as_bytes())
}
