//! Line-delimited JSON battle files.
//!
//! Each line: `battle_id`, `scores_a` and `scores_b` (objects with the seven
//! base score fields), `instrumental` (0 or 1) and `winner` (`"A"` or `"B"`).

use std::collections::HashSet;
use std::path::Path;

use apex_core::preference::{Battle, Dimension, ScoreVector, Winner};
use serde::{Deserialize, Serialize};

use crate::{fsutil, AppError, AppResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaseScores {
    streams: f64,
    likes: f64,
    coherence: f64,
    musicality: f64,
    memorability: f64,
    clarity: f64,
    naturalness: f64,
}

impl BaseScores {
    fn from_array(v: [f64; 7]) -> Self {
        Self {
            streams: v[0],
            likes: v[1],
            coherence: v[2],
            musicality: v[3],
            memorability: v[4],
            clarity: v[5],
            naturalness: v[6],
        }
    }

    fn to_array(self) -> [f64; 7] {
        [
            self.streams,
            self.likes,
            self.coherence,
            self.musicality,
            self.memorability,
            self.clarity,
            self.naturalness,
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    battle_id: String,
    scores_a: BaseScores,
    scores_b: BaseScores,
    instrumental: u8,
    winner: String,
}

fn parse_line(line: &str) -> Result<Battle, String> {
    let l: Line = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let instrumental = match l.instrumental {
        0 => false,
        1 => true,
        v => return Err(format!("instrumental must be 0 or 1, got {v}")),
    };
    let winner = match l.winner.as_str() {
        "A" => Winner::A,
        "B" => Winner::B,
        w => return Err(format!("winner must be \"A\" or \"B\", got {w:?}")),
    };
    Ok(Battle {
        battle_id: l.battle_id,
        scores_a: ScoreVector::new(l.scores_a.to_array()).map_err(|e| format!("scores_a: {e}"))?,
        scores_b: ScoreVector::new(l.scores_b.to_array()).map_err(|e| format!("scores_b: {e}"))?,
        instrumental,
        winner,
    })
}

pub fn parse_battles(text: &str) -> Result<Vec<Battle>, String> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let b = parse_line(line).map_err(|e| format!("line {}: {e}", i + 1))?;
        if !seen.insert(b.battle_id.clone()) {
            return Err(format!("line {}: duplicate battle_id {}", i + 1, b.battle_id));
        }
        out.push(b);
    }
    Ok(out)
}

pub fn format_battles(battles: &[Battle]) -> String {
    debug_assert_eq!(Dimension::BASE.len(), 7);
    let mut out = String::new();
    for b in battles {
        let line = Line {
            battle_id: b.battle_id.clone(),
            scores_a: BaseScores::from_array(b.scores_a.base()),
            scores_b: BaseScores::from_array(b.scores_b.base()),
            instrumental: b.instrumental as u8,
            winner: match b.winner {
                Winner::A => "A".into(),
                Winner::B => "B".into(),
            },
        };
        out.push_str(&serde_json::to_string(&line).expect("plain struct serializes"));
        out.push('\n');
    }
    out
}

pub fn read_battles(path: &Path) -> AppResult<Vec<Battle>> {
    let text = fsutil::read_string(path)?;
    parse_battles(&text).map_err(|m| AppError::format(path, m))
}

pub fn write_battles(path: &Path, battles: &[Battle]) -> AppResult<()> {
    fsutil::atomic_write(path, format_battles(battles).as_bytes())
}
