//! Deterministic synthetic songs and battles with planted signals.

use std::path::Path;

use apex_core::data::{Aesthetics, Platform, SegmentEmbeddingSet, SongRecord, Timestamp};
use apex_core::preference::{Battle, ScoreVector, Winner};
use apex_core::{rng, EMBED_DIM, N_LAYERS};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::Song;
use crate::embedding;
use crate::manifest::{write_manifest, ManifestRow};
use crate::{AppError, AppResult};

/// How the engagement counts depend on the embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    Linear,
    Nonlinear,
    None,
}

impl Signal {
    pub fn as_str(self) -> &'static str {
        match self {
            Signal::Linear => "linear",
            Signal::Nonlinear => "nonlinear",
            Signal::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_songs: usize,
    pub min_segments: usize,
    pub max_segments: usize,
    pub seed: u64,
    pub signal: Signal,
    /// Width of each layer representation; files require 768.
    pub dim: usize,
}

impl SynthSpec {
    pub fn new(n_songs: usize, seed: u64, signal: Signal) -> Self {
        Self {
            n_songs,
            min_segments: 1,
            max_segments: 4,
            seed,
            signal,
            dim: EMBED_DIM,
        }
    }
}

/// Generated songs plus the planted functional behind each song's streams
/// count (standardized across songs).
#[derive(Debug, Clone)]
pub struct SynthData {
    pub spec: SynthSpec,
    pub songs: Vec<Song>,
    pub planted_streams: Vec<f64>,
}

const LATENT_RANK: usize = 8;
/// Layer weights of the planted functional.
const LAYER_MIX: [f64; 4] = [0.4, 0.3, 0.2, 0.1];
const BASE_NOISE: f64 = 0.5;
const SEGMENT_NOISE: f64 = 0.3;
const AESTHETIC_NOISE: f64 = 0.3;
const EPOCH_2024: i64 = 1_704_067_200;

fn normal(r: &mut impl Rng) -> f64 {
    StandardNormal.sample(r)
}

fn normal_vec(r: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * normal(r)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn standardize(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    v.iter().map(|x| (x - mean) / sd).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Generates songs whose embeddings follow a low-rank latent model. Under
/// `Linear`, the streams and likes counts are strictly increasing functions
/// of fixed linear functionals of the layer-mixed song-mean embedding; under
/// `Nonlinear` they are increasing functions of nonlinear ones; under `None`
/// they are independent of the embeddings. Aesthetic ratings are a separate
/// linear functional plus noise, or pure noise under `None`.
pub fn synth_songs(spec: &SynthSpec) -> AppResult<SynthData> {
    if spec.n_songs < 2 {
        return Err(AppError::Validation("n_songs must be at least 2".into()));
    }
    if spec.min_segments == 0 || spec.min_segments > spec.max_segments || spec.dim == 0 {
        return Err(AppError::Validation("invalid segment range or dim".into()));
    }
    let dim = spec.dim;
    let mut r = rng::seeded(spec.seed);
    let loadings: Vec<Vec<f64>> = (0..N_LAYERS)
        .map(|_| normal_vec(&mut r, dim * LATENT_RANK, 1.0 / (LATENT_RANK as f64).sqrt()))
        .collect();
    let directions: Vec<Vec<f64>> = (0..7).map(|_| normal_vec(&mut r, dim, 1.0)).collect();

    let mut sets = Vec::with_capacity(spec.n_songs);
    let mut functionals: Vec<[f64; 7]> = Vec::with_capacity(spec.n_songs);
    for i in 0..spec.n_songs {
        let u = normal_vec(&mut r, LATENT_RANK, 1.0);
        let base: Vec<f64> = loadings
            .iter()
            .flat_map(|a| {
                (0..dim)
                    .map(|d| dot(&a[d * LATENT_RANK..(d + 1) * LATENT_RANK], &u))
                    .collect::<Vec<_>>()
            })
            .map(|v| v + BASE_NOISE * normal(&mut r))
            .collect();
        let n_seg = r.random_range(spec.min_segments..=spec.max_segments);
        let mut values = Vec::with_capacity(n_seg * base.len());
        for _ in 0..n_seg {
            // stored values are f32, so generate exactly representable ones
            values.extend(base.iter().map(|b| (b + SEGMENT_NOISE * normal(&mut r)) as f32 as f64));
        }
        let mut mixed = vec![0.0; dim];
        for seg in values.chunks(N_LAYERS * dim) {
            for (l, layer) in seg.chunks(dim).enumerate() {
                for (m, v) in mixed.iter_mut().zip(layer) {
                    *m += LAYER_MIX[l] * v / n_seg as f64;
                }
            }
        }
        let mut f = [0.0; 7];
        for (slot, d) in f.iter_mut().zip(&directions) {
            *slot = dot(d, &mixed);
        }
        functionals.push(f);
        sets.push(
            SegmentEmbeddingSet::new(format!("song{i:05}"), n_seg, N_LAYERS, dim, values)
                .map_err(AppError::from)?,
        );
    }

    let column = |k: usize| standardize(&functionals.iter().map(|f| f[k]).collect::<Vec<_>>());
    let (z_a, z_b) = (column(0), column(1));
    let (t_streams, t_likes): (Vec<f64>, Vec<f64>) = match spec.signal {
        Signal::Linear => (z_a.clone(), z_b.clone()),
        Signal::Nonlinear => (
            z_a.iter().zip(&z_b).map(|(a, b)| a * b + (2.0 * a).sin()).collect(),
            z_a.iter().zip(&z_b).map(|(a, b)| b * b - a).collect(),
        ),
        Signal::None => (normal_vec(&mut r, spec.n_songs, 1.0), normal_vec(&mut r, spec.n_songs, 1.0)),
    };
    let planted_streams = standardize(&t_streams);
    let planted_likes = standardize(&t_likes);
    let aesthetic_z: Vec<Vec<f64>> = (2..7).map(column).collect();

    let songs = sets
        .into_iter()
        .enumerate()
        .map(|(i, embeddings)| {
            let mut ratings = [0.0; 5];
            for (k, slot) in ratings.iter_mut().enumerate() {
                let signal = match spec.signal {
                    Signal::None => 0.0,
                    _ => aesthetic_z[k][i],
                };
                *slot = 1.0 + 4.0 * sigmoid(signal + AESTHETIC_NOISE * normal(&mut r));
            }
            let id = embeddings.song_id().to_owned();
            let record = SongRecord {
                embedding_ref: format!("{id}.{}", embedding::EXTENSION),
                song_id: id,
                platform: if i % 2 == 0 { Platform::Suno } else { Platform::Udio },
                streams: (1000.0 * (1.2 * planted_streams[i]).exp()) as u64 + 1,
                likes: (100.0 * planted_likes[i].exp()) as u64 + 1,
                aesthetics: Some(Aesthetics::new(ratings)?),
                released_at: Some(Timestamp(EPOCH_2024 + 3600 * i as i64)),
                audio_hash: None,
            };
            Ok(Song { record, embeddings })
        })
        .collect::<AppResult<Vec<_>>>()?;
    Ok(SynthData {
        spec: spec.clone(),
        songs,
        planted_streams,
    })
}

/// Writes `manifest.jsonl` and `embeddings/<song>.apexemb` under `dir`.
pub fn write_synth(dir: &Path, data: &SynthData) -> AppResult<()> {
    let store = dir.join("embeddings");
    for s in &data.songs {
        embedding::write_embedding(&store.join(&s.record.embedding_ref), &s.embeddings)?;
    }
    let rows: Vec<ManifestRow> = data.songs.iter().map(|s| s.record.clone().into()).collect();
    write_manifest(&dir.join("manifest.jsonl"), &rows)
}

/// Which battle outcomes depend on the scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BattleSignal {
    /// A fixed linear rule on the score differences of all base dimensions.
    Linear,
    /// A linear rule on the aesthetic differences only.
    AestheticOnly,
    /// Fair coin flips.
    None,
}

const BATTLE_NOISE: f64 = 0.02;
const INSTRUMENTAL_RATE: f64 = 0.3;

/// Random battles whose winners follow `signal`.
pub fn synth_battles(n: usize, seed: u64, signal: BattleSignal) -> Vec<Battle> {
    let mut r = rng::seeded(seed);
    let side = |r: &mut rng::Rng| -> [f64; 7] {
        let mut v = [0.0; 7];
        v[0] = r.random_range(0.0..100.0);
        v[1] = r.random_range(0.0..100.0);
        for x in &mut v[2..] {
            *x = r.random_range(1.0..5.0);
        }
        v
    };
    (0..n)
        .map(|i| {
            let a = side(&mut r);
            let b = side(&mut r);
            let instrumental = r.random_bool(INSTRUMENTAL_RATE);
            let d = |k: usize| (a[k] - b[k]) / if k < 2 { 100.0 } else { 4.0 };
            let aesthetic: f64 = (2..7).map(d).sum::<f64>() / 5.0;
            let a_wins = match signal {
                BattleSignal::Linear => {
                    0.5 * d(0) + 0.3 * d(1) + 0.2 * aesthetic + BATTLE_NOISE * normal(&mut r) > 0.0
                }
                BattleSignal::AestheticOnly => aesthetic + BATTLE_NOISE * normal(&mut r) > 0.0,
                BattleSignal::None => r.random_bool(0.5),
            };
            Battle {
                battle_id: format!("b{i:05}"),
                scores_a: ScoreVector::new(a).expect("generated scores are in range"),
                scores_b: ScoreVector::new(b).expect("generated scores are in range"),
                instrumental,
                winner: if a_wins { Winner::A } else { Winner::B },
            }
        })
        .collect()
}
