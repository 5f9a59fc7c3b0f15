//! Song records, embedding sets, filtering and stratified sampling.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::scores::{self, ScoreTransformConfig};
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Udio,
    Suno,
    Other,
}

impl Platform {
    pub fn as_str(self) -> &'static str {
        match self {
            Platform::Udio => "udio",
            Platform::Suno => "suno",
            Platform::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "udio" => Some(Platform::Udio),
            "suno" => Some(Platform::Suno),
            "other" => Some(Platform::Other),
            _ => None,
        }
    }
}

/// Names of the five aesthetic dimensions, in storage order.
pub const AESTHETIC_NAMES: [&str; 5] = [
    "coherence",
    "musicality",
    "memorability",
    "clarity",
    "naturalness",
];

/// Five ratings on `[1, 5]`: coherence, musicality, memorability, clarity,
/// naturalness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aesthetics(pub [f64; 5]);

impl Aesthetics {
    pub fn new(values: [f64; 5]) -> Result<Self> {
        for (v, name) in values.iter().zip(AESTHETIC_NAMES) {
            if !(1.0..=5.0).contains(v) {
                return Err(CoreError::domain(name, *v, "[1, 5]"));
            }
        }
        Ok(Self(values))
    }
}

/// Seconds since the Unix epoch, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp(pub i64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SongRecord {
    pub song_id: String,
    pub platform: Platform,
    pub streams: u64,
    pub likes: u64,
    pub aesthetics: Option<Aesthetics>,
    pub released_at: Option<Timestamp>,
    pub embedding_ref: String,
    /// Precomputed audio fingerprint, used only by hash-based dedup.
    pub audio_hash: Option<String>,
}

/// Per-segment, per-layer embeddings of one song, stored segment-major,
/// then layer-major, then dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentEmbeddingSet {
    song_id: String,
    n_segments: usize,
    n_layers: usize,
    dim: usize,
    values: Vec<f64>,
}

impl SegmentEmbeddingSet {
    pub fn new(
        song_id: impl Into<String>,
        n_segments: usize,
        n_layers: usize,
        dim: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if n_segments == 0 {
            return Err(CoreError::Dimension("n_segments must be at least 1".into()));
        }
        if n_layers == 0 || dim == 0 {
            return Err(CoreError::Dimension(format!(
                "layer shape ({n_layers}, {dim}) is empty"
            )));
        }
        let expected = n_segments * n_layers * dim;
        if values.len() != expected {
            return Err(CoreError::Dimension(format!(
                "expected {expected} values for {n_segments}x{n_layers}x{dim}, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::Dimension(format!("value {i} is not finite")));
        }
        Ok(Self {
            song_id: song_id.into(),
            n_segments,
            n_layers,
            dim,
            values,
        })
    }

    pub fn song_id(&self) -> &str {
        &self.song_id
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The `n_layers * dim` block of one segment.
    pub fn segment(&self, i: usize) -> &[f64] {
        let w = self.n_layers * self.dim;
        &self.values[i * w..(i + 1) * w]
    }

    pub fn segments(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_layers * self.dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DedupKey {
    SongId,
    AudioHash,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterRules {
    pub drop_zero_streams: bool,
    /// `None` disables deduplication.
    pub dedup: Option<DedupKey>,
    /// Songs released strictly after this instant are dropped.
    pub recency_cutoff: Option<Timestamp>,
}

impl FilterRules {
    pub fn none() -> Self {
        Self {
            drop_zero_streams: false,
            dedup: None,
            recency_cutoff: None,
        }
    }
}

impl Default for FilterRules {
    fn default() -> Self {
        Self {
            drop_zero_streams: true,
            dedup: Some(DedupKey::SongId),
            recency_cutoff: None,
        }
    }
}

/// Drops records that fail any enabled rule, keeping relative order. Dedup
/// keeps the first occurrence; records without an audio hash are never
/// treated as duplicates under hash-based dedup.
pub fn filter_songs(records: &[SongRecord], rules: &FilterRules) -> Vec<SongRecord> {
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        if rules.drop_zero_streams && r.streams == 0 {
            continue;
        }
        if let (Some(cutoff), Some(released)) = (rules.recency_cutoff, r.released_at) {
            if released > cutoff {
                continue;
            }
        }
        let key = match rules.dedup {
            None => None,
            Some(DedupKey::SongId) => Some(r.song_id.as_str()),
            Some(DedupKey::AudioHash) => r.audio_hash.as_deref(),
        };
        if let Some(k) = key {
            if !seen.insert(k) {
                continue;
            }
        }
        out.push(r.clone());
    }
    out
}

/// Train / test / validation partition of song ids, in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub val_ids: Vec<String>,
    /// Train, test, validation.
    pub fractions: [f64; 3],
}

/// Default train / test / validation fractions.
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.85, 0.10, 0.05];
pub const DEFAULT_STRATA: usize = 10;

fn check_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(CoreError::InvalidFractions(format!(
            "{fractions:?} contains a negative or non-finite value"
        )));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CoreError::InvalidFractions(format!(
            "{fractions:?} sums to {sum}"
        )));
    }
    Ok(())
}

/// Largest-remainder apportionment of `total` units by `fractions`. Equal
/// remainders go to the lower index.
pub fn largest_remainder(total: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| libm::floor(*q) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - libm::floor(quotas[a]);
        let rb = quotas[b] - libm::floor(quotas[b]);
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Per-stratum, per-part counts whose row sums are the stratum sizes and
/// whose column sums are the largest-remainder totals of the whole
/// population. Each cell is the floor of its exact quota, plus one for the
/// cells with the largest fractional parts.
pub fn stratum_allocation(stratum_sizes: &[usize], fractions: &[f64]) -> Vec<Vec<usize>> {
    let total: usize = stratum_sizes.iter().sum();
    let targets = largest_remainder(total, fractions);
    let parts = fractions.len();

    let mut alloc_table: Vec<Vec<usize>> = Vec::with_capacity(stratum_sizes.len());
    let mut frac_parts: Vec<(f64, usize, usize)> = Vec::new();
    let mut row_left: Vec<usize> = Vec::with_capacity(stratum_sizes.len());
    let mut col_left = targets.clone();
    for (h, &size) in stratum_sizes.iter().enumerate() {
        let mut row = Vec::with_capacity(parts);
        for (s, f) in fractions.iter().enumerate() {
            let q = f * size as f64;
            let fl = libm::floor(q);
            row.push(fl as usize);
            col_left[s] = col_left[s].saturating_sub(fl as usize);
            frac_parts.push((q - fl, h, s));
        }
        row_left.push(size - row.iter().sum::<usize>());
        alloc_table.push(row);
    }
    frac_parts.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut bumped = alloc::vec![alloc::vec![false; parts]; stratum_sizes.len()];
    for &(_, h, s) in &frac_parts {
        if row_left[h] > 0 && col_left[s] > 0 {
            alloc_table[h][s] += 1;
            bumped[h][s] = true;
            row_left[h] -= 1;
            col_left[s] -= 1;
        }
    }
    // The greedy pass can strand a unit when the remaining rows and columns
    // only meet in already-bumped cells; place those anywhere feasible.
    for h in 0..stratum_sizes.len() {
        while row_left[h] > 0 {
            // column targets only drift from the row sums through float
            // rounding of the quotas; fall back to the largest fraction
            let s = (0..parts)
                .filter(|&s| col_left[s] > 0)
                .min_by_key(|&s| bumped[h][s])
                .unwrap_or_else(|| {
                    (0..parts)
                        .max_by(|&a, &b| fractions[a].total_cmp(&fractions[b]).then(b.cmp(&a)))
                        .unwrap_or(0)
                });
            alloc_table[h][s] += 1;
            row_left[h] -= 1;
            col_left[s] = col_left[s].saturating_sub(1);
        }
    }
    alloc_table
}

/// Assigns each item (given by its stratum label) to a part. Items of each
/// stratum are shuffled with the seed, then dealt out in part order
/// according to [`stratum_allocation`].
pub fn stratified_assign(
    strata: &[usize],
    n_strata: usize,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<usize>> {
    check_fractions(fractions)?;
    let mut members: Vec<Vec<usize>> = alloc::vec![Vec::new(); n_strata];
    for (i, &h) in strata.iter().enumerate() {
        if h >= n_strata {
            return Err(CoreError::Config(format!(
                "stratum label {h} out of range for {n_strata} strata"
            )));
        }
        members[h].push(i);
    }
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let table = stratum_allocation(&sizes, fractions);
    let mut rng = rng::seeded(seed);
    let mut part = alloc::vec![0usize; strata.len()];
    for (group, counts) in members.iter_mut().zip(&table) {
        group.shuffle(&mut rng);
        let mut it = group.iter();
        for (s, &c) in counts.iter().enumerate() {
            for &i in it.by_ref().take(c) {
                part[i] = s;
            }
        }
    }
    Ok(part)
}

/// Quantile bins of `values`: `floor(n_strata * (r - 1) / n)` with `r` the
/// average rank, so tied values always share a bin.
pub fn quantile_strata(values: &[f64], n_strata: usize) -> Vec<usize> {
    let n = values.len();
    crate::math::average_ranks(values)
        .into_iter()
        .map(|r| libm::floor(n_strata as f64 * (r - 1.0) / n as f64) as usize)
        .map(|b| b.min(n_strata - 1))
        .collect()
}

fn streams_strata(records: &[SongRecord], n_strata: usize) -> Result<Vec<usize>> {
    if n_strata == 0 {
        return Err(CoreError::Config("n_strata must be positive".into()));
    }
    if records.len() < n_strata {
        return Err(CoreError::TooFewRecords {
            need: n_strata,
            have: records.len(),
        });
    }
    if records.len() < 2 {
        return Ok(alloc::vec![0; records.len()]);
    }
    let scores = scores::streams_scores(records, &ScoreTransformConfig::default())?;
    Ok(quantile_strata(&scores, n_strata))
}

/// Splits records into train / test / validation, stratified on quantile
/// bins of the streams score.
pub fn stratified_split(
    records: &[SongRecord],
    fractions: [f64; 3],
    n_strata: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    check_fractions(&fractions)?;
    let strata = streams_strata(records, n_strata)?;
    let part = stratified_assign(&strata, n_strata, &fractions, seed)?;
    let mut split = DatasetSplit {
        train_ids: Vec::new(),
        test_ids: Vec::new(),
        val_ids: Vec::new(),
        fractions,
    };
    for (r, p) in records.iter().zip(part) {
        let bucket = match p {
            0 => &mut split.train_ids,
            1 => &mut split.test_ids,
            _ => &mut split.val_ids,
        };
        bucket.push(r.song_id.clone());
    }
    Ok(split)
}

/// Indices of a stratified sample of `target` items, in input order.
pub fn downsample_indices(
    strata: &[usize],
    n_strata: usize,
    target: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let n = strata.len();
    if target > n {
        return Err(CoreError::TooFewRecords {
            need: target,
            have: n,
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let keep = target as f64 / n as f64;
    let part = stratified_assign(strata, n_strata, &[keep, 1.0 - keep], seed)?;
    Ok((0..n).filter(|&i| part[i] == 0).collect())
}

/// Stratified sample of `target_size` records preserving the distribution of
/// streams-score quantile bins.
pub fn stratified_downsample(
    records: &[SongRecord],
    target_size: usize,
    n_strata: usize,
    seed: u64,
) -> Result<Vec<SongRecord>> {
    if target_size > records.len() {
        return Err(CoreError::TooFewRecords {
            need: target_size,
            have: records.len(),
        });
    }
    let strata = streams_strata(records, n_strata)?;
    Ok(downsample_indices(&strata, n_strata, target_size, seed)?
        .into_iter()
        .map(|i| records[i].clone())
        .collect())
}
