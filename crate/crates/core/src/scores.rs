//! Engagement scores.
//!
//! Raw stream and like counts are mapped to percentile ranks within a
//! reference population, then through `s = (p / 100)^alpha * 100`. The
//! default exponent puts the 80th percentile at a score of 50, which
//! compresses the upper tail: only tracks far up the ranking get high scores.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Aesthetics, SongRecord};
use crate::{CoreError, Result};

/// `ln 0.5 / ln 0.8`, the exponent with `0.8^alpha = 0.5`.
pub fn default_alpha() -> f64 {
    libm::log(0.5) / libm::log(0.8)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTransformConfig {
    pub alpha: f64,
}

impl Default for ScoreTransformConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
        }
    }
}

impl ScoreTransformConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha.is_finite() {
            Ok(Self { alpha })
        } else {
            Err(CoreError::domain("alpha", alpha, "(0, inf)"))
        }
    }
}

/// Targets for one song, in natural units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelVector {
    pub streams_score: f64,
    pub likes_score: f64,
    pub aesthetics: Option<Aesthetics>,
}

impl LabelVector {
    /// Targets in head order: streams, likes, then the five aesthetics.
    /// Returns `None` when more than two targets are requested and the
    /// aesthetics are absent.
    pub fn targets(&self, n_tasks: usize) -> Option<[f64; 7]> {
        let mut out = [0.0; 7];
        out[0] = self.streams_score;
        out[1] = self.likes_score;
        if n_tasks > 2 {
            out[2..].copy_from_slice(&self.aesthetics?.0);
        }
        Some(out)
    }
}

/// Percentile ranks on `[0, 100]` using average ranks for ties:
/// `p = 100 * (r - 1) / (n - 1)`.
pub fn percentile_ranks(counts: &[u64]) -> Result<Vec<f64>> {
    let n = counts.len();
    if n < 2 {
        return Err(CoreError::PercentileUndefined(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| counts[i]);
    let mut out = alloc::vec![0.0; n];
    let denom = (n - 1) as f64;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && counts[order[end]] == counts[order[start]] {
            end += 1;
        }
        // mean of 1-based ranks start+1..=end, minus one
        let r0 = (start + end - 1) as f64 / 2.0;
        let p = 100.0 * r0 / denom;
        for &i in &order[start..end] {
            out[i] = p;
        }
        start = end;
    }
    Ok(out)
}

/// A frozen reference population. Counts from outside the population
/// (validation and test songs) are placed with the same average-rank rule,
/// so members of the population get exactly the values
/// [`percentile_ranks`] assigns them.
#[derive(Debug, Clone)]
pub struct PercentileReference {
    sorted: Vec<u64>,
}

impl PercentileReference {
    pub fn new(counts: &[u64]) -> Result<Self> {
        if counts.len() < 2 {
            return Err(CoreError::PercentileUndefined(counts.len()));
        }
        let mut sorted = counts.to_vec();
        sorted.sort_unstable();
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn percentile(&self, count: u64) -> f64 {
        let less = self.sorted.partition_point(|&c| c < count);
        let upto = self.sorted.partition_point(|&c| c <= count);
        let equal = upto - less;
        // 0-based average rank; a count not in the population sits half a
        // rank below the next larger member
        let r0 = less as f64 + (equal as f64 - 1.0) / 2.0;
        let p = 100.0 * r0 / (self.sorted.len() - 1) as f64;
        p.clamp(0.0, 100.0)
    }
}

/// `s = (p / 100)^alpha * 100`
pub fn power_transform(p: f64, cfg: &ScoreTransformConfig) -> Result<f64> {
    if !(0.0..=100.0).contains(&p) {
        return Err(CoreError::domain("percentile", p, "[0, 100]"));
    }
    Ok(libm::pow(p / 100.0, cfg.alpha) * 100.0)
}

pub fn build_labels(
    record: &SongRecord,
    streams_p: f64,
    likes_p: f64,
    cfg: &ScoreTransformConfig,
) -> Result<LabelVector> {
    Ok(LabelVector {
        streams_score: power_transform(streams_p, cfg)?,
        likes_score: power_transform(likes_p, cfg)?,
        aesthetics: record.aesthetics,
    })
}

/// Streams and likes references built from one population of records.
#[derive(Debug, Clone)]
pub struct Scorer {
    streams: PercentileReference,
    likes: PercentileReference,
    cfg: ScoreTransformConfig,
}

impl Scorer {
    pub fn fit(population: &[SongRecord], cfg: ScoreTransformConfig) -> Result<Self> {
        let streams: Vec<u64> = population.iter().map(|r| r.streams).collect();
        let likes: Vec<u64> = population.iter().map(|r| r.likes).collect();
        Ok(Self {
            streams: PercentileReference::new(&streams)?,
            likes: PercentileReference::new(&likes)?,
            cfg,
        })
    }

    pub fn labels(&self, record: &SongRecord) -> Result<LabelVector> {
        build_labels(
            record,
            self.streams.percentile(record.streams),
            self.likes.percentile(record.likes),
            &self.cfg,
        )
    }

    pub fn streams_score(&self, streams: u64) -> f64 {
        libm::pow(self.streams.percentile(streams) / 100.0, self.cfg.alpha) * 100.0
    }
}

/// Streams scores of a population against itself.
pub fn streams_scores(records: &[SongRecord], cfg: &ScoreTransformConfig) -> Result<Vec<f64>> {
    let counts: Vec<u64> = records.iter().map(|r| r.streams).collect();
    percentile_ranks(&counts)?
        .into_iter()
        .map(|p| power_transform(p, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Platform, SongRecord};

    fn rec(streams: u64, likes: u64, aesthetics: Option<Aesthetics>) -> SongRecord {
        SongRecord {
            song_id: "x".into(),
            platform: Platform::Suno,
            streams,
            likes,
            aesthetics,
            released_at: None,
            embedding_ref: "x.emb".into(),
            audio_hash: None,
        }
    }

    #[test]
    fn default_alpha_anchor() {
        let a = default_alpha();
        assert!((libm::pow(0.8, a) - 0.5).abs() < 1e-12);
        assert!((a - 3.106).abs() < 1e-3);
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile_ranks(&[10, 20, 30]).unwrap(), [0.0, 50.0, 100.0]);
        assert_eq!(percentile_ranks(&[5, 5, 10]).unwrap(), [25.0, 25.0, 100.0]);
        assert_eq!(percentile_ranks(&[7, 7]).unwrap(), [50.0, 50.0]);
        assert_eq!(
            percentile_ranks(&[3]),
            Err(CoreError::PercentileUndefined(1))
        );
        assert!(percentile_ranks(&[]).is_err());
    }

    #[test]
    fn power_transform_examples() {
        let cfg = ScoreTransformConfig::default();
        assert!((power_transform(80.0, &cfg).unwrap() - 50.0).abs() < 1e-9);
        assert_eq!(power_transform(100.0, &cfg).unwrap(), 100.0);
        assert_eq!(power_transform(0.0, &cfg).unwrap(), 0.0);
        // 100 * 0.5^3.1063 evaluated independently with std powf
        let expected = 100.0 * 0.5f64.powf(0.5f64.ln() / 0.8f64.ln());
        let s50 = power_transform(50.0, &cfg).unwrap();
        assert!((s50 - expected).abs() < 1e-12);
        assert!((s50 - 11.61).abs() < 1e-2);
        assert!(power_transform(100.5, &cfg).is_err());
        assert!(power_transform(-1e-9, &cfg).is_err());
    }

    #[test]
    fn build_labels_examples() {
        let cfg = ScoreTransformConfig::default();
        let a = Aesthetics::new([3.0, 3.5, 2.0, 4.0, 1.0]).unwrap();
        let l = build_labels(&rec(1, 1, Some(a)), 80.0, 80.0, &cfg).unwrap();
        assert!((l.streams_score - 50.0).abs() < 1e-9);
        assert!((l.likes_score - 50.0).abs() < 1e-9);
        assert_eq!(l.aesthetics, Some(a));
        let l = build_labels(&rec(1, 1, None), 0.0, 100.0, &cfg).unwrap();
        assert_eq!((l.streams_score, l.likes_score), (0.0, 100.0));
        assert_eq!(l.aesthetics, None);
        assert!(build_labels(&rec(1, 1, None), 101.0, 0.0, &cfg).is_err());
    }

    #[test]
    fn reference_reproduces_population_percentiles() {
        let counts = [4u64, 9, 9, 1, 30, 9, 2];
        let reference = PercentileReference::new(&counts).unwrap();
        let direct = percentile_ranks(&counts).unwrap();
        for (c, p) in counts.iter().zip(&direct) {
            assert_eq!(reference.percentile(*c), *p);
        }
        // outsiders interpolate and clamp
        assert_eq!(reference.percentile(0), 0.0);
        assert_eq!(reference.percentile(1000), 100.0);
        let between = reference.percentile(5);
        assert!(between > reference.percentile(4) && between < reference.percentile(9));
    }

    #[test]
    fn right_skew_on_grid() {
        let cfg = ScoreTransformConfig::default();
        for p in 1..100 {
            let p = p as f64;
            assert!(power_transform(p, &cfg).unwrap() < p);
        }
    }
}
