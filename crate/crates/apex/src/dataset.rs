//! Assembling training data from a manifest and an embedding store.

use std::collections::HashMap;
use std::path::Path;

use apex_core::data::{
    filter_songs, stratified_downsample, stratified_split, DatasetSplit, SegmentEmbeddingSet,
    SongRecord,
};
use apex_core::scores::{ScoreTransformConfig, Scorer};
use apex_core::trainer::{Splits, TrainingSong};

use crate::config::DataConfig;
use crate::embedding;
use crate::manifest::read_manifest;
use crate::AppResult;

/// A manifest record with its loaded embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Song {
    pub record: SongRecord,
    pub embeddings: SegmentEmbeddingSet,
}

/// Reads the manifest and every referenced embedding file. `embedding_ref`
/// is resolved relative to `store`.
pub fn load_songs(manifest: &Path, store: &Path) -> AppResult<Vec<Song>> {
    read_manifest(manifest)?
        .into_iter()
        .map(|row| {
            let path = store.join(&row.record.embedding_ref);
            let embeddings = embedding::read_embedding(&path, &row.record.song_id)?;
            Ok(Song {
                record: row.record,
                embeddings,
            })
        })
        .collect()
}

/// Filtered, split and labelled data ready for training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub split: DatasetSplit,
    pub splits: Splits,
    /// Songs dropped by the filter rules.
    pub n_filtered: usize,
}

/// Filters, optionally downsamples, splits on streams-score strata, fits the
/// score transform on the training partition and labels every partition
/// against it.
pub fn prepare(songs: &[Song], cfg: &DataConfig, seed: u64) -> AppResult<Prepared> {
    let records: Vec<SongRecord> = songs.iter().map(|s| s.record.clone()).collect();
    let mut kept = filter_songs(&records, &cfg.filter);
    let n_filtered = records.len() - kept.len();
    if let Some(target) = cfg.downsample {
        kept = stratified_downsample(&kept, target, cfg.n_strata, seed)?;
    }
    let split = stratified_split(&kept, cfg.fractions, cfg.n_strata, seed)?;

    let by_id: HashMap<&str, &Song> = songs.iter().map(|s| (s.record.song_id.as_str(), s)).collect();
    let train_records: Vec<SongRecord> = split
        .train_ids
        .iter()
        .map(|id| by_id[id.as_str()].record.clone())
        .collect();
    let scorer = Scorer::fit(&train_records, ScoreTransformConfig::new(cfg.alpha)?)?;
    let label = |ids: &[String]| -> AppResult<Vec<TrainingSong>> {
        ids.iter()
            .map(|id| {
                let s = by_id[id.as_str()];
                Ok(TrainingSong {
                    embeddings: s.embeddings.clone(),
                    labels: scorer.labels(&s.record)?,
                })
            })
            .collect()
    };
    Ok(Prepared {
        splits: Splits {
            train: label(&split.train_ids)?,
            val: label(&split.val_ids)?,
            test: label(&split.test_ids)?,
        },
        split,
        n_filtered,
    })
}
