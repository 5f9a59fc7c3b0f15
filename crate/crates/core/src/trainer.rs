//! Training: input construction, the AdamW loop with cosine annealing and
//! early stopping, evaluation, and the loss x depth x mode x task grid.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::SegmentEmbeddingSet;
use crate::losses::{combine_losses, task_mse, LossKind, LossStrategy};
use crate::metrics::{mean_rows, regression_report, RegressionReport};
use crate::network::{
    backward, forward, forward_eval, init_model, ArchConfig, ModelParams, Phase, Task, TaskMode,
    TrunkDepth,
};
use crate::optim::{adamw_step, cosine_lr, OptimizerState};
use crate::rng;
use crate::scores::LabelVector;
use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    /// Every segment is its own sample; predictions are averaged per song at
    /// evaluation time.
    Segment,
    /// Segments are averaged into one sample per song.
    Song,
}

impl InputMode {
    pub const ALL: [InputMode; 2] = [InputMode::Segment, InputMode::Song];

    pub fn as_str(self) -> &'static str {
        match self {
            InputMode::Segment => "segment",
            InputMode::Song => "song",
        }
    }
}

/// One cell of the experiment grid plus optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub trunk_depth: TrunkDepth,
    pub input_mode: InputMode,
    pub task_mode: TaskMode,
    pub lr0: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub lr_min: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Uncertainty,
            trunk_depth: TrunkDepth::Two,
            input_mode: InputMode::Song,
            task_mode: TaskMode::Full,
            lr0: 1e-4,
            weight_decay: 1e-4,
            batch_size: 512,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            lr_min: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(CoreError::Config(format!("lr0 = {} must be positive", self.lr0)));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr0) {
            return Err(CoreError::Config(format!("lr_min = {} must lie in [0, lr0]", self.lr_min)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(CoreError::Config("weight_decay must be non-negative".into()));
        }
        if self.batch_size < 2 {
            return Err(CoreError::Config("batch_size must be at least 2".into()));
        }
        if self.patience < 1 || self.max_epochs < 1 {
            return Err(CoreError::Config("patience and max_epochs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn strategy(&self) -> LossStrategy {
        LossStrategy::new(self.loss)
    }

    /// Short identifier, e.g. `uncertainty-2-song-full`.
    pub fn cell_name(&self) -> String {
        format!(
            "{}-{}-{}-{}",
            self.loss.as_str(),
            self.trunk_depth.layers(),
            self.input_mode.as_str(),
            self.task_mode.as_str()
        )
    }
}

/// A song's embeddings with its targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSong {
    pub embeddings: SegmentEmbeddingSet,
    pub labels: LabelVector,
}

/// Model inputs for one song; each carries sample weight 1. Segment mode
/// yields one input per segment, song mode the per-layer, per-dimension mean
/// of all segments.
pub fn build_inputs(emb: &SegmentEmbeddingSet, mode: InputMode) -> Vec<Vec<f64>> {
    match mode {
        InputMode::Segment => emb.segments().map(<[f64]>::to_vec).collect(),
        InputMode::Song => {
            let mut mean = vec![0.0; emb.n_layers() * emb.dim()];
            for seg in emb.segments() {
                mean.iter_mut().zip(seg).for_each(|(m, v)| *m += v);
            }
            let n = emb.n_segments() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
            vec![mean]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
    /// Learned `log sigma^2` per task at the best epoch (all 0 unless the
    /// uncertainty strategy is used).
    pub log_variance: Vec<f64>,
    pub test_metrics: Option<BTreeMap<Task, RegressionReport>>,
}

/// Flattened samples and their targets.
struct SampleSet {
    width: usize,
    inputs: Vec<f64>,
    targets: Vec<[f64; 7]>,
}

impl SampleSet {
    fn build(songs: &[TrainingSong], mode: InputMode, n_tasks: usize) -> Result<Self> {
        let first = songs.first().ok_or(CoreError::Empty("training set"))?;
        let width = first.embeddings.n_layers() * first.embeddings.dim();
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for s in songs {
            let t = song_targets(s, n_tasks)?;
            for x in build_inputs(&s.embeddings, mode) {
                CoreError::check_len(width, x.len())?;
                inputs.extend_from_slice(&x);
                targets.push(t);
            }
        }
        Ok(Self {
            width,
            inputs,
            targets,
        })
    }

    fn len(&self) -> usize {
        self.targets.len()
    }
}

fn song_targets(song: &TrainingSong, n_tasks: usize) -> Result<[f64; 7]> {
    song.labels
        .targets(n_tasks)
        .ok_or_else(|| CoreError::MissingLabels(song.embeddings.song_id().into()))
}

const EVAL_CHUNK: usize = 256;

/// Song-level predictions (`[song][task]`). Segment-mode predictions are the
/// mean over the song's segments.
pub fn predict_songs(
    params: &ModelParams,
    songs: &[SegmentEmbeddingSet],
    mode: InputMode,
) -> Result<Vec<Vec<f64>>> {
    let width = params.arch().sample_width();
    let mut owners = Vec::new();
    let mut inputs = Vec::new();
    for (i, s) in songs.iter().enumerate() {
        for x in build_inputs(s, mode) {
            CoreError::check_len(width, x.len())?;
            inputs.extend_from_slice(&x);
            owners.push(i);
        }
    }
    let mut per_sample: Vec<Vec<f64>> = Vec::with_capacity(owners.len());
    for chunk in inputs.chunks(EVAL_CHUNK * width) {
        let preds = forward_eval(params, chunk)?;
        per_sample.extend((0..preds.batch_size()).map(|i| preds.row(i)));
    }
    let mut out = Vec::with_capacity(songs.len());
    let mut start = 0;
    while start < owners.len() {
        let mut end = start + 1;
        while end < owners.len() && owners[end] == owners[start] {
            end += 1;
        }
        out.push(mean_rows(&per_sample[start..end])?);
        start = end;
    }
    Ok(out)
}

/// Per-task song-level losses on a labelled set.
fn song_losses(
    params: &ModelParams,
    songs: &[TrainingSong],
    mode: InputMode,
) -> Result<Vec<f64>> {
    let n_tasks = params.arch().n_tasks();
    let embs: Vec<SegmentEmbeddingSet> = songs.iter().map(|s| s.embeddings.clone()).collect();
    let preds = predict_songs(params, &embs, mode)?;
    let mut losses = vec![0.0; n_tasks];
    for (p, s) in preds.iter().zip(songs) {
        let t = song_targets(s, n_tasks)?;
        for k in 0..n_tasks {
            let d = p[k] - t[k];
            losses[k] += d * d;
        }
    }
    let n = songs.len() as f64;
    losses.iter_mut().for_each(|l| *l /= n);
    Ok(losses)
}

fn eta_of(params: &ModelParams, kind: LossKind) -> Option<&[f64]> {
    (kind == LossKind::Uncertainty).then(|| params.log_variance())
}

/// Validation objective: the combined loss of song-level predictions.
pub fn validation_loss(
    params: &ModelParams,
    songs: &[TrainingSong],
    cfg: &TrainConfig,
) -> Result<f64> {
    let losses = song_losses(params, songs, cfg.input_mode)?;
    Ok(combine_losses(&losses, &cfg.strategy(), eta_of(params, cfg.loss))?.total)
}

/// Regression metrics per task at song level.
pub fn evaluate(
    params: &ModelParams,
    songs: &[TrainingSong],
    mode: InputMode,
) -> Result<BTreeMap<Task, RegressionReport>> {
    let tasks = params.arch().tasks.tasks();
    let embs: Vec<SegmentEmbeddingSet> = songs.iter().map(|s| s.embeddings.clone()).collect();
    let preds = predict_songs(params, &embs, mode)?;
    let targets = songs
        .iter()
        .map(|s| song_targets(s, tasks.len()))
        .collect::<Result<Vec<_>>>()?;
    let mut out = BTreeMap::new();
    for (k, task) in tasks.iter().enumerate() {
        let p: Vec<f64> = preds.iter().map(|r| r[k]).collect();
        let t: Vec<f64> = targets.iter().map(|r| r[k]).collect();
        out.insert(*task, regression_report(&p, &t)?);
    }
    Ok(out)
}

/// Mini-batch boundaries over `n` shuffled samples. A trailing batch of a
/// single sample is merged into the previous one (train-phase batch norm
/// needs at least two).
fn batch_bounds(n: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let mut bounds: Vec<(usize, usize)> = (0..n)
        .step_by(batch_size)
        .map(|s| (s, (s + batch_size).min(n)))
        .collect();
    if bounds.len() > 1 && bounds.last().is_some_and(|(s, e)| e - s == 1) {
        let (_, e) = bounds.pop().expect("non-empty");
        bounds.last_mut().expect("len > 1").1 = e;
    }
    bounds
}

/// One optimizer step on a batch; returns the combined training loss.
fn train_step(
    params: &mut ModelParams,
    state: &mut OptimizerState,
    decay: &[bool],
    inputs: &[f64],
    targets: &[[f64; 7]],
    cfg: &TrainConfig,
    strategy: &LossStrategy,
    lr: f64,
    rng: &mut rng::Rng,
) -> Result<f64> {
    let n_tasks = params.arch().n_tasks();
    let (_, cache) = forward(params, inputs, Phase::Train(rng))?;
    let cache = cache.expect("train phase returns a cache");
    let preds = cache.predictions();
    let mut losses = Vec::with_capacity(n_tasks);
    let mut grads = Vec::with_capacity(n_tasks);
    for (k, col) in preds.columns.iter().enumerate() {
        let t: Vec<f64> = targets.iter().map(|r| r[k]).collect();
        let (l, g) = task_mse(col, &t)?;
        losses.push(l);
        grads.push(g);
    }
    let combined = combine_losses(&losses, strategy, eta_of(params, cfg.loss))?;
    for (g, s) in grads.iter_mut().zip(&combined.task_scale) {
        g.iter_mut().for_each(|v| *v *= s);
    }
    let mut gset = backward(params, &cache, &grads)?;
    if let Some(deta) = combined.dtotal_deta {
        let r = params.layout().log_variance();
        gset.values[r].copy_from_slice(&deta);
    }
    adamw_step(params.values_mut(), &gset.values, decay, state, lr, cfg.weight_decay)?;
    Ok(combined.total)
}

/// Trains the full-size architecture for `cfg`, with the input shape taken
/// from the data.
pub fn train(
    train_set: &[TrainingSong],
    val_set: &[TrainingSong],
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    let first = train_set.first().ok_or(CoreError::Empty("training set"))?;
    let mut arch = ArchConfig::new(cfg.trunk_depth, cfg.task_mode);
    arch.n_layers = first.embeddings.n_layers();
    arch.input_dim = first.embeddings.dim();
    train_arch(train_set, val_set, cfg, arch)
}

/// Trains a model of the given architecture. Returns the parameters of the
/// epoch with the lowest validation loss.
pub fn train_arch(
    train_set: &[TrainingSong],
    val_set: &[TrainingSong],
    cfg: &TrainConfig,
    arch: ArchConfig,
) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    if arch.tasks != cfg.task_mode {
        return Err(CoreError::Config("architecture task mode differs from config".into()));
    }
    if val_set.is_empty() {
        return Err(CoreError::Empty("validation set"));
    }
    let n_tasks = arch.n_tasks();
    let samples = SampleSet::build(train_set, cfg.input_mode, n_tasks)?;
    for s in val_set {
        song_targets(s, n_tasks)?;
    }
    if samples.width != arch.sample_width() {
        return Err(CoreError::Dimension(format!(
            "samples have width {}, architecture expects {}",
            samples.width,
            arch.sample_width()
        )));
    }
    if samples.len() < 2 {
        return Err(CoreError::TooFewRecords {
            need: 2,
            have: samples.len(),
        });
    }

    let mut params = init_model(&arch, cfg.seed)?;
    let decay = params.layout().decay_mask();
    let mut state = OptimizerState::new(params.layout().n_params());
    let mut rng = rng::seeded(rng::mix(cfg.seed, 1));
    let strategy = cfg.strategy();

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut batch_inputs: Vec<f64> = Vec::new();
    let mut batch_targets: Vec<[f64; 7]> = Vec::new();

    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut since_best = 0;
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 0..cfg.max_epochs {
        let lr = cosine_lr(epoch, cfg.max_epochs, cfg.lr0, cfg.lr_min);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (step, (s, e)) in batch_bounds(order.len(), cfg.batch_size).into_iter().enumerate() {
            batch_inputs.clear();
            batch_targets.clear();
            for &i in &order[s..e] {
                batch_inputs.extend_from_slice(&samples.inputs[i * samples.width..(i + 1) * samples.width]);
                batch_targets.push(samples.targets[i]);
            }
            let loss = train_step(
                &mut params,
                &mut state,
                &decay,
                &batch_inputs,
                &batch_targets,
                cfg,
                &strategy,
                lr,
                &mut rng,
            )
            .map_err(|err| CoreError::Training {
                epoch,
                step,
                source: alloc::boxed::Box::new(err),
            })?;
            loss_sum += loss * (e - s) as f64;
        }
        let val_loss = validation_loss(&params, val_set, cfg).map_err(|err| CoreError::Training {
            epoch,
            step: usize::MAX,
            source: alloc::boxed::Box::new(err),
        })?;
        epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / samples.len() as f64,
            val_loss,
        });
        match &best {
            Some((_, b, _)) if val_loss >= *b => {
                since_best += 1;
                if since_best >= cfg.patience {
                    stop_reason = StopReason::Patience;
                    break;
                }
            }
            _ => {
                best = Some((epoch, val_loss, params.clone()));
                since_best = 0;
            }
        }
    }

    let (best_epoch, best_val_loss, best_params) = match best {
        Some(b) => b,
        // every validation loss was NaN; keep the final parameters
        None => (epochs.len() - 1, f64::NAN, params),
    };
    let report = TrainReport {
        config: cfg.clone(),
        epochs,
        best_epoch,
        best_val_loss,
        stop_reason,
        log_variance: best_params.log_variance().to_vec(),
        test_metrics: None,
    };
    Ok((best_params, report))
}

/// The three data partitions used by a training run.
#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<TrainingSong>,
    pub val: Vec<TrainingSong>,
    pub test: Vec<TrainingSong>,
}

/// Train on `data.train`, stop on `data.val`, report metrics on `data.test`.
pub fn train_and_evaluate(data: &Splits, cfg: &TrainConfig) -> Result<(ModelParams, TrainReport)> {
    let (params, mut report) = train(&data.train, &data.val, cfg)?;
    if !data.test.is_empty() {
        report.test_metrics = Some(evaluate(&params, &data.test, cfg.input_mode)?);
    }
    Ok((params, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxes {
    pub losses: Vec<LossKind>,
    pub depths: Vec<TrunkDepth>,
    pub modes: Vec<InputMode>,
    pub tasks: Vec<TaskMode>,
}

impl GridAxes {
    /// 3 losses x 2 depths x 2 input modes x 2 task sets.
    pub fn full() -> Self {
        Self {
            losses: LossKind::ALL.to_vec(),
            depths: TrunkDepth::ALL.to_vec(),
            modes: InputMode::ALL.to_vec(),
            tasks: TaskMode::ALL.to_vec(),
        }
    }

    /// Cartesian product in loss, depth, mode, task order. Each cell's seed
    /// is derived from the base seed and the cell's own settings, so it does
    /// not depend on which other cells exist or the order they run in.
    pub fn cells(&self, base: &TrainConfig) -> Result<Vec<TrainConfig>> {
        if self.losses.is_empty() || self.depths.is_empty() || self.modes.is_empty() || self.tasks.is_empty() {
            return Err(CoreError::Empty("grid axis"));
        }
        let mut out = Vec::new();
        for &loss in &self.losses {
            for &trunk_depth in &self.depths {
                for &input_mode in &self.modes {
                    for &task_mode in &self.tasks {
                        let mut cfg = TrainConfig {
                            loss,
                            trunk_depth,
                            input_mode,
                            task_mode,
                            ..base.clone()
                        };
                        cfg.seed = cell_seed(base.seed, &cfg);
                        out.push(cfg);
                    }
                }
            }
        }
        Ok(out)
    }
}

pub fn cell_seed(base_seed: u64, cfg: &TrainConfig) -> u64 {
    let code = (cfg.loss as u64) << 24
        | (cfg.trunk_depth.layers() as u64) << 16
        | (cfg.input_mode as u64) << 8
        | cfg.task_mode as u64;
    rng::mix(base_seed, code)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub config: TrainConfig,
    pub outcome: core::result::Result<TrainReport, String>,
}

/// Runs every cell, in `order` if given (a permutation of cell indices), and
/// returns results in enumeration order. A failing cell is recorded and the
/// remaining cells still run.
pub fn run_grid(
    data: &Splits,
    axes: &GridAxes,
    base: &TrainConfig,
    order: Option<&[usize]>,
) -> Result<Vec<GridCell>> {
    let cells = axes.cells(base)?;
    let order: Vec<usize> = match order {
        Some(o) => {
            let mut sorted = o.to_vec();
            sorted.sort_unstable();
            if sorted != (0..cells.len()).collect::<Vec<_>>() {
                return Err(CoreError::Config("order is not a permutation of the cells".into()));
            }
            o.to_vec()
        }
        None => (0..cells.len()).collect(),
    };
    let mut results: Vec<Option<GridCell>> = vec![None; cells.len()];
    for i in order {
        let cfg = &cells[i];
        let outcome = train_and_evaluate(data, cfg)
            .map(|(_, r)| r)
            .map_err(|e| format!("{e}"));
        results[i] = Some(GridCell {
            config: cfg.clone(),
            outcome,
        });
    }
    Ok(results.into_iter().map(|c| c.expect("every cell ran")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Aesthetics;

    fn emb(id: &str, segs: &[Vec<f64>]) -> SegmentEmbeddingSet {
        let w = segs[0].len();
        SegmentEmbeddingSet::new(id, segs.len(), 4, w / 4, segs.concat()).unwrap()
    }

    #[test]
    fn single_segment_modes_agree() {
        let e = emb("a", &[(0..16).map(|i| i as f64).collect()]);
        assert_eq!(build_inputs(&e, InputMode::Song), build_inputs(&e, InputMode::Segment));
    }

    #[test]
    fn opposite_segments_average_to_zero() {
        let v: Vec<f64> = (0..16).map(|i| i as f64 * 0.3 - 1.0).collect();
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let e = emb("a", &[v, neg]);
        let song = build_inputs(&e, InputMode::Song);
        assert_eq!(song.len(), 1);
        assert!(song[0].iter().all(|x| *x == 0.0));
        assert_eq!(build_inputs(&e, InputMode::Segment).len(), 2);
    }

    #[test]
    fn batch_bounds_merge_singletons() {
        assert_eq!(batch_bounds(10, 4), [(0, 4), (4, 8), (8, 10)]);
        assert_eq!(batch_bounds(9, 4), [(0, 4), (4, 9)]);
        assert_eq!(batch_bounds(3, 8), [(0, 3)]);
    }

    #[test]
    fn config_validation_and_json() {
        let cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        assert!(TrainConfig { batch_size: 1, ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { lr0: 0.0, ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { patience: 0, ..cfg.clone() }.validate().is_err());
        assert_eq!(cfg.cell_name(), "uncertainty-2-song-full");
    }

    #[test]
    fn grid_enumeration() {
        let base = TrainConfig::default();
        let cells = GridAxes::full().cells(&base).unwrap();
        assert_eq!(cells.len(), 24);
        let mut names: Vec<String> = cells.iter().map(TrainConfig::cell_name).collect();
        assert_eq!(names[0], "equal-2-segment-popularity");
        assert_eq!(names[23], "uncertainty-3-song-full");
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 24);
        let one = GridAxes {
            losses: vec![LossKind::Weighted],
            depths: vec![TrunkDepth::Three],
            modes: vec![InputMode::Segment],
            tasks: vec![TaskMode::Full],
        };
        let single = one.cells(&base).unwrap();
        assert_eq!(single.len(), 1);
        // per-cell seeds do not depend on the rest of the grid
        let same = cells.iter().find(|c| c.cell_name() == single[0].cell_name()).unwrap();
        assert_eq!(same.seed, single[0].seed);
        let empty = GridAxes { losses: vec![], ..GridAxes::full() };
        assert!(empty.cells(&base).is_err());
    }

    #[test]
    fn missing_aesthetics_rejected_in_full_mode() {
        let e = emb("a", &[vec![0.0; 16]]);
        let song = TrainingSong {
            embeddings: e,
            labels: LabelVector { streams_score: 1.0, likes_score: 2.0, aesthetics: None },
        };
        assert!(song_targets(&song, 2).is_ok());
        assert_eq!(song_targets(&song, 7), Err(CoreError::MissingLabels("a".into())));
        let with = TrainingSong {
            labels: LabelVector {
                aesthetics: Some(Aesthetics::new([2.0; 5]).unwrap()),
                ..song.labels
            },
            ..song
        };
        assert_eq!(song_targets(&with, 7).unwrap()[6], 2.0);
    }
}
