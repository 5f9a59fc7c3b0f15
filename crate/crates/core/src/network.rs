//! The multi-task model.
//!
//! A learned linear combination collapses the per-layer encoder embeddings of
//! a segment into one vector. A shared trunk of dense blocks follows, then one
//! head per task. Every hidden dense block is
//! `linear -> batch norm -> GELU -> dropout`; each head ends in a bare linear
//! projection to a logit, mapped to `(0, 100)` for popularity tasks and
//! `(1, 5)` for aesthetic tasks by a scaled sigmoid.
//!
//! All learnable values live in one flat `Vec<f64>` addressed through a
//! [`Layout`]; batch-norm running statistics live in a second vector. The
//! flat order is also the checkpoint order.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::math::{axpy, dot, gelu, gelu_grad, sigmoid};
use crate::rng::{self, Rng};
use crate::{CoreError, Result, EMBED_DIM, N_LAYERS};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Number of shared trunk layers; serialized as the integer 2 or 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum TrunkDepth {
    Two,
    Three,
}

impl TryFrom<u8> for TrunkDepth {
    type Error = String;

    fn try_from(n: u8) -> core::result::Result<Self, String> {
        TrunkDepth::from_layers(n as usize).ok_or_else(|| format!("trunk depth must be 2 or 3, got {n}"))
    }
}

impl From<TrunkDepth> for u8 {
    fn from(d: TrunkDepth) -> u8 {
        d.layers() as u8
    }
}

impl TrunkDepth {
    pub const ALL: [TrunkDepth; 2] = [TrunkDepth::Two, TrunkDepth::Three];

    pub fn layers(self) -> usize {
        match self {
            TrunkDepth::Two => 2,
            TrunkDepth::Three => 3,
        }
    }

    pub fn from_layers(n: usize) -> Option<Self> {
        match n {
            2 => Some(TrunkDepth::Two),
            3 => Some(TrunkDepth::Three),
            _ => None,
        }
    }

    /// Trunk widths after the input: `512, 256` or `512, 384, 256`.
    pub fn widths(self) -> Vec<usize> {
        match self {
            TrunkDepth::Two => vec![512, 256],
            TrunkDepth::Three => vec![512, 384, 256],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    /// Streams and likes heads.
    Popularity,
    /// Streams, likes and the five aesthetic heads.
    Full,
}

impl TaskMode {
    pub const ALL: [TaskMode; 2] = [TaskMode::Popularity, TaskMode::Full];

    pub fn n_tasks(self) -> usize {
        match self {
            TaskMode::Popularity => 2,
            TaskMode::Full => 7,
        }
    }

    pub fn tasks(self) -> &'static [Task] {
        &Task::ALL[..self.n_tasks()]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskMode::Popularity => "popularity",
            TaskMode::Full => "full",
        }
    }
}

/// One prediction head, in head order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Streams,
    Likes,
    Coherence,
    Musicality,
    Memorability,
    Clarity,
    Naturalness,
}

impl Task {
    pub const ALL: [Task; 7] = [
        Task::Streams,
        Task::Likes,
        Task::Coherence,
        Task::Musicality,
        Task::Memorability,
        Task::Clarity,
        Task::Naturalness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Streams => "streams",
            Task::Likes => "likes",
            Task::Coherence => "coherence",
            Task::Musicality => "musicality",
            Task::Memorability => "memorability",
            Task::Clarity => "clarity",
            Task::Naturalness => "naturalness",
        }
    }

    pub fn is_popularity(self) -> bool {
        matches!(self, Task::Streams | Task::Likes)
    }

    /// `(offset, span)` with `prediction = offset + span * sigmoid(logit)`.
    pub fn output_scale(self) -> (f64, f64) {
        if self.is_popularity() {
            (0.0, 100.0)
        } else {
            (1.0, 4.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Encoder layers per segment embedding.
    pub n_layers: usize,
    pub input_dim: usize,
    /// Hidden widths of the shared trunk.
    pub trunk: Vec<usize>,
    /// Hidden widths of each head before its scalar output.
    pub head: Vec<usize>,
    pub trunk_dropout: f64,
    pub head_dropout: f64,
    pub tasks: TaskMode,
}

impl ArchConfig {
    /// Full-size model: `4 x 768` input, trunk per `depth`, heads
    /// `256 -> 128 -> 64 -> 1`, dropout 0.3 / 0.1.
    pub fn new(depth: TrunkDepth, tasks: TaskMode) -> Self {
        Self {
            n_layers: N_LAYERS,
            input_dim: EMBED_DIM,
            trunk: depth.widths(),
            head: vec![128, 64],
            trunk_dropout: 0.3,
            head_dropout: 0.1,
            tasks,
        }
    }

    /// Small analog used for gradient checks: input width 8, trunk
    /// `8 -> 4 -> 2` (or `8 -> 6 -> 4 -> 2`), heads `2 -> 3 -> 2 -> 1`.
    pub fn reduced(depth: TrunkDepth, tasks: TaskMode) -> Self {
        Self {
            n_layers: N_LAYERS,
            input_dim: 8,
            trunk: match depth {
                TrunkDepth::Two => vec![4, 2],
                TrunkDepth::Three => vec![6, 4, 2],
            },
            head: vec![3, 2],
            trunk_dropout: 0.3,
            head_dropout: 0.1,
            tasks,
        }
    }

    pub fn without_dropout(mut self) -> Self {
        self.trunk_dropout = 0.0;
        self.head_dropout = 0.0;
        self
    }

    pub fn n_tasks(&self) -> usize {
        self.tasks.n_tasks()
    }

    /// Flattened width of one input sample.
    pub fn sample_width(&self) -> usize {
        self.n_layers * self.input_dim
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("trunk_dropout", self.trunk_dropout),
            ("head_dropout", self.head_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(CoreError::Config(format!("{name} = {p} not in [0, 1)")));
            }
        }
        if self.n_layers == 0 || self.input_dim == 0 || self.trunk.is_empty() {
            return Err(CoreError::Config("empty input or trunk".into()));
        }
        if self.trunk.iter().chain(&self.head).any(|&w| w == 0) {
            return Err(CoreError::Config("zero layer width".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    AggWeight,
    AggBias,
    Weight,
    Bias,
    NormGain,
    NormShift,
    LogVariance,
}

impl ParamKind {
    /// Decoupled weight decay applies to linear weights and biases only.
    pub fn decays(self) -> bool {
        matches!(
            self,
            ParamKind::AggWeight | ParamKind::AggBias | ParamKind::Weight | ParamKind::Bias
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub kind: ParamKind,
    pub offset: usize,
    /// `(rows, cols)`; weights are `(out, in)`.
    pub shape: (usize, usize),
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct NormSlot {
    gain: usize,
    shift: usize,
    /// Offset of the running mean in the running-stat vector; the running
    /// variance follows it.
    running: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct DenseSlot {
    in_dim: usize,
    out_dim: usize,
    weight: usize,
    bias: usize,
    norm: Option<NormSlot>,
}

/// Positions of every tensor in the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    specs: Vec<TensorSpec>,
    agg_weight: usize,
    agg_bias: usize,
    trunk: Vec<DenseSlot>,
    heads: Vec<Vec<DenseSlot>>,
    eta: usize,
    n_params: usize,
    n_running: usize,
}

impl Layout {
    pub fn new(arch: &ArchConfig) -> Self {
        let mut b = LayoutBuilder::default();
        let agg_weight = b.push("agg.weight", ParamKind::AggWeight, (1, arch.n_layers));
        let agg_bias = b.push("agg.bias", ParamKind::AggBias, (1, 1));
        let mut in_dim = arch.input_dim;
        let mut trunk = Vec::new();
        for (i, &out) in arch.trunk.iter().enumerate() {
            trunk.push(b.dense(&format!("trunk.{i}"), in_dim, out, true));
            in_dim = out;
        }
        let trunk_out = in_dim;
        let mut heads = Vec::new();
        for task in arch.tasks.tasks() {
            let mut layers = Vec::new();
            let mut d = trunk_out;
            for (j, &out) in arch.head.iter().enumerate() {
                layers.push(b.dense(&format!("head.{}.{j}", task.name()), d, out, true));
                d = out;
            }
            layers.push(b.dense(&format!("head.{}.out", task.name()), d, 1, false));
            heads.push(layers);
        }
        let eta = b.push("log_variance", ParamKind::LogVariance, (1, arch.n_tasks()));
        Layout {
            specs: b.specs,
            agg_weight,
            agg_bias,
            trunk,
            heads,
            eta,
            n_params: b.n_params,
            n_running: b.n_running,
        }
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn spec(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_running(&self) -> usize {
        self.n_running
    }

    /// Range of the per-task log-variances inside the flat vector.
    pub fn log_variance(&self) -> core::ops::Range<usize> {
        self.eta..self.n_params
    }

    /// Per-coordinate weight-decay flags.
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n_params];
        for s in &self.specs {
            if s.kind.decays() {
                mask[s.range()].iter_mut().for_each(|m| *m = true);
            }
        }
        mask
    }

    fn dense_slots(&self) -> impl Iterator<Item = &DenseSlot> {
        self.trunk.iter().chain(self.heads.iter().flatten())
    }

    fn n_dropout_layers(&self) -> usize {
        self.dense_slots().filter(|d| d.norm.is_some()).count()
    }
}

#[derive(Default)]
struct LayoutBuilder {
    specs: Vec<TensorSpec>,
    n_params: usize,
    n_running: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: &str, kind: ParamKind, shape: (usize, usize)) -> usize {
        let offset = self.n_params;
        self.specs.push(TensorSpec {
            name: name.into(),
            kind,
            offset,
            shape,
        });
        self.n_params += shape.0 * shape.1;
        offset
    }

    fn dense(&mut self, prefix: &str, in_dim: usize, out_dim: usize, norm: bool) -> DenseSlot {
        let weight = self.push(&format!("{prefix}.weight"), ParamKind::Weight, (out_dim, in_dim));
        let bias = self.push(&format!("{prefix}.bias"), ParamKind::Bias, (1, out_dim));
        let norm = norm.then(|| {
            let gain = self.push(&format!("{prefix}.norm_gain"), ParamKind::NormGain, (1, out_dim));
            let shift =
                self.push(&format!("{prefix}.norm_shift"), ParamKind::NormShift, (1, out_dim));
            let running = self.n_running;
            self.n_running += 2 * out_dim;
            NormSlot {
                gain,
                shift,
                running,
            }
        });
        DenseSlot {
            in_dim,
            out_dim,
            weight,
            bias,
            norm,
        }
    }
}

/// All learnable values plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    arch: ArchConfig,
    layout: Layout,
    values: Vec<f64>,
    running: Vec<f64>,
}

impl ModelParams {
    /// Parameters with every learnable value zero and running statistics at
    /// mean 0, variance 1.
    pub fn zeros(arch: ArchConfig) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut running = vec![0.0; layout.n_running];
        for d in layout.dense_slots() {
            if let Some(n) = d.norm {
                running[n.running + d.out_dim..n.running + 2 * d.out_dim].fill(1.0);
            }
        }
        Ok(Self {
            values: vec![0.0; layout.n_params],
            running,
            layout,
            arch,
        })
    }

    /// Rebuilds parameters from stored arrays, checking their lengths.
    pub fn from_parts(arch: ArchConfig, values: Vec<f64>, running: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        CoreError::check_len(p.values.len(), values.len())?;
        CoreError::check_len(p.running.len(), running.len())?;
        if running
            .iter()
            .enumerate()
            .any(|(i, v)| !v.is_finite() || (p.is_variance_slot(i) && *v <= 0.0))
        {
            return Err(CoreError::Config("running statistics invalid".into()));
        }
        p.values = values;
        p.running = running;
        Ok(p)
    }

    fn is_variance_slot(&self, i: usize) -> bool {
        self.layout.dense_slots().any(|d| {
            d.norm
                .is_some_and(|n| (n.running + d.out_dim..n.running + 2 * d.out_dim).contains(&i))
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn running(&self) -> &[f64] {
        &self.running
    }

    pub fn running_mut(&mut self) -> &mut [f64] {
        &mut self.running
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.spec(name).map(|s| &self.values[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.layout.spec(name)?.range();
        Some(&mut self.values[r])
    }

    pub fn log_variance(&self) -> &[f64] {
        &self.values[self.layout.log_variance()]
    }
}

/// Uniform fan-in initialization: weights from `U(-sqrt(1/fan_in),
/// sqrt(1/fan_in))`, biases and shifts 0, gains 1, aggregation weights
/// `1 / n_layers`, log-variances 0.
pub fn init_model(arch: &ArchConfig, seed: u64) -> Result<ModelParams> {
    let mut p = ModelParams::zeros(arch.clone())?;
    let mut rng = rng::seeded(seed);
    let n_layers = arch.n_layers as f64;
    let layout = p.layout.clone();
    for spec in layout.specs() {
        let r = spec.range();
        match spec.kind {
            ParamKind::AggWeight => p.values[r].fill(1.0 / n_layers),
            ParamKind::Weight => {
                let bound = libm::sqrt(1.0 / spec.shape.1 as f64);
                for v in &mut p.values[r] {
                    *v = rng.random_range(-bound..bound);
                }
            }
            ParamKind::NormGain => p.values[r].fill(1.0),
            ParamKind::AggBias | ParamKind::Bias | ParamKind::NormShift | ParamKind::LogVariance => {
            }
        }
    }
    Ok(p)
}

/// `out[d] = sum_l weights[l] * segment[l, d] + bias`
pub fn aggregate_layers(segment: &[f64], weights: &[f64], bias: f64, out: &mut [f64]) {
    let dim = out.len();
    debug_assert_eq!(segment.len(), weights.len() * dim);
    out.fill(bias);
    for (w, layer) in weights.iter().zip(segment.chunks_exact(dim)) {
        axpy(*w, layer, out);
    }
}

/// Predictions for one sample in natural units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionVector {
    pub streams: f64,
    pub likes: f64,
    pub aesthetics: Option<[f64; 5]>,
}

impl PredictionVector {
    pub fn from_slice(values: &[f64]) -> Self {
        Self {
            streams: values[0],
            likes: values[1],
            aesthetics: (values.len() >= 7).then(|| {
                let mut a = [0.0; 5];
                a.copy_from_slice(&values[2..7]);
                a
            }),
        }
    }

    /// Values in head order.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.streams, self.likes];
        if let Some(a) = self.aesthetics {
            v.extend_from_slice(&a);
        }
        v
    }
}

/// Predictions as per-task columns: `columns[task][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub columns: Vec<Vec<f64>>,
}

impl Predictions {
    pub fn batch_size(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn to_vectors(&self) -> Vec<PredictionVector> {
        (0..self.batch_size())
            .map(|i| PredictionVector::from_slice(&self.row(i)))
            .collect()
    }
}

/// Inverted-dropout multipliers (0 or `1 / (1 - rate)`) for every hidden
/// dense block, trunk first, then heads in task order. An empty vector means
/// no dropout for that block.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    layers: Vec<Vec<f64>>,
}

impl DropoutMasks {
    /// Masks that keep every unit.
    pub fn none(params: &ModelParams) -> Self {
        Self {
            layers: vec![Vec::new(); params.layout.n_dropout_layers()],
        }
    }

    pub fn sample(params: &ModelParams, batch: usize, rng: &mut Rng) -> Self {
        let arch = &params.arch;
        let n_trunk = params.layout.trunk.len();
        let layers = params
            .layout
            .dense_slots()
            .filter(|d| d.norm.is_some())
            .enumerate()
            .map(|(i, d)| {
                let rate = if i < n_trunk {
                    arch.trunk_dropout
                } else {
                    arch.head_dropout
                };
                if rate == 0.0 {
                    return Vec::new();
                }
                let keep = 1.0 / (1.0 - rate);
                (0..batch * d.out_dim)
                    .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                    .collect()
            })
            .collect();
        Self { layers }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Train,
    Eval,
}

pub enum Phase<'a> {
    /// Batch statistics, running-stat update, sampled dropout.
    Train(&'a mut Rng),
    /// Running statistics, no dropout.
    Eval,
}

#[derive(Debug, Clone)]
struct DenseCache {
    input: Vec<f64>,
    /// Normalized pre-activations (blocks with batch norm).
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    /// Input to GELU.
    pre_act: Vec<f64>,
    mask: Vec<f64>,
}

/// Intermediates of a train-phase forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    arch: ArchConfig,
    batch: usize,
    inputs: Vec<f64>,
    trunk: Vec<DenseCache>,
    heads: Vec<Vec<DenseCache>>,
    logits: Vec<Vec<f64>>,
    predictions: Predictions,
}

impl ForwardCache {
    pub fn predictions(&self) -> &Predictions {
        &self.predictions
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }
}

/// Gradients with respect to every learnable value, in the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub values: Vec<f64>,
}

impl GradientSet {
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|g| *g == 0.0)
    }
}

fn check_batch(params: &ModelParams, inputs: &[f64]) -> Result<usize> {
    let w = params.arch.sample_width();
    if inputs.is_empty() || !inputs.len().is_multiple_of(w) {
        return Err(CoreError::Dimension(format!(
            "batch of {} values is not a positive multiple of the sample width {w}",
            inputs.len()
        )));
    }
    Ok(inputs.len() / w)
}

fn check_finite(values: &[f64], layer: impl FnOnce() -> String) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CoreError::NonFinite(layer()))
    }
}

fn aggregate_batch(params: &ModelParams, inputs: &[f64], batch: usize) -> Vec<f64> {
    let arch = &params.arch;
    let l = &params.layout;
    let weights = &params.values[l.agg_weight..l.agg_weight + arch.n_layers];
    let bias = params.values[l.agg_bias];
    let mut out = vec![0.0; batch * arch.input_dim];
    for (x, o) in inputs
        .chunks_exact(arch.sample_width())
        .zip(out.chunks_exact_mut(arch.input_dim))
    {
        aggregate_layers(x, weights, bias, o);
    }
    out
}

/// `z = x W^T + b` for a batch of row vectors.
fn linear(values: &[f64], slot: &DenseSlot, x: &[f64], batch: usize) -> Vec<f64> {
    let w = &values[slot.weight..slot.weight + slot.in_dim * slot.out_dim];
    let b = &values[slot.bias..slot.bias + slot.out_dim];
    let mut z = vec![0.0; batch * slot.out_dim];
    for (xr, zr) in x.chunks_exact(slot.in_dim).zip(z.chunks_exact_mut(slot.out_dim)) {
        for ((zo, wr), bo) in zr.iter_mut().zip(w.chunks_exact(slot.in_dim)).zip(b) {
            *zo = dot(wr, xr) + bo;
        }
    }
    z
}

fn dense_forward(
    values: &[f64],
    running: &[f64],
    slot: &DenseSlot,
    input: Vec<f64>,
    batch: usize,
    mode: Mode,
    mask: &[f64],
) -> (Vec<f64>, DenseCache) {
    let out_dim = slot.out_dim;
    let z = linear(values, slot, &input, batch);
    let norm = slot.norm.expect("hidden blocks carry batch norm");
    let gain = &values[norm.gain..norm.gain + out_dim];
    let shift = &values[norm.shift..norm.shift + out_dim];

    let (mean, var) = match mode {
        Mode::Train => {
            let n = batch as f64;
            let mut mean = vec![0.0; out_dim];
            for zr in z.chunks_exact(out_dim) {
                axpy(1.0, zr, &mut mean);
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![0.0; out_dim];
            for zr in z.chunks_exact(out_dim) {
                for ((v, zi), m) in var.iter_mut().zip(zr).zip(&mean) {
                    let d = zi - m;
                    *v += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= n);
            (mean, var)
        }
        Mode::Eval => (
            running[norm.running..norm.running + out_dim].to_vec(),
            running[norm.running + out_dim..norm.running + 2 * out_dim].to_vec(),
        ),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + BN_EPS)).collect();

    let mut xhat = z;
    let mut pre_act = vec![0.0; batch * out_dim];
    let mut out = vec![0.0; batch * out_dim];
    for ((xr, pr), or) in xhat
        .chunks_exact_mut(out_dim)
        .zip(pre_act.chunks_exact_mut(out_dim))
        .zip(out.chunks_exact_mut(out_dim))
    {
        for o in 0..out_dim {
            let xh = (xr[o] - mean[o]) * inv_std[o];
            xr[o] = xh;
            let y = gain[o] * xh + shift[o];
            pr[o] = y;
            or[o] = gelu(y);
        }
    }
    if !mask.is_empty() {
        out.iter_mut().zip(mask).for_each(|(o, m)| *o *= m);
    }
    let cache = DenseCache {
        input,
        xhat,
        inv_std,
        batch_mean: mean,
        batch_var: var,
        pre_act,
        mask: mask.to_vec(),
    };
    (out, cache)
}

fn output_forward(values: &[f64], slot: &DenseSlot, input: &[f64], batch: usize) -> Vec<f64> {
    linear(values, slot, input, batch)
}

fn run_forward(
    params: &ModelParams,
    inputs: &[f64],
    mode: Mode,
    masks: &DropoutMasks,
) -> Result<ForwardCache> {
    let batch = check_batch(params, inputs)?;
    if mode == Mode::Train && batch < 2 {
        return Err(CoreError::BatchTooSmall(batch));
    }
    CoreError::check_len(params.layout.n_dropout_layers(), masks.layers.len())?;
    let values = &params.values;
    let running = &params.running;
    let layout = &params.layout;

    let agg = aggregate_batch(params, inputs, batch);
    check_finite(&agg, || "agg".into())?;

    let mut mask_iter = masks.layers.iter();
    let mut h = agg;
    let mut trunk = Vec::with_capacity(layout.trunk.len());
    for (i, slot) in layout.trunk.iter().enumerate() {
        let mask = mask_iter.next().expect("mask count checked");
        let (out, cache) = dense_forward(values, running, slot, h, batch, mode, mask);
        check_finite(&out, || format!("trunk.{i}"))?;
        trunk.push(cache);
        h = out;
    }

    let mut heads = Vec::with_capacity(layout.heads.len());
    let mut logits = Vec::with_capacity(layout.heads.len());
    let mut columns = Vec::with_capacity(layout.heads.len());
    for (task, slots) in params.arch.tasks.tasks().iter().zip(&layout.heads) {
        let (hidden, out_slot) = slots.split_at(slots.len() - 1);
        let mut x = h.clone();
        let mut caches = Vec::with_capacity(hidden.len());
        for (j, slot) in hidden.iter().enumerate() {
            let mask = mask_iter.next().expect("mask count checked");
            let (out, cache) = dense_forward(values, running, slot, x, batch, mode, mask);
            check_finite(&out, || format!("head.{}.{j}", task.name()))?;
            caches.push(cache);
            x = out;
        }
        let logit = output_forward(values, &out_slot[0], &x, batch);
        check_finite(&logit, || format!("head.{}.out", task.name()))?;
        let (offset, span) = task.output_scale();
        columns.push(logit.iter().map(|l| offset + span * sigmoid(*l)).collect());
        logits.push(logit);
        // the output block's input is kept as a pseudo-cache entry
        caches.push(DenseCache {
            input: x,
            xhat: Vec::new(),
            inv_std: Vec::new(),
            batch_mean: Vec::new(),
            batch_var: Vec::new(),
            pre_act: Vec::new(),
            mask: Vec::new(),
        });
        heads.push(caches);
    }

    Ok(ForwardCache {
        arch: params.arch.clone(),
        batch,
        inputs: inputs.to_vec(),
        trunk,
        heads,
        logits,
        predictions: Predictions { columns },
    })
}

/// Train-phase forward with fixed dropout masks. Pure: running statistics
/// are left untouched (see [`update_running_stats`]).
pub fn forward_with_masks(
    params: &ModelParams,
    inputs: &[f64],
    masks: &DropoutMasks,
) -> Result<ForwardCache> {
    run_forward(params, inputs, Mode::Train, masks)
}

/// Eval-phase forward: running statistics, no dropout.
pub fn forward_eval(params: &ModelParams, inputs: &[f64]) -> Result<Predictions> {
    let masks = DropoutMasks::none(params);
    Ok(run_forward(params, inputs, Mode::Eval, &masks)?.predictions)
}

/// `running <- (1 - momentum) * running + momentum * batch` for every batch
/// norm, using the biased batch variance.
pub fn update_running_stats(params: &mut ModelParams, cache: &ForwardCache) {
    let slots: Vec<DenseSlot> = params.layout.dense_slots().copied().collect();
    let caches = cache.trunk.iter().chain(cache.heads.iter().flatten());
    for (slot, c) in slots.iter().zip(caches) {
        let (Some(norm), false) = (slot.norm, c.batch_mean.is_empty()) else {
            continue;
        };
        let d = slot.out_dim;
        let (mean, var) = params.running[norm.running..norm.running + 2 * d].split_at_mut(d);
        for (r, b) in mean.iter_mut().zip(&c.batch_mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
        for (r, b) in var.iter_mut().zip(&c.batch_var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
        }
    }
}

/// Forward pass. In the train phase this samples dropout masks from `rng`,
/// normalizes with batch statistics and updates the running statistics.
pub fn forward(
    params: &mut ModelParams,
    inputs: &[f64],
    phase: Phase<'_>,
) -> Result<(Vec<PredictionVector>, Option<ForwardCache>)> {
    match phase {
        Phase::Eval => Ok((forward_eval(params, inputs)?.to_vectors(), None)),
        Phase::Train(rng) => {
            let batch = check_batch(params, inputs)?;
            let masks = DropoutMasks::sample(params, batch, rng);
            let cache = forward_with_masks(params, inputs, &masks)?;
            update_running_stats(params, &cache);
            Ok((cache.predictions.to_vectors(), Some(cache)))
        }
    }
}

/// Accumulates `dW += dz^T x`, `db += sum dz` and returns `dx = dz W`.
fn linear_backward(
    values: &[f64],
    grads: &mut [f64],
    slot: &DenseSlot,
    input: &[f64],
    dz: &[f64],
    want_dx: bool,
) -> Vec<f64> {
    let (i_dim, o_dim) = (slot.in_dim, slot.out_dim);
    let w = &values[slot.weight..slot.weight + i_dim * o_dim];
    {
        let gw = &mut grads[slot.weight..slot.weight + i_dim * o_dim];
        for (xr, dzr) in input.chunks_exact(i_dim).zip(dz.chunks_exact(o_dim)) {
            for (gwr, &d) in gw.chunks_exact_mut(i_dim).zip(dzr) {
                if d != 0.0 {
                    axpy(d, xr, gwr);
                }
            }
        }
    }
    {
        let gb = &mut grads[slot.bias..slot.bias + o_dim];
        for dzr in dz.chunks_exact(o_dim) {
            axpy(1.0, dzr, gb);
        }
    }
    if !want_dx {
        return Vec::new();
    }
    let batch = dz.len() / o_dim;
    let mut dx = vec![0.0; batch * i_dim];
    for (dxr, dzr) in dx.chunks_exact_mut(i_dim).zip(dz.chunks_exact(o_dim)) {
        for (wr, &d) in w.chunks_exact(i_dim).zip(dzr) {
            if d != 0.0 {
                axpy(d, wr, dxr);
            }
        }
    }
    dx
}

fn dense_backward(
    values: &[f64],
    grads: &mut [f64],
    slot: &DenseSlot,
    cache: &DenseCache,
    mut dout: Vec<f64>,
    batch: usize,
    want_dx: bool,
) -> Vec<f64> {
    let d = slot.out_dim;
    let norm = slot.norm.expect("hidden blocks carry batch norm");
    if !cache.mask.is_empty() {
        dout.iter_mut().zip(&cache.mask).for_each(|(g, m)| *g *= m);
    }
    // through GELU
    for (g, y) in dout.iter_mut().zip(&cache.pre_act) {
        *g *= gelu_grad(*y);
    }
    let dy = dout;
    let gain = &values[norm.gain..norm.gain + d];
    let mut sum_dxhat = vec![0.0; d];
    let mut sum_dxhat_xhat = vec![0.0; d];
    {
        let (gg, gs) = {
            let (lo, hi) = grads.split_at_mut(norm.shift);
            (&mut lo[norm.gain..norm.gain + d], &mut hi[..d])
        };
        for (dyr, xr) in dy.chunks_exact(d).zip(cache.xhat.chunks_exact(d)) {
            for o in 0..d {
                gg[o] += dyr[o] * xr[o];
                gs[o] += dyr[o];
                let dxh = dyr[o] * gain[o];
                sum_dxhat[o] += dxh;
                sum_dxhat_xhat[o] += dxh * xr[o];
            }
        }
    }
    // train-mode batch norm: dz = inv_std / B * (B dxhat - sum dxhat - xhat sum(dxhat xhat))
    let n = batch as f64;
    let mut dz = dy;
    for (dzr, xr) in dz.chunks_exact_mut(d).zip(cache.xhat.chunks_exact(d)) {
        for o in 0..d {
            let dxh = dzr[o] * gain[o];
            dzr[o] = cache.inv_std[o] / n * (n * dxh - sum_dxhat[o] - xr[o] * sum_dxhat_xhat[o]);
        }
    }
    linear_backward(values, grads, slot, &cache.input, &dz, want_dx)
}

/// Exact gradients of `sum_t sum_b loss_grads[t][b] * prediction[t][b]`
/// with respect to every learnable value, given a train-phase cache.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    loss_grads: &[Vec<f64>],
) -> Result<GradientSet> {
    if cache.arch != params.arch {
        return Err(CoreError::CacheMismatch("architecture differs".into()));
    }
    if cache.trunk.is_empty() || cache.trunk[0].batch_mean.is_empty() {
        return Err(CoreError::CacheMismatch("cache is not from a train-phase pass".into()));
    }
    CoreError::check_len(params.arch.n_tasks(), loss_grads.len())?;
    let batch = cache.batch;
    for g in loss_grads {
        CoreError::check_len(batch, g.len())?;
    }
    let values = &params.values;
    let layout = &params.layout;
    let mut grads = vec![0.0; layout.n_params];

    let trunk_out = *params.arch.trunk.last().expect("validated non-empty");
    let mut dh = vec![0.0; batch * trunk_out];
    for (t, task) in params.arch.tasks.tasks().iter().enumerate() {
        let (_, span) = task.output_scale();
        let slots = &layout.heads[t];
        let caches = &cache.heads[t];
        let dlogit: Vec<f64> = loss_grads[t]
            .iter()
            .zip(&cache.logits[t])
            .map(|(g, l)| {
                let s = sigmoid(*l);
                g * span * s * (1.0 - s)
            })
            .collect();
        let last = slots.len() - 1;
        let mut dx = linear_backward(values, &mut grads, &slots[last], &caches[last].input, &dlogit, true);
        for j in (0..last).rev() {
            dx = dense_backward(values, &mut grads, &slots[j], &caches[j], dx, batch, true);
        }
        axpy(1.0, &dx, &mut dh);
    }

    let mut dx = dh;
    for (i, slot) in layout.trunk.iter().enumerate().rev() {
        dx = dense_backward(values, &mut grads, slot, &cache.trunk[i], dx, batch, true);
    }

    // layer aggregation
    let arch = &params.arch;
    let dim = arch.input_dim;
    for (x, da) in cache
        .inputs
        .chunks_exact(arch.sample_width())
        .zip(dx.chunks_exact(dim))
    {
        for (l, layer) in x.chunks_exact(dim).enumerate() {
            grads[layout.agg_weight + l] += dot(da, layer);
        }
        grads[layout.agg_bias] += da.iter().sum::<f64>();
    }

    Ok(GradientSet { values: grads })
}
