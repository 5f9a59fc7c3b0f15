//! Pairwise preference prediction from per-song score vectors.
//!
//! Feature row layout (31 columns), dimension-major over [`Dimension::ALL`]:
//! for each dimension `f` the difference `f_a - f_b`, the ratio
//! `f_a / (f_b + eps)`, and the difference times the instrumental flag;
//! the last column is the instrumental flag itself.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::math::sigmoid;
use crate::metrics::{auc, f1, macro_f1};
use crate::rng;
use crate::{CoreError, Result};

pub const N_FEATURES: usize = 31;
pub const RATIO_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Streams,
    Likes,
    Coherence,
    Musicality,
    Memorability,
    Clarity,
    Naturalness,
    CombinedPopularity,
    CombinedSongeval,
    CombinedOverall,
}

impl Dimension {
    pub const ALL: [Dimension; 10] = [
        Dimension::Streams,
        Dimension::Likes,
        Dimension::Coherence,
        Dimension::Musicality,
        Dimension::Memorability,
        Dimension::Clarity,
        Dimension::Naturalness,
        Dimension::CombinedPopularity,
        Dimension::CombinedSongeval,
        Dimension::CombinedOverall,
    ];
    pub const BASE: [Dimension; 7] = [
        Dimension::Streams,
        Dimension::Likes,
        Dimension::Coherence,
        Dimension::Musicality,
        Dimension::Memorability,
        Dimension::Clarity,
        Dimension::Naturalness,
    ];
    pub const AESTHETIC: [Dimension; 5] = [
        Dimension::Coherence,
        Dimension::Musicality,
        Dimension::Memorability,
        Dimension::Clarity,
        Dimension::Naturalness,
    ];
    pub const POPULARITY: [Dimension; 3] =
        [Dimension::Streams, Dimension::Likes, Dimension::CombinedPopularity];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Streams => "streams",
            Dimension::Likes => "likes",
            Dimension::Coherence => "coherence",
            Dimension::Musicality => "musicality",
            Dimension::Memorability => "memorability",
            Dimension::Clarity => "clarity",
            Dimension::Naturalness => "naturalness",
            Dimension::CombinedPopularity => "combined_popularity",
            Dimension::CombinedSongeval => "combined_songeval",
            Dimension::CombinedOverall => "combined_overall",
        }
    }
}

/// `(popularity, songeval, overall)`: the mean of streams and likes, the mean
/// of the five aesthetics, and the mean of all seven after rescaling each to
/// `[0, 1]`.
pub fn combined_scores(base: &[f64; 7]) -> Result<[f64; 3]> {
    for (i, v) in base.iter().enumerate() {
        let (lo, hi, domain) = if i < 2 { (0.0, 100.0, "[0, 100]") } else { (1.0, 5.0, "[1, 5]") };
        if !(*v >= lo && *v <= hi) {
            return Err(CoreError::domain(Dimension::BASE[i].name(), *v, domain));
        }
    }
    let popularity = 0.5 * (base[0] + base[1]);
    let songeval = base[2..].iter().sum::<f64>() / 5.0;
    let normalized: f64 = base[..2].iter().map(|v| v / 100.0).sum::<f64>()
        + base[2..].iter().map(|v| (v - 1.0) / 4.0).sum::<f64>();
    Ok([popularity, songeval, normalized / 7.0])
}

/// Ten score dimensions of one song; the combined values are always derived
/// from the base seven.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreVector {
    values: [f64; 10],
}

impl ScoreVector {
    pub fn new(base: [f64; 7]) -> Result<Self> {
        let c = combined_scores(&base)?;
        let mut values = [0.0; 10];
        values[..7].copy_from_slice(&base);
        values[7..].copy_from_slice(&c);
        Ok(Self { values })
    }

    pub fn base(&self) -> [f64; 7] {
        let mut b = [0.0; 7];
        b.copy_from_slice(&self.values[..7]);
        b
    }

    pub fn get(&self, d: Dimension) -> f64 {
        self.values[d.index()]
    }

    pub fn values(&self) -> &[f64; 10] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Winner {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Battle {
    pub battle_id: String,
    pub scores_a: ScoreVector,
    pub scores_b: ScoreVector,
    pub instrumental: bool,
    pub winner: Winner,
}

impl Battle {
    pub fn a_wins(&self) -> bool {
        self.winner == Winner::A
    }

    /// The same battle seen from the other side.
    pub fn swapped(&self) -> Self {
        Self {
            battle_id: self.battle_id.clone(),
            scores_a: self.scores_b,
            scores_b: self.scores_a,
            instrumental: self.instrumental,
            winner: match self.winner {
                Winner::A => Winner::B,
                Winner::B => Winner::A,
            },
        }
    }
}

pub fn battle_features(b: &Battle, epsilon: f64) -> [f64; N_FEATURES] {
    let flag = if b.instrumental { 1.0 } else { 0.0 };
    let mut row = [0.0; N_FEATURES];
    for (i, d) in Dimension::ALL.iter().enumerate() {
        let (fa, fb) = (b.scores_a.get(*d), b.scores_b.get(*d));
        let delta = fa - fb;
        row[3 * i] = delta;
        row[3 * i + 1] = fa / (fb + epsilon);
        row[3 * i + 2] = delta * flag;
    }
    row[N_FEATURES - 1] = flag;
    row
}

/// Which feature columns a model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    /// All 31 columns.
    WithAesthetics,
    /// The three columns of streams, likes and combined popularity, plus the
    /// instrumental flag.
    PopularityOnly,
}

impl FeatureSet {
    pub fn columns(self) -> Vec<usize> {
        match self {
            FeatureSet::WithAesthetics => (0..N_FEATURES).collect(),
            FeatureSet::PopularityOnly => Dimension::POPULARITY
                .iter()
                .flat_map(|d| (3 * d.index())..(3 * d.index() + 3))
                .chain([N_FEATURES - 1])
                .collect(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSet::WithAesthetics => "with_aesthetics",
            FeatureSet::PopularityOnly => "popularity_only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaivePrediction {
    pub winner: Winner,
    /// Sum for A minus sum for B.
    pub margin: f64,
    pub tie: bool,
}

/// Picks the side with the larger sum over `dims`; exact ties go to A.
pub fn naive_rule(b: &Battle, dims: &[Dimension]) -> Result<NaivePrediction> {
    if dims.is_empty() {
        return Err(CoreError::Empty("naive rule dimension set"));
    }
    let sa: f64 = dims.iter().map(|d| b.scores_a.get(*d)).sum();
    let sb: f64 = dims.iter().map(|d| b.scores_b.get(*d)).sum();
    let winner = if sb > sa { Winner::B } else { Winner::A };
    Ok(NaivePrediction {
        winner,
        margin: sa - sb,
        tie: sa == sb,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeights {
    Balanced,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogRegConfig {
    pub c: f64,
    pub class_weights: ClassWeights,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            c: 0.1,
            class_weights: ClassWeights::Balanced,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
}

fn sample_weights(y: &[bool], mode: ClassWeights) -> Result<Vec<f64>> {
    let n_pos = y.iter().filter(|v| **v).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CoreError::SingleClass);
    }
    let n = y.len() as f64;
    let (wp, wn) = match mode {
        ClassWeights::Balanced => (n / (2.0 * n_pos as f64), n / (2.0 * n_neg as f64)),
        ClassWeights::None => (1.0, 1.0),
    };
    Ok(y.iter().map(|v| if *v { wp } else { wn }).collect())
}

/// `log(1 + exp(-m))` without overflow.
fn log1p_exp_neg(m: f64) -> f64 {
    if m > 0.0 {
        libm::log1p(libm::exp(-m))
    } else {
        -m + libm::log1p(libm::exp(m))
    }
}

/// Regularized objective at `(beta, intercept)`.
pub fn logreg_objective(
    x: &[Vec<f64>],
    y: &[bool],
    w: &[f64],
    c: f64,
    beta: &[f64],
    intercept: f64,
) -> f64 {
    let reg = 0.5 * beta.iter().map(|b| b * b).sum::<f64>();
    let data: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((row, yi), wi)| {
            let s = if *yi { 1.0 } else { -1.0 };
            wi * log1p_exp_neg(s * (crate::math::dot(row, beta) + intercept))
        })
        .sum();
    reg + c * data
}

fn logreg_gradient(
    x: &[Vec<f64>],
    y: &[bool],
    w: &[f64],
    c: f64,
    beta: &[f64],
    intercept: f64,
    g: &mut [f64],
) {
    let d = beta.len();
    g[..d].copy_from_slice(beta);
    g[d] = 0.0;
    for ((row, yi), wi) in x.iter().zip(y).zip(w) {
        let s = if *yi { 1.0 } else { -1.0 };
        let m = s * (crate::math::dot(row, beta) + intercept);
        let coef = -c * wi * s * sigmoid(-m);
        for (gj, xj) in g[..d].iter_mut().zip(row) {
            *gj += coef * xj;
        }
        g[d] += coef;
    }
}

/// L2-regularized logistic regression by full-batch gradient descent with
/// Armijo backtracking. Stops when the gradient norm drops below `cfg.tol`
/// or after `cfg.max_iter` iterations; `converged` reports which.
pub fn logreg_fit(x: &[Vec<f64>], y: &[bool], cfg: &LogRegConfig) -> Result<LogRegModel> {
    CoreError::check_len(x.len(), y.len())?;
    if x.len() < 2 {
        return Err(CoreError::TooFewRecords { need: 2, have: x.len() });
    }
    if !(cfg.c > 0.0 && cfg.c.is_finite()) {
        return Err(CoreError::Config(format!("C = {} must be positive", cfg.c)));
    }
    let d = x[0].len();
    for row in x {
        CoreError::check_len(d, row.len())?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("feature matrix".into()));
        }
    }
    let w = sample_weights(y, cfg.class_weights)?;
    let mut beta = vec![0.0; d];
    let mut intercept = 0.0;
    let mut g = vec![0.0; d + 1];
    let mut f = logreg_objective(x, y, &w, cfg.c, &beta, intercept);
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut trial_beta = vec![0.0; d];
    while iterations < cfg.max_iter {
        logreg_gradient(x, y, &w, cfg.c, &beta, intercept, &mut g);
        let gnorm2: f64 = g.iter().map(|v| v * v).sum();
        if libm::sqrt(gnorm2) < cfg.tol {
            converged = true;
            break;
        }
        iterations += 1;
        step *= 2.0;
        loop {
            for j in 0..d {
                trial_beta[j] = beta[j] - step * g[j];
            }
            let trial_b = intercept - step * g[d];
            let ft = logreg_objective(x, y, &w, cfg.c, &trial_beta, trial_b);
            if ft <= f - 0.5 * step * gnorm2 {
                beta.copy_from_slice(&trial_beta);
                intercept = trial_b;
                f = ft;
                break;
            }
            step *= 0.5;
            if step < 1e-20 {
                // no further descent is representable
                return Ok(LogRegModel { beta, intercept, iterations, converged: true, objective: f });
            }
        }
    }
    if !converged {
        logreg_gradient(x, y, &w, cfg.c, &beta, intercept, &mut g);
        converged = libm::sqrt(g.iter().map(|v| v * v).sum::<f64>()) < cfg.tol;
    }
    Ok(LogRegModel {
        beta,
        intercept,
        iterations,
        converged,
        objective: f,
    })
}

pub fn logreg_predict(model: &LogRegModel, x: &[Vec<f64>]) -> Result<Vec<f64>> {
    x.iter()
        .map(|row| {
            CoreError::check_len(model.beta.len(), row.len())?;
            Ok(sigmoid(crate::math::dot(row, &model.beta) + model.intercept))
        })
        .collect()
}

/// A binary classifier that can be cross-validated. Labels are `true` for
/// "A wins"; predictions are probabilities of that class.
pub trait Classifier {
    fn name(&self) -> &str;
    /// Fits on standardized features; returns a warning when the fit did not
    /// fully converge.
    fn fit(&mut self, x: &[Vec<f64>], y: &[bool]) -> Result<Option<String>>;
    fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Default)]
pub struct LogisticRegression {
    pub config: LogRegConfig,
    pub model: Option<LogRegModel>,
}

impl Classifier for LogisticRegression {
    fn name(&self) -> &str {
        "LR"
    }

    fn fit(&mut self, x: &[Vec<f64>], y: &[bool]) -> Result<Option<String>> {
        let m = logreg_fit(x, y, &self.config)?;
        let warning = (!m.converged).then(|| {
            format!("logistic regression stopped after {} iterations without converging", m.iterations)
        });
        self.model = Some(m);
        Ok(warning)
    }

    fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        let m = self
            .model
            .as_ref()
            .ok_or_else(|| CoreError::Config("classifier used before fit".into()))?;
        logreg_predict(m, x)
    }
}

/// Fold index per row. Each class is shuffled and dealt round-robin, with
/// the second class continuing where the first stopped so fold sizes stay
/// within one of each other.
pub fn stratified_kfold(y: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(CoreError::Config(format!("k = {k} must be at least 2")));
    }
    let mut rng = rng::seeded(seed);
    let mut folds = vec![0; y.len()];
    let mut offset = 0;
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|i| y[*i] == class).collect();
        if idx.len() < k {
            return Err(CoreError::ClassTooSmall { class, count: idx.len(), k });
        }
        idx.shuffle(&mut rng);
        for (j, i) in idx.iter().enumerate() {
            folds[*i] = (offset + j) % k;
        }
        offset = (offset + idx.len()) % k;
    }
    Ok(folds)
}

/// Per-column mean and population standard deviation (floored at 1e-12).
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-12;

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Result<Self> {
        let first = x.first().ok_or(CoreError::Empty("feature matrix"))?;
        let n = x.len() as f64;
        let d = first.len();
        let mut mean = vec![0.0; d];
        for row in x {
            CoreError::check_len(d, row.len())?;
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in x {
            for j in 0..d {
                let dv = row[j] - mean[j];
                var[j] += dv * dv;
            }
        }
        let std = var.iter().map(|v| libm::sqrt(v / n).max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn transform(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| {
                row.iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .map(|((v, m), s)| (v - m) / s)
                    .collect()
            })
            .collect()
    }
}

/// AUC and F1 over one group of battles; `None` where undefined (empty group
/// or a single class).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StratumMetrics {
    pub n: usize,
    pub auc: Option<f64>,
    pub f1: Option<f64>,
    pub macro_f1: Option<f64>,
}

impl StratumMetrics {
    pub fn compute(scores: &[f64], predicted_a: &[bool], labels: &[bool]) -> Self {
        if labels.is_empty() {
            return Self::default();
        }
        Self {
            n: labels.len(),
            auc: auc(scores, labels).ok(),
            f1: f1(predicted_a, labels, true).ok(),
            macro_f1: macro_f1(predicted_a, labels).ok(),
        }
    }

    fn mean(items: &[StratumMetrics]) -> Self {
        fn avg(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
            let vals: Vec<f64> = v.flatten().collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        }
        Self {
            n: items.iter().map(|m| m.n).sum(),
            auc: avg(items.iter().map(|m| m.auc)),
            f1: avg(items.iter().map(|m| m.f1)),
            macro_f1: avg(items.iter().map(|m| m.macro_f1)),
        }
    }
}

/// Overall metrics plus the instrumental and vocal subsets.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub overall: StratumMetrics,
    pub instrumental: StratumMetrics,
    pub vocal: StratumMetrics,
}

impl GroupMetrics {
    pub fn compute(scores: &[f64], predicted_a: &[bool], labels: &[bool], instrumental: &[bool]) -> Self {
        let subset = |flag: bool| {
            let idx: Vec<usize> = (0..labels.len()).filter(|i| instrumental[*i] == flag).collect();
            let s: Vec<f64> = idx.iter().map(|i| scores[*i]).collect();
            let p: Vec<bool> = idx.iter().map(|i| predicted_a[*i]).collect();
            let l: Vec<bool> = idx.iter().map(|i| labels[*i]).collect();
            StratumMetrics::compute(&s, &p, &l)
        };
        Self {
            overall: StratumMetrics::compute(scores, predicted_a, labels),
            instrumental: subset(true),
            vocal: subset(false),
        }
    }

    fn mean(items: &[GroupMetrics]) -> Self {
        let pick = |f: fn(&GroupMetrics) -> StratumMetrics| {
            StratumMetrics::mean(&items.iter().map(f).collect::<Vec<_>>())
        };
        Self {
            overall: pick(|g| g.overall),
            instrumental: pick(|g| g.instrumental),
            vocal: pick(|g| g.vocal),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NaiveRuleKind {
    Likes,
    Streams,
    Aesth,
    All,
}

impl NaiveRuleKind {
    pub const ALL: [NaiveRuleKind; 4] =
        [NaiveRuleKind::Likes, NaiveRuleKind::Streams, NaiveRuleKind::Aesth, NaiveRuleKind::All];

    pub fn dimensions(self) -> &'static [Dimension] {
        match self {
            NaiveRuleKind::Likes => &[Dimension::Likes],
            NaiveRuleKind::Streams => &[Dimension::Streams],
            NaiveRuleKind::Aesth => &Dimension::AESTHETIC,
            NaiveRuleKind::All => &Dimension::BASE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveRuleResult {
    pub rule: NaiveRuleKind,
    /// AUC uses the score margin, F1 the hard prediction.
    pub metrics: GroupMetrics,
    pub ties: usize,
}

pub fn evaluate_naive(battles: &[Battle], rule: NaiveRuleKind) -> Result<NaiveRuleResult> {
    let preds = battles
        .iter()
        .map(|b| naive_rule(b, rule.dimensions()))
        .collect::<Result<Vec<_>>>()?;
    let margins: Vec<f64> = preds.iter().map(|p| p.margin).collect();
    let hard: Vec<bool> = preds.iter().map(|p| p.winner == Winner::A).collect();
    let labels: Vec<bool> = battles.iter().map(Battle::a_wins).collect();
    let instr: Vec<bool> = battles.iter().map(|b| b.instrumental).collect();
    Ok(NaiveRuleResult {
        rule,
        metrics: GroupMetrics::compute(&margins, &hard, &labels, &instr),
        ties: preds.iter().filter(|p| p.tie).count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub metrics: GroupMetrics,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCv {
    pub classifier: String,
    pub feature_set: FeatureSet,
    pub folds: Vec<FoldResult>,
    pub mean: GroupMetrics,
}

impl ModelCv {
    pub fn mean_auc(&self) -> Option<f64> {
        self.mean.overall.auc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    pub n_battles: usize,
    pub n_a_wins: usize,
    pub naive_rules: Vec<NaiveRuleResult>,
    pub models: Vec<ModelCv>,
}

impl CvReport {
    pub fn model(&self, classifier: &str, fs: FeatureSet) -> Option<&ModelCv> {
        self.models.iter().find(|m| m.classifier == classifier && m.feature_set == fs)
    }
}

fn select_columns(rows: &[[f64; N_FEATURES]], cols: &[usize]) -> Vec<Vec<f64>> {
    rows.iter().map(|r| cols.iter().map(|c| r[*c]).collect()).collect()
}

/// One held-out fold: standardize on the training part, fit, score the rest.
pub fn run_fold<C: Classifier>(
    clf: &mut C,
    x: &[Vec<f64>],
    labels: &[bool],
    instrumental: &[bool],
    folds: &[usize],
    fold: usize,
) -> Result<FoldResult> {
    let (train_idx, test_idx): (Vec<usize>, Vec<usize>) = (0..x.len()).partition(|i| folds[*i] != fold);
    let pick = |idx: &[usize]| idx.iter().map(|i| x[*i].clone()).collect::<Vec<_>>();
    let scaler = Standardizer::fit(&pick(&train_idx))?;
    let x_train = scaler.transform(&pick(&train_idx));
    let x_test = scaler.transform(&pick(&test_idx));
    let y_train: Vec<bool> = train_idx.iter().map(|i| labels[*i]).collect();
    let warning = clf.fit(&x_train, &y_train)?;
    let proba = clf.predict_proba(&x_test)?;
    let hard: Vec<bool> = proba.iter().map(|p| *p >= 0.5).collect();
    let y_test: Vec<bool> = test_idx.iter().map(|i| labels[*i]).collect();
    let instr: Vec<bool> = test_idx.iter().map(|i| instrumental[*i]).collect();
    Ok(FoldResult {
        fold,
        n_train: train_idx.len(),
        metrics: GroupMetrics::compute(&proba, &hard, &y_test, &instr),
        warning,
    })
}

/// k-fold cross-validation of one classifier on one feature set.
pub fn cross_validate_model<C: Classifier + Clone>(
    battles: &[Battle],
    prototype: &C,
    feature_set: FeatureSet,
    k: usize,
    seed: u64,
) -> Result<ModelCv> {
    let labels: Vec<bool> = battles.iter().map(Battle::a_wins).collect();
    let folds = stratified_kfold(&labels, k, seed)?;
    let rows: Vec<[f64; N_FEATURES]> = battles.iter().map(|b| battle_features(b, RATIO_EPS)).collect();
    let x = select_columns(&rows, &feature_set.columns());
    let instr: Vec<bool> = battles.iter().map(|b| b.instrumental).collect();
    let results = (0..k)
        .map(|f| run_fold(&mut prototype.clone(), &x, &labels, &instr, &folds, f))
        .collect::<Result<Vec<_>>>()?;
    let mean = GroupMetrics::mean(&results.iter().map(|r| r.metrics).collect::<Vec<_>>());
    Ok(ModelCv {
        classifier: String::from(prototype.name()),
        feature_set,
        folds: results,
        mean,
    })
}

/// Naive-rule baselines on the full set, then logistic regression with and
/// without the aesthetic columns under k-fold cross-validation.
pub fn cross_validate(battles: &[Battle], k: usize, seed: u64, lr: &LogRegConfig) -> Result<CvReport> {
    let naive_rules = NaiveRuleKind::ALL
        .iter()
        .map(|r| evaluate_naive(battles, *r))
        .collect::<Result<Vec<_>>>()?;
    let proto = LogisticRegression {
        config: *lr,
        model: None,
    };
    let models = [FeatureSet::PopularityOnly, FeatureSet::WithAesthetics]
        .iter()
        .map(|fs| cross_validate_model(battles, &proto, *fs, k, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(CvReport {
        k,
        seed,
        n_battles: battles.len(),
        n_a_wins: battles.iter().filter(|b| b.a_wins()).count(),
        naive_rules,
        models,
    })
}
