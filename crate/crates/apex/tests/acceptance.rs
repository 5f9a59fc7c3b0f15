//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test -p apex --test acceptance -- 5 9`.

use std::collections::HashSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use apex::battles::{format_battles, parse_battles, read_battles, write_battles};
use apex::checkpoint::{self, Checkpoint};
use apex::config::DataConfig;
use apex::dataset::{load_songs, prepare};
use apex::embedding;
use apex::fsutil;
use apex::manifest::{format_manifest, read_manifest, write_manifest, ManifestRow};
use apex::synth::{synth_battles, synth_songs, write_synth, BattleSignal, Signal, SynthSpec};
use apex_core::losses::{combine_losses, LossKind, LossStrategy};
use apex_core::metrics::{auc, pearson, spearman};
use apex_core::network::{
    backward, forward_with_masks, init_model, ArchConfig, DropoutMasks, ModelParams, Task,
    TaskMode, TrunkDepth,
};
use apex_core::preference::{
    battle_features, cross_validate, stratified_kfold, Battle, FeatureSet, LogRegConfig,
    ScoreVector, Winner, N_FEATURES, RATIO_EPS,
};
use apex_core::rng;
use apex_core::scores::{power_transform, ScoreTransformConfig};
use apex_core::trainer::{run_grid, train_and_evaluate, GridAxes, InputMode, Splits, TrainConfig};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, format!("took {elapsed:.2?}, limit {limit:?}"))
}

// 1 ---------------------------------------------------------------------

fn score_anchor() -> Outcome {
    let t = Instant::now();
    let cfg = ScoreTransformConfig::default();
    let s80 = power_transform(80.0, &cfg).map_err(|e| e.to_string())?;
    check((s80 - 50.0).abs() <= 1e-9, format!("s(80) = {s80}"))?;
    check(power_transform(0.0, &cfg).unwrap() == 0.0, "s(0) != 0")?;
    check(power_transform(100.0, &cfg).unwrap() == 100.0, "s(100) != 100")?;
    for p in 1..=99 {
        let s = power_transform(p as f64, &cfg).unwrap();
        check(s < p as f64, format!("s({p}) = {s} is not below {p}"))?;
    }
    within(t.elapsed(), Duration::from_secs(1))?;
    Ok(format!("s(80) = {s80:.12}"))
}

// 2 ---------------------------------------------------------------------

fn objective(params: &ModelParams, x: &[f64], masks: &DropoutMasks, c: &[Vec<f64>]) -> f64 {
    let cache = forward_with_masks(params, x, masks).unwrap();
    cache
        .predictions()
        .columns
        .iter()
        .zip(c)
        .map(|(p, w)| p.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

fn max_gradient_error(seed: u64, depth: TrunkDepth, tasks: TaskMode) -> f64 {
    const B: usize = 4;
    const H: f64 = 1e-5;
    let arch = ArchConfig::reduced(depth, tasks);
    let mut params = init_model(&arch, seed).unwrap();
    let mut r = rng::seeded(rng::mix(seed, 77));
    for v in params.values_mut() {
        *v += r.random_range(-0.3..0.3);
    }
    let x: Vec<f64> = (0..B * arch.sample_width()).map(|_| r.random_range(-2.0..2.0)).collect();
    let masks = DropoutMasks::sample(&params, B, &mut r);
    let c: Vec<Vec<f64>> = tasks
        .tasks()
        .iter()
        .map(|t: &Task| {
            let (_, span) = t.output_scale();
            (0..B).map(|_| r.random_range(-1.0..1.0) / span).collect()
        })
        .collect();
    let cache = forward_with_masks(&params, &x, &masks).unwrap();
    let analytic = backward(&params, &cache, &c).unwrap().values;
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let orig = params.values()[i];
        params.values_mut()[i] = orig + H;
        let fp = objective(&params, &x, &masks, &c);
        params.values_mut()[i] = orig - H;
        let fm = objective(&params, &x, &masks, &c);
        params.values_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * H);
        // exactly-zero gradients leave only round-off in the quotient
        let denom = a.abs().max(numeric.abs()).max(1e-5);
        worst = worst.max((a - numeric).abs() / denom);
    }
    worst
}

fn gradient_correctness() -> Outcome {
    let t = Instant::now();
    let mut configs = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..6u64 {
        for depth in TrunkDepth::ALL {
            for tasks in TaskMode::ALL {
                let e = max_gradient_error(seed, depth, tasks);
                check(e < 1e-4, format!("seed {seed} {depth:?} {tasks:?}: max rel err {e:.3e}"))?;
                worst = worst.max(e);
                configs += 1;
            }
        }
    }
    check(configs >= 20, "fewer than 20 configurations")?;
    within(t.elapsed(), Duration::from_secs(120))?;
    Ok(format!("{configs} configs, max rel err {worst:.2e}"))
}

// 3 ---------------------------------------------------------------------

fn uncertainty_stationarity() -> Outcome {
    let t = Instant::now();
    let strategy = LossStrategy::new(LossKind::Uncertainty);
    let mut notes = Vec::new();
    for l in [0.01, 1.0, 100.0] {
        let mut eta = 0.0f64;
        let mut steps = None;
        for step in 1..=5000 {
            let c = combine_losses(&[l], &strategy, Some(&[eta])).map_err(|e| e.to_string())?;
            eta -= 0.1 * c.dtotal_deta.expect("uncertainty strategy")[0];
            if (eta.exp() / l - 1.0).abs() < 0.01 {
                steps = Some(step);
                break;
            }
        }
        let steps = steps.ok_or_else(|| format!("L = {l}: exp(eta) = {} after 5000 steps", eta.exp()))?;
        notes.push(format!("L={l}: {steps} steps"));
    }
    within(t.elapsed(), Duration::from_secs(10))?;
    Ok(notes.join(", "))
}

// 4 ---------------------------------------------------------------------

fn strategy_identity() -> Outcome {
    let mut r = rng::seeded(4);
    let equal = LossStrategy::new(LossKind::Equal);
    for i in 0..1000 {
        let n = if r.random_bool(0.5) { 2 } else { 7 };
        let losses: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1e3) * r.random::<f64>()).collect();
        let weighted = LossStrategy::weighted(vec![1.0; n]).unwrap();
        let a = combine_losses(&losses, &equal, None).unwrap();
        let b = combine_losses(&losses, &weighted, None).unwrap();
        check(a.total.to_bits() == b.total.to_bits(), format!("vector {i}: totals differ"))?;
        let same = a.task_scale.iter().zip(&b.task_scale).all(|(x, y)| x.to_bits() == y.to_bits());
        check(same, format!("vector {i}: gradient scales differ"))?;
    }
    Ok("1000 loss vectors bit-identical".into())
}

// 5 ---------------------------------------------------------------------

fn synthetic_learnability() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = synth_songs(&SynthSpec::new(2000, 5, Signal::Linear)).map_err(|e| e.to_string())?;
    write_synth(dir.path(), &data).map_err(|e| e.to_string())?;
    let songs = load_songs(&dir.path().join("manifest.jsonl"), &dir.path().join("embeddings"))
        .map_err(|e| e.to_string())?;
    let prepared = prepare(&songs, &DataConfig::default(), 5).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        loss: LossKind::Uncertainty,
        input_mode: InputMode::Song,
        task_mode: TaskMode::Full,
        seed: 5,
        ..learnability_config()
    };
    let (_, report) = train_and_evaluate(&prepared.splits, &cfg).map_err(|e| e.to_string())?;
    let r = report.test_metrics.as_ref().ok_or("no test metrics")?[&Task::Streams].pearson;
    check(report.epochs.len() <= 100, "more than 100 epochs")?;
    check(r >= 0.9, format!("held-out streams Pearson {r:.4}"))?;
    within(t.elapsed(), Duration::from_secs(300))?;
    Ok(format!(
        "held-out streams Pearson {r:.4} after {} epochs in {:.1?}",
        report.epochs.len(),
        t.elapsed()
    ))
}

fn learnability_config() -> TrainConfig {
    TrainConfig {
        batch_size: 64,
        lr0: 1e-3,
        max_epochs: 40,
        ..TrainConfig::default()
    }
}

// 6 ---------------------------------------------------------------------

fn small_splits() -> Splits {
    let spec = SynthSpec {
        n_songs: 40,
        min_segments: 1,
        max_segments: 3,
        seed: 6,
        signal: Signal::Linear,
        dim: 8,
    };
    let songs = synth_songs(&spec).unwrap().songs;
    let cfg = DataConfig {
        fractions: [0.6, 0.2, 0.2],
        n_strata: 4,
        ..DataConfig::default()
    };
    prepare(&songs, &cfg, 6).unwrap().splits
}

fn grid_integrity() -> Outcome {
    let data = small_splits();
    let axes = GridAxes::full();
    let base = TrainConfig {
        batch_size: 8,
        max_epochs: 2,
        seed: 6,
        ..TrainConfig::default()
    };
    let forward = run_grid(&data, &axes, &base, None).map_err(|e| e.to_string())?;
    check(forward.len() == 24, format!("{} cells", forward.len()))?;
    let keys: HashSet<_> = forward
        .iter()
        .map(|c| (c.config.loss, c.config.trunk_depth, c.config.input_mode, c.config.task_mode))
        .collect();
    check(keys.len() == 24, format!("{} distinct cells", keys.len()))?;
    if let Some(c) = forward.iter().find(|c| c.outcome.is_err()) {
        return Err(format!("{} failed: {:?}", c.config.cell_name(), c.outcome));
    }
    let mut order: Vec<usize> = (0..24).collect();
    order.shuffle(&mut rng::seeded(66));
    let shuffled = run_grid(&data, &axes, &base, Some(&order)).map_err(|e| e.to_string())?;
    check(forward == shuffled, "shuffled order changed a cell report")?;
    let parallel = apex::grid::run_parallel(&data, &axes, &base, 4, |_| {}).map_err(|e| e.to_string())?;
    check(forward == parallel, "parallel run changed a cell report")?;
    Ok("24 distinct cells, reports identical under shuffled and parallel order".into())
}

// 7 ---------------------------------------------------------------------

fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Average ranks by counting, O(n^2).
fn oracle_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let below = x.iter().filter(|u| *u < v).count() as f64;
            let equal = x.iter().filter(|u| *u == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn oracle_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut pairs = 0.0;
    for (i, p) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, q) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            sum += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    sum / pairs
}

fn random_vector(r: &mut rng::Rng, n: usize, tied: bool) -> Vec<f64> {
    if tied {
        (0..n).map(|_| r.random_range(0..5) as f64).collect()
    } else {
        (0..n).map(|_| r.random_range(-10.0..10.0)).collect()
    }
}

fn metric_oracles() -> Outcome {
    let mut r = rng::seeded(7);
    let mut worst: f64 = 0.0;
    let mut tested = 0;
    while tested < 1000 {
        let n = r.random_range(3..=200);
        let tied = r.random_bool(0.5);
        let x = random_vector(&mut r, n, tied);
        let y_tied = r.random_bool(0.5);
        let y = random_vector(&mut r, n, y_tied);
        let labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
        if constant(&x) || constant(&y) || labels.iter().all(|l| *l) || labels.iter().all(|l| !*l) {
            continue;
        }
        let p = pearson(&x, &y).map_err(|e| e.to_string())?;
        let s = spearman(&x, &y).map_err(|e| e.to_string())?;
        let a = auc(&x, &labels).map_err(|e| e.to_string())?;
        for (got, want, what) in [
            (p, oracle_pearson(&x, &y), "pearson"),
            (s, oracle_pearson(&oracle_ranks(&x), &oracle_ranks(&y)), "spearman"),
            (a, oracle_auc(&x, &labels), "auc"),
        ] {
            let e = (got - want).abs();
            check(e <= 1e-12, format!("{what} off by {e:.3e} (n = {n})"))?;
            worst = worst.max(e);
        }
        tested += 1;
    }
    let s = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
    check((s - 0.8).abs() <= 1e-12, format!("spearman example = {s}"))?;
    Ok(format!("1000 vectors, max deviation {worst:.1e}; spearman example {s}"))
}

// 8 ---------------------------------------------------------------------

fn random_battle(r: &mut rng::Rng, i: usize) -> Battle {
    let mut side = || {
        let mut v = [0.0; 7];
        for (k, x) in v.iter_mut().enumerate() {
            *x = if k < 2 { r.random_range(0.0..=100.0) } else { r.random_range(1.0..=5.0) };
        }
        ScoreVector::new(v).unwrap()
    };
    let (a, b) = (side(), side());
    Battle {
        battle_id: format!("r{i}"),
        scores_a: a,
        scores_b: b,
        instrumental: r.random_bool(0.5),
        winner: if r.random_bool(0.5) { Winner::A } else { Winner::B },
    }
}

fn preference_pipeline() -> Outcome {
    let mut r = rng::seeded(8);
    for i in 0..1000 {
        let b = random_battle(&mut r, i);
        let f = battle_features(&b, RATIO_EPS);
        let g = battle_features(&b.swapped(), RATIO_EPS);
        check(f.len() == 31 && N_FEATURES == 31, "feature row length is not 31")?;
        for d in 0..10 {
            for col in [3 * d, 3 * d + 2] {
                check(
                    g[col].to_bits() == (-f[col]).to_bits() || (f[col] == 0.0 && g[col] == 0.0),
                    format!("battle {i}: column {col} not antisymmetric ({} vs {})", f[col], g[col]),
                )?;
            }
        }
    }
    let mut y = vec![true; 674];
    y.extend(vec![false; 585]);
    y.shuffle(&mut r);
    let folds = stratified_kfold(&y, 10, 8).map_err(|e| e.to_string())?;
    for k in 0..10 {
        let pos = (0..y.len()).filter(|&i| folds[i] == k && y[i]).count();
        let neg = (0..y.len()).filter(|&i| folds[i] == k && !y[i]).count();
        check((67..=68).contains(&pos), format!("fold {k}: {pos} positives"))?;
        check((58..=59).contains(&neg), format!("fold {k}: {neg} negatives"))?;
    }
    Ok("31 features, antisymmetric on 1000 battles, folds 67-68 / 58-59".into())
}

// 9 ---------------------------------------------------------------------

fn mean_auc(battles: &[Battle], fs: FeatureSet) -> Result<f64, String> {
    let lr = LogRegConfig {
        c: 0.1,
        ..LogRegConfig::default()
    };
    let report = cross_validate(battles, 10, 9, &lr).map_err(|e| e.to_string())?;
    report
        .model("LR", fs)
        .and_then(|m| m.mean_auc())
        .ok_or_else(|| format!("no logistic regression result for {}", fs.as_str()))
}

fn planted_signal_cv() -> Outcome {
    let linear = synth_battles(1000, 9, BattleSignal::Linear);
    let planted = mean_auc(&linear, FeatureSet::WithAesthetics)?;
    check(planted >= 0.95, format!("planted AUC {planted:.4}"))?;

    let mut permuted = linear.clone();
    let mut winners: Vec<Winner> = permuted.iter().map(|b| b.winner).collect();
    winners.shuffle(&mut rng::seeded(99));
    for (b, w) in permuted.iter_mut().zip(winners) {
        b.winner = w;
    }
    let null = mean_auc(&permuted, FeatureSet::WithAesthetics)?;
    check((0.4..=0.6).contains(&null), format!("permuted AUC {null:.4}"))?;

    let aesthetic = synth_battles(1000, 9, BattleSignal::AestheticOnly);
    let with = mean_auc(&aesthetic, FeatureSet::WithAesthetics)?;
    let without = mean_auc(&aesthetic, FeatureSet::PopularityOnly)?;
    check(with - without >= 0.1, format!("with {with:.4} vs popularity-only {without:.4}"))?;
    Ok(format!(
        "planted {planted:.4}, permuted {null:.4}, aesthetic-only signal: with {with:.4} vs without {without:.4}"
    ))
}

// 10 --------------------------------------------------------------------

fn round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name);
    let err = |e: apex::AppError| e.to_string();

    let data = synth_songs(&SynthSpec::new(5, 10, Signal::Linear)).map_err(err)?;
    let mut rows: Vec<ManifestRow> = data.songs.iter().map(|s| s.record.clone().into()).collect();
    rows[1].record.aesthetics = None;
    rows[2].record.released_at = None;
    rows[3].streams_score = Some(12.5);
    rows[3].likes_score = Some(0.1 + 0.2);
    rows[4].record.audio_hash = Some("abc".into());
    write_manifest(&p("a.jsonl"), &rows).map_err(err)?;
    write_manifest(&p("b.jsonl"), &read_manifest(&p("a.jsonl")).map_err(err)?).map_err(err)?;
    same_bytes(&p("a.jsonl"), &p("b.jsonl"), "manifest")?;
    check(
        format_manifest(&read_manifest(&p("b.jsonl")).map_err(err)?).map_err(err)? == format_manifest(&rows).map_err(err)?,
        "manifest content changed",
    )?;

    let set = &data.songs[0].embeddings;
    embedding::write_embedding(&p("a.apexemb"), set).map_err(err)?;
    let back = embedding::read_embedding(&p("a.apexemb"), set.song_id()).map_err(err)?;
    check(&back == set, "embedding values changed")?;
    embedding::write_embedding(&p("b.apexemb"), &back).map_err(err)?;
    same_bytes(&p("a.apexemb"), &p("b.apexemb"), "embedding")?;

    let mut params = init_model(&ArchConfig::new(TrunkDepth::Three, TaskMode::Full), 10).map_err(|e| e.to_string())?;
    let mut r = rng::seeded(10);
    for v in params.running_mut() {
        *v = r.random_range(0.5..1.5);
    }
    let ckpt = Checkpoint::new(params, InputMode::Segment, LossKind::Uncertainty);
    checkpoint::write_checkpoint(&p("a.apexmdl"), &ckpt).map_err(err)?;
    let loaded = checkpoint::read_checkpoint(&p("a.apexmdl")).map_err(err)?;
    checkpoint::write_checkpoint(&p("b.apexmdl"), &loaded).map_err(err)?;
    same_bytes(&p("a.apexmdl"), &p("b.apexmdl"), "checkpoint")?;
    let narrowed = ckpt.params.values().iter().zip(loaded.params.values()).all(|(a, b)| (*a as f32) as f64 == *b);
    check(narrowed && loaded.header == ckpt.header, "checkpoint values changed beyond f32 rounding")?;

    let battles = synth_battles(50, 10, BattleSignal::Linear);
    write_battles(&p("a.battles"), &battles).map_err(err)?;
    let back = read_battles(&p("a.battles")).map_err(err)?;
    check(back == battles, "battles changed")?;
    write_battles(&p("b.battles"), &back).map_err(err)?;
    same_bytes(&p("a.battles"), &p("b.battles"), "battles")?;
    check(parse_battles(&format_battles(&back)) == Ok(battles), "battle text changed")?;
    Ok("manifest, embedding, checkpoint and battle files byte-identical".into())
}

fn same_bytes(a: &std::path::Path, b: &std::path::Path, what: &str) -> Result<(), String> {
    let x = fsutil::read(a).map_err(|e| e.to_string())?;
    let y = fsutil::read(b).map_err(|e| e.to_string())?;
    check(x == y, format!("{what} bytes differ after a second write"))
}

// -----------------------------------------------------------------------

type Criterion = (&'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 10] = [
    ("score transform anchor", score_anchor),
    ("gradient correctness", gradient_correctness),
    ("uncertainty loss stationarity", uncertainty_stationarity),
    ("strategy identity", strategy_identity),
    ("synthetic learnability", synthetic_learnability),
    ("grid integrity", grid_integrity),
    ("metric oracles", metric_oracles),
    ("preference pipeline", preference_pipeline),
    ("planted-signal cross-validation", planted_signal_cv),
    ("format round trips", round_trips),
];

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in CRITERIA.iter().enumerate() {
        let n = i + 1;
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(msg) => println!("criterion {n:>2} PASS  {name}: {msg} [{:.2?}]", t.elapsed()),
            Err(msg) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {msg} [{:.2?}]", t.elapsed());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
