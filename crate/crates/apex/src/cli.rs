//! Command-line driver. [`run`] parses arguments, executes one command and
//! returns the process exit code: 0 on success, 1 for invalid input or
//! usage, 2 for failures at run time.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use apex_core::data::{filter_songs, stratified_downsample, stratified_split};
use apex_core::losses::LossKind;
use apex_core::network::{TaskMode, TrunkDepth};
use apex_core::preference::cross_validate;
use apex_core::scores::{ScoreTransformConfig, Scorer};
use apex_core::trainer::{evaluate, predict_songs, train_and_evaluate, InputMode, TrainingSong};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::battles::{read_battles, write_battles};
use crate::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::config::RunConfig;
use crate::dataset::{load_songs, prepare};
use crate::manifest::{load_manifest, read_manifest, write_manifest};
use crate::report::{epochs_csv, grid_csv, to_json, write_json};
use crate::synth::{synth_battles, synth_songs, write_synth, BattleSignal, Signal, SynthSpec};
use crate::{fsutil, grid, AppError, AppResult};

#[derive(Debug, Parser)]
#[command(name = "apex", version, about = "Popularity and aesthetic score prediction for generated songs")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a manifest and every embedding file it references.
    Ingest(DataArgs),
    /// Add streams_score and likes_score columns to a manifest.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write the stratified train/test/validation split of a manifest.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model and write its checkpoint and reports.
    Train(TrainArgs),
    /// Train every cell of the experiment grid.
    Grid {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Cells trained concurrently.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Regression metrics of a checkpoint on a labelled manifest.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Cross-validated pairwise preference prediction.
    Battles {
        #[arg(long)]
        battles: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory the manifest's embedding_ref paths are relative to.
    #[arg(long)]
    embeddings: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    tasks: Option<TasksArg>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(2..=3))]
    depth: Option<u8>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    n_songs: usize,
    #[arg(long, default_value_t = 1)]
    min_segments: usize,
    #[arg(long, default_value_t = 4)]
    max_segments: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "linear")]
    signal: SignalArg,
    /// Also write this many synthetic battles to battles.jsonl.
    #[arg(long)]
    battles: Option<usize>,
    #[arg(long, value_enum, default_value = "linear")]
    battle_signal: BattleSignalArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Segment,
    Song,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TasksArg {
    Popularity,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    Equal,
    Weighted,
    Uncertainty,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SignalArg {
    Linear,
    Nonlinear,
    None,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BattleSignalArg {
    Linear,
    AestheticOnly,
    None,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(path: Option<&Path>) -> AppResult<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn log_resolved<T: Serialize>(command: &str, seed: Option<u64>, config: &T) -> AppResult<()> {
    let json = serde_json::to_string(config).map_err(|e| AppError::Validation(e.to_string()))?;
    match seed {
        Some(s) => eprintln!("[apex {command}] seed={s} config={json}"),
        None => eprintln!("[apex {command}] config={json}"),
    }
    Ok(())
}

fn execute(command: Command) -> AppResult<()> {
    match command {
        Command::Ingest(d) => ingest(&d),
        Command::Score { manifest, out, config } => score(&manifest, &out, config.as_deref()),
        Command::Split { manifest, out, config, seed } => split(&manifest, &out, config.as_deref(), seed),
        Command::Train(a) => train_cmd(&a),
        Command::Grid { data, config, out, seed, workers } => {
            grid_cmd(&data, config.as_deref(), &out, seed, workers)
        }
        Command::Eval { data, checkpoint, out, config } => eval_cmd(&data, &checkpoint, &out, config.as_deref()),
        Command::Battles { battles, out, config, seed } => battles_cmd(&battles, &out, config.as_deref(), seed),
        Command::Synth(a) => synth_cmd(&a),
    }
}

#[derive(Serialize)]
struct IngestSummary {
    songs: usize,
    with_aesthetics: usize,
    segments: usize,
}

fn ingest(d: &DataArgs) -> AppResult<()> {
    log_resolved("ingest", None, &(&d.manifest, &d.embeddings))?;
    let songs = load_songs(&d.manifest, &d.embeddings)?;
    let summary = IngestSummary {
        songs: songs.len(),
        with_aesthetics: songs.iter().filter(|s| s.record.aesthetics.is_some()).count(),
        segments: songs.iter().map(|s| s.embeddings.n_segments()).sum(),
    };
    print!("{}", to_json(&summary)?);
    Ok(())
}

fn score(manifest: &Path, out: &Path, config: Option<&Path>) -> AppResult<()> {
    let cfg = load_config(config)?;
    log_resolved("score", None, &cfg.data)?;
    let mut rows = read_manifest(manifest)?;
    let records: Vec<_> = rows.iter().map(|r| r.record.clone()).collect();
    let scorer = Scorer::fit(&records, ScoreTransformConfig::new(cfg.data.alpha)?)?;
    for row in &mut rows {
        let labels = scorer.labels(&row.record)?;
        row.streams_score = Some(labels.streams_score);
        row.likes_score = Some(labels.likes_score);
    }
    write_manifest(out, &rows)?;
    eprintln!("[apex score] wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

fn split(manifest: &Path, out: &Path, config: Option<&Path>, seed: Option<u64>) -> AppResult<()> {
    let cfg = load_config(config)?;
    let seed = seed.unwrap_or(cfg.train.seed);
    log_resolved("split", Some(seed), &cfg.data)?;
    let records = load_manifest(manifest)?;
    let mut kept = filter_songs(&records, &cfg.data.filter);
    if let Some(target) = cfg.data.downsample {
        kept = stratified_downsample(&kept, target, cfg.data.n_strata, seed)?;
    }
    let split = stratified_split(&kept, cfg.data.fractions, cfg.data.n_strata, seed)?;
    write_json(out, &split)?;
    eprintln!(
        "[apex split] train {} / test {} / val {}",
        split.train_ids.len(),
        split.test_ids.len(),
        split.val_ids.len()
    );
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> AppResult<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    let t = &mut cfg.train;
    if let Some(s) = a.seed {
        t.seed = s;
    }
    if let Some(m) = a.mode {
        t.input_mode = match m {
            ModeArg::Segment => InputMode::Segment,
            ModeArg::Song => InputMode::Song,
        };
    }
    if let Some(k) = a.tasks {
        t.task_mode = match k {
            TasksArg::Popularity => TaskMode::Popularity,
            TasksArg::Full => TaskMode::Full,
        };
    }
    if let Some(l) = a.loss {
        t.loss = match l {
            LossArg::Equal => LossKind::Equal,
            LossArg::Weighted => LossKind::Weighted,
            LossArg::Uncertainty => LossKind::Uncertainty,
        };
    }
    if let Some(d) = a.depth {
        t.trunk_depth = TrunkDepth::from_layers(d as usize).expect("range checked by the parser");
    }
    t.validate()?;
    log_resolved("train", Some(cfg.train.seed), &cfg)?;

    let songs = load_songs(&a.data.manifest, &a.data.embeddings)?;
    let prepared = prepare(&songs, &cfg.data, cfg.train.seed)?;
    let (params, report) = train_and_evaluate(&prepared.splits, &cfg.train)?;
    let ckpt = Checkpoint::new(params, cfg.train.input_mode, cfg.train.loss);
    write_checkpoint(&a.out.join("model.apexmdl"), &ckpt)?;
    write_json(&a.out.join("report.json"), &report)?;
    write_json(&a.out.join("split.json"), &prepared.split)?;
    fsutil::atomic_write(&a.out.join("epochs.csv"), epochs_csv(&report).as_bytes())?;
    eprintln!(
        "[apex train] {} epochs, best epoch {} (val loss {:.6})",
        report.epochs.len(),
        report.best_epoch,
        report.best_val_loss
    );
    Ok(())
}

fn grid_cmd(
    data: &DataArgs,
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    workers: Option<usize>,
) -> AppResult<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.train.validate()?;
    let workers = workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    log_resolved("grid", Some(cfg.train.seed), &cfg)?;
    eprintln!("[apex grid] workers={workers}");

    let songs = load_songs(&data.manifest, &data.embeddings)?;
    let prepared = prepare(&songs, &cfg.data, cfg.train.seed)?;
    let cells = grid::run_parallel(&prepared.splits, &cfg.axes, &cfg.train, workers, |c| {
        let status = if c.outcome.is_ok() { "ok" } else { "error" };
        eprintln!("[apex grid] {} {status}", c.config.cell_name());
    })?;
    write_json(&out.join("grid.json"), &cells)?;
    fsutil::atomic_write(&out.join("grid.csv"), grid_csv(&cells).as_bytes())?;
    let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
    eprintln!("[apex grid] {} cells, {failed} failed", cells.len());
    if failed > 0 {
        return Err(AppError::Runtime(format!("{failed} grid cells failed")));
    }
    Ok(())
}

fn eval_cmd(data: &DataArgs, checkpoint: &Path, out: &Path, config: Option<&Path>) -> AppResult<()> {
    let cfg = load_config(config)?;
    let ckpt = read_checkpoint(checkpoint)?;
    log_resolved("eval", None, &(&ckpt.header, &cfg.data))?;
    let rows = read_manifest(&data.manifest)?;
    let songs = load_songs(&data.manifest, &data.embeddings)?;
    // precomputed score columns win; otherwise the manifest is its own reference
    let scorer = if rows.iter().all(|r| r.streams_score.is_some() && r.likes_score.is_some()) {
        None
    } else {
        let records: Vec<_> = rows.iter().map(|r| r.record.clone()).collect();
        Some(Scorer::fit(&records, ScoreTransformConfig::new(cfg.data.alpha)?)?)
    };
    let labelled = rows
        .iter()
        .zip(&songs)
        .map(|(row, song)| {
            let labels = match &scorer {
                Some(s) => s.labels(&row.record)?,
                None => apex_core::scores::LabelVector {
                    streams_score: row.streams_score.unwrap_or_default(),
                    likes_score: row.likes_score.unwrap_or_default(),
                    aesthetics: row.record.aesthetics,
                },
            };
            Ok(TrainingSong {
                embeddings: song.embeddings.clone(),
                labels,
            })
        })
        .collect::<AppResult<Vec<_>>>()?;
    let mode = ckpt.header.input_mode;
    let metrics = evaluate(&ckpt.params, &labelled, mode)?;
    write_json(&out.join("metrics.json"), &metrics)?;

    let embs: Vec<_> = songs.iter().map(|s| s.embeddings.clone()).collect();
    let preds = predict_songs(&ckpt.params, &embs, mode)?;
    let tasks = ckpt.header.arch.tasks.tasks();
    let mut csv = String::from("song_id");
    for t in tasks {
        let _ = write!(csv, ",{}", t.name());
    }
    csv.push('\n');
    for (song, row) in songs.iter().zip(&preds) {
        csv.push_str(&song.record.song_id);
        for v in row {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    fsutil::atomic_write(&out.join("predictions.csv"), csv.as_bytes())?;
    Ok(())
}

fn battles_cmd(path: &Path, out: &Path, config: Option<&Path>, seed: Option<u64>) -> AppResult<()> {
    let cfg = load_config(config)?;
    let seed = seed.unwrap_or(cfg.train.seed);
    log_resolved("battles", Some(seed), &cfg.preference)?;
    let battles = read_battles(path)?;
    let report = cross_validate(&battles, cfg.preference.folds, seed, &cfg.preference.logreg)?;
    write_json(out, &report)?;
    for m in &report.models {
        eprintln!(
            "[apex battles] {} / {}: mean AUC {}",
            m.classifier,
            m.feature_set.as_str(),
            m.mean_auc().map_or("n/a".into(), |a| format!("{a:.4}"))
        );
    }
    Ok(())
}

fn synth_cmd(a: &SynthArgs) -> AppResult<()> {
    let spec = SynthSpec {
        n_songs: a.n_songs,
        min_segments: a.min_segments,
        max_segments: a.max_segments,
        seed: a.seed,
        signal: match a.signal {
            SignalArg::Linear => Signal::Linear,
            SignalArg::Nonlinear => Signal::Nonlinear,
            SignalArg::None => Signal::None,
        },
        dim: apex_core::EMBED_DIM,
    };
    log_resolved("synth", Some(a.seed), &spec)?;
    let data = synth_songs(&spec)?;
    write_synth(&a.out, &data)?;
    if let Some(n) = a.battles {
        let signal = match a.battle_signal {
            BattleSignalArg::Linear => BattleSignal::Linear,
            BattleSignalArg::AestheticOnly => BattleSignal::AestheticOnly,
            BattleSignalArg::None => BattleSignal::None,
        };
        write_battles(&a.out.join("battles.jsonl"), &synth_battles(n, a.seed, signal))?;
    }
    Ok(())
}
