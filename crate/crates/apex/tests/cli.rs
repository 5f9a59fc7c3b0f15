use std::path::Path;
use std::process::{Command, Output};

use apex_core::scores::{power_transform, ScoreTransformConfig};
use serde_json::Value;

fn apex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apex")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn song_line(id: &str, streams: u64, likes: u64) -> String {
    format!(
        r#"{{"song_id":"{id}","platform":"udio","streams":{streams},"likes":{likes},"coherence":null,"musicality":null,"memorability":null,"clarity":null,"naturalness":null,"released_at":null,"embedding_ref":"{id}.apexemb"}}"#
    )
}

fn scored(dir: &Path, counts: &[(u64, u64)]) -> Vec<Value> {
    let text: String = counts
        .iter()
        .enumerate()
        .map(|(i, (s, l))| song_line(&format!("s{i}"), *s, *l) + "\n")
        .collect();
    let m = dir.join("m.jsonl");
    std::fs::write(&m, text).unwrap();
    let out = dir.join("scored.jsonl");
    let o = apex(&["score", "--manifest", p(&m), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::read_to_string(out)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let o = apex(&[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn help_and_version_exit_0() {
    assert_eq!(apex(&["--help"]).status.code(), Some(0));
    assert_eq!(apex(&["--version"]).status.code(), Some(0));
}

#[test]
fn unknown_command_or_flag_exits_1() {
    let o = apex(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(apex(&["score", "--manifest", "x", "--out", "y", "--bogus"]).status.code(), Some(1));
    assert_eq!(apex(&["train", "--manifest", "x", "--embeddings", "e", "--out", "o", "--depth", "4"]).status.code(), Some(1));
}

#[test]
fn score_adds_columns_on_three_songs() {
    let dir = tempfile::tempdir().unwrap();
    let rows = scored(dir.path(), &[(10, 3), (1000, 1), (30, 2)]);
    assert_eq!(rows.len(), 3);
    let cfg = ScoreTransformConfig::default();
    let expect = [0.0, 100.0, 50.0].map(|pct| power_transform(pct, &cfg).unwrap());
    for (row, want) in rows.iter().zip(expect) {
        assert_eq!(row["streams_score"].as_f64().unwrap(), want);
        assert!(row["likes_score"].is_number());
    }
    assert_eq!(rows[0]["likes_score"].as_f64().unwrap(), 100.0);
}

#[test]
fn score_places_the_80th_percentile_at_50() {
    let dir = tempfile::tempdir().unwrap();
    let rows = scored(dir.path(), &[(1, 1), (2, 2), (3, 3), (4, 4), (5, 5), (6, 6)]);
    let s = rows[4]["streams_score"].as_f64().unwrap();
    assert!((s - 50.0).abs() < 1e-9, "{s}");
}

#[test]
fn malformed_manifest_exits_1_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.jsonl");
    let bad = song_line("b", 5, 1).replace(r#""streams":5,"#, "");
    std::fs::write(&m, format!("{}\n{bad}\n", song_line("a", 1, 1))).unwrap();
    let o = apex(&["score", "--manifest", p(&m), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2: missing field streams"));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn missing_input_file_is_a_runtime_error() {
    let o = apex(&["score", "--manifest", "/nonexistent/m.jsonl", "--out", "/tmp/never"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_is_deterministic_and_ingests() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = apex(&["synth", "--out", p(d), "--n-songs", "6", "--seed", "3", "--battles", "20"]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["manifest.jsonl", "battles.jsonl", "embeddings/song00004.apexemb"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let o = apex(&["ingest", "--manifest", p(&a.join("manifest.jsonl")), "--embeddings", p(&a.join("embeddings"))]);
    assert_eq!(o.status.code(), Some(0));
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["songs"], 6);
    assert!(String::from_utf8_lossy(&o.stderr).contains("config="));
}

#[test]
fn ingest_rejects_corrupt_embedding() {
    let dir = tempfile::tempdir().unwrap();
    let o = apex(&["synth", "--out", p(dir.path()), "--n-songs", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let f = dir.path().join("embeddings/song00001.apexemb");
    let mut bytes = std::fs::read(&f).unwrap();
    bytes[0] = b'X';
    std::fs::write(&f, bytes).unwrap();
    let o = apex(&[
        "ingest",
        "--manifest",
        p(&dir.path().join("manifest.jsonl")),
        "--embeddings",
        p(&dir.path().join("embeddings")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("format error"));
}

#[test]
fn split_train_eval_and_battles() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(apex(&["synth", "--out", p(d), "--n-songs", "40", "--battles", "200"]).status.code(), Some(0));
    let manifest = d.join("manifest.jsonl");
    let store = d.join("embeddings");
    let config = d.join("config.json");
    std::fs::write(
        &config,
        r#"{"data":{"n_strata":4},"train":{"batch_size":8,"max_epochs":2},"preference":{"folds":5}}"#,
    )
    .unwrap();

    let o = apex(&["split", "--manifest", p(&manifest), "--config", p(&config), "--seed", "2", "--out", p(&d.join("split.json"))]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let split: Value = serde_json::from_str(&std::fs::read_to_string(d.join("split.json")).unwrap()).unwrap();
    let n = ["train_ids", "test_ids", "val_ids"].iter().map(|k| split[k].as_array().unwrap().len()).sum::<usize>();
    assert_eq!(n, 40);

    let run = d.join("run");
    let o = apex(&[
        "train", "--manifest", p(&manifest), "--embeddings", p(&store), "--config", p(&config),
        "--out", p(&run), "--mode", "segment", "--tasks", "popularity", "--loss", "equal", "--depth", "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["input_mode"], "segment");
    assert_eq!(report["config"]["trunk_depth"], 3);
    assert_eq!(std::fs::read_to_string(run.join("epochs.csv")).unwrap().lines().count(), 3);

    let o = apex(&[
        "eval", "--manifest", p(&manifest), "--embeddings", p(&store),
        "--checkpoint", p(&run.join("model.apexmdl")), "--out", p(&d.join("eval")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: Value = serde_json::from_str(&std::fs::read_to_string(d.join("eval/metrics.json")).unwrap()).unwrap();
    assert!(metrics["streams"]["pearson"].is_number());
    let preds = std::fs::read_to_string(d.join("eval/predictions.csv")).unwrap();
    assert_eq!(preds.lines().next().unwrap(), "song_id,streams,likes");
    assert_eq!(preds.lines().count(), 41);

    let o = apex(&["battles", "--battles", p(&d.join("battles.jsonl")), "--config", p(&config), "--out", p(&d.join("cv.json"))]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let cv: Value = serde_json::from_str(&std::fs::read_to_string(d.join("cv.json")).unwrap()).unwrap();
    assert_eq!(cv["k"], 5);
    assert_eq!(cv["models"].as_array().unwrap().len(), 2);
    assert_eq!(cv["naive_rules"].as_array().unwrap().len(), 4);
}

#[test]
fn grid_writes_24_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(apex(&["synth", "--out", p(d), "--n-songs", "24", "--max-segments", "2"]).status.code(), Some(0));
    let config = d.join("grid.json");
    std::fs::write(
        &config,
        r#"{"data":{"n_strata":2,"fractions":[0.5,0.25,0.25]},"train":{"batch_size":6,"max_epochs":1},"axes":{"losses":["equal","weighted","uncertainty"],"depths":[2,3],"modes":["segment","song"],"tasks":["popularity","full"]}}"#,
    )
    .unwrap();
    let out = d.join("grid");
    let o = apex(&[
        "grid", "--manifest", p(&d.join("manifest.jsonl")), "--embeddings", p(&d.join("embeddings")),
        "--config", p(&config), "--out", p(&out), "--workers", "4", "--seed", "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("grid.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 24);
    assert!(rows.iter().all(|r| r.split(',').nth(6) == Some("ok")), "{csv}");
    let cells: std::collections::HashSet<&str> = rows.iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(cells.len(), 24);
}
