//! JSON and CSV report output.

use std::fmt::Write as _;
use std::path::Path;

use apex_core::network::Task;
use apex_core::trainer::{GridCell, TrainReport};
use serde::Serialize;

use crate::{fsutil, AppError, AppResult};

pub fn to_json<T: Serialize>(value: &T) -> AppResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| AppError::Validation(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    fsutil::atomic_write(path, to_json(value)?.as_bytes())
}

pub fn epochs_csv(report: &TrainReport) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_loss\n");
    for e in &report.epochs {
        let _ = writeln!(out, "{},{},{},{}", e.epoch, e.lr, e.train_loss, e.val_loss);
    }
    out
}

const GRID_TASKS: [Task; 2] = [Task::Streams, Task::Likes];

/// One row per grid cell with the popularity-head test metrics.
pub fn grid_csv(cells: &[GridCell]) -> String {
    let mut out = String::from(
        "cell,loss,depth,mode,tasks,seed,status,epochs,best_epoch,best_val_loss,\
         streams_pearson,streams_spearman,likes_pearson,likes_spearman,error\n",
    );
    for c in cells {
        let cfg = &c.config;
        let _ = write!(
            out,
            "{},{},{},{},{},{},",
            cfg.cell_name(),
            cfg.loss.as_str(),
            cfg.trunk_depth.layers(),
            cfg.input_mode.as_str(),
            cfg.task_mode.as_str(),
            cfg.seed
        );
        match &c.outcome {
            Ok(r) => {
                let _ = write!(out, "ok,{},{},{}", r.epochs.len(), r.best_epoch, r.best_val_loss);
                for t in GRID_TASKS {
                    match r.test_metrics.as_ref().and_then(|m| m.get(&t)) {
                        Some(m) => {
                            let _ = write!(out, ",{},{}", m.pearson, m.spearman);
                        }
                        None => out.push_str(",,"),
                    }
                }
                out.push_str(",\n");
            }
            Err(e) => {
                let _ = writeln!(out, "error,,,,,,,,{}", csv_escape(e));
            }
        }
    }
    out
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
