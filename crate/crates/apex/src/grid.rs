//! Grid execution across worker threads.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use apex_core::trainer::{train_and_evaluate, GridAxes, GridCell, Splits, TrainConfig};

use crate::AppResult;

/// Runs every grid cell on up to `workers` threads. Results come back in
/// enumeration order and equal those of the sequential runner, since each
/// cell's seed depends only on the base seed and its own settings.
pub fn run_parallel(
    data: &Splits,
    axes: &GridAxes,
    base: &TrainConfig,
    workers: usize,
    on_done: impl Fn(&GridCell) + Sync,
) -> AppResult<Vec<GridCell>> {
    let cells = axes.cells(base)?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<GridCell>>> = Mutex::new(vec![None; cells.len()]);
    let workers = workers.clamp(1, cells.len());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = cells.get(i) else { break };
                let outcome = train_and_evaluate(data, cfg)
                    .map(|(_, r)| r)
                    .map_err(|e| e.to_string());
                let cell = GridCell {
                    config: cfg.clone(),
                    outcome,
                };
                on_done(&cell);
                results.lock().expect("no worker panicked")[i] = Some(cell);
            });
        }
    });
    Ok(results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|c| c.expect("every cell ran"))
        .collect())
}
