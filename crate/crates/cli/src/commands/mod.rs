mod esd;
mod eval;
mod gen_data;
mod grid;
mod train;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

pub use esd::{esd_scan, run_scan, EsdCommandConfig, EsdScanArgs};
pub use eval::{eval, evaluate, Diagnostics, EvalArgs, EvalConfig, EvalSummary};
pub use gen_data::{gen_data, GenDataArgs, GenDataConfig};
pub use grid::{grid, run_grid, Cell, GridArgs, GridConfig, GridResult, GridRow, Summary};
pub use train::{train, train_model, TrainArgs, TrainCommandConfig, TrainOutcome, TrainSettings, CHECKPOINT, TRAIN_LOG};

/// Maps `f` over `items` on up to `jobs` threads; results keep input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every item mapped"))
        .collect()
}
