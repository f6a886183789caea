//! Source-only baseline vs adapted accuracy on a preset, per shots value.
//!
//! `cargo run --release --example calibrate -- [key=value ...] [shots=0,1,5] [seeds=5]`

use std::time::Instant;

use avda::config::ExperimentConfig;
use avda::eval::{accuracy_with, aggregate, build_datasets, seed_list, shots_runs};
use avda::networks::Route;
use avda::trainer::train_source;

fn main() -> anyhow::Result<()> {
    let mut cfg = ExperimentConfig::preset("rotated-blobs")?;
    let mut grid = vec![0usize];
    let mut n_seeds = 5;
    let mut overrides = Vec::new();
    for a in std::env::args().skip(1) {
        if let Some(v) = a.strip_prefix("shots=") {
            grid = v.split(',').map(|s| s.parse()).collect::<Result<_, _>>()?;
        } else if let Some(v) = a.strip_prefix("seeds=") {
            n_seeds = v.parse()?;
        } else {
            overrides.push(a);
        }
    }
    cfg.apply_overrides(&overrides)?;
    cfg.validate()?;
    let (source, target) = build_datasets(&cfg)?;
    let t = Instant::now();
    let src = train_source(&cfg, &source)?;
    let baseline = accuracy_with(&src.bundle, Route::Source, &target)?;
    println!(
        "source acc {:.4}  baseline {:.4}  ({:.1}s)",
        src.metrics.last().map_or(0.0, |m| m.accuracy),
        baseline,
        t.elapsed().as_secs_f64()
    );
    let t = Instant::now();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let runs = shots_runs(&cfg, &src.bundle, &source, &target, &grid, &seed_list(cfg.seed, n_seeds), threads)?;
    for r in &runs {
        println!("shots {:>2} seed {:>3}  {:.4}", r.shots, r.seed, r.accuracy);
    }
    for r in aggregate(&runs) {
        println!("shots {:>2}  mean {:.4}  std {:.4}  best {:.4}", r.shots, r.mean_accuracy, r.std_accuracy, r.best_accuracy);
    }
    println!("adaptation {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
