//! Accuracy, the shots-vs-accuracy experiment, embedding export and the
//! JSON run report.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::data::{
    gen_shifted_blobs, gen_two_moons_pair, load_labeled_array, make_few_shot_split, AffineShift, Domain, DomainDataset,
};
use crate::error::{Error, Result};
use crate::networks::{ModelBundle, PredictMode, Route};
use crate::trainer::{train_adaptation, AdaptEpoch, SourceEpoch, TargetData};

fn route_for(domain: Domain) -> Route {
    match domain {
        Domain::Source => Route::Source,
        Domain::Target => Route::Target,
    }
}

/// `[true][predicted]` counts, mean-embedding predictions through `route`.
pub fn confusion_matrix(bundle: &ModelBundle, route: Route, ds: &DomainDataset) -> Result<Vec<Vec<usize>>> {
    let labels = ds.require_labels()?;
    let pred = bundle.predict(route, &ds.features, PredictMode::MeanZ)?;
    let k = bundle.config.classes;
    let mut m = vec![vec![0; k]; k];
    for (&y, &p) in labels.iter().zip(&pred) {
        m[y][p] += 1;
    }
    Ok(m)
}

/// Fraction of rows whose mean-embedding prediction through `route`
/// matches the label.
pub fn accuracy_with(bundle: &ModelBundle, route: Route, ds: &DomainDataset) -> Result<f64> {
    let labels = ds.require_labels()?;
    if labels.is_empty() {
        return Err(Error::Contract("accuracy of an empty dataset".into()));
    }
    let pred = bundle.predict(route, &ds.features, PredictMode::MeanZ)?;
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Accuracy through the networks of the dataset's own domain.
pub fn evaluate_accuracy(bundle: &ModelBundle, ds: &DomainDataset) -> Result<f64> {
    accuracy_with(bundle, route_for(ds.domain), ds)
}

/// Posterior means as CSV: `z0..z{J-1},label,domain`, label `-1` when
/// unknown.
pub fn export_embeddings(bundle: &ModelBundle, ds: &DomainDataset, path: &Path) -> Result<()> {
    let z = bundle.embed(route_for(ds.domain), &ds.features)?;
    let j = bundle.config.latent_dim;
    let mut out = String::new();
    let header: Vec<String> = (0..j).map(|i| format!("z{i}")).chain(["label".into(), "domain".into()]).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for r in 0..ds.len() {
        for v in z.row(r) {
            out.push_str(&format!("{v:?},"));
        }
        let label = ds.labels.as_ref().map_or(-1, |l| l[r] as i64);
        out.push_str(&format!("{label},{}\n", ds.domain.as_str()));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Source and target datasets described by `cfg.dataset`, generated with
/// `cfg.seed`.
pub fn build_datasets(cfg: &ExperimentConfig) -> Result<(DomainDataset, DomainDataset)> {
    match &cfg.dataset {
        DatasetSpec::RotatedBlobs {
            classes,
            dim,
            n_per_class,
            rotation_deg,
            translation,
            noise,
        } => {
            let shift = AffineShift {
                rotation: rotation_deg.to_radians(),
                translation: translation.clone(),
                scale: 1.0,
            };
            gen_shifted_blobs(*classes, *dim, *n_per_class, &shift, *noise, cfg.seed)
        }
        DatasetSpec::TwoMoons {
            n,
            rotation_deg,
            translation,
            noise,
        } => {
            let shift = AffineShift {
                rotation: rotation_deg.to_radians(),
                translation: translation.clone(),
                scale: 1.0,
            };
            gen_two_moons_pair(*n, &shift, *noise, cfg.seed)
        }
        DatasetSpec::Files { source, target, classes } => Ok((
            load_labeled_array(source, Domain::Source, *classes)?,
            load_labeled_array(target, Domain::Target, *classes)?,
        )),
    }
}

/// One adaptation run of a shots curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotsRun {
    pub shots: usize,
    pub seed: u64,
    pub accuracy: f64,
}

/// Aggregate over seeds for one shots value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotsRow {
    pub shots: usize,
    pub mean_accuracy: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std_accuracy: f64,
    pub best_accuracy: f64,
    pub runs: usize,
}

/// Adapts `bundle` once per `(shots, seed)` pair and scores each run on the
/// target rows outside its labeled split. Runs fan out over `threads`
/// workers; results come back ordered by `(shots, seed)`.
pub fn shots_runs(
    cfg: &ExperimentConfig,
    bundle: &ModelBundle,
    source: &DomainDataset,
    target: &DomainDataset,
    grid: &[usize],
    seeds: &[u64],
    threads: usize,
) -> Result<Vec<ShotsRun>> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::Contract("shots grid and seed list must be nonempty".into()));
    }
    let jobs: Vec<(usize, u64)> = grid.iter().flat_map(|&s| seeds.iter().map(move |&seed| (s, seed))).collect();
    let run = |&(shots, seed): &(usize, u64)| -> Result<ShotsRun> {
        let mut c = cfg.clone();
        c.shots = shots;
        c.seed = seed;
        let split = make_few_shot_split(target, shots, seed)?;
        let labeled = target.subset(&split.labeled_indices);
        let pool = target.subset(&split.unlabeled_indices);
        let data = TargetData {
            labeled: &labeled,
            unlabeled: &pool,
            eval: None,
        };
        let adapted = train_adaptation(&c, bundle, source, data)?;
        Ok(ShotsRun {
            shots,
            seed,
            accuracy: accuracy_with(&adapted.bundle, Route::Target, &pool)?,
        })
    };
    let threads = threads.clamp(1, jobs.len());
    let mut results: Vec<Option<Result<ShotsRun>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let jobs = &jobs;
                let run = &run;
                s.spawn(move || {
                    (w..jobs.len())
                        .step_by(threads)
                        .map(|i| (i, run(&jobs[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                results[i] = Some(r);
            }
        }
    });
    results.into_iter().map(|r| r.unwrap()).collect()
}

/// Folds runs into one row per shots value, in grid order.
pub fn aggregate(runs: &[ShotsRun]) -> Vec<ShotsRow> {
    let mut shots: Vec<usize> = Vec::new();
    for r in runs {
        if !shots.contains(&r.shots) {
            shots.push(r.shots);
        }
    }
    shots
        .into_iter()
        .map(|s| {
            let acc: Vec<f64> = runs.iter().filter(|r| r.shots == s).map(|r| r.accuracy).collect();
            let n = acc.len() as f64;
            let mean = acc.iter().sum::<f64>() / n;
            let var = if acc.len() > 1 {
                acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            ShotsRow {
                shots: s,
                mean_accuracy: mean,
                std_accuracy: var.sqrt(),
                best_accuracy: acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                runs: acc.len(),
            }
        })
        .collect()
}

/// Seeds `seed, seed + 1, ...`.
pub fn seed_list(seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| seed.wrapping_add(i)).collect()
}

/// Generates data, trains the source model once, then runs the grid.
pub fn run_shots_curve(cfg: &ExperimentConfig, grid: &[usize], n_seeds: usize, threads: usize) -> Result<Vec<ShotsRow>> {
    let (source, target) = build_datasets(cfg)?;
    let src = crate::trainer::train_source(cfg, &source)?;
    let runs = shots_runs(cfg, &src.bundle, &source, &target, grid, &seed_list(cfg.seed, n_seeds), threads)?;
    Ok(aggregate(&runs))
}

pub const SHOTS_CSV_HEADER: &str = "shots,mean_accuracy,std_accuracy,best_accuracy,runs";

pub fn shots_csv(rows: &[ShotsRow]) -> String {
    let mut s = format!("{SHOTS_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.10},{:.10},{:.10},{}\n",
            r.shots, r.mean_accuracy, r.std_accuracy, r.best_accuracy, r.runs
        ));
    }
    s
}

/// Everything a CLI run leaves behind besides checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub shots: usize,
    pub source_metrics: Vec<SourceEpoch>,
    pub adaptation_metrics: Vec<AdaptEpoch>,
    /// Source-route accuracy on the evaluation pool before adaptation.
    pub baseline_accuracy: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub wall_clock_seconds: f64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Corrupt(format!("run report: {e}")))
    }
}
