//! The `avda` command line.
//!
//! Every subcommand starts from a preset (`--preset`, default `default`),
//! applies an optional config file (`--config`) and then `--set key=value`
//! overrides. Outputs land in `--out`, or in
//! `$AVDA_RUN_DIR/<subcommand>-<digest>` when `--out` is absent.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig};
use crate::data::{make_few_shot_split, save_binary, save_csv, DomainDataset};
use crate::error::{Error, Result};
use crate::eval::{
    accuracy_with, aggregate, build_datasets, export_embeddings, seed_list, shots_csv, shots_runs, RunReport, ShotsRun,
};
use crate::networks::Route;
use crate::trainer::{checkpoint_load, checkpoint_save, train_adaptation, train_source, Checkpoint, TargetData};

pub const RUN_DIR_ENV: &str = "AVDA_RUN_DIR";
const DEFAULT_RUN_ROOT: &str = "runs";

#[derive(Parser, Debug)]
#[command(name = "avda", version, about = "Adversarial variational domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Built-in starting configuration.
    #[arg(long, default_value = "default")]
    preset: String,
    /// Config file applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override, repeatable; applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the source model and write `source.ckpt` and `report.json`.
    TrainSource {
        #[command(flatten)]
        common: Common,
    },
    /// Adapt a source checkpoint to the target domain.
    Adapt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        source_checkpoint: Option<PathBuf>,
    },
    /// Accuracy against labeled-target count, averaged over seeds.
    ShotsCurve {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,1,5,10,25,50")]
        shots: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        threads: Option<usize>,
        /// Reuse a trained source model instead of training one.
        #[arg(long)]
        source_checkpoint: Option<PathBuf>,
    },
    /// Write posterior means of the datasets as CSV.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Which::Both)]
        domain: Which,
    },
    /// Write the source and target datasets of a preset plus a manifest.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Which {
    Source,
    Target,
    Both,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Csv,
    Binary,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::preset(&self.preset)?;
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg = cfg.with_text(&text)?;
        }
        cfg.apply_overrides(&self.overrides)?;
        Ok(cfg)
    }

    fn run_dir(&self, command: &str, cfg: &ExperimentConfig) -> Result<PathBuf> {
        let dir = match &self.out {
            Some(d) => d.clone(),
            None => {
                let root = std::env::var_os(RUN_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_RUN_ROOT), PathBuf::from);
                root.join(format!("{command}-{}", &cfg.digest_hex()[..12]))
            }
        };
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write(&dir.join("config.txt"), cfg.to_text().as_bytes())?;
        Ok(dir)
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn require(path: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    let p = path.clone().ok_or_else(|| Error::Missing(format!("{flag} is required")))?;
    if !p.exists() {
        return Err(Error::Missing(format!("{flag} {} does not exist", p.display())));
    }
    Ok(p)
}

fn load_source_checkpoint(path: &Path, cfg: &ExperimentConfig, source: &DomainDataset) -> Result<Checkpoint> {
    let ck = checkpoint_load(path)?;
    if ck.bundle.config.input_dim != source.dim() || ck.bundle.config.classes != source.classes {
        return Err(Error::Contract(format!(
            "checkpoint {} expects {} features and {} classes, data has {} and {}",
            path.display(),
            ck.bundle.config.input_dim,
            ck.bundle.config.classes,
            source.dim(),
            source.classes
        )));
    }
    let want = cfg.network_config(source.dim());
    if ck.bundle.config.hidden != want.hidden || ck.bundle.config.latent_dim != want.latent_dim {
        return Err(Error::Config {
            key: "hidden".into(),
            detail: format!("checkpoint {} was trained with a different architecture", path.display()),
        });
    }
    Ok(ck)
}

fn train_source_cmd(common: &Common) -> Result<PathBuf> {
    let start = Instant::now();
    let cfg = common.config()?;
    let dir = common.run_dir("train-source", &cfg)?;
    let (source, target) = build_datasets(&cfg)?;
    let run = train_source(&cfg, &source)?;
    checkpoint_save(
        &Checkpoint {
            bundle: run.bundle.clone(),
            adam: vec![("source".into(), run.adam.clone())],
            config_digest: cfg.digest(),
        },
        &dir.join("source.ckpt"),
    )?;
    let report = RunReport {
        command: "train-source".into(),
        config_digest: cfg.digest_hex(),
        seed: cfg.seed,
        shots: cfg.shots,
        final_accuracy: run.metrics.last().map(|m| m.accuracy),
        baseline_accuracy: target.labels.is_some().then(|| accuracy_with(&run.bundle, Route::Source, &target)).transpose()?,
        source_metrics: run.metrics,
        adaptation_metrics: Vec::new(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    write(&dir.join("report.json"), (report.to_json() + "\n").as_bytes())?;
    Ok(dir)
}

fn adapt_cmd(common: &Common, source_checkpoint: &Option<PathBuf>) -> Result<PathBuf> {
    let start = Instant::now();
    let cfg = common.config()?;
    let ckpt_path = require(source_checkpoint, "--source-checkpoint")?;
    let (source, target) = build_datasets(&cfg)?;
    let ck = load_source_checkpoint(&ckpt_path, &cfg, &source)?;
    let dir = common.run_dir("adapt", &cfg)?;
    let split = make_few_shot_split(&target, cfg.shots, cfg.seed)?;
    let labeled = target.subset(&split.labeled_indices);
    let pool = target.subset(&split.unlabeled_indices);
    let has_labels = pool.labels.is_some();
    let run = train_adaptation(
        &cfg,
        &ck.bundle,
        &source,
        TargetData {
            labeled: &labeled,
            unlabeled: &pool,
            eval: has_labels.then_some(&pool),
        },
    )?;
    checkpoint_save(
        &Checkpoint {
            bundle: run.bundle.clone(),
            adam: vec![
                ("discriminator".into(), run.discriminator_adam.clone()),
                ("target".into(), run.target_adam.clone()),
            ],
            config_digest: cfg.digest(),
        },
        &dir.join("adapted.ckpt"),
    )?;
    let acc = |b, r| has_labels.then(|| accuracy_with(b, r, &pool)).transpose();
    let report = RunReport {
        command: "adapt".into(),
        config_digest: cfg.digest_hex(),
        seed: cfg.seed,
        shots: cfg.shots,
        source_metrics: Vec::new(),
        baseline_accuracy: acc(&ck.bundle, Route::Source)?,
        final_accuracy: acc(&run.bundle, Route::Target)?,
        adaptation_metrics: run.metrics,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    write(&dir.join("report.json"), (report.to_json() + "\n").as_bytes())?;
    Ok(dir)
}

pub const SHOTS_RUNS_CSV_HEADER: &str = "shots,seed,accuracy";

fn shots_curve_cmd(
    common: &Common,
    shots: &[usize],
    seeds: usize,
    threads: Option<usize>,
    source_checkpoint: &Option<PathBuf>,
) -> Result<PathBuf> {
    if seeds == 0 {
        return Err(Error::Config {
            key: "seeds".into(),
            detail: "must be at least 1".into(),
        });
    }
    let cfg = common.config()?;
    let (source, target) = build_datasets(&cfg)?;
    target.require_labels()?;
    let bundle = match source_checkpoint {
        Some(_) => load_source_checkpoint(&require(source_checkpoint, "--source-checkpoint")?, &cfg, &source)?.bundle,
        None => train_source(&cfg, &source)?.bundle,
    };
    let dir = common.run_dir("shots-curve", &cfg)?;
    let threads = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let runs = shots_runs(&cfg, &bundle, &source, &target, shots, &seed_list(cfg.seed, seeds), threads)?;
    write(&dir.join("shots_curve.csv"), shots_csv(&aggregate(&runs)).as_bytes())?;
    let mut per_run = format!("{SHOTS_RUNS_CSV_HEADER}\n");
    for ShotsRun { shots, seed, accuracy } in &runs {
        per_run.push_str(&format!("{shots},{seed},{accuracy:.10}\n"));
    }
    write(&dir.join("shots_runs.csv"), per_run.as_bytes())?;
    Ok(dir)
}

fn export_cmd(common: &Common, checkpoint: &Option<PathBuf>, which: Which) -> Result<PathBuf> {
    let cfg = common.config()?;
    let path = require(checkpoint, "--checkpoint")?;
    let (source, target) = build_datasets(&cfg)?;
    let ck = checkpoint_load(&path)?;
    let dir = common.run_dir("export-embeddings", &cfg)?;
    if which != Which::Target {
        export_embeddings(&ck.bundle, &source, &dir.join("embeddings_source.csv"))?;
    }
    if which != Which::Source {
        export_embeddings(&ck.bundle, &target, &dir.join("embeddings_target.csv"))?;
    }
    Ok(dir)
}

#[derive(Serialize)]
struct ManifestFile {
    path: String,
    domain: &'static str,
    rows: usize,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    preset: String,
    seed: u64,
    dataset: String,
    classes: usize,
    dim: usize,
    config_digest: String,
    files: Vec<ManifestFile>,
}

fn gen_data_cmd(common: &Common, seed: Option<u64>, format: Format) -> Result<PathBuf> {
    let mut cfg = common.config()?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (source, target) = build_datasets(&cfg)?;
    let dir = common.run_dir("gen-data", &cfg)?;
    let ext = match format {
        Format::Csv => "csv",
        Format::Binary => "bin",
    };
    let mut files = Vec::new();
    for ds in [&source, &target] {
        let name = format!("{}.{ext}", ds.domain.as_str());
        let path = dir.join(&name);
        match format {
            Format::Csv => save_csv(ds, &path)?,
            Format::Binary => save_binary(ds, &path)?,
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        files.push(ManifestFile {
            path: name,
            domain: ds.domain.as_str(),
            rows: ds.len(),
            sha256: hex(&Sha256::digest(&bytes)),
        });
    }
    let manifest = Manifest {
        preset: common.preset.clone(),
        seed: cfg.seed,
        dataset: cfg.dataset.kind().into(),
        classes: source.classes,
        dim: source.dim(),
        config_digest: cfg.digest_hex(),
        files,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write(&dir.join("manifest.json"), json.as_bytes())?;
    Ok(dir)
}

fn dispatch(cli: &Cli) -> Result<PathBuf> {
    match &cli.command {
        Command::TrainSource { common } => train_source_cmd(common),
        Command::Adapt { common, source_checkpoint } => adapt_cmd(common, source_checkpoint),
        Command::ShotsCurve {
            common,
            shots,
            seeds,
            threads,
            source_checkpoint,
        } => shots_curve_cmd(common, shots, *seeds, *threads, source_checkpoint),
        Command::ExportEmbeddings {
            common,
            checkpoint,
            domain,
        } => export_cmd(common, checkpoint, *domain),
        Command::GenData { common, seed, format } => gen_data_cmd(common, *seed, *format),
    }
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 on a runtime error, 2 on a usage error.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parser_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(cli_main(["avda"]), 2);
        assert_eq!(cli_main(["avda", "frobnicate"]), 2);
        assert_eq!(cli_main(["avda", "train-source", "--bogus"]), 2);
        assert_eq!(cli_main(["avda", "shots-curve", "--shots", "a,b"]), 2);
        assert_eq!(cli_main(["avda", "--help"]), 0);
    }

    #[test]
    fn config_layering() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.cfg");
        std::fs::write(&file, "seed = 4\nbatch_size = 16\n").unwrap();
        let common = Common {
            preset: "rotated-blobs".into(),
            config: Some(file),
            overrides: vec!["seed=9".into()],
            out: None,
        };
        let cfg = common.config().unwrap();
        assert_eq!((cfg.seed, cfg.batch_size, cfg.adaptation_epochs), (9, 16, 3));
    }
}
