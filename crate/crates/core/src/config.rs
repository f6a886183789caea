//! Experiment configuration as flat `key = value` text.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, so an
//! empty file yields the reference hyperparameters. Unknown keys, duplicate
//! keys and malformed values are errors that name the key.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::{GumbelEstimator, LossWeights};
use crate::networks::{Activation, DiscriminatorMode, NetworkConfig};

/// Where the two domains come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    /// Gaussian blobs under a rotation plus translation.
    RotatedBlobs {
        classes: usize,
        dim: usize,
        n_per_class: usize,
        rotation_deg: f64,
        translation: Vec<f64>,
        noise: f64,
    },
    /// Two interleaved half-circles under a rotation.
    TwoMoons {
        n: usize,
        rotation_deg: f64,
        translation: Vec<f64>,
        noise: f64,
    },
    /// Source and target arrays on disk.
    Files {
        source: PathBuf,
        target: PathBuf,
        classes: usize,
    },
}

/// Every knob of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub weights: LossWeights,
    pub latent_dim: usize,
    pub prior_radius: f64,
    pub prior_sigma: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub batch_size: usize,
    pub source_epochs: usize,
    pub adaptation_epochs: usize,
    pub d_steps_per_t_step: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub shots: usize,
    /// Prior frozen during source training.
    pub fixed_priors: bool,
    /// Two-class domain discriminator instead of `K + 1` classes.
    pub binary_discriminator: bool,
    /// Adds target reconstruction through the decoder during adaptation.
    pub target_decoder: bool,
    /// Keeps training the prior during adaptation.
    pub adapt_prior: bool,
    pub learn_class_weights: bool,
    pub gumbel_estimator: GumbelEstimator,
    pub dataset: DatasetSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            latent_dim: 20,
            prior_radius: 10.0,
            prior_sigma: 1.0,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            batch_size: 128,
            source_epochs: 100,
            adaptation_epochs: 200,
            d_steps_per_t_step: 1,
            learning_rate: 1e-3,
            beta1: 0.5,
            beta2: 0.5,
            epsilon: 1e-8,
            seed: 0,
            shots: 0,
            fixed_priors: false,
            binary_discriminator: false,
            target_decoder: false,
            adapt_prior: false,
            learn_class_weights: false,
            gumbel_estimator: GumbelEstimator::StraightThrough,
            dataset: DatasetSpec::rotated_blobs(),
        }
    }
}

impl DatasetSpec {
    /// Three 2-D blobs, 1000 per class, rotated by 30 degrees and
    /// shifted by `(1.5, 0)`.
    pub fn rotated_blobs() -> Self {
        DatasetSpec::RotatedBlobs {
            classes: 3,
            dim: 2,
            n_per_class: 1000,
            rotation_deg: 30.0,
            translation: vec![1.5, 0.0],
            noise: 0.7,
        }
    }

    pub fn two_moons() -> Self {
        DatasetSpec::TwoMoons {
            n: 1000,
            rotation_deg: 30.0,
            translation: vec![0.0, 0.0],
            noise: 0.1,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            DatasetSpec::RotatedBlobs { classes, .. } | DatasetSpec::Files { classes, .. } => *classes,
            DatasetSpec::TwoMoons { .. } => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DatasetSpec::RotatedBlobs { .. } => "rotated-blobs",
            DatasetSpec::TwoMoons { .. } => "two-moons",
            DatasetSpec::Files { .. } => "files",
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config {
        key: key.into(),
        detail: format!("cannot parse `{v}`"),
    })
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config {
            key: key.into(),
            detail: format!("expected a boolean, got `{v}`"),
        }),
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn bad(key: &str, detail: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        detail: detail.into(),
    }
}

/// Names accepted by [`ExperimentConfig::preset`].
pub const PRESETS: [&str; 4] = ["default", "rotated-blobs", "rotated-blobs-small", "two-moons"];

impl ExperimentConfig {
    /// Built-in starting points. `default` is [`Default`]; `rotated-blobs` is
    /// the frozen benchmark; `rotated-blobs-small` is a fast variant of it.
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self::default();
        match name {
            "default" => Ok(base),
            "rotated-blobs" => Ok(Self {
                source_epochs: 20,
                adaptation_epochs: 3,
                ..base
            }),
            "rotated-blobs-small" => {
                let mut c = Self::preset("rotated-blobs")?;
                c.set("n_per_class", "200")?;
                c.hidden = vec![32, 32];
                c.source_epochs = 10;
                Ok(c)
            }
            "two-moons" => Ok(Self {
                dataset: DatasetSpec::two_moons(),
                ..Self::preset("rotated-blobs")?
            }),
            other => Err(bad("preset", format!("unknown preset `{other}`, expected one of {}", PRESETS.join(", ")))),
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::default().with_text(text)
    }

    /// Applies the keys of a config file on top of `self`.
    pub fn with_text(self, text: &str) -> Result<Self> {
        let mut cfg = self;
        let mut seen = std::collections::HashSet::new();
        let mut pending = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                key: line.into(),
                detail: format!("line {}: expected `key = value`", i + 1),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !seen.insert(k.to_string()) {
                return Err(bad(k, format!("line {}: duplicate key", i + 1)));
            }
            pending.push((k.to_string(), v.to_string()));
        }
        // `dataset` picks the preset whose fields the remaining keys refine
        if let Some((_, v)) = pending.iter().find(|(k, _)| k == "dataset") {
            cfg.set("dataset", v)?;
        }
        for (k, v) in pending.iter().filter(|(k, _)| k != "dataset") {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Applies `key=value` overrides in order, then revalidates.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| bad(o, "override must look like key=value"))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "alpha_s" => self.weights.alpha_s = parse(key, v)?,
            "alpha_t" => self.weights.alpha_t = parse(key, v)?,
            "gamma" => self.weights.gamma = parse(key, v)?,
            "tau" => self.weights.tau = parse(key, v)?,
            "latent_dim" => self.latent_dim = parse(key, v)?,
            "prior_radius" => self.prior_radius = parse(key, v)?,
            "prior_sigma" => self.prior_sigma = parse(key, v)?,
            "hidden" => self.hidden = parse_list(key, v)?,
            "activation" => {
                self.activation = match v {
                    "tanh" => Activation::Tanh,
                    "relu" => Activation::Relu,
                    _ => return Err(bad(key, format!("expected tanh or relu, got `{v}`"))),
                }
            }
            "batch_size" => self.batch_size = parse(key, v)?,
            "source_epochs" => self.source_epochs = parse(key, v)?,
            "adaptation_epochs" => self.adaptation_epochs = parse(key, v)?,
            "d_steps_per_t_step" => self.d_steps_per_t_step = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "beta1" => self.beta1 = parse(key, v)?,
            "beta2" => self.beta2 = parse(key, v)?,
            "epsilon" => self.epsilon = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "shots" => self.shots = parse(key, v)?,
            "fixed_priors" => self.fixed_priors = parse_bool(key, v)?,
            "binary_discriminator" => self.binary_discriminator = parse_bool(key, v)?,
            "target_decoder" => self.target_decoder = parse_bool(key, v)?,
            "adapt_prior" => self.adapt_prior = parse_bool(key, v)?,
            "learn_class_weights" => self.learn_class_weights = parse_bool(key, v)?,
            "gumbel_estimator" => {
                self.gumbel_estimator = match v {
                    "straight_through" => GumbelEstimator::StraightThrough,
                    "relaxed" => GumbelEstimator::Relaxed,
                    _ => return Err(bad(key, format!("expected straight_through or relaxed, got `{v}`"))),
                }
            }
            "dataset" => {
                self.dataset = match v {
                    "rotated-blobs" => DatasetSpec::rotated_blobs(),
                    "two-moons" => DatasetSpec::two_moons(),
                    "files" => DatasetSpec::Files {
                        source: PathBuf::new(),
                        target: PathBuf::new(),
                        classes: 0,
                    },
                    _ => return Err(bad(key, format!("unknown dataset `{v}`"))),
                }
            }
            _ => return self.set_dataset_field(key, v),
        }
        Ok(())
    }

    fn set_dataset_field(&mut self, key: &str, v: &str) -> Result<()> {
        let kind = self.dataset.kind();
        let unknown = || bad(key, format!("unknown key for dataset `{kind}`"));
        match &mut self.dataset {
            DatasetSpec::RotatedBlobs {
                classes,
                dim,
                n_per_class,
                rotation_deg,
                translation,
                noise,
            } => match key {
                "classes" => *classes = parse(key, v)?,
                "input_dim" => *dim = parse(key, v)?,
                "n_per_class" => *n_per_class = parse(key, v)?,
                "rotation_deg" => *rotation_deg = parse(key, v)?,
                "translation" => *translation = parse_list(key, v)?,
                "noise" => *noise = parse(key, v)?,
                _ => return Err(unknown()),
            },
            DatasetSpec::TwoMoons {
                n,
                rotation_deg,
                translation,
                noise,
            } => match key {
                "n" => *n = parse(key, v)?,
                "rotation_deg" => *rotation_deg = parse(key, v)?,
                "translation" => *translation = parse_list(key, v)?,
                "noise" => *noise = parse(key, v)?,
                _ => return Err(unknown()),
            },
            DatasetSpec::Files {
                source,
                target,
                classes,
            } => match key {
                "source_path" => *source = PathBuf::from(v),
                "target_path" => *target = PathBuf::from(v),
                "classes" => *classes = parse(key, v)?,
                _ => return Err(unknown()),
            },
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate().map_err(|e| match e {
            Error::Parameter { name, detail } => bad(name, detail),
            other => other,
        })?;
        let check = |ok: bool, key: &str, detail: &str| if ok { Ok(()) } else { Err(bad(key, detail)) };
        check(self.latent_dim >= 1, "latent_dim", "must be at least 1")?;
        check(self.prior_radius > 0.0 && self.prior_radius.is_finite(), "prior_radius", "must be positive")?;
        check(self.prior_sigma > 0.0 && self.prior_sigma.is_finite(), "prior_sigma", "must be positive")?;
        check(!self.hidden.is_empty(), "hidden", "need at least one hidden layer")?;
        check(self.hidden.iter().all(|&w| w >= 1), "hidden", "widths must be at least 1")?;
        check(self.batch_size >= 1, "batch_size", "must be at least 1")?;
        check(self.d_steps_per_t_step >= 1, "d_steps_per_t_step", "must be at least 1")?;
        check(self.learning_rate > 0.0 && self.learning_rate.is_finite(), "learning_rate", "must be positive")?;
        check((0.0..1.0).contains(&self.beta1), "beta1", "must lie in [0, 1)")?;
        check((0.0..1.0).contains(&self.beta2), "beta2", "must lie in [0, 1)")?;
        check(self.epsilon > 0.0, "epsilon", "must be positive")?;
        match &self.dataset {
            DatasetSpec::RotatedBlobs {
                classes,
                dim,
                n_per_class,
                translation,
                noise,
                ..
            } => {
                check(*classes >= 2, "classes", "need at least 2")?;
                check(*dim >= 2, "input_dim", "need at least 2")?;
                check(*n_per_class >= 1, "n_per_class", "must be at least 1")?;
                check(translation.len() == *dim, "translation", "length must equal input_dim")?;
                check(*noise >= 0.0, "noise", "must be non-negative")?;
            }
            DatasetSpec::TwoMoons { n, translation, noise, .. } => {
                check(*n >= 2, "n", "need at least 2 samples")?;
                check(translation.len() == 2, "translation", "length must be 2")?;
                check(*noise >= 0.0, "noise", "must be non-negative")?;
            }
            DatasetSpec::Files { source, target, classes } => {
                check(!source.as_os_str().is_empty(), "source_path", "required for dataset `files`")?;
                check(!target.as_os_str().is_empty(), "target_path", "required for dataset `files`")?;
                check(*classes >= 2, "classes", "need at least 2")?;
            }
        }
        Ok(())
    }

    pub fn network_config(&self, input_dim: usize) -> NetworkConfig {
        NetworkConfig {
            input_dim,
            classes: self.dataset.classes(),
            latent_dim: self.latent_dim,
            hidden: self.hidden.clone(),
            activation: self.activation,
            discriminator: if self.binary_discriminator {
                DiscriminatorMode::Binary
            } else {
                DiscriminatorMode::ClassConditional
            },
        }
    }

    /// Canonical text: every key, fixed order, round-trips through
    /// [`ExperimentConfig::from_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = &self.weights;
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        kv("alpha_s", format!("{:?}", w.alpha_s));
        kv("alpha_t", format!("{:?}", w.alpha_t));
        kv("gamma", format!("{:?}", w.gamma));
        kv("tau", format!("{:?}", w.tau));
        kv("latent_dim", self.latent_dim.to_string());
        kv("prior_radius", format!("{:?}", self.prior_radius));
        kv("prior_sigma", format!("{:?}", self.prior_sigma));
        kv("hidden", list(&self.hidden));
        kv(
            "activation",
            match self.activation {
                Activation::Tanh => "tanh",
                Activation::Relu => "relu",
            }
            .into(),
        );
        kv("batch_size", self.batch_size.to_string());
        kv("source_epochs", self.source_epochs.to_string());
        kv("adaptation_epochs", self.adaptation_epochs.to_string());
        kv("d_steps_per_t_step", self.d_steps_per_t_step.to_string());
        kv("learning_rate", format!("{:?}", self.learning_rate));
        kv("beta1", format!("{:?}", self.beta1));
        kv("beta2", format!("{:?}", self.beta2));
        kv("epsilon", format!("{:?}", self.epsilon));
        kv("seed", self.seed.to_string());
        kv("shots", self.shots.to_string());
        kv("fixed_priors", self.fixed_priors.to_string());
        kv("binary_discriminator", self.binary_discriminator.to_string());
        kv("target_decoder", self.target_decoder.to_string());
        kv("adapt_prior", self.adapt_prior.to_string());
        kv("learn_class_weights", self.learn_class_weights.to_string());
        kv(
            "gumbel_estimator",
            match self.gumbel_estimator {
                GumbelEstimator::StraightThrough => "straight_through",
                GumbelEstimator::Relaxed => "relaxed",
            }
            .into(),
        );
        kv("dataset", self.dataset.kind().into());
        match &self.dataset {
            DatasetSpec::RotatedBlobs {
                classes,
                dim,
                n_per_class,
                rotation_deg,
                translation,
                noise,
            } => {
                kv("classes", classes.to_string());
                kv("input_dim", dim.to_string());
                kv("n_per_class", n_per_class.to_string());
                kv("rotation_deg", format!("{rotation_deg:?}"));
                kv("translation", translation.iter().map(|t| format!("{t:?}")).collect::<Vec<_>>().join(","));
                kv("noise", format!("{noise:?}"));
            }
            DatasetSpec::TwoMoons {
                n,
                rotation_deg,
                translation,
                noise,
            } => {
                kv("n", n.to_string());
                kv("rotation_deg", format!("{rotation_deg:?}"));
                kv("translation", translation.iter().map(|t| format!("{t:?}")).collect::<Vec<_>>().join(","));
                kv("noise", format!("{noise:?}"));
            }
            DatasetSpec::Files { source, target, classes } => {
                kv("source_path", source.display().to_string());
                kv("target_path", target.display().to_string());
                kv("classes", classes.to_string());
            }
        }
        s
    }

    /// SHA-256 of [`ExperimentConfig::to_text`].
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }

    pub fn digest_hex(&self) -> String {
        hex(&self.digest())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_reference_defaults() {
        let c = ExperimentConfig::from_text("").unwrap();
        assert_eq!(c.weights.alpha_s, 1000.0);
        assert_eq!(c.weights.alpha_t, 10.0);
        assert_eq!(c.weights.gamma, 0.9);
        assert_eq!(c.weights.tau, 3.0);
        assert_eq!((c.beta1, c.beta2, c.learning_rate), (0.5, 0.5, 0.001));
        assert_eq!(c.batch_size, 128);
        assert_eq!(c.latent_dim, 20);
        assert_eq!((c.prior_radius, c.prior_sigma), (10.0, 1.0));
        assert_eq!(c.d_steps_per_t_step, 1);
        assert!(!c.fixed_priors && !c.binary_discriminator && !c.target_decoder);
    }

    #[test]
    fn parses_comments_and_dataset_fields() {
        let c = ExperimentConfig::from_text(
            "# small run\nnoise = 0.3 # after dataset\ndataset = rotated-blobs\nhidden = 16, 8\nfixed_priors = true\n",
        )
        .unwrap();
        assert_eq!(c.hidden, vec![16, 8]);
        assert!(c.fixed_priors);
        match c.dataset {
            DatasetSpec::RotatedBlobs { noise, .. } => assert_eq!(noise, 0.3),
            _ => panic!(),
        }
    }

    #[test]
    fn errors_name_the_key() {
        for (text, key) in [
            ("bogus = 1", "bogus"),
            ("gamma = 2", "gamma"),
            ("tau = 0", "tau"),
            ("batch_size = x", "batch_size"),
            ("seed = 1\nseed = 2", "seed"),
            ("dataset = files", "source_path"),
            ("dataset = two-moons\nn_per_class = 4", "n_per_class"),
        ] {
            match ExperimentConfig::from_text(text) {
                Err(Error::Config { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn canonical_text_roundtrips() {
        let mut c = ExperimentConfig::default();
        c.apply_overrides(&["seed=9", "gamma=0.25", "translation=1.5,-2", "gumbel_estimator=relaxed"])
            .unwrap();
        let back = ExperimentConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest(), c.digest());
        let mut d = c.clone();
        d.seed = 10;
        assert_ne!(d.digest(), c.digest());
        let moons = ExperimentConfig::from_text("dataset = two-moons\nnoise = 0.2").unwrap();
        assert_eq!(ExperimentConfig::from_text(&moons.to_text()).unwrap(), moons);
        let files = ExperimentConfig::from_text("dataset = files\nsource_path = a.csv\ntarget_path = b.bin\nclasses = 4")
            .unwrap();
        assert_eq!(ExperimentConfig::from_text(&files.to_text()).unwrap(), files);
    }
}
