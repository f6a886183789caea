//! Adam and the three-step schedule: source optimization, then alternating
//! discriminator and target steps.

mod adam;
mod checkpoint;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState};
pub use checkpoint::{checkpoint_load, checkpoint_save, Checkpoint, CHECKPOINT_VERSION};

use crate::config::ExperimentConfig;
use crate::data::{DomainDataset, FeatureScaler, Matrix};
use crate::error::{Error, Result};
use crate::eval::accuracy_with;
use crate::losses::{discriminator_loss, source_supervised_loss, target_total_terms, Batch, TargetOptions};
use crate::networks::{BoundModel, DiscriminatorMode, ModelBundle, ParamGroup, Route};
use crate::rng::{mix_seed, stream, NoiseStreams, Stream};
use crate::tensor::{Tape, Tensor};

/// Salt separating adaptation randomness from source randomness.
const ADAPT_SALT: u64 = 0xADA7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Source,
    Discriminator,
    Target,
}

/// Which parameter groups each kind of step actually changed, by digest
/// comparison before and after every step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhaseAudit {
    pub steps: BTreeMap<Phase, usize>,
    pub touched: BTreeMap<Phase, BTreeSet<ParamGroup>>,
}

impl PhaseAudit {
    fn snapshot(b: &ModelBundle) -> Vec<[u8; 32]> {
        ParamGroup::ALL.iter().map(|&g| b.group_digest(g)).collect()
    }

    fn record(&mut self, phase: Phase, before: &[[u8; 32]], after: &ModelBundle) {
        *self.steps.entry(phase).or_default() += 1;
        let set = self.touched.entry(phase).or_default();
        for (g, d) in ParamGroup::ALL.iter().zip(before) {
            if after.group_digest(*g) != *d {
                set.insert(*g);
            }
        }
    }

    pub fn touched(&self, phase: Phase) -> BTreeSet<ParamGroup> {
        self.touched.get(&phase).cloned().unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptEpoch {
    pub epoch: usize,
    /// Accuracy on the evaluation pool, when one was given.
    pub target_accuracy: Option<f64>,
    pub supervised: Option<f64>,
    pub unsupervised: Option<f64>,
    pub adversarial: f64,
    pub discriminator: f64,
    pub reconstruction: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SourceRun {
    pub bundle: ModelBundle,
    pub adam: AdamState,
    pub metrics: Vec<SourceEpoch>,
}

#[derive(Debug, Clone)]
pub struct AdaptRun {
    pub bundle: ModelBundle,
    pub discriminator_adam: AdamState,
    pub target_adam: AdamState,
    pub metrics: Vec<AdaptEpoch>,
}

/// Target-domain inputs to adaptation.
#[derive(Debug, Clone, Copy)]
pub struct TargetData<'a> {
    /// Exactly `shots` rows per class.
    pub labeled: &'a DomainDataset,
    /// Labels, if present, are ignored for training.
    pub unlabeled: &'a DomainDataset,
    /// Scored after every epoch.
    pub eval: Option<&'a DomainDataset>,
}

pub fn source_groups(cfg: &ExperimentConfig) -> Vec<ParamGroup> {
    let mut g = vec![ParamGroup::SourceEncoder, ParamGroup::SourceClassifier, ParamGroup::Decoder];
    if !cfg.fixed_priors {
        g.push(ParamGroup::Prior);
    }
    g
}

pub fn target_groups(cfg: &ExperimentConfig) -> Vec<ParamGroup> {
    let mut g = vec![ParamGroup::TargetEncoder, ParamGroup::TargetClassifier];
    if cfg.target_decoder {
        g.push(ParamGroup::Decoder);
    }
    if cfg.adapt_prior {
        g.push(ParamGroup::Prior);
    }
    g
}

fn new_adam(cfg: &ExperimentConfig) -> AdamState {
    AdamState::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
}

/// Binds `groups` onto a fresh tape, evaluates `loss`, and applies one Adam
/// update to those groups.
fn optimize<T>(
    bundle: &mut ModelBundle,
    groups: &[ParamGroup],
    learn_class_weights: bool,
    adam: &mut AdamState,
    loss: impl FnOnce(&BoundModel) -> Result<(Tensor, T)>,
) -> Result<(f64, T)> {
    let tape = Tape::new();
    let bound = bundle.bind(&tape, groups, learn_class_weights);
    let (l, extra) = loss(&bound)?;
    let v = l.item()?;
    if !v.is_finite() {
        return Err(Error::Contract(format!("loss became non-finite ({v})")));
    }
    let grads = l.backward()?;
    let g: Vec<Vec<f64>> = ParamGroup::ALL
        .iter()
        .filter(|g| groups.contains(g))
        .flat_map(|&g| bound.tensors(g).into_iter().map(|t| grads.get(t).to_vec()).collect::<Vec<_>>())
        .collect();
    drop(bound);
    adam_step(adam, &mut bundle.params_mut_in(groups), &g)?;
    Ok((v, extra))
}

fn check_finite(bundle: &ModelBundle, phase: &str, epoch: usize) -> Result<()> {
    if bundle.is_finite() {
        Ok(())
    } else {
        Err(Error::Contract(format!("non-finite parameters after {phase} epoch {epoch}")))
    }
}

/// Endless reshuffled pass over `0..n`.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn take(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        if self.order.is_empty() {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            let n = (k - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + n]);
            self.pos += n;
        }
        out
    }
}

fn check_dataset(ds: &DomainDataset, input_dim: usize, classes: usize, what: &str) -> Result<()> {
    if ds.dim() != input_dim {
        return Err(Error::Contract(format!("{what} has {} features, model expects {input_dim}", ds.dim())));
    }
    if ds.classes != classes {
        return Err(Error::Contract(format!("{what} has {} classes, model expects {classes}", ds.classes)));
    }
    Ok(())
}

pub fn train_source(cfg: &ExperimentConfig, source: &DomainDataset) -> Result<SourceRun> {
    train_source_audited(cfg, source, None)
}

/// Minimizes the source objective over the source networks, the decoder
/// and (unless `fixed_priors`) the prior. Inputs are rescaled with a scaler
/// fitted here and stored in the bundle.
pub fn train_source_audited(
    cfg: &ExperimentConfig,
    source: &DomainDataset,
    mut audit: Option<&mut PhaseAudit>,
) -> Result<SourceRun> {
    cfg.validate()?;
    let labels = source
        .labels
        .as_deref()
        .ok_or_else(|| Error::Contract("source training needs a fully labeled source dataset".into()))?;
    if source.is_empty() {
        return Err(Error::Contract("source dataset is empty".into()));
    }
    let net = cfg.network_config(source.dim());
    check_dataset(source, net.input_dim, net.classes, "source dataset")?;
    let mut bundle = ModelBundle::new(net, cfg.prior_radius, cfg.prior_sigma, &mut stream(cfg.seed, Stream::Init))?;
    bundle.scaler = FeatureScaler::fit(&source.features);
    let x = bundle.scaler.transform(&source.features)?;

    let groups = source_groups(cfg);
    let learn_cw = cfg.learn_class_weights;
    let mut adam = new_adam(cfg);
    let mut shuffle = stream(cfg.seed, Stream::Shuffle);
    let mut noise = NoiseStreams::new(cfg.seed);
    let mut metrics = Vec::with_capacity(cfg.source_epochs);
    let mut order: Vec<usize> = (0..source.len()).collect();
    for epoch in 0..cfg.source_epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let batch = Batch::labeled(x.select(idx).to_tensor(), idx.iter().map(|&i| labels[i]).collect());
            let before = audit.as_ref().map(|_| PhaseAudit::snapshot(&bundle));
            let (v, ()) = optimize(&mut bundle, &groups, learn_cw, &mut adam, |m| {
                Ok((source_supervised_loss(m, &batch, &cfg.weights, &mut noise)?, ()))
            })?;
            if let (Some(a), Some(b)) = (audit.as_deref_mut(), before) {
                a.record(Phase::Source, &b, &bundle);
            }
            total += v;
            batches += 1;
        }
        check_finite(&bundle, "source", epoch)?;
        metrics.push(SourceEpoch {
            epoch,
            loss: total / batches as f64,
            accuracy: accuracy_with(&bundle, Route::Source, source)?,
        });
    }
    Ok(SourceRun { bundle, adam, metrics })
}

pub fn train_adaptation(
    cfg: &ExperimentConfig,
    source_bundle: &ModelBundle,
    source: &DomainDataset,
    target: TargetData<'_>,
) -> Result<AdaptRun> {
    train_adaptation_audited(cfg, source_bundle, source, target, None)
}

/// Warm-starts the target networks from the source ones, then alternates
/// `d_steps_per_t_step` discriminator updates with one target update. One
/// epoch is one pass over the unlabeled pool in batches of `batch_size`.
pub fn train_adaptation_audited(
    cfg: &ExperimentConfig,
    source_bundle: &ModelBundle,
    source: &DomainDataset,
    target: TargetData<'_>,
    mut audit: Option<&mut PhaseAudit>,
) -> Result<AdaptRun> {
    cfg.validate()?;
    let classes = source_bundle.config.classes;
    let input_dim = source_bundle.config.input_dim;
    let src_labels = source
        .labels
        .as_deref()
        .ok_or_else(|| Error::Contract("adaptation needs the labeled source dataset".into()))?;
    check_dataset(source, input_dim, classes, "source dataset")?;
    check_dataset(target.labeled, input_dim, classes, "labeled target set")?;
    check_dataset(target.unlabeled, input_dim, classes, "unlabeled target set")?;
    if let Some(e) = target.eval {
        check_dataset(e, input_dim, classes, "evaluation set")?;
    }
    let lab_labels: Vec<usize> = if target.labeled.is_empty() {
        Vec::new()
    } else {
        target.labeled.require_labels()?.to_vec()
    };
    let mut counts = vec![0; classes];
    for &y in &lab_labels {
        counts[y] += 1;
    }
    if counts.iter().any(|&c| c != cfg.shots) {
        return Err(Error::Contract(format!(
            "labeled target set has per-class counts {counts:?}, expected {} each",
            cfg.shots
        )));
    }
    if source.is_empty() || (target.unlabeled.is_empty() && target.labeled.is_empty()) {
        return Err(Error::Contract("adaptation needs source rows and target rows".into()));
    }

    let seed = mix_seed(cfg.seed, ADAPT_SALT);
    let mut bundle = source_bundle.clone();
    bundle.warm_start_target()?;
    let mode = if cfg.binary_discriminator {
        DiscriminatorMode::Binary
    } else {
        DiscriminatorMode::ClassConditional
    };
    bundle.reset_discriminator(mode, &mut stream(seed, Stream::Init))?;

    let xs = bundle.scaler.transform(&source.features)?;
    let xl = bundle.scaler.transform(&target.labeled.features)?;
    let xu = bundle.scaler.transform(&target.unlabeled.features)?;
    // discriminator target batches come from the whole target pool
    let pool = Matrix::new(
        xl.rows + xu.rows,
        input_dim,
        xl.data.iter().chain(&xu.data).copied().collect(),
    )?;

    let t_groups = target_groups(cfg);
    let d_groups = [ParamGroup::Discriminator];
    let learn_cw = cfg.learn_class_weights;
    let mut d_adam = new_adam(cfg);
    let mut t_adam = new_adam(cfg);
    let mut shuffle = stream(seed, Stream::Shuffle);
    let mut lab_rng = stream(seed, Stream::Labeled);
    let mut noise = NoiseStreams::new(seed);
    let mut src_cycle = Cycler::new(xs.rows, &mut shuffle);
    let mut pool_cycle = Cycler::new(pool.rows, &mut shuffle);
    let mut unl_cycle = Cycler::new(xu.rows, &mut shuffle);
    let quota = (cfg.shots * classes).min(cfg.batch_size / 4).max(usize::from(!lab_labels.is_empty()));
    let iterations = xu.rows.max(xl.rows).div_ceil(cfg.batch_size).max(1);
    let opts = TargetOptions {
        estimator: cfg.gumbel_estimator,
        reconstruct: cfg.target_decoder,
    };

    let mut metrics = Vec::with_capacity(cfg.adaptation_epochs);
    for epoch in 0..cfg.adaptation_epochs {
        let mut sums = [0.0; 5];
        let mut counts = [0usize; 5];
        for _ in 0..iterations {
            for _ in 0..cfg.d_steps_per_t_step {
                let si = src_cycle.take(cfg.batch_size, &mut shuffle);
                let ti = pool_cycle.take(cfg.batch_size, &mut shuffle);
                let sb = Batch::labeled(xs.select(&si).to_tensor(), si.iter().map(|&i| src_labels[i]).collect());
                let tb = Batch::unlabeled(pool.select(&ti).to_tensor());
                let before = audit.as_ref().map(|_| PhaseAudit::snapshot(&bundle));
                let (v, ()) = optimize(&mut bundle, &d_groups, false, &mut d_adam, |m| {
                    Ok((discriminator_loss(m, &sb, &tb, &mut noise)?, ()))
                })?;
                if let (Some(a), Some(b)) = (audit.as_deref_mut(), before) {
                    a.record(Phase::Discriminator, &b, &bundle);
                }
                sums[0] += v;
                counts[0] += 1;
            }
            let ui = unl_cycle.take(cfg.batch_size, &mut shuffle);
            let li: Vec<usize> = (0..quota).map(|_| lab_rng.random_range(0..xl.rows)).collect();
            let ub = Batch::unlabeled(xu.select(&ui).to_tensor());
            let lb = Batch::labeled(xl.select(&li).to_tensor(), li.iter().map(|&i| lab_labels[i]).collect());
            let before = audit.as_ref().map(|_| PhaseAudit::snapshot(&bundle));
            let (_, terms) = optimize(&mut bundle, &t_groups, learn_cw, &mut t_adam, |m| {
                let t = target_total_terms(m, &lb, &ub, &cfg.weights, opts, &mut noise)?;
                let parts = (t.supervised, t.unsupervised, t.adversarial, t.reconstruction);
                Ok((t.total, parts))
            })?;
            if let (Some(a), Some(b)) = (audit.as_deref_mut(), before) {
                a.record(Phase::Target, &b, &bundle);
            }
            for (i, v) in [terms.0, terms.1, Some(terms.2), terms.3].into_iter().enumerate() {
                if let Some(v) = v {
                    sums[i + 1] += v;
                    counts[i + 1] += 1;
                }
            }
        }
        check_finite(&bundle, "adaptation", epoch)?;
        let mean = |i: usize| (counts[i] > 0).then(|| sums[i] / counts[i] as f64);
        metrics.push(AdaptEpoch {
            epoch,
            target_accuracy: target.eval.map(|e| accuracy_with(&bundle, Route::Target, e)).transpose()?,
            supervised: mean(1),
            unsupervised: mean(2),
            adversarial: mean(3).unwrap_or(0.0),
            discriminator: mean(0).unwrap_or(0.0),
            reconstruction: mean(4),
        });
    }
    Ok(AdaptRun {
        bundle,
        discriminator_adam: d_adam,
        target_adam: t_adam,
        metrics,
    })
}
