//! Training objectives: source ELBO with classification, the target
//! supervised and unsupervised bounds, and the adversarial pair.
//!
//! Every loss is the arithmetic mean over its batch and draws its noise
//! from the caller's [`NoiseStreams`] in a fixed order, so composing losses
//! on one stream is reproducible.

use std::f64::consts::PI;

use crate::distributions::{kl_categorical_logits, kl_gaussian_to_component, sample_gaussian, sample_gumbel_softmax};
use crate::error::{Error, Result};
use crate::networks::{classify_latent, decode, discriminate, encode, BoundMlp, BoundModel, DiscriminatorMode};
use crate::rng::NoiseStreams;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha_s: f64,
    pub alpha_t: f64,
    pub gamma: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_s: 1000.0,
            alpha_t: 10.0,
            gamma: 0.9,
            tau: 3.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_s >= 0.0) || !self.alpha_s.is_finite() {
            return Err(Error::param("alpha_s", "must be a finite non-negative number"));
        }
        if !(self.alpha_t >= 0.0) || !self.alpha_t.is_finite() {
            return Err(Error::param("alpha_t", "must be a finite non-negative number"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::param("gamma", "must lie in [0, 1]"));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::param("tau", "must be positive"));
        }
        Ok(())
    }
}

/// How the Gumbel-softmax class sample enters the graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GumbelEstimator {
    /// One-hot forward value, gradient of the relaxed sample.
    #[default]
    StraightThrough,
    /// Relaxed sample both ways. A smooth function of the parameters, so it
    /// can be checked against finite differences.
    Relaxed,
}

/// Rescaled features with optional class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, D]`
    pub x: Tensor,
    pub y: Option<Vec<usize>>,
}

impl Batch {
    pub fn labeled(x: Tensor, y: Vec<usize>) -> Self {
        Self { x, y: Some(y) }
    }

    pub fn unlabeled(x: Tensor) -> Self {
        Self { x, y: None }
    }

    pub fn len(&self) -> usize {
        self.x.shape().first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn labels(&self, what: &str) -> Result<&[usize]> {
        let y = self
            .y
            .as_deref()
            .ok_or_else(|| Error::Contract(format!("{what} needs a labeled batch")))?;
        if y.len() != self.len() {
            return Err(Error::shape("Batch labels", &[self.len()], &[y.len()]));
        }
        Ok(y)
    }

    fn require_rows(&self, what: &str) -> Result<()> {
        if self.x.rank() != 2 || self.is_empty() {
            return Err(Error::Contract(format!("{what} needs a non-empty [B, D] batch")));
        }
        Ok(())
    }
}

/// Per-row negative log-likelihood under a unit-variance Gaussian.
fn gaussian_nll(x: &Tensor, mean: &Tensor) -> Result<Tensor> {
    let d = x.shape()[1] as f64;
    Ok(x.sub(mean)?.square().sum(Some(1))?.scale(0.5).add_scalar(0.5 * d * (2.0 * PI).ln()))
}

/// Per-row `-log softmax(logits)[label]`.
fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    Ok(logits.log_softmax()?.gather_last(labels)?.neg())
}

/// Per-row `-sum_k target_k log softmax(logits)_k` over the first
/// `target.width` columns.
fn soft_cross_entropy(logits: &Tensor, target: &Tensor) -> Result<Tensor> {
    let k = target.shape()[1];
    let width = logits.shape()[1];
    let mut embed = vec![0.0; k * width];
    for i in 0..k {
        embed[i * width + i] = 1.0;
    }
    let padded = target.matmul(&Tensor::new(embed, &[k, width])?)?;
    Ok(padded.mul(&logits.log_softmax()?)?.sum(Some(1))?.neg())
}

fn encode_and_sample(encoder: &BoundMlp, x: &Tensor, noise: &mut NoiseStreams) -> Result<(crate::distributions::DiagonalGaussian, Tensor)> {
    let q = encode(encoder, x)?;
    let eps = noise.standard_normal(q.mu.shape())?;
    let z = sample_gaussian(&q, &eps)?;
    Ok((q, z))
}

/// Negative source ELBO plus `alpha_s`-weighted classification:
/// `KL(q(z|x) || p(z|y)) - log p(x|z) - alpha_s log q(y|z)`, one shared
/// reparameterized `z` per row.
pub fn source_supervised_loss(m: &BoundModel, batch: &Batch, w: &LossWeights, noise: &mut NoiseStreams) -> Result<Tensor> {
    batch.require_rows("source loss")?;
    let y = batch.labels("source loss")?;
    let (q, z) = encode_and_sample(&m.source_encoder, &batch.x, noise)?;
    let (mu_y, lv_y) = m.prior.components(y)?;
    let kl = kl_gaussian_to_component(&q, &mu_y, &lv_y)?;
    let nll = gaussian_nll(&batch.x, &decode(&m.decoder, &z)?)?;
    let ce = cross_entropy(&classify_latent(&m.source_classifier, &z)?.logits, y)?;
    kl.add(&nll)?.add(&ce.scale(w.alpha_s))?.mean(None)
}

/// `KL(q_t(z|x) || p(z|y)) - alpha_t log q_t(y|z)` on labeled target rows.
pub fn target_supervised_loss(m: &BoundModel, batch: &Batch, w: &LossWeights, noise: &mut NoiseStreams) -> Result<Tensor> {
    batch.require_rows("target supervised loss")?;
    let y = batch.labels("target supervised loss")?;
    let (q, z) = encode_and_sample(&m.target_encoder, &batch.x, noise)?;
    let (mu_y, lv_y) = m.prior.components(y)?;
    let kl = kl_gaussian_to_component(&q, &mu_y, &lv_y)?;
    let ce = cross_entropy(&classify_latent(&m.target_classifier, &z)?.logits, y)?;
    kl.add(&ce.scale(w.alpha_t))?.mean(None)
}

/// Assignment rows for a Gumbel-softmax draw at `logits`.
fn gumbel_assign(logits: &Tensor, tau: f64, estimator: GumbelEstimator, noise: &mut NoiseStreams) -> Result<(Tensor, Vec<usize>)> {
    let g = noise.gumbel(logits.shape())?;
    let s = sample_gumbel_softmax(&crate::distributions::CategoricalLogits::new(logits.clone()), tau, &g)?;
    let assign = match estimator {
        GumbelEstimator::StraightThrough => s.straight_through()?,
        GumbelEstimator::Relaxed => s.soft.clone(),
    };
    Ok((assign, s.hard))
}

/// `KL(q_t(y|z) || pi) + KL(q_t(z|x) || p(z|y~))` on unlabeled target rows,
/// where `z` is one reparameterized sample and `y~` a Gumbel-softmax draw
/// from `q_t(y|z)` at temperature `tau`.
pub fn target_unsupervised_loss(
    m: &BoundModel,
    batch: &Batch,
    w: &LossWeights,
    estimator: GumbelEstimator,
    noise: &mut NoiseStreams,
) -> Result<Tensor> {
    batch.require_rows("target unsupervised loss")?;
    if batch.y.is_some() {
        return Err(Error::Contract("target unsupervised loss takes unlabeled rows only".into()));
    }
    let (q, z) = encode_and_sample(&m.target_encoder, &batch.x, noise)?;
    let logits = classify_latent(&m.target_classifier, &z)?.logits;
    let cat = kl_categorical_logits(&logits, &m.prior.class_log_probs()?)?;
    let (assign, _) = gumbel_assign(&logits, w.tau, estimator, noise)?;
    let (mu, lv) = m.prior.mixed_components(&assign)?;
    let gauss = kl_gaussian_to_component(&q, &mu, &lv)?;
    cat.add(&gauss)?.mean(None)
}

/// Discriminator cross-entropy: source embeddings against their class,
/// target embeddings against the extra class `K` (or `0` / `1` in binary
/// mode). Embeddings are cut from the encoder graphs.
pub fn discriminator_loss(m: &BoundModel, source: &Batch, target: &Batch, noise: &mut NoiseStreams) -> Result<Tensor> {
    source.require_rows("discriminator loss")?;
    target.require_rows("discriminator loss")?;
    let ys = source.labels("discriminator loss")?;
    let (_, zs) = encode_and_sample(&m.source_encoder, &source.x, noise)?;
    let (_, zt) = encode_and_sample(&m.target_encoder, &target.x, noise)?;
    let (src_labels, tgt_label) = match m.discriminator_mode {
        DiscriminatorMode::ClassConditional => (ys.to_vec(), m.classes),
        DiscriminatorMode::Binary => (vec![0; ys.len()], 1),
    };
    let ce_s = cross_entropy(&discriminate(&m.discriminator, &zs.detach())?, &src_labels)?;
    let ce_t = cross_entropy(&discriminate(&m.discriminator, &zt.detach())?, &vec![tgt_label; target.len()])?;
    let n = (source.len() + target.len()) as f64;
    Ok(ce_s.sum(None)?.add(&ce_t.sum(None)?)?.scale(1.0 / n))
}

/// Adversarial target objective: the discriminator (held fixed) should
/// read each target embedding as a source sample of its class, the
/// Gumbel-softmax draw for unlabeled rows and the true label otherwise.
/// In binary mode every target row is scored against the source label.
pub fn adversarial_loss(
    m: &BoundModel,
    unlabeled: &Batch,
    labeled: &Batch,
    w: &LossWeights,
    estimator: GumbelEstimator,
    noise: &mut NoiseStreams,
) -> Result<Tensor> {
    if unlabeled.is_empty() && labeled.is_empty() {
        return Err(Error::Contract("adversarial loss needs at least one target row".into()));
    }
    let d = m.discriminator.detach();
    let mut total: Option<Tensor> = None;
    let mut acc = |t: Tensor| -> Result<()> {
        let s = t.sum(None)?;
        total = Some(match total.take() {
            Some(a) => a.add(&s)?,
            None => s,
        });
        Ok(())
    };
    if !unlabeled.is_empty() {
        unlabeled.require_rows("adversarial loss")?;
        let (_, z) = encode_and_sample(&m.target_encoder, &unlabeled.x, noise)?;
        let logits = discriminate(&d, &z)?;
        match m.discriminator_mode {
            DiscriminatorMode::ClassConditional => {
                let cls = classify_latent(&m.target_classifier, &z)?.logits;
                let (assign, _) = gumbel_assign(&cls, w.tau, estimator, noise)?;
                acc(soft_cross_entropy(&logits, &assign)?)?;
            }
            DiscriminatorMode::Binary => acc(cross_entropy(&logits, &vec![0; unlabeled.len()])?)?,
        }
    }
    if !labeled.is_empty() {
        labeled.require_rows("adversarial loss")?;
        let y = labeled.labels("adversarial loss")?;
        let (_, z) = encode_and_sample(&m.target_encoder, &labeled.x, noise)?;
        let logits = discriminate(&d, &z)?;
        let labels = match m.discriminator_mode {
            DiscriminatorMode::ClassConditional => y.to_vec(),
            DiscriminatorMode::Binary => vec![0; y.len()],
        };
        acc(cross_entropy(&logits, &labels)?)?;
    }
    let n = (unlabeled.len() + labeled.len()) as f64;
    Ok(total.unwrap().scale(1.0 / n))
}

/// `-log p(x|z)` for target rows through the shared decoder.
pub fn target_reconstruction_loss(m: &BoundModel, batch: &Batch, noise: &mut NoiseStreams) -> Result<Tensor> {
    batch.require_rows("target reconstruction loss")?;
    let (_, z) = encode_and_sample(&m.target_encoder, &batch.x, noise)?;
    gaussian_nll(&batch.x, &decode(&m.decoder, &z)?)?.mean(None)
}

/// Options of the target objective beyond the loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TargetOptions {
    pub estimator: GumbelEstimator,
    /// Adds [`target_reconstruction_loss`] on the unlabeled rows.
    pub reconstruct: bool,
}

/// The target objective and its parts.
#[derive(Debug, Clone)]
pub struct TargetTerms {
    pub total: Tensor,
    pub supervised: Option<f64>,
    pub unsupervised: Option<f64>,
    pub adversarial: f64,
    pub reconstruction: Option<f64>,
}

/// `gamma * L_sup + (1 - gamma) * L_unsup + L_adv`, dropping whichever of
/// the first two has no rows. Noise is consumed in that order, then by the
/// optional reconstruction term.
pub fn target_total_terms(
    m: &BoundModel,
    labeled: &Batch,
    unlabeled: &Batch,
    w: &LossWeights,
    opts: TargetOptions,
    noise: &mut NoiseStreams,
) -> Result<TargetTerms> {
    if labeled.is_empty() && unlabeled.is_empty() {
        return Err(Error::Contract("target loss needs labeled or unlabeled rows".into()));
    }
    let mut parts = Vec::new();
    let supervised = if labeled.is_empty() {
        None
    } else {
        let l = target_supervised_loss(m, labeled, w, noise)?;
        let v = l.item()?;
        parts.push(l.scale(w.gamma));
        Some(v)
    };
    let unsupervised = if unlabeled.is_empty() {
        None
    } else {
        let l = target_unsupervised_loss(m, unlabeled, w, opts.estimator, noise)?;
        let v = l.item()?;
        parts.push(l.scale(1.0 - w.gamma));
        Some(v)
    };
    let adv = adversarial_loss(m, unlabeled, labeled, w, opts.estimator, noise)?;
    let adversarial = adv.item()?;
    parts.push(adv);
    let reconstruction = if opts.reconstruct && !unlabeled.is_empty() {
        let l = target_reconstruction_loss(m, unlabeled, noise)?;
        let v = l.item()?;
        parts.push(l);
        Some(v)
    } else {
        None
    };
    let mut total = parts[0].clone();
    for p in &parts[1..] {
        total = total.add(p)?;
    }
    Ok(TargetTerms {
        total,
        supervised,
        unsupervised,
        adversarial,
        reconstruction,
    })
}

pub fn target_total_loss(
    m: &BoundModel,
    labeled: &Batch,
    unlabeled: &Batch,
    w: &LossWeights,
    opts: TargetOptions,
    noise: &mut NoiseStreams,
) -> Result<Tensor> {
    Ok(target_total_terms(m, labeled, unlabeled, w, opts, noise)?.total)
}
