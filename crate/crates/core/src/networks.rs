//! MLP realizations of the encoders, decoder, latent classifiers and
//! discriminator, plus the [`ModelBundle`] that owns them all.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureScaler, Matrix};
use crate::distributions::{sample_gaussian, CategoricalLogits, DiagonalGaussian};
use crate::error::{Error, Result};
use crate::param::{self, Param};
use crate::prior::{init_prior, GmmPrior, PriorView};
use crate::rng::standard_normal;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, t: &Tensor) -> Tensor {
        match self {
            Activation::Tanh => t.tanh(),
            Activation::Relu => t.relu(),
        }
    }
}

/// Shared trunk plus linear output heads.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    /// Input width followed by each hidden width.
    pub layer_widths: Vec<usize>,
    pub hidden_activation: Activation,
    pub heads: Vec<(String, usize)>,
}

impl MlpSpec {
    pub fn new(
        input: usize,
        hidden: &[usize],
        hidden_activation: Activation,
        heads: &[(&str, usize)],
    ) -> Result<Self> {
        let mut layer_widths = vec![input];
        layer_widths.extend_from_slice(hidden);
        let spec = Self {
            layer_widths,
            hidden_activation,
            heads: heads.iter().map(|(n, w)| (n.to_string(), *w)).collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::param("layer_widths", "need at least one hidden layer"));
        }
        if self.layer_widths.iter().any(|&w| w == 0) || self.heads.iter().any(|(_, w)| *w == 0) {
            return Err(Error::param("layer_widths", "all widths must be at least 1"));
        }
        if self.heads.is_empty() {
            return Err(Error::param("heads", "need at least one output head"));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[in, out]`
    pub weight: Param,
    /// `[out]`
    pub bias: Param,
}

impl Linear {
    fn xavier(name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
        Self {
            weight: Param::new(format!("{name}.weight"), &[fan_in, fan_out], w).unwrap(),
            bias: Param::zeros(format!("{name}.bias"), &[fan_out]),
        }
    }

    fn zeros(name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Param::zeros(format!("{name}.weight"), &[fan_in, fan_out]),
            bias: Param::zeros(format!("{name}.bias"), &[fan_out]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub trunk: Vec<Linear>,
    pub heads: Vec<Linear>,
}

impl Mlp {
    fn build(spec: &MlpSpec, prefix: &str, mut make: impl FnMut(&str, usize, usize) -> Linear) -> Result<Self> {
        spec.validate()?;
        let trunk = spec
            .layer_widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| make(&format!("{prefix}.trunk{i}"), w[0], w[1]))
            .collect();
        let last = *spec.layer_widths.last().unwrap();
        let heads = spec
            .heads
            .iter()
            .map(|(name, w)| make(&format!("{prefix}.{name}"), last, *w))
            .collect();
        Ok(Self {
            spec: spec.clone(),
            trunk,
            heads,
        })
    }

    /// Xavier-uniform weights, zero biases.
    pub fn xavier(spec: &MlpSpec, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        Self::build(spec, prefix, |n, i, o| Linear::xavier(n, i, o, rng))
    }

    pub fn zeros(spec: &MlpSpec, prefix: &str) -> Result<Self> {
        Self::build(spec, prefix, Linear::zeros)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.trunk
            .iter()
            .chain(&self.heads)
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.trunk
            .iter_mut()
            .chain(self.heads.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Copies parameter values from a network of identical shape.
    pub fn copy_values_from(&mut self, other: &Mlp) -> Result<()> {
        if self.spec.layer_widths != other.spec.layer_widths || self.spec.heads != other.spec.heads {
            return Err(Error::Contract("copying between differently shaped networks".into()));
        }
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            dst.data.clone_from(&src.data);
        }
        Ok(())
    }

    pub fn bind(&self, tape: Option<&Tape>) -> BoundMlp {
        let bind = |l: &Linear| (l.weight.bind(tape), l.bias.bind(tape));
        BoundMlp {
            activation: self.spec.hidden_activation,
            trunk: self.trunk.iter().map(bind).collect(),
            heads: self.heads.iter().map(bind).collect(),
        }
    }
}

/// An [`Mlp`]'s parameters as tensors on one tape (or as constants).
#[derive(Debug, Clone)]
pub struct BoundMlp {
    pub activation: Activation,
    pub trunk: Vec<(Tensor, Tensor)>,
    pub heads: Vec<(Tensor, Tensor)>,
}

impl BoundMlp {
    /// One output per head, each `[B, width]`.
    pub fn forward(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut h = x.clone();
        for (w, b) in &self.trunk {
            h = self.activation.apply(&h.matmul(w)?.add(b)?);
        }
        self.heads.iter().map(|(w, b)| h.matmul(w)?.add(b)).collect()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.trunk
            .iter()
            .chain(&self.heads)
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    /// Same parameters, cut from the tape.
    pub fn detach(&self) -> BoundMlp {
        let d = |(w, b): &(Tensor, Tensor)| (w.detach(), b.detach());
        BoundMlp {
            activation: self.activation,
            trunk: self.trunk.iter().map(d).collect(),
            heads: self.heads.iter().map(d).collect(),
        }
    }
}

/// `q(z|x)`: `[B, D]` inputs to a batch of diagonal Gaussians.
pub fn encode(encoder: &BoundMlp, x: &Tensor) -> Result<DiagonalGaussian> {
    let mut out = encoder.forward(x)?;
    if out.len() != 2 {
        return Err(Error::Contract("encoder must have mu and log_var heads".into()));
    }
    let log_var = out.pop().unwrap();
    let mu = out.pop().unwrap();
    DiagonalGaussian::new(mu, log_var)
}

/// `q(y|z)` logits, `[B, K]`.
pub fn classify_latent(classifier: &BoundMlp, z: &Tensor) -> Result<CategoricalLogits> {
    Ok(CategoricalLogits::new(single_head(classifier, z)?))
}

/// Reconstruction mean, `[B, D]`.
pub fn decode(decoder: &BoundMlp, z: &Tensor) -> Result<Tensor> {
    single_head(decoder, z)
}

/// Discriminator logits, `[B, K+1]` (or `[B, 2]` for the binary variant).
pub fn discriminate(discriminator: &BoundMlp, z: &Tensor) -> Result<Tensor> {
    single_head(discriminator, z)
}

fn single_head(net: &BoundMlp, z: &Tensor) -> Result<Tensor> {
    let mut out = net.forward(z)?;
    if out.len() != 1 {
        return Err(Error::Contract("expected a single output head".into()));
    }
    Ok(out.pop().unwrap())
}

pub enum PredictMode<'a> {
    /// Classify the posterior mean. Deterministic; the evaluation default.
    MeanZ,
    /// Classify one reparameterized sample.
    SampledZ(&'a mut ChaCha8Rng),
}

/// `argmax q(y|z)` with `z` from `encoder(x)`; `x` is already rescaled.
pub fn predict_class(encoder: &Mlp, classifier: &Mlp, x: &Tensor, mode: PredictMode<'_>) -> Result<Vec<usize>> {
    let q = encode(&encoder.bind(None), x)?;
    let z = match mode {
        PredictMode::MeanZ => q.mu,
        PredictMode::SampledZ(rng) => sample_gaussian(&q, &standard_normal(rng, q.mu.shape())?)?,
    };
    let logits = classify_latent(&classifier.bind(None), &z)?.logits;
    let k = logits.shape()[1];
    Ok(logits.data().chunks(k).map(argmax).collect())
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorMode {
    /// K source classes plus one "from the target encoder" class.
    ClassConditional,
    /// Plain source-vs-target domain classifier.
    Binary,
}

/// Architecture shared by every network in a bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub classes: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub discriminator: DiscriminatorMode,
}

impl NetworkConfig {
    pub fn discriminator_width(&self) -> usize {
        match self.discriminator {
            DiscriminatorMode::ClassConditional => self.classes + 1,
            DiscriminatorMode::Binary => 2,
        }
    }

    pub fn encoder_spec(&self) -> Result<MlpSpec> {
        MlpSpec::new(
            self.input_dim,
            &self.hidden,
            self.activation,
            &[("mu", self.latent_dim), ("log_var", self.latent_dim)],
        )
    }

    pub fn classifier_spec(&self) -> Result<MlpSpec> {
        MlpSpec::new(self.latent_dim, &self.hidden, self.activation, &[("logits", self.classes)])
    }

    pub fn decoder_spec(&self) -> Result<MlpSpec> {
        MlpSpec::new(self.latent_dim, &self.hidden, self.activation, &[("recon", self.input_dim)])
    }

    pub fn discriminator_spec(&self) -> Result<MlpSpec> {
        MlpSpec::new(
            self.latent_dim,
            &self.hidden,
            self.activation,
            &[("logits", self.discriminator_width())],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    SourceEncoder,
    SourceClassifier,
    Decoder,
    Prior,
    TargetEncoder,
    TargetClassifier,
    Discriminator,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 7] = [
        ParamGroup::SourceEncoder,
        ParamGroup::SourceClassifier,
        ParamGroup::Decoder,
        ParamGroup::Prior,
        ParamGroup::TargetEncoder,
        ParamGroup::TargetClassifier,
        ParamGroup::Discriminator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::SourceEncoder => "source_encoder",
            ParamGroup::SourceClassifier => "source_classifier",
            ParamGroup::Decoder => "decoder",
            ParamGroup::Prior => "prior",
            ParamGroup::TargetEncoder => "target_encoder",
            ParamGroup::TargetClassifier => "target_classifier",
            ParamGroup::Discriminator => "discriminator",
        }
    }
}

/// Which networks feed a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// Source encoder and source latent classifier.
    Source,
    /// Target encoder and target latent classifier.
    Target,
}

/// Every learnable piece of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub config: NetworkConfig,
    pub source_encoder: Mlp,
    pub target_encoder: Mlp,
    pub decoder: Mlp,
    pub source_classifier: Mlp,
    pub target_classifier: Mlp,
    pub discriminator: Mlp,
    pub prior: GmmPrior,
    /// Input rescaling fitted on source data; applied to both domains.
    pub scaler: FeatureScaler,
}

impl ModelBundle {
    pub fn new(config: NetworkConfig, prior_radius: f64, prior_sigma: f64, rng: &mut impl Rng) -> Result<Self> {
        let enc = config.encoder_spec()?;
        let cls = config.classifier_spec()?;
        Ok(Self {
            source_encoder: Mlp::xavier(&enc, "source_encoder", rng)?,
            target_encoder: Mlp::xavier(&enc, "target_encoder", rng)?,
            decoder: Mlp::xavier(&config.decoder_spec()?, "decoder", rng)?,
            source_classifier: Mlp::xavier(&cls, "source_classifier", rng)?,
            target_classifier: Mlp::xavier(&cls, "target_classifier", rng)?,
            discriminator: Mlp::xavier(&config.discriminator_spec()?, "discriminator", rng)?,
            prior: init_prior(config.classes, config.latent_dim, prior_radius, prior_sigma)?,
            scaler: FeatureScaler::identity(config.input_dim),
            config,
        })
    }

    /// All-zero networks; handy for tests that need exact outputs.
    pub fn zeros(config: NetworkConfig, prior_radius: f64, prior_sigma: f64) -> Result<Self> {
        let enc = config.encoder_spec()?;
        let cls = config.classifier_spec()?;
        Ok(Self {
            source_encoder: Mlp::zeros(&enc, "source_encoder")?,
            target_encoder: Mlp::zeros(&enc, "target_encoder")?,
            decoder: Mlp::zeros(&config.decoder_spec()?, "decoder")?,
            source_classifier: Mlp::zeros(&cls, "source_classifier")?,
            target_classifier: Mlp::zeros(&cls, "target_classifier")?,
            discriminator: Mlp::zeros(&config.discriminator_spec()?, "discriminator")?,
            prior: init_prior(config.classes, config.latent_dim, prior_radius, prior_sigma)?,
            scaler: FeatureScaler::identity(config.input_dim),
            config,
        })
    }

    pub fn params(&self, group: ParamGroup) -> Vec<&Param> {
        match group {
            ParamGroup::SourceEncoder => self.source_encoder.params(),
            ParamGroup::SourceClassifier => self.source_classifier.params(),
            ParamGroup::Decoder => self.decoder.params(),
            ParamGroup::Prior => self.prior.params(),
            ParamGroup::TargetEncoder => self.target_encoder.params(),
            ParamGroup::TargetClassifier => self.target_classifier.params(),
            ParamGroup::Discriminator => self.discriminator.params(),
        }
    }

    pub fn params_mut(&mut self, group: ParamGroup) -> Vec<&mut Param> {
        match group {
            ParamGroup::SourceEncoder => self.source_encoder.params_mut(),
            ParamGroup::SourceClassifier => self.source_classifier.params_mut(),
            ParamGroup::Decoder => self.decoder.params_mut(),
            ParamGroup::Prior => self.prior.params_mut(),
            ParamGroup::TargetEncoder => self.target_encoder.params_mut(),
            ParamGroup::TargetClassifier => self.target_classifier.params_mut(),
            ParamGroup::Discriminator => self.discriminator.params_mut(),
        }
    }

    /// Mutable parameters of several groups at once, in [`ParamGroup::ALL`]
    /// order.
    pub fn params_mut_in(&mut self, groups: &[ParamGroup]) -> Vec<&mut Param> {
        let ModelBundle {
            source_encoder,
            target_encoder,
            decoder,
            source_classifier,
            target_classifier,
            discriminator,
            prior,
            ..
        } = self;
        let on = |g| groups.contains(&g);
        let mut out = Vec::new();
        if on(ParamGroup::SourceEncoder) {
            out.extend(source_encoder.params_mut());
        }
        if on(ParamGroup::SourceClassifier) {
            out.extend(source_classifier.params_mut());
        }
        if on(ParamGroup::Decoder) {
            out.extend(decoder.params_mut());
        }
        if on(ParamGroup::Prior) {
            out.extend(prior.params_mut());
        }
        if on(ParamGroup::TargetEncoder) {
            out.extend(target_encoder.params_mut());
        }
        if on(ParamGroup::TargetClassifier) {
            out.extend(target_classifier.params_mut());
        }
        if on(ParamGroup::Discriminator) {
            out.extend(discriminator.params_mut());
        }
        out
    }

    pub fn all_params(&self) -> Vec<&Param> {
        ParamGroup::ALL.iter().flat_map(|&g| self.params(g)).collect()
    }

    pub fn group_digest(&self, group: ParamGroup) -> [u8; 32] {
        param::digest(self.params(group))
    }

    pub fn is_finite(&self) -> bool {
        self.all_params().iter().all(|p| p.is_finite())
    }

    /// Initializes the target encoder and target latent classifier from
    /// their source counterparts.
    pub fn warm_start_target(&mut self) -> Result<()> {
        self.target_encoder.copy_values_from(&self.source_encoder)?;
        self.target_classifier.copy_values_from(&self.source_classifier)
    }

    /// Fresh Xavier discriminator for `mode`.
    pub fn reset_discriminator(&mut self, mode: DiscriminatorMode, rng: &mut impl Rng) -> Result<()> {
        self.config.discriminator = mode;
        self.discriminator = Mlp::xavier(&self.config.discriminator_spec()?, "discriminator", rng)?;
        Ok(())
    }

    pub fn networks(&self, route: Route) -> (&Mlp, &Mlp) {
        match route {
            Route::Source => (&self.source_encoder, &self.source_classifier),
            Route::Target => (&self.target_encoder, &self.target_classifier),
        }
    }

    /// Binds onto `tape`, tracking only the groups in `trainable`.
    pub fn bind(&self, tape: &Tape, trainable: &[ParamGroup], learn_class_weights: bool) -> BoundModel {
        let on = |g: ParamGroup| trainable.contains(&g).then_some(tape);
        BoundModel {
            classes: self.config.classes,
            discriminator_mode: self.config.discriminator,
            source_encoder: self.source_encoder.bind(on(ParamGroup::SourceEncoder)),
            source_classifier: self.source_classifier.bind(on(ParamGroup::SourceClassifier)),
            decoder: self.decoder.bind(on(ParamGroup::Decoder)),
            prior: self.prior.bind(on(ParamGroup::Prior), learn_class_weights),
            target_encoder: self.target_encoder.bind(on(ParamGroup::TargetEncoder)),
            target_classifier: self.target_classifier.bind(on(ParamGroup::TargetClassifier)),
            discriminator: self.discriminator.bind(on(ParamGroup::Discriminator)),
        }
    }

    /// Posterior means for raw (unscaled) inputs.
    pub fn embed(&self, route: Route, raw: &Matrix) -> Result<Tensor> {
        let x = self.scaler.transform(raw)?.to_tensor();
        let (enc, _) = self.networks(route);
        Ok(encode(&enc.bind(None), &x)?.mu)
    }

    /// Class predictions for raw (unscaled) inputs.
    pub fn predict(&self, route: Route, raw: &Matrix, mode: PredictMode<'_>) -> Result<Vec<usize>> {
        let x = self.scaler.transform(raw)?.to_tensor();
        let (enc, cls) = self.networks(route);
        predict_class(enc, cls, &x, mode)
    }
}

/// A bundle's parameters bound onto one tape for one forward pass.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub classes: usize,
    pub discriminator_mode: DiscriminatorMode,
    pub source_encoder: BoundMlp,
    pub source_classifier: BoundMlp,
    pub decoder: BoundMlp,
    pub prior: PriorView,
    pub target_encoder: BoundMlp,
    pub target_classifier: BoundMlp,
    pub discriminator: BoundMlp,
}

impl BoundModel {
    /// Tensors in the same order as [`ModelBundle::params`].
    pub fn tensors(&self, group: ParamGroup) -> Vec<&Tensor> {
        match group {
            ParamGroup::SourceEncoder => self.source_encoder.tensors(),
            ParamGroup::SourceClassifier => self.source_classifier.tensors(),
            ParamGroup::Decoder => self.decoder.tensors(),
            ParamGroup::Prior => self.prior.tensors().to_vec(),
            ParamGroup::TargetEncoder => self.target_encoder.tensors(),
            ParamGroup::TargetClassifier => self.target_classifier.tensors(),
            ParamGroup::Discriminator => self.discriminator.tensors(),
        }
    }
}
