#![allow(dead_code)]

use avda::losses::{
    adversarial_loss, discriminator_loss, source_supervised_loss, target_reconstruction_loss, target_supervised_loss,
    target_total_loss, target_unsupervised_loss, Batch, GumbelEstimator, LossWeights, TargetOptions,
};
use avda::networks::{Activation, BoundModel, DiscriminatorMode, ModelBundle, NetworkConfig, ParamGroup};
use avda::rng::{stream, NoiseStreams, Stream};
use avda::tensor::{Tape, Tensor};
use rand::Rng;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-5;
/// Absolute denominator floor of the relative error.
pub const FD_FLOOR: f64 = 1e-6;
/// Denominator floor as a fraction of the group's largest gradient entry.
/// Central differences carry `h^2 f'''/6` truncation error, which swamps
/// entries many orders below the group's scale.
pub const FD_GROUP_FLOOR: f64 = 1e-2;

pub fn tiny_config(mode: DiscriminatorMode, hidden: Vec<usize>) -> NetworkConfig {
    NetworkConfig {
        input_dim: 3,
        classes: 3,
        latent_dim: 4,
        hidden,
        activation: Activation::Tanh,
        discriminator: mode,
    }
}

/// Xavier networks plus a jittered prior so no two components coincide.
pub fn tiny_bundle(seed: u64, mode: DiscriminatorMode, hidden: Vec<usize>) -> ModelBundle {
    let mut rng = stream(seed, Stream::Init);
    let mut b = ModelBundle::new(tiny_config(mode, hidden), 2.0, 1.0, &mut rng).unwrap();
    for p in b.prior.params_mut() {
        p.data.iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
    }
    b
}

pub fn rows(n: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = stream(seed, Stream::Data);
    Tensor::new((0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(), &[n, d]).unwrap()
}

pub struct LossCase {
    pub name: &'static str,
    /// Groups the loss must reach; every other group must see zero gradient.
    pub reach: Vec<ParamGroup>,
    pub f: Box<dyn Fn(&BoundModel) -> Tensor>,
}

/// Every training objective, with fresh noise per evaluation so repeated
/// calls see the same draws. Gumbel draws use the relaxed estimator so the
/// objective is smooth in its parameters.
pub fn loss_cases(seed: u64, mode: DiscriminatorMode) -> Vec<LossCase> {
    use ParamGroup::*;
    let w = LossWeights::default();
    let est = GumbelEstimator::Relaxed;
    let src = Batch::labeled(rows(5, 3, seed), vec![0, 1, 2, 1, 0]);
    let lab = Batch::labeled(rows(3, 3, seed + 1), vec![2, 0, 1]);
    let unl = Batch::unlabeled(rows(4, 3, seed + 2));
    let noise = move || NoiseStreams::new(seed + 3);
    let mut cases: Vec<LossCase> = Vec::new();
    {
        let src = src.clone();
        cases.push(LossCase {
            name: "source_supervised",
            reach: vec![SourceEncoder, SourceClassifier, Decoder, Prior],
            f: Box::new(move |m| source_supervised_loss(m, &src, &w, &mut noise()).unwrap()),
        });
    }
    {
        let lab = lab.clone();
        cases.push(LossCase {
            name: "target_supervised",
            reach: vec![TargetEncoder, TargetClassifier, Prior],
            f: Box::new(move |m| target_supervised_loss(m, &lab, &w, &mut noise()).unwrap()),
        });
    }
    {
        let unl = unl.clone();
        cases.push(LossCase {
            name: "target_unsupervised",
            reach: vec![TargetEncoder, TargetClassifier, Prior],
            f: Box::new(move |m| target_unsupervised_loss(m, &unl, &w, est, &mut noise()).unwrap()),
        });
    }
    {
        let (src, unl, lab) = (src.clone(), unl.clone(), lab.clone());
        cases.push(LossCase {
            name: "discriminator",
            reach: vec![Discriminator],
            f: Box::new(move |m| {
                let l1 = discriminator_loss(m, &src, &unl, &mut noise()).unwrap();
                let l2 = discriminator_loss(m, &src, &lab, &mut noise()).unwrap();
                l1.add(&l2).unwrap()
            }),
        });
    }
    {
        let (unl, lab) = (unl.clone(), lab.clone());
        cases.push(LossCase {
            name: "adversarial",
            // binary targets do not depend on the classifier
            reach: match mode {
                DiscriminatorMode::ClassConditional => vec![TargetEncoder, TargetClassifier],
                DiscriminatorMode::Binary => vec![TargetEncoder],
            },
            f: Box::new(move |m| adversarial_loss(m, &unl, &lab, &w, est, &mut noise()).unwrap()),
        });
    }
    {
        let (unl, lab) = (unl.clone(), lab.clone());
        let opts = TargetOptions {
            estimator: est,
            reconstruct: false,
        };
        cases.push(LossCase {
            name: "target_total",
            reach: vec![TargetEncoder, TargetClassifier, Prior],
            f: Box::new(move |m| target_total_loss(m, &lab, &unl, &w, opts, &mut noise()).unwrap()),
        });
    }
    {
        let (unl, lab) = (unl.clone(), lab.clone());
        let opts = TargetOptions {
            estimator: est,
            reconstruct: true,
        };
        cases.push(LossCase {
            name: "target_total_with_decoder",
            reach: vec![TargetEncoder, TargetClassifier, Prior, Decoder],
            f: Box::new(move |m| target_total_loss(m, &lab, &unl, &w, opts, &mut noise()).unwrap()),
        });
    }
    cases.push(LossCase {
        name: "target_reconstruction",
        reach: vec![TargetEncoder, Decoder],
        f: Box::new(move |m| target_reconstruction_loss(m, &unl, &mut noise()).unwrap()),
    });
    cases
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FdResult {
    pub max_rel: f64,
    /// Same error with only the absolute floor, for reporting.
    pub max_rel_unscaled: f64,
    /// `|analytic - numeric| / max |analytic|` within each group.
    pub max_normwise: f64,
    /// Largest gradient magnitude seen in a group outside the reach set.
    pub max_unreached: f64,
    /// Smallest gradient norm over the reached groups.
    pub min_reached_norm: f64,
    pub entries: usize,
}

/// Central differences against every entry of every reached group, with
/// all groups tracked (class weights included).
pub fn fd_audit(b: &ModelBundle, case: &LossCase) -> FdResult {
    let tape = Tape::new();
    let bound = b.bind(&tape, &ParamGroup::ALL, true);
    let grads = (case.f)(&bound).backward().unwrap();
    let mut out = FdResult {
        min_reached_norm: f64::INFINITY,
        ..Default::default()
    };
    for group in ParamGroup::ALL {
        let analytic: Vec<Vec<f64>> = bound.tensors(group).iter().map(|t| grads.get(t).to_vec()).collect();
        if !case.reach.contains(&group) {
            let m = analytic.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
            out.max_unreached = out.max_unreached.max(m);
            continue;
        }
        let norm = analytic.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        out.min_reached_norm = out.min_reached_norm.min(norm);
        let scale = analytic.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        let floor = FD_FLOOR.max(FD_GROUP_FLOOR * scale);
        for (pi, grad) in analytic.iter().enumerate() {
            for (i, &a) in grad.iter().enumerate() {
                let eval = |delta: f64| {
                    let mut c = b.clone();
                    c.params_mut(group)[pi].data[i] += delta;
                    (case.f)(&c.bind(&Tape::new(), &[], true)).item().unwrap()
                };
                let n = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
                let err = (a - n).abs();
                out.max_rel = out.max_rel.max(err / a.abs().max(n.abs()).max(floor));
                out.max_rel_unscaled = out.max_rel_unscaled.max(err / a.abs().max(n.abs()).max(FD_FLOOR));
                out.max_normwise = out.max_normwise.max(err / scale.max(FD_FLOOR));
                out.entries += 1;
            }
        }
    }
    out
}
