//! Learnable Gaussian-mixture prior over the latent space, one component
//! per class.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::param::Param;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GmmPrior {
    pub classes: usize,
    pub latent_dim: usize,
    /// `[K, J]` component means.
    pub means: Param,
    /// `[K, J]` component log-variances.
    pub log_vars: Param,
    /// `[K]` unnormalized log class weights; `softmax` gives the class prior.
    pub class_log_weights: Param,
}

/// Places component `y` on axis `y mod J` at distance `radius`. When there
/// are more classes than axes the sign flips on each pass round the axes.
pub fn init_prior(classes: usize, latent_dim: usize, radius: f64, init_sigma: f64) -> Result<GmmPrior> {
    if classes < 2 {
        return Err(Error::param("classes", format!("need at least 2, got {classes}")));
    }
    if latent_dim < 1 {
        return Err(Error::param("latent_dim", "must be at least 1"));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::param("radius", format!("must be positive, got {radius}")));
    }
    if !(init_sigma > 0.0) || !init_sigma.is_finite() {
        return Err(Error::param("init_sigma", format!("must be positive, got {init_sigma}")));
    }
    let mut means = vec![0.0; classes * latent_dim];
    for y in 0..classes {
        let sign = if (y / latent_dim) % 2 == 0 { 1.0 } else { -1.0 };
        means[y * latent_dim + y % latent_dim] = sign * radius;
    }
    let lv = (init_sigma * init_sigma).ln();
    Ok(GmmPrior {
        classes,
        latent_dim,
        means: Param::new("prior.means", &[classes, latent_dim], means)?,
        log_vars: Param::new("prior.log_vars", &[classes, latent_dim], vec![lv; classes * latent_dim])?,
        class_log_weights: Param::zeros("prior.class_log_weights", &[classes]),
    })
}

impl GmmPrior {
    fn check_class(&self, y: usize) -> Result<()> {
        if y >= self.classes {
            return Err(Error::Index {
                what: "prior components",
                index: y,
                len: self.classes,
            });
        }
        Ok(())
    }

    /// Mean and log-variance of component `y`, as constants.
    pub fn component(&self, y: usize) -> Result<(Tensor, Tensor)> {
        self.check_class(y)?;
        let j = self.latent_dim;
        let row = |p: &Param| Tensor::new(p.data[y * j..(y + 1) * j].to_vec(), &[j]);
        Ok((row(&self.means)?, row(&self.log_vars)?))
    }

    pub fn class_probs(&self) -> Vec<f64> {
        let w = &self.class_log_weights.data;
        let m = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = w.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    /// Posterior class probabilities of `z` under the mixture.
    pub fn responsibilities(&self, z: &[f64]) -> Result<Vec<f64>> {
        let j = self.latent_dim;
        if z.len() != j {
            return Err(Error::shape("responsibilities", &[j], &[z.len()]));
        }
        let log_pi = self.class_probs();
        let scores: Vec<f64> = (0..self.classes)
            .map(|y| {
                let mu = &self.means.data[y * j..(y + 1) * j];
                let lv = &self.log_vars.data[y * j..(y + 1) * j];
                let ll: f64 = (0..j)
                    .map(|d| -0.5 * ((2.0 * PI).ln() + lv[d] + (z[d] - mu[d]).powi(2) / lv[d].exp()))
                    .sum();
                log_pi[y].ln() + ll
            })
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let total: f64 = e.iter().sum();
        Ok(e.into_iter().map(|v| v / total).collect())
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.means, &self.log_vars, &self.class_log_weights]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.means, &mut self.log_vars, &mut self.class_log_weights]
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    /// Binds onto `tape`. `None` freezes everything; class weights are only
    /// tracked when `learn_class_weights` is set.
    pub fn bind(&self, tape: Option<&Tape>, learn_class_weights: bool) -> PriorView {
        PriorView {
            classes: self.classes,
            means: self.means.bind(tape),
            log_vars: self.log_vars.bind(tape),
            class_log_weights: self
                .class_log_weights
                .bind(if learn_class_weights { tape } else { None }),
        }
    }
}

/// The prior's parameters as tensors on one tape.
#[derive(Debug, Clone)]
pub struct PriorView {
    pub classes: usize,
    pub means: Tensor,
    pub log_vars: Tensor,
    pub class_log_weights: Tensor,
}

impl PriorView {
    /// `[J]` mean and log-variance of component `y`; gradients flow back
    /// into the prior rows when they are tracked.
    pub fn component(&self, y: usize) -> Result<(Tensor, Tensor)> {
        let (mu, lv) = self.components(&[y])?;
        let j = mu.shape()[1];
        Ok((mu.reshape(&[j])?, lv.reshape(&[j])?))
    }

    /// `[B, J]` rows for a batch of class indices.
    pub fn components(&self, ys: &[usize]) -> Result<(Tensor, Tensor)> {
        Ok((self.means.select_rows(ys)?, self.log_vars.select_rows(ys)?))
    }

    /// Components mixed by `[B, K]` assignment rows (one-hot or relaxed).
    pub fn mixed_components(&self, assign: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((assign.matmul(&self.means)?, assign.matmul(&self.log_vars)?))
    }

    pub fn class_log_probs(&self) -> Result<Tensor> {
        self.class_log_weights.log_softmax()
    }

    pub fn tensors(&self) -> [&Tensor; 3] {
        [&self.means, &self.log_vars, &self.class_log_weights]
    }
}
