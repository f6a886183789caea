//! Reparameterized samplers and closed-form divergences.
//!
//! All noise is supplied by the caller, so every function here is a pure,
//! deterministic map from tensors to tensors. Batched inputs (`[B, J]` or
//! `[B, K]`) are handled row-wise; reductions are over the last axis.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Diagonal Gaussian parameterized by mean and log-variance.
#[derive(Debug, Clone)]
pub struct DiagonalGaussian {
    pub mu: Tensor,
    pub log_var: Tensor,
}

impl DiagonalGaussian {
    pub fn new(mu: Tensor, log_var: Tensor) -> Result<Self> {
        if mu.shape() != log_var.shape() {
            return Err(Error::shape("DiagonalGaussian", mu.shape(), log_var.shape()));
        }
        Ok(Self { mu, log_var })
    }

    pub fn dim(&self) -> usize {
        *self.mu.shape().last().unwrap_or(&1)
    }

    pub fn variance(&self) -> Tensor {
        self.log_var.exp()
    }

    /// Detached copy, for consumers that must not push gradients back into
    /// the encoder that produced it.
    pub fn detach(&self) -> Self {
        Self {
            mu: self.mu.detach(),
            log_var: self.log_var.detach(),
        }
    }
}

/// Unnormalized class scores; `softmax(logits)` is the categorical.
#[derive(Debug, Clone)]
pub struct CategoricalLogits {
    pub logits: Tensor,
}

impl CategoricalLogits {
    pub fn new(logits: Tensor) -> Self {
        Self { logits }
    }

    pub fn probs(&self) -> Result<Tensor> {
        self.logits.softmax()
    }

    pub fn log_probs(&self) -> Result<Tensor> {
        self.logits.log_softmax()
    }
}

/// `mu + exp(log_var / 2) * noise`, differentiable in `mu` and `log_var`.
pub fn sample_gaussian(g: &DiagonalGaussian, noise: &Tensor) -> Result<Tensor> {
    if noise.shape() != g.mu.shape() {
        return Err(Error::shape("sample_gaussian", g.mu.shape(), noise.shape()));
    }
    let std = g.log_var.scale(0.5).exp();
    g.mu.add(&std.mul(noise)?)
}

/// Closed-form `KL(q || N(mu_y, exp(log_var_y)))`, summed over the last axis.
///
/// Rank-1 inputs give a scalar; `[B, J]` inputs give one value per row.
/// Differentiable in all four arguments.
pub fn kl_gaussian_to_component(
    q: &DiagonalGaussian,
    mu_y: &Tensor,
    log_var_y: &Tensor,
) -> Result<Tensor> {
    if mu_y.shape() != log_var_y.shape() {
        return Err(Error::shape("kl_gaussian_to_component", mu_y.shape(), log_var_y.shape()));
    }
    if q.mu.shape().last() != mu_y.shape().last() {
        return Err(Error::shape("kl_gaussian_to_component", q.mu.shape(), mu_y.shape()));
    }
    let diff = q.log_var.sub(log_var_y)?; // log(s2_q / s2_y)
    let inv_var_y = log_var_y.neg().exp();
    let mahal = q.mu.sub(mu_y)?.square().mul(&inv_var_y)?;
    let per_dim = diff.exp().sub(&diff)?.add(&mahal)?.add_scalar(-1.0).scale(0.5);
    per_dim.sum(Some(per_dim.rank() - 1))
}

/// Output of one Gumbel-softmax draw.
#[derive(Debug, Clone)]
pub struct GumbelSample {
    /// Relaxed sample, rows on the simplex.
    pub soft: Tensor,
    /// Argmax of each row of `soft`.
    pub hard: Vec<usize>,
}

impl GumbelSample {
    /// First (or only) row's discrete choice.
    pub fn hard_index(&self) -> usize {
        self.hard[0]
    }

    /// One-hot rows of `hard`, as a constant.
    pub fn one_hot(&self) -> Tensor {
        let k = *self.soft.shape().last().unwrap();
        let mut data = vec![0.0; self.soft.numel()];
        for (r, &c) in self.hard.iter().enumerate() {
            data[r * k + c] = 1.0;
        }
        Tensor::new(data, self.soft.shape()).expect("same shape as soft")
    }

    /// Discrete one-hot forward value whose gradient is that of `soft`.
    pub fn straight_through(&self) -> Result<Tensor> {
        self.one_hot().add(&self.soft.sub(&self.soft.detach())?)
    }
}

/// Relaxed categorical sample at temperature `tau` with caller-supplied
/// standard Gumbel noise.
pub fn sample_gumbel_softmax(
    c: &CategoricalLogits,
    tau: f64,
    gumbel_noise: &Tensor,
) -> Result<GumbelSample> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::param("tau", format!("must be positive, got {tau}")));
    }
    if gumbel_noise.shape() != c.logits.shape() || c.logits.rank() == 0 {
        return Err(Error::shape("sample_gumbel_softmax", c.logits.shape(), gumbel_noise.shape()));
    }
    let soft = c.logits.add(gumbel_noise)?.scale(1.0 / tau).softmax()?;
    let k = *soft.shape().last().unwrap();
    let hard = soft
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect();
    Ok(GumbelSample { soft, hard })
}

fn check_simplex(name: &'static str, t: &Tensor) -> Result<()> {
    let k = *t.shape().last().unwrap();
    for (r, row) in t.data().chunks(k).enumerate() {
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain {
                op: "kl_categorical",
                detail: format!("{name} row {r} has a negative or non-finite entry"),
            });
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Domain {
                op: "kl_categorical",
                detail: format!("{name} row {r} sums to {s}"),
            });
        }
    }
    Ok(())
}

/// `sum_k q_k ln(q_k / p_k)` over the last axis, with `0 ln 0 = 0`.
///
/// Both arguments must be probability vectors. A zero in `p` where `q` is
/// positive is a domain error. At `q_k = 0` the gradient in `q_k` is taken
/// as zero.
pub fn kl_categorical(q_probs: &Tensor, p_probs: &Tensor) -> Result<Tensor> {
    if q_probs.shape() != p_probs.shape() || !(1..=2).contains(&q_probs.rank()) {
        return Err(Error::shape("kl_categorical", q_probs.shape(), p_probs.shape()));
    }
    check_simplex("q", q_probs)?;
    check_simplex("p", p_probs)?;
    let k = *q_probs.shape().last().unwrap();
    let mut out = Vec::new();
    for (r, (qr, pr)) in q_probs.data().chunks(k).zip(p_probs.data().chunks(k)).enumerate() {
        let mut s = 0.0;
        for (i, (&q, &p)) in qr.iter().zip(pr).enumerate() {
            if q > 0.0 {
                if p == 0.0 {
                    return Err(Error::Domain {
                        op: "kl_categorical",
                        detail: format!("row {r} class {i}: q > 0 where p = 0"),
                    });
                }
                s += q * (q / p).ln();
            }
        }
        out.push(s);
    }
    let shape = q_probs.shape()[..q_probs.rank() - 1].to_vec();
    let q = Rc::new(q_probs.to_vec());
    let p = Rc::new(p_probs.to_vec());
    Tensor::record(&[q_probs, p_probs], shape, out, move |g, need| {
        let mut gq = need[0].then(|| vec![0.0; q.len()]);
        let mut gp = need[1].then(|| vec![0.0; p.len()]);
        for (i, (&qi, &pi)) in q.iter().zip(p.iter()).enumerate() {
            if qi == 0.0 {
                continue;
            }
            let up = g[i / k];
            if let Some(gq) = gq.as_mut() {
                gq[i] = up * ((qi / pi).ln() + 1.0);
            }
            if let Some(gp) = gp.as_mut() {
                gp[i] = -up * qi / pi;
            }
        }
        vec![gq, gp]
    })
}

/// `KL(softmax(q_logits) || exp(p_log_probs))` per row, computed in log
/// space. `p_log_probs` may be a `[K]` vector shared across rows.
pub fn kl_categorical_logits(q_logits: &Tensor, p_log_probs: &Tensor) -> Result<Tensor> {
    let log_q = q_logits.log_softmax()?;
    let terms = log_q.exp().mul(&log_q.sub(p_log_probs)?)?;
    terms.sum(Some(terms.rank() - 1))
}
