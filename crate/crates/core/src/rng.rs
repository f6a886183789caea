//! Seeded random streams, one per purpose.
//!
//! Every stream is a ChaCha8 generator keyed by the run seed and a fixed
//! stream number, so turning an ablation on or off only perturbs the
//! randomness it actually consumes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 0,
    Shuffle = 1,
    Gaussian = 2,
    Gumbel = 3,
    Split = 4,
    Data = 5,
    Labeled = 6,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// splitmix64 finalizer; used to derive child seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Noise consumed by the reparameterized losses.
#[derive(Debug, Clone)]
pub struct NoiseStreams {
    pub gaussian: ChaCha8Rng,
    pub gumbel: ChaCha8Rng,
}

impl NoiseStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            gaussian: stream(seed, Stream::Gaussian),
            gumbel: stream(seed, Stream::Gumbel),
        }
    }

    pub fn standard_normal(&mut self, shape: &[usize]) -> Result<Tensor> {
        standard_normal(&mut self.gaussian, shape)
    }

    pub fn gumbel(&mut self, shape: &[usize]) -> Result<Tensor> {
        gumbel(&mut self.gumbel, shape)
    }
}

pub fn standard_normal(rng: &mut impl Rng, shape: &[usize]) -> Result<Tensor> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(data, shape)
}

/// Standard Gumbel draws, `-ln(-ln u)` with `u` in the open unit interval.
pub fn gumbel(rng: &mut impl Rng, shape: &[usize]) -> Result<Tensor> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
        .collect();
    Tensor::new(data, shape)
}
