use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

/// A named, owned parameter array. Lives outside any tape; bound onto a
/// fresh tape for each forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("Param::new", shape, &[data.len()]));
        }
        Ok(Self {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Tracked leaf when `tape` is given, constant otherwise.
    pub fn bind(&self, tape: Option<&Tape>) -> Tensor {
        match tape {
            Some(t) => t.leaf(self.data.clone(), &self.shape),
            None => Tensor::new(self.data.clone(), &self.shape),
        }
        .expect("param shape is validated at construction")
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// SHA-256 over names, shapes and exact bit patterns.
pub fn digest<'a>(params: impl IntoIterator<Item = &'a Param>) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.name.as_bytes());
        for d in &p.shape {
            h.update((*d as u64).to_le_bytes());
        }
        for v in &p.data {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize().into()
}
