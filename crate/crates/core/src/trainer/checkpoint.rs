use std::path::Path;

use crate::container::Container;
use crate::data::FeatureScaler;
use crate::error::{Error, Result};
use crate::networks::{Activation, DiscriminatorMode, ModelBundle, NetworkConfig};

use super::AdamState;

const MAGIC: [u8; 8] = *b"AVDACKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A bundle with its optimizer states and the digest of the config that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub bundle: ModelBundle,
    /// Named optimizer states, e.g. `source`, `discriminator`, `target`.
    pub adam: Vec<(String, AdamState)>,
    pub config_digest: [u8; 32],
}

fn network_meta(c: &NetworkConfig) -> Vec<f64> {
    let mut v = vec![
        c.input_dim as f64,
        c.classes as f64,
        c.latent_dim as f64,
        match c.activation {
            Activation::Tanh => 0.0,
            Activation::Relu => 1.0,
        },
        match c.discriminator {
            DiscriminatorMode::ClassConditional => 0.0,
            DiscriminatorMode::Binary => 1.0,
        },
    ];
    v.extend(c.hidden.iter().map(|&h| h as f64));
    v
}

fn parse_network_meta(v: &[f64]) -> Result<NetworkConfig> {
    let bad = || Error::Corrupt("malformed network metadata".into());
    if v.len() < 6 || v.iter().any(|x| x.fract() != 0.0 || *x < 0.0) {
        return Err(bad());
    }
    Ok(NetworkConfig {
        input_dim: v[0] as usize,
        classes: v[1] as usize,
        latent_dim: v[2] as usize,
        activation: match v[3] as u8 {
            0 => Activation::Tanh,
            1 => Activation::Relu,
            _ => return Err(bad()),
        },
        discriminator: match v[4] as u8 {
            0 => DiscriminatorMode::ClassConditional,
            1 => DiscriminatorMode::Binary,
            _ => return Err(bad()),
        },
        hidden: v[5..].iter().map(|&h| h as usize).collect(),
    })
}

impl Checkpoint {
    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new(MAGIC, CHECKPOINT_VERSION, self.config_digest);
        let meta = network_meta(&self.bundle.config);
        c.push("meta.network", &[meta.len()], meta)?;
        for p in self.bundle.all_params() {
            c.blobs.push(p.clone());
        }
        let s = &self.bundle.scaler;
        c.push("scaler.lo", &[s.lo.len()], s.lo.clone())?;
        c.push("scaler.hi", &[s.hi.len()], s.hi.clone())?;
        for (name, a) in &self.adam {
            c.push(
                format!("adam.{name}.hyper"),
                &[5],
                vec![a.learning_rate, a.beta1, a.beta2, a.epsilon, a.step as f64],
            )?;
            for (param, (m, v)) in &a.moments {
                c.push(format!("adam.{name}.m.{param}"), &[m.len()], m.clone())?;
                c.push(format!("adam.{name}.v.{param}"), &[v.len()], v.clone())?;
            }
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let config = parse_network_meta(&c.require("meta.network")?.data)?;
        let mut bundle = ModelBundle::zeros(config, 1.0, 1.0)?;
        for group in crate::networks::ParamGroup::ALL {
            for p in bundle.params_mut(group) {
                let b = c.require(&p.name)?;
                if b.shape != p.shape {
                    return Err(Error::Corrupt(format!("blob `{}` has shape {:?}, expected {:?}", p.name, b.shape, p.shape)));
                }
                p.data.clone_from(&b.data);
            }
        }
        let lo = c.require("scaler.lo")?.data.clone();
        let hi = c.require("scaler.hi")?.data.clone();
        if lo.len() != bundle.config.input_dim || hi.len() != lo.len() {
            return Err(Error::Corrupt("scaler width does not match the network input".into()));
        }
        bundle.scaler = FeatureScaler { lo, hi };
        let mut adam = Vec::new();
        for blob in &c.blobs {
            let Some(name) = blob.name.strip_prefix("adam.").and_then(|n| n.strip_suffix(".hyper")) else {
                continue;
            };
            let h = &blob.data;
            if h.len() != 5 {
                return Err(Error::Corrupt(format!("optimizer `{name}` header")));
            }
            let mut state = AdamState::new(h[0], h[1], h[2], h[3]);
            state.step = h[4] as u64;
            let m_prefix = format!("adam.{name}.m.");
            for m in c.blobs.iter().filter(|b| b.name.starts_with(&m_prefix)) {
                let param = &m.name[m_prefix.len()..];
                let v = c.require(&format!("adam.{name}.v.{param}"))?;
                state.moments.insert(param.to_string(), (m.data.clone(), v.data.clone()));
            }
            adam.push((name.to_string(), state));
        }
        Ok(Self {
            bundle,
            adam,
            config_digest: c.digest,
        })
    }
}

pub fn checkpoint_save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.to_container()?.write(path)
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::Missing(format!("checkpoint {}", path.display())));
    }
    Checkpoint::from_container(&Container::read(path, MAGIC, CHECKPOINT_VERSION)?)
}
