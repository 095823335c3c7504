//! AdamW with decoupled weight decay restricted to a configurable group.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamGroup {
    pub name: &'static str,
    pub layer_norm: bool,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParamLayout {
    pub groups: Vec<ParamGroup>,
}

impl ParamLayout {
    pub fn push(&mut self, name: &'static str, layer_norm: bool, len: usize) -> usize {
        let offset = self.total();
        self.groups.push(ParamGroup {
            name,
            layer_norm,
            offset,
            len,
        });
        offset
    }

    pub fn total(&self) -> usize {
        self.groups.last().map_or(0, |g| g.offset + g.len)
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }
}

/// Which parameter groups receive weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayGroup {
    /// Only layer-normalization gains and biases.
    #[default]
    LayerNorm,
    /// Everything except layer normalization.
    NonLayerNorm,
    All,
    None,
}

impl DecayGroup {
    fn applies(self, group: &ParamGroup) -> bool {
        match self {
            DecayGroup::LayerNorm => group.layer_norm,
            DecayGroup::NonLayerNorm => !group.layer_norm,
            DecayGroup::All => true,
            DecayGroup::None => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_group: DecayGroup,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            decay_group: DecayGroup::LayerNorm,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of `params` in place. Fails without touching anything if a
    /// gradient entry is non-finite.
    pub fn step(&mut self, layout: &ParamLayout, params: &mut [f64], grads: &[f64]) -> Result<()> {
        let n = layout.total();
        if params.len() != n || grads.len() != n {
            return Err(Error::Backend(format!(
                "parameter/gradient length mismatch: layout {n}, params {}, grads {}",
                params.len(),
                grads.len()
            )));
        }
        for g in &layout.groups {
            if grads[g.offset..g.offset + g.len].iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    group: g.name.to_string(),
                });
            }
        }
        if self.m.len() != n {
            self.m = vec![0.0; n];
            self.v = vec![0.0; n];
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for g in &layout.groups {
            let decay = if c.decay_group.applies(g) {
                c.weight_decay
            } else {
                0.0
            };
            for i in g.offset..g.offset + g.len {
                params[i] *= 1.0 - c.lr * decay;
                self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grads[i];
                self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grads[i] * grads[i];
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                params[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
