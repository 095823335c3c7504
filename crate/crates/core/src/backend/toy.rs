//! Reference masked LM small enough to verify exhaustively.
//!
//! For a query position `q` over tokens `t_0..t_{n-1}`:
//!
//! ```text
//! x      = mean_i E[t_i] + P[q]
//! z      = LayerNorm(x; gain, bias)
//! h      = tanh(W1 z + b1)
//! logits = W2 h + b2
//! ```
//!
//! The bag of token embeddings is shared by every position; the position
//! embedding of the query slot is what lets two masks in one input (the
//! fluency and diagnosis slots) produce different predictions.

use std::sync::Arc;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::optim::{AdamW, ParamLayout};
use super::tokenizer::{Tokenizer, WordPieceTokenizer};
use super::{BackendDescriptor, EmbeddingVector, MaskedLm, Pooling};
use crate::error::{Error, Result};
use crate::rng;

pub const MAX_TOY_VOCAB: usize = 64;
const LN_EPS: f64 = 1e-5;

/// Learning rate at which the reference model fits a small corpus within
/// ten epochs; the 1e-5 default is tuned for pre-trained transformers.
pub const TOY_LEARNING_RATE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub dim: usize,
    pub hidden: usize,
    pub max_len: usize,
    pub pooling: Pooling,
    /// Standard deviation of the token embedding initialization.
    pub init_scale: f64,
    pub position_init_scale: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            dim: 16,
            hidden: 32,
            max_len: super::PLM_MAX_LEN,
            pooling: Pooling::Begin,
            init_scale: 0.5,
            position_init_scale: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
struct Offsets {
    embed: usize,
    pos: usize,
    gain: usize,
    bias: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Intermediate values at one query position, kept for the backward pass.
struct Activations {
    xhat: Vec<f64>,
    inv_std: f64,
    z: Vec<f64>,
    h: Vec<f64>,
}

pub struct ToyMlm {
    descriptor: BackendDescriptor,
    tokenizer: Arc<WordPieceTokenizer>,
    config: ToyConfig,
    layout: ParamLayout,
    off: Offsets,
    params: Vec<f64>,
    grads: Vec<f64>,
}

impl ToyMlm {
    /// Parameters are drawn from a stream keyed by `seed`.
    pub fn new(
        name: &str,
        tokenizer: Arc<WordPieceTokenizer>,
        config: ToyConfig,
        seed: u64,
    ) -> Result<Self> {
        let vocab = tokenizer.vocab_size();
        if vocab > MAX_TOY_VOCAB {
            return Err(Error::Backend(format!(
                "toy backend vocabulary {vocab} exceeds {MAX_TOY_VOCAB}"
            )));
        }
        if config.dim < 2 || config.hidden == 0 {
            return Err(Error::Backend("toy backend needs dim >= 2 and hidden >= 1".into()));
        }
        let descriptor = BackendDescriptor {
            name: name.to_string(),
            vocab_size: vocab,
            max_len: config.max_len,
            mask_token_id: tokenizer
                .mask_id()
                .ok_or_else(|| Error::Backend("tokenizer has no mask token".into()))?,
            supports_training: true,
        };
        descriptor.validate()?;

        let (d, h) = (config.dim, config.hidden);
        let mut layout = ParamLayout::default();
        let off = Offsets {
            embed: layout.push("token_embedding", false, vocab * d),
            pos: layout.push("position_embedding", false, config.max_len * d),
            gain: layout.push("layer_norm_gain", true, d),
            bias: layout.push("layer_norm_bias", true, d),
            w1: layout.push("hidden_weight", false, h * d),
            b1: layout.push("hidden_bias", false, h),
            w2: layout.push("output_weight", false, vocab * h),
            b2: layout.push("output_bias", false, vocab),
        };

        let mut params = vec![0.0; layout.total()];
        let mut rng = rng::stream(seed, "toy-init", 0);
        let mut fill = |range: std::ops::Range<usize>, std: f64| {
            let normal = Normal::new(0.0, std).expect("positive std");
            for p in &mut params[range] {
                *p = normal.sample(&mut rng);
            }
        };
        let s = config.init_scale;
        fill(off.embed..off.pos, s);
        fill(off.pos..off.gain, config.position_init_scale);
        fill(off.w1..off.b1, 1.0 / (d as f64).sqrt());
        fill(off.w2..off.b2, 1.0 / (h as f64).sqrt());
        params[off.gain..off.bias].fill(1.0);

        let grads = vec![0.0; params.len()];
        Ok(ToyMlm {
            descriptor,
            tokenizer,
            config,
            layout,
            off,
            params,
            grads,
        })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn gradient(&self) -> &[f64] {
        &self.grads
    }

    pub fn shared_tokenizer(&self) -> Arc<WordPieceTokenizer> {
        Arc::clone(&self.tokenizer)
    }

    fn bag(&self, tokens: &[u32]) -> Vec<f64> {
        let d = self.config.dim;
        let mut bag = vec![0.0; d];
        for &t in tokens {
            let row = self.off.embed + t as usize * d;
            for (b, e) in bag.iter_mut().zip(&self.params[row..row + d]) {
                *b += e;
            }
        }
        let n = tokens.len() as f64;
        bag.iter_mut().for_each(|b| *b /= n);
        bag
    }

    fn activations(&self, bag: &[f64], q: usize) -> Activations {
        let (d, hdim) = (self.config.dim, self.config.hidden);
        let p = &self.params;
        let prow = self.off.pos + q * d;
        let x: Vec<f64> = bag.iter().zip(&p[prow..prow + d]).map(|(b, e)| b + e).collect();
        let mean = x.iter().sum::<f64>() / d as f64;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv_std = 1.0 / (var + LN_EPS).sqrt();
        let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * inv_std).collect();
        let z: Vec<f64> = (0..d)
            .map(|k| p[self.off.gain + k] * xhat[k] + p[self.off.bias + k])
            .collect();
        let h = (0..hdim)
            .map(|j| {
                let row = &p[self.off.w1 + j * d..self.off.w1 + (j + 1) * d];
                let a: f64 = row.iter().zip(&z).map(|(w, zk)| w * zk).sum::<f64>()
                    + p[self.off.b1 + j];
                a.tanh()
            })
            .collect();
        Activations { xhat, inv_std, z, h }
    }

    fn output(&self, h: &[f64]) -> Vec<f64> {
        let hdim = self.config.hidden;
        let p = &self.params;
        (0..self.descriptor.vocab_size)
            .map(|v| {
                let row = &p[self.off.w2 + v * hdim..self.off.w2 + (v + 1) * hdim];
                row.iter().zip(h).map(|(w, hj)| w * hj).sum::<f64>() + p[self.off.b2 + v]
            })
            .collect()
    }

    fn check_positions(&self, tokens: &[u32], positions: &[usize]) -> Result<()> {
        self.descriptor.check_tokens(tokens)?;
        if let Some(&p) = positions.iter().find(|&&p| p >= tokens.len()) {
            return Err(Error::invalid(format!(
                "position {p} outside input of length {}",
                tokens.len()
            )));
        }
        Ok(())
    }
}

impl MaskedLm for ToyMlm {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        self.tokenizer.as_ref()
    }

    fn logits(&self, tokens: &[u32], positions: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_positions(tokens, positions)?;
        let bag = self.bag(tokens);
        Ok(positions
            .iter()
            .map(|&q| self.output(&self.activations(&bag, q).h))
            .collect())
    }

    fn accumulate_gradient(
        &mut self,
        tokens: &[u32],
        positions: &[usize],
        logit_grads: &[Vec<f64>],
    ) -> Result<()> {
        self.check_positions(tokens, positions)?;
        if logit_grads.len() != positions.len()
            || logit_grads.iter().any(|g| g.len() != self.descriptor.vocab_size)
        {
            return Err(Error::invalid("logit gradient shape mismatch"));
        }
        let (d, hdim, vocab) = (self.config.dim, self.config.hidden, self.descriptor.vocab_size);
        let off = self.off.clone();
        let bag = self.bag(tokens);
        let mut dbag = vec![0.0; d];

        for (&q, dlogits) in positions.iter().zip(logit_grads) {
            let act = self.activations(&bag, q);
            let p = &self.params;
            let g = &mut self.grads;

            let mut dh = vec![0.0; hdim];
            for v in 0..vocab {
                let dl = dlogits[v];
                if dl == 0.0 {
                    continue;
                }
                g[off.b2 + v] += dl;
                let row = off.w2 + v * hdim;
                for j in 0..hdim {
                    g[row + j] += dl * act.h[j];
                    dh[j] += dl * p[row + j];
                }
            }

            let mut dz = vec![0.0; d];
            for j in 0..hdim {
                let da = dh[j] * (1.0 - act.h[j] * act.h[j]);
                g[off.b1 + j] += da;
                let row = off.w1 + j * d;
                for k in 0..d {
                    g[row + k] += da * act.z[k];
                    dz[k] += da * p[row + k];
                }
            }

            let mut dxhat = vec![0.0; d];
            for k in 0..d {
                g[off.gain + k] += dz[k] * act.xhat[k];
                g[off.bias + k] += dz[k];
                dxhat[k] = dz[k] * p[off.gain + k];
            }

            let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
            let mean_dxhat_xhat =
                dxhat.iter().zip(&act.xhat).map(|(a, b)| a * b).sum::<f64>() / d as f64;
            let prow = off.pos + q * d;
            for k in 0..d {
                let dx = act.inv_std * (dxhat[k] - mean_dxhat - act.xhat[k] * mean_dxhat_xhat);
                g[prow + k] += dx;
                dbag[k] += dx;
            }
        }

        let n = tokens.len() as f64;
        for &t in tokens {
            let row = off.embed + t as usize * d;
            for (g, db) in self.grads[row..row + d].iter_mut().zip(&dbag) {
                *g += db / n;
            }
        }
        Ok(())
    }

    fn embed(&self, tokens: &[u32]) -> Result<EmbeddingVector> {
        self.descriptor.check_tokens(tokens)?;
        let bag = self.bag(tokens);
        let h = match self.config.pooling {
            Pooling::Begin => self.activations(&bag, 0).h,
            Pooling::Mean => {
                let mut acc = vec![0.0; self.config.hidden];
                for q in 0..tokens.len() {
                    for (a, v) in acc.iter_mut().zip(self.activations(&bag, q).h) {
                        *a += v;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= tokens.len() as f64);
                acc
            }
        };
        Ok(EmbeddingVector(h))
    }

    fn step(&mut self, optimizer: &mut AdamW) -> Result<()> {
        optimizer.step(&self.layout, &mut self.params, &self.grads)?;
        self.zero_grad();
        Ok(())
    }

    fn zero_grad(&mut self) {
        self.grads.fill(0.0);
    }

    fn parameters(&self) -> &[f64] {
        &self.params
    }

    fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Backend(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn layout(&self) -> &ParamLayout {
        &self.layout
    }
}

/// Builds toy backends sharing one tokenizer; the initialization stream is
/// keyed by both the run seed and the PLM name, so differently named
/// "PLMs" start from different parameters.
#[derive(Clone)]
pub struct ToyFactory {
    pub tokenizer: Arc<WordPieceTokenizer>,
    pub config: ToyConfig,
}

impl ToyFactory {
    pub fn new(tokenizer: WordPieceTokenizer, config: ToyConfig) -> Self {
        ToyFactory {
            tokenizer: Arc::new(tokenizer),
            config,
        }
    }
}

impl crate::trainer::BackendFactory for ToyFactory {
    fn build(&self, plm: &str, seed: u64) -> Result<Box<dyn MaskedLm>> {
        let init = rng::derive_seed(seed, plm, 0);
        Ok(Box::new(ToyMlm::new(
            plm,
            Arc::clone(&self.tokenizer),
            self.config,
            init,
        )?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64) -> ToyMlm {
        let tok = Arc::new(WordPieceTokenizer::new(["a", "b", "c"]));
        let cfg = ToyConfig {
            dim: 2,
            hidden: 1,
            max_len: 8,
            ..ToyConfig::default()
        };
        ToyMlm::new("tiny", tok, cfg, seed).unwrap()
    }

    #[test]
    fn forward_matches_closed_form() {
        let mut m = tiny(0);
        // hand-set parameters: E[t] = (t, 0), P = 0, gain 1, bias 0,
        // W1 = (1, 0), b1 = 0, W2[v] = v, b2 = 0
        let mut p = vec![0.0; m.layout().total()];
        for t in 0..7 {
            p[m.off.embed + t * 2] = t as f64;
        }
        p[m.off.gain] = 1.0;
        p[m.off.gain + 1] = 1.0;
        p[m.off.w1] = 1.0;
        for v in 0..7 {
            p[m.off.w2 + v] = v as f64;
        }
        m.set_parameters(&p).unwrap();
        // tokens [CLS]=1, a=4, [MASK]=3: bag = (8/3, 0); LN of a 2-vector (s, 0)
        // gives xhat = (+1, -1) * s/sqrt(s^2 + 4 eps) since var = s^2/4
        let s: f64 = 8.0 / 3.0;
        let xhat0 = (s / 2.0) / ((s * s / 4.0) + LN_EPS).sqrt();
        let h = xhat0.tanh();
        let logits = m.logits(&[1, 4, 3], &[2]).unwrap();
        for (v, l) in logits[0].iter().enumerate() {
            assert!((l - v as f64 * h).abs() < 1e-12);
        }
    }

    #[test]
    fn arity_and_preconditions() {
        let m = tiny(1);
        assert_eq!(m.logits(&[1, 3, 3, 2], &[1, 2]).unwrap().len(), 2);
        assert!(matches!(
            m.logits(&[1; 9], &[0]),
            Err(Error::InputTooLong { len: 9, max_len: 8 })
        ));
        assert!(matches!(m.logits(&[1, 99], &[0]), Err(Error::OutOfVocab { id: 99, .. })));
        assert!(m.embed(&[]).is_err());
    }

    #[test]
    fn embeddings_are_deterministic_and_token_sensitive() {
        let m = tiny(2);
        assert_eq!(m.embed(&[1, 4, 2]).unwrap(), m.embed(&[1, 4, 2]).unwrap());
        assert_ne!(m.embed(&[1, 4, 2]).unwrap(), m.embed(&[1, 5, 2]).unwrap());
    }

    #[test]
    fn vocabulary_cap() {
        let words: Vec<String> = (0..70).map(|i| format!("w{i}")).collect();
        let tok = Arc::new(WordPieceTokenizer::new(&words));
        assert!(ToyMlm::new("big", tok, ToyConfig::default(), 0).is_err());
    }
}
