//! Frozen pre-norm transformer encoder with soft prompts prepended to the
//! embedded frames.
//!
//! Layout of the latent sequence: rows `0..m` are prompt rows, rows
//! `m..m+T` are frames. Sinusoidal positions are added to frame rows only.
//! Prompts are inserted once, before the first block, and their hidden
//! states travel through every block. The decoder only ever sees the frame
//! block.

mod attention;
mod prompts;

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use attention::multi_head_attention;
pub use prompts::PromptMatrix;

use crate::error::{contract, Error, Result};
use crate::params::{content_hash, ParamRefs};
use crate::tensor::{Real, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub feature_dim: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            feature_dim: 40,
            d_model: 64,
            n_heads: 4,
            n_layers: 4,
            ffn_dim: 256,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.d_model == 0 || self.n_layers == 0 || self.ffn_dim == 0 {
            return Err(contract("encoder dimensions must be positive"));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(contract(format!(
                "n_heads = {} must divide d_model = {}",
                self.n_heads, self.d_model
            )));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block<S> {
    pub ln1_gain: Arc<Tensor<S>>,
    pub ln1_bias: Arc<Tensor<S>>,
    pub w_q: Arc<Tensor<S>>,
    pub w_k: Arc<Tensor<S>>,
    pub w_v: Arc<Tensor<S>>,
    pub w_o: Arc<Tensor<S>>,
    pub ln2_gain: Arc<Tensor<S>>,
    pub ln2_bias: Arc<Tensor<S>>,
    pub ff1_weight: Arc<Tensor<S>>,
    pub ff1_bias: Arc<Tensor<S>>,
    pub ff2_weight: Arc<Tensor<S>>,
    pub ff2_bias: Arc<Tensor<S>>,
}

const BLOCK_FIELDS: [&str; 12] = [
    "ln1.gain", "ln1.bias", "attn.w_q", "attn.w_k", "attn.w_v", "attn.w_o", "ln2.gain", "ln2.bias", "ffn.w1",
    "ffn.b1", "ffn.w2", "ffn.b2",
];

impl<S> Block<S> {
    fn fields(&self) -> [&Arc<Tensor<S>>; 12] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.w_o,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.ff1_weight,
            &self.ff1_bias,
            &self.ff2_weight,
            &self.ff2_bias,
        ]
    }

    fn fields_mut(&mut self) -> [&mut Arc<Tensor<S>>; 12] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.w_o,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.ff1_weight,
            &mut self.ff1_bias,
            &mut self.ff2_weight,
            &mut self.ff2_bias,
        ]
    }
}

/// Tape handles for one block's weights.
#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub ln1: (Var, Var),
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub ln2: (Var, Var),
    pub ff1: (Var, Var),
    pub ff2: (Var, Var),
}

#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub embed: (Var, Var),
    pub blocks: Vec<BlockVars>,
    pub final_ln: (Var, Var),
}

impl EncoderVars {
    /// Same order as [`ParamRefs::params`] on the model.
    pub fn all(&self) -> Vec<Var> {
        let mut v = vec![self.embed.0, self.embed.1];
        for b in &self.blocks {
            v.extend([
                b.ln1.0, b.ln1.1, b.w_q, b.w_k, b.w_v, b.w_o, b.ln2.0, b.ln2.1, b.ff1.0, b.ff1.1, b.ff2.0, b.ff2.1,
            ]);
        }
        v.extend([self.final_ln.0, self.final_ln.1]);
        v
    }
}

/// Recorded forward pass.
pub struct TapeForward {
    pub frames: Var,
    pub prompt_states: Option<Var>,
    /// `[layer][head]` attention maps over all `T + m` positions.
    pub attention: Vec<Vec<Var>>,
}

/// Forward result detached from any tape.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentOutput<S> {
    pub frames: Tensor<S>,
    pub prompt_states: Option<Tensor<S>>,
    pub attention: Option<Vec<Vec<Tensor<S>>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel<S> {
    config: EncoderConfig,
    embed_weight: Arc<Tensor<S>>,
    embed_bias: Arc<Tensor<S>>,
    blocks: Vec<Block<S>>,
    final_gain: Arc<Tensor<S>>,
    final_bias: Arc<Tensor<S>>,
    frozen: bool,
}

fn dense<S: Real>(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Arc<Tensor<S>> {
    let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("valid std");
    let data = (0..fan_in * fan_out).map(|_| S::lit(normal.sample(rng))).collect();
    Arc::new(Tensor::matrix(fan_in, fan_out, data).expect("shape"))
}

fn filled<S: Real>(n: usize, v: f64) -> Arc<Tensor<S>> {
    Arc::new(Tensor::full(&[1, n], S::lit(v)))
}

/// Sinusoidal position table for `t` frame rows.
pub fn sinusoidal_positions<S: Real>(t: usize, d: usize) -> Tensor<S> {
    let mut data = vec![S::zero(); t * d];
    for pos in 0..t {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d as f64);
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            data[pos * d + i] = S::lit(v);
        }
    }
    Tensor::matrix(t, d, data).expect("shape")
}

impl<S: Real> EncoderModel<S> {
    pub fn new(config: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let blocks = (0..config.n_layers)
            .map(|_| Block {
                ln1_gain: filled(d, 1.0),
                ln1_bias: filled(d, 0.0),
                w_q: dense(rng, d, d),
                w_k: dense(rng, d, d),
                w_v: dense(rng, d, d),
                w_o: dense(rng, d, d),
                ln2_gain: filled(d, 1.0),
                ln2_bias: filled(d, 0.0),
                ff1_weight: dense(rng, d, config.ffn_dim),
                ff1_bias: filled(config.ffn_dim, 0.0),
                ff2_weight: dense(rng, config.ffn_dim, d),
                ff2_bias: filled(d, 0.0),
            })
            .collect();
        Ok(EncoderModel {
            embed_weight: dense(rng, config.feature_dim, d),
            embed_bias: filled(d, 0.0),
            blocks,
            final_gain: filled(d, 1.0),
            final_bias: filled(d, 0.0),
            frozen: false,
            config,
        })
    }

    /// Rebuilds a model from named tensors in [`ParamRefs::params`] order.
    pub fn from_named(config: EncoderConfig, named: Vec<(String, Tensor<S>)>, frozen: bool) -> Result<Self> {
        config.validate()?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = Self::new(config, &mut rng)?;
        let expected: Vec<(String, Vec<usize>)> =
            model.params().iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
        if expected.len() != named.len() {
            return Err(contract(format!(
                "encoder expects {} tensors, got {}",
                expected.len(),
                named.len()
            )));
        }
        for ((slot_name, slot), (name, tensor)) in model.params_mut().into_iter().zip(named) {
            if slot_name != name {
                return Err(contract(format!("expected tensor `{slot_name}`, found `{name}`")));
            }
            if slot.shape() != tensor.shape() {
                return Err(Error::Shape {
                    op: "encoder tensor",
                    lhs: slot.shape().to_vec(),
                    rhs: tensor.shape().to_vec(),
                });
            }
            *slot = Arc::new(tensor);
        }
        model.frozen = frozen;
        Ok(model)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Marks the weights immutable; afterwards `params_mut` yields nothing and
    /// `bind` never creates trainable leaves.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn frozen_hash(&self) -> String {
        content_hash(&self.params())
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> EncoderVars {
        let trainable = trainable && !self.frozen;
        let mut leaf = |t: &Arc<Tensor<S>>| {
            if trainable {
                tape.param(Arc::clone(t))
            } else {
                tape.constant(Arc::clone(t))
            }
        };
        let embed = (leaf(&self.embed_weight), leaf(&self.embed_bias));
        let blocks = self
            .blocks
            .iter()
            .map(|b| BlockVars {
                ln1: (leaf(&b.ln1_gain), leaf(&b.ln1_bias)),
                w_q: leaf(&b.w_q),
                w_k: leaf(&b.w_k),
                w_v: leaf(&b.w_v),
                w_o: leaf(&b.w_o),
                ln2: (leaf(&b.ln2_gain), leaf(&b.ln2_bias)),
                ff1: (leaf(&b.ff1_weight), leaf(&b.ff1_bias)),
                ff2: (leaf(&b.ff2_weight), leaf(&b.ff2_bias)),
            })
            .collect();
        let final_ln = (leaf(&self.final_gain), leaf(&self.final_bias));
        EncoderVars {
            embed,
            blocks,
            final_ln,
        }
    }

    /// Feature projection without positions: `[T, f] -> [T, d]`.
    pub fn embed(&self, features: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::inference();
        let x = tape.constant(features.clone());
        let w = tape.constant(Arc::clone(&self.embed_weight));
        let b = tape.constant(Arc::clone(&self.embed_bias));
        let h = tape.matmul(x, w)?;
        let h = tape.add_row(h, b)?;
        Ok(tape.value(h).clone())
    }

    /// Embeds frames, prepends `prompts` (if any) and runs every block.
    pub fn forward_tape(
        &self,
        tape: &mut Tape<S>,
        vars: &EncoderVars,
        features: &Tensor<S>,
        prompts: Option<Var>,
    ) -> Result<TapeForward> {
        if features.shape().len() != 2 || features.rows() == 0 {
            return Err(contract("utterance features must be a non-empty [T, f] matrix"));
        }
        if features.cols() != self.config.feature_dim {
            return Err(Error::Shape {
                op: "encoder input",
                lhs: features.shape().to_vec(),
                rhs: vec![self.config.feature_dim],
            });
        }
        let t_len = features.rows();
        let d = self.config.d_model;
        let x = tape.constant(features.clone());
        let h = tape.matmul(x, vars.embed.0)?;
        let h = tape.add_row(h, vars.embed.1)?;
        let pos = tape.constant(sinusoidal_positions::<S>(t_len, d));
        let frames = tape.add(h, pos)?;

        let m = match prompts {
            Some(p) => {
                let shape = tape.shape(p);
                if shape.len() != 2 || shape[1] != d {
                    return Err(Error::Shape {
                        op: "prepend_prompts",
                        lhs: shape.to_vec(),
                        rhs: vec![t_len, d],
                    });
                }
                shape[0]
            }
            None => 0,
        };
        let mut xp = match prompts {
            Some(p) => prepend_prompts(tape, frames, p)?,
            None => frames,
        };

        let mut attention = Vec::with_capacity(vars.blocks.len());
        for (layer, block) in vars.blocks.iter().enumerate() {
            let (next, maps) = encoder_block(tape, block, xp, self.config.n_heads).map_err(|e| match e {
                Error::NonFinite { op } => Error::Numerical { layer, op },
                other => other,
            })?;
            xp = next;
            attention.push(maps);
        }
        let out = tape.layer_norm(xp, vars.final_ln.0, vars.final_ln.1)?;
        let frames = tape.slice_rows(out, m, t_len)?;
        let prompt_states = if m > 0 { Some(tape.slice_rows(out, 0, m)?) } else { None };
        Ok(TapeForward {
            frames,
            prompt_states,
            attention,
        })
    }

    /// Inference forward with the full prompt matrix.
    pub fn forward(&self, features: &Tensor<S>, prompts: &PromptMatrix<S>) -> Result<LatentOutput<S>> {
        self.run(features, prompts, false)
    }

    /// Like [`forward`](Self::forward) but also returns every attention map.
    pub fn forward_with_attention(&self, features: &Tensor<S>, prompts: &PromptMatrix<S>) -> Result<LatentOutput<S>> {
        self.run(features, prompts, true)
    }

    /// Forward with only the `active` prompt rows (0-based); the others are
    /// removed from the sequence, not zeroed.
    pub fn forward_masked(
        &self,
        features: &Tensor<S>,
        prompts: &PromptMatrix<S>,
        active: &[usize],
    ) -> Result<LatentOutput<S>> {
        self.forward(features, &prompts.select(active)?)
    }

    fn run(&self, features: &Tensor<S>, prompts: &PromptMatrix<S>, keep_attention: bool) -> Result<LatentOutput<S>> {
        if prompts.m() > 0 && prompts.d() != self.config.d_model {
            return Err(Error::Shape {
                op: "prepend_prompts",
                lhs: vec![prompts.m(), prompts.d()],
                rhs: vec![features.rows(), self.config.d_model],
            });
        }
        let mut tape = Tape::inference();
        let vars = self.bind(&mut tape, false);
        let p = prompts.tensor().map(|t| tape.constant(Arc::clone(t)));
        let out = self.forward_tape(&mut tape, &vars, features, p)?;
        Ok(LatentOutput {
            frames: tape.value(out.frames).clone(),
            prompt_states: out.prompt_states.map(|v| tape.value(v).clone()),
            attention: keep_attention.then(|| {
                out.attention
                    .iter()
                    .map(|maps| maps.iter().map(|&v| tape.value(v).clone()).collect())
                    .collect()
            }),
        })
    }
}

/// `[P; X]`: prompt rows first, then frame rows.
pub fn prepend_prompts<S: Real>(tape: &mut Tape<S>, frames: Var, prompts: Var) -> Result<Var> {
    if tape.shape(frames)[1] != tape.shape(prompts)[1] {
        return Err(Error::Shape {
            op: "prepend_prompts",
            lhs: tape.shape(prompts).to_vec(),
            rhs: tape.shape(frames).to_vec(),
        });
    }
    tape.concat_rows(&[prompts, frames])
}

/// Attention sublayer: `x + MHA(LN1(x))`. Returns the per-head maps too.
pub fn attention_sublayer<S: Real>(tape: &mut Tape<S>, block: &BlockVars, x: Var, heads: usize) -> Result<(Var, Vec<Var>)> {
    let normed = tape.layer_norm(x, block.ln1.0, block.ln1.1)?;
    let (att, maps) = multi_head_attention(tape, normed, block.w_q, block.w_k, block.w_v, block.w_o, heads)?;
    Ok((tape.add(x, att)?, maps))
}

/// Feed-forward sublayer: `x + W2 GELU(W1 LN2(x) + b1) + b2`.
pub fn feed_forward_sublayer<S: Real>(tape: &mut Tape<S>, block: &BlockVars, x: Var) -> Result<Var> {
    let normed = tape.layer_norm(x, block.ln2.0, block.ln2.1)?;
    let h = tape.matmul(normed, block.ff1.0)?;
    let h = tape.add_row(h, block.ff1.1)?;
    let h = tape.gelu(h)?;
    let h = tape.matmul(h, block.ff2.0)?;
    let h = tape.add_row(h, block.ff2.1)?;
    tape.add(x, h)
}

pub fn encoder_block<S: Real>(tape: &mut Tape<S>, block: &BlockVars, x: Var, heads: usize) -> Result<(Var, Vec<Var>)> {
    let (x, maps) = attention_sublayer(tape, block, x, heads)?;
    Ok((feed_forward_sublayer(tape, block, x)?, maps))
}

impl<S: Real> ParamRefs<S> for EncoderModel<S> {
    fn params(&self) -> Vec<(String, &Arc<Tensor<S>>)> {
        let mut v = vec![
            ("encoder.embed.weight".to_string(), &self.embed_weight),
            ("encoder.embed.bias".to_string(), &self.embed_bias),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (field, t) in BLOCK_FIELDS.iter().zip(b.fields()) {
                v.push((format!("encoder.blocks.{i}.{field}"), t));
            }
        }
        v.push(("encoder.final_ln.gain".to_string(), &self.final_gain));
        v.push(("encoder.final_ln.bias".to_string(), &self.final_bias));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Arc<Tensor<S>>)> {
        if self.frozen {
            return Vec::new();
        }
        let mut v = vec![
            ("encoder.embed.weight".to_string(), &mut self.embed_weight),
            ("encoder.embed.bias".to_string(), &mut self.embed_bias),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (field, t) in BLOCK_FIELDS.iter().zip(b.fields_mut()) {
                v.push((format!("encoder.blocks.{i}.{field}"), t));
            }
        }
        v.push(("encoder.final_ln.gain".to_string(), &mut self.final_gain));
        v.push(("encoder.final_ln.bias".to_string(), &mut self.final_bias));
        v
    }
}
