use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{contract, Result};
use crate::params::ParamRefs;
use crate::tensor::{Real, Tape, Tensor, Var};

/// Linear (optionally two-layer) projection from encoder frames to
/// `vocab + 1` logits. Blank is index `vocab`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderHead<S> {
    vocab: usize,
    hidden: Option<(Arc<Tensor<S>>, Arc<Tensor<S>>)>,
    proj: Arc<Tensor<S>>,
    bias: Arc<Tensor<S>>,
}

pub struct HeadVars {
    hidden: Option<(Var, Var)>,
    proj: Var,
    bias: Var,
}

impl HeadVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = Vec::with_capacity(4);
        if let Some((w, b)) = self.hidden {
            v.extend([w, b]);
        }
        v.extend([self.proj, self.bias]);
        v
    }

    /// `[T, d]` frames to `[T, vocab + 1]` logits.
    pub fn logits<S: Real>(&self, tape: &mut Tape<S>, frames: Var) -> Result<Var> {
        let mut x = frames;
        if let Some((w, b)) = self.hidden {
            let h = tape.matmul(x, w)?;
            let h = tape.add_row(h, b)?;
            x = tape.gelu(h)?;
        }
        let y = tape.matmul(x, self.proj)?;
        tape.add_row(y, self.bias)
    }
}

impl<S: Real> DecoderHead<S> {
    /// Random init: weights ~ N(0, 1/fan_in), zero biases. `hidden_dim`
    /// enables the two-layer variant.
    pub fn new(d_model: usize, vocab: usize, hidden_dim: Option<usize>, rng: &mut impl Rng) -> Self {
        let mut dense = |fan_in: usize, fan_out: usize| {
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("valid std");
            let data = (0..fan_in * fan_out).map(|_| S::lit(normal.sample(rng))).collect();
            Arc::new(Tensor::matrix(fan_in, fan_out, data).expect("shape"))
        };
        let hidden = hidden_dim.map(|h| (dense(d_model, h), Arc::new(Tensor::zeros(&[1, h]))));
        let proj_in = hidden_dim.unwrap_or(d_model);
        let proj = dense(proj_in, vocab + 1);
        DecoderHead {
            vocab,
            hidden,
            proj,
            bias: Arc::new(Tensor::zeros(&[1, vocab + 1])),
        }
    }

    pub fn from_parts(
        vocab: usize,
        hidden: Option<(Tensor<S>, Tensor<S>)>,
        proj: Tensor<S>,
        bias: Tensor<S>,
    ) -> Result<Self> {
        if proj.cols() != vocab + 1 || bias.shape() != [1, vocab + 1] {
            return Err(contract(format!(
                "head projection {:?} / bias {:?} do not match vocab {vocab} + blank",
                proj.shape(),
                bias.shape()
            )));
        }
        Ok(DecoderHead {
            vocab,
            hidden: hidden.map(|(w, b)| (Arc::new(w), Arc::new(b))),
            proj: Arc::new(proj),
            bias: Arc::new(bias),
        })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn blank(&self) -> usize {
        self.vocab
    }

    pub fn input_dim(&self) -> usize {
        match &self.hidden {
            Some((w, _)) => w.rows(),
            None => self.proj.rows(),
        }
    }

    pub fn hidden_dim(&self) -> Option<usize> {
        self.hidden.as_ref().map(|(w, _)| w.cols())
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> HeadVars {
        let mut leaf = |t: &Arc<Tensor<S>>| {
            if trainable {
                tape.param(Arc::clone(t))
            } else {
                tape.constant(Arc::clone(t))
            }
        };
        let hidden = self.hidden.as_ref().map(|(w, b)| (leaf(w), leaf(b)));
        HeadVars {
            hidden,
            proj: leaf(&self.proj),
            bias: leaf(&self.bias),
        }
    }

    /// Logits for a frame block without recording gradients.
    pub fn apply(&self, frames: &Tensor<S>) -> Result<Tensor<S>> {
        let mut tape = Tape::inference();
        let vars = self.bind(&mut tape, false);
        let x = tape.constant(frames.clone());
        let y = vars.logits(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }
}

impl<S: Real> ParamRefs<S> for DecoderHead<S> {
    fn params(&self) -> Vec<(String, &Arc<Tensor<S>>)> {
        let mut v = Vec::new();
        if let Some((w, b)) = &self.hidden {
            v.push(("head.hidden.weight".to_string(), w));
            v.push(("head.hidden.bias".to_string(), b));
        }
        v.push(("head.proj.weight".to_string(), &self.proj));
        v.push(("head.proj.bias".to_string(), &self.bias));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Arc<Tensor<S>>)> {
        let mut v = Vec::new();
        if let Some((w, b)) = &mut self.hidden {
            v.push(("head.hidden.weight".to_string(), w));
            v.push(("head.hidden.bias".to_string(), b));
        }
        v.push(("head.proj.weight".to_string(), &mut self.proj));
        v.push(("head.proj.bias".to_string(), &mut self.bias));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_and_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = DecoderHead::<f32>::new(64, 12, None, &mut rng);
        assert_eq!(head.blank(), 12);
        assert_eq!(head.parameter_count(), 64 * 13 + 13);
        let two = DecoderHead::<f32>::new(64, 12, Some(32), &mut rng);
        assert_eq!(two.parameter_count(), 64 * 32 + 32 + 32 * 13 + 13);
        let logits = two.apply(&Tensor::zeros(&[5, 64])).unwrap();
        assert_eq!(logits.shape(), &[5, 13]);
    }

    #[test]
    fn bind_order_matches_param_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let head = DecoderHead::<f64>::new(4, 3, Some(5), &mut rng);
        let mut tape = Tape::new();
        let vars = head.bind(&mut tape, true);
        for (v, (_, t)) in vars.all().into_iter().zip(head.params()) {
            assert_eq!(tape.value(v), t.as_ref());
        }
    }
}
