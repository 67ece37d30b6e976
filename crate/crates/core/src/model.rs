//! A frozen encoder bundled with its prompts and decoder head, plus the
//! evaluation helpers shared by training, analysis and adaptation.

use std::sync::Arc;

use rayon::prelude::*;

use crate::decoder::{greedy_decode, DecoderHead, WerTally};
use crate::encoder::{EncoderModel, PromptMatrix};
use crate::error::Result;
use crate::params::{content_hash, ParamRefs};
use crate::synth::{NoiseFamily, Utterance};
use crate::tensor::{Real, Tensor};

/// An utterance converted to the run precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Example<S> {
    pub id: String,
    pub tokens: Vec<usize>,
    pub features: Tensor<S>,
    pub noise: Option<(NoiseFamily, usize)>,
}

impl<S: Real> Example<S> {
    pub fn from_utterance(u: &Utterance) -> Self {
        Example {
            id: u.id.clone(),
            tokens: u.tokens.clone(),
            features: u.features().cast(),
            noise: u.noise.as_ref().map(|m| (m.family, m.subtype)),
        }
    }

    /// The clean rendering, ignoring any mixed noise.
    pub fn clean_from_utterance(u: &Utterance) -> Self {
        Example {
            id: u.id.clone(),
            tokens: u.tokens.clone(),
            features: u.clean.cast(),
            noise: None,
        }
    }
}

pub fn examples<S: Real>(utts: &[Utterance]) -> Vec<Example<S>> {
    utts.iter().map(Example::from_utterance).collect()
}

pub fn clean_examples<S: Real>(utts: &[Utterance]) -> Vec<Example<S>> {
    utts.iter().map(Example::clean_from_utterance).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptedModel<S> {
    pub encoder: Arc<EncoderModel<S>>,
    pub prompts: PromptMatrix<S>,
    pub head: DecoderHead<S>,
}

impl<S: Real> PromptedModel<S> {
    pub fn m(&self) -> usize {
        self.prompts.m()
    }

    /// Same encoder and head, different prompts.
    pub fn with_prompts(&self, prompts: PromptMatrix<S>) -> Self {
        PromptedModel {
            encoder: Arc::clone(&self.encoder),
            prompts,
            head: self.head.clone(),
        }
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.prompts.parameter_count() + self.head.parameter_count()
    }

    /// Hash over prompts and head (the tuned state).
    pub fn tuned_hash(&self) -> String {
        content_hash(&self.params())
    }

    pub fn decode(&self, features: &Tensor<S>) -> Result<Vec<usize>> {
        decode(&self.encoder, &self.prompts, &self.head, features)
    }

    pub fn evaluate(&self, data: &[Example<S>]) -> Result<WerTally> {
        evaluate(&self.encoder, &self.prompts, &self.head, data)
    }

    /// Evaluates with only the `active` prompt rows (0-based).
    pub fn evaluate_masked(&self, active: &[usize], data: &[Example<S>]) -> Result<WerTally> {
        evaluate(&self.encoder, &self.prompts.select(active)?, &self.head, data)
    }
}

impl<S: Real> ParamRefs<S> for PromptedModel<S> {
    fn params(&self) -> Vec<(String, &Arc<Tensor<S>>)> {
        let mut v = self.prompts.params();
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Arc<Tensor<S>>)> {
        let mut v = self.prompts.params_mut();
        v.extend(self.head.params_mut());
        v
    }
}

pub fn decode<S: Real>(
    encoder: &EncoderModel<S>,
    prompts: &PromptMatrix<S>,
    head: &DecoderHead<S>,
    features: &Tensor<S>,
) -> Result<Vec<usize>> {
    let out = encoder.forward(features, prompts)?;
    Ok(greedy_decode(&head.apply(&out.frames)?))
}

/// Corpus WER; utterances are decoded in parallel and tallied in order.
pub fn evaluate<S: Real>(
    encoder: &EncoderModel<S>,
    prompts: &PromptMatrix<S>,
    head: &DecoderHead<S>,
    data: &[Example<S>],
) -> Result<WerTally> {
    let hyps = data
        .par_iter()
        .map(|ex| decode(encoder, prompts, head, &ex.features))
        .collect::<Result<Vec<_>>>()?;
    let mut tally = WerTally::default();
    for (ex, hyp) in data.iter().zip(&hyps) {
        tally.add(&ex.tokens, hyp);
    }
    Ok(tally)
}

/// Mean over time of the frame block (optionally also the prompt rows).
pub fn pooled<S: Real>(
    encoder: &EncoderModel<S>,
    prompts: &PromptMatrix<S>,
    features: &Tensor<S>,
    include_prompts: bool,
) -> Result<Vec<f64>> {
    let out = encoder.forward(features, prompts)?;
    let frames = out.frames;
    let mut sum: Vec<f64> = vec![0.0; frames.cols()];
    let mut count = frames.rows();
    for t in 0..frames.rows() {
        for (s, v) in sum.iter_mut().zip(frames.row_slice(t)) {
            *s += v.as_f64();
        }
    }
    if include_prompts {
        if let Some(p) = &out.prompt_states {
            for t in 0..p.rows() {
                for (s, v) in sum.iter_mut().zip(p.row_slice(t)) {
                    *s += v.as_f64();
                }
            }
            count += p.rows();
        }
    }
    Ok(sum.into_iter().map(|s| s / count as f64).collect())
}
