use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::model::{pooled, Example};
use crate::tensor::{Tape, Tensor};
use crate::training::{Adam, AdamConfig};
use crate::{encoder::EncoderModel, encoder::PromptMatrix, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub bootstraps: usize,
    pub train_fraction: f64,
    pub iterations: usize,
    pub lr: f64,
    pub l2: f64,
    /// Pool prompt positions together with the frame block.
    pub include_prompts: bool,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            bootstraps: 20,
            train_fraction: 0.7,
            iterations: 300,
            lr: 0.05,
            l2: 1e-3,
            include_prompts: false,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub arm: String,
    pub classes: usize,
    pub samples: usize,
    /// Held-out accuracy per resampled split.
    pub accuracies: Vec<f64>,
}

impl ProbeReport {
    pub fn median(&self) -> f64 {
        super::median(&self.accuracies)
    }
}

/// Multinomial logistic regression on standardized features.
pub struct LogisticProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    weight: Tensor<f64>,
    bias: Tensor<f64>,
}

impl LogisticProbe {
    pub fn fit(x: &[Vec<f64>], y: &[usize], classes: usize, config: &ProbeConfig) -> Result<Self> {
        let (n, d) = (x.len(), x[0].len());
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let var = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
                if var > 1e-24 {
                    1.0 / var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let z: Vec<f64> = x
            .iter()
            .flat_map(|r| (0..d).map(|j| (r[j] - mean[j]) * scale[j]).collect::<Vec<_>>())
            .collect();
        let xs = Arc::new(Tensor::matrix(n, d, z)?);
        let mut weight = Arc::new(Tensor::zeros(&[d, classes]));
        let mut bias = Arc::new(Tensor::zeros(&[1, classes]));
        let mut adam = Adam::new(AdamConfig {
            lr: config.lr,
            warmup_steps: 0,
            ..AdamConfig::default()
        });
        for _ in 0..config.iterations {
            let mut tape = Tape::new();
            let xv = tape.constant(Arc::clone(&xs));
            let w = tape.param(Arc::clone(&weight));
            let b = tape.param(Arc::clone(&bias));
            let logits = tape.matmul(xv, w)?;
            let logits = tape.add_row(logits, b)?;
            let (nll, grad) = cross_entropy(tape.value(logits), y);
            let nll = tape.fused_scalar("cross_entropy", logits, nll, grad)?;
            let w2 = tape.mul(w, w)?;
            let reg = tape.sum(w2)?;
            let reg = tape.scale(reg, 0.5 * config.l2)?;
            let loss = tape.add(nll, reg)?;
            let mut g = tape.backward(loss)?;
            let grads = [g.take(w).expect("param"), g.take(b).expect("param")];
            adam.step(&mut [&mut weight, &mut bias], &grads);
        }
        Ok(LogisticProbe {
            mean,
            scale,
            weight: (*weight).clone(),
            bias: (*bias).clone(),
        })
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let classes = self.weight.cols();
        let mut best = (0, f64::NEG_INFINITY);
        for c in 0..classes {
            let mut s = self.bias.data()[c];
            for (j, v) in x.iter().enumerate() {
                s += (v - self.mean[j]) * self.scale[j] * self.weight.get(j, c);
            }
            if s > best.1 {
                best = (c, s);
            }
        }
        best.0
    }
}

/// Mean negative log-likelihood and its gradient w.r.t. the logits.
fn cross_entropy(logits: &Tensor<f64>, y: &[usize]) -> (f64, Vec<f64>) {
    let (n, c) = (logits.rows(), logits.cols());
    let mut grad = vec![0.0; n * c];
    let mut total = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let row = logits.row_slice(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[yi];
        for j in 0..c {
            grad[i * c + j] = ((row[j] - lse).exp() - if j == yi { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (total / n as f64, grad)
}

/// Remaps arbitrary label ids onto `0..classes` in ascending id order.
pub fn dense_labels(ids: &[usize]) -> (Vec<usize>, usize) {
    let mut uniq = ids.to_vec();
    uniq.sort_unstable();
    uniq.dedup();
    let labels = ids.iter().map(|id| uniq.binary_search(id).expect("present")).collect();
    (labels, uniq.len())
}

/// Held-out accuracy over `bootstraps` random train/test splits.
pub fn probe_accuracies(x: &[Vec<f64>], ids: &[usize], config: &ProbeConfig) -> Result<Vec<f64>> {
    if x.len() != ids.len() || x.is_empty() {
        return Err(contract("probe needs one label per non-empty feature row"));
    }
    let (labels, classes) = dense_labels(ids);
    if classes < 2 {
        return Err(contract(format!("probe needs at least 2 classes, found {classes}")));
    }
    let n = x.len();
    let n_train = ((n as f64 * config.train_fraction).round() as usize).clamp(1, n - 1);
    (0..config.bootstraps)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(b as u64);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let (tr, te) = idx.split_at(n_train);
            let xtr: Vec<Vec<f64>> = tr.iter().map(|&i| x[i].clone()).collect();
            let ytr: Vec<usize> = tr.iter().map(|&i| labels[i]).collect();
            let probe = LogisticProbe::fit(&xtr, &ytr, classes, config)?;
            let correct = te.iter().filter(|&&i| probe.predict(&x[i]) == labels[i]).count();
            Ok(correct as f64 / te.len() as f64)
        })
        .collect()
}

pub fn pooled_features<S: Real>(
    encoder: &EncoderModel<S>,
    prompts: &PromptMatrix<S>,
    data: &[Example<S>],
    include_prompts: bool,
) -> Result<Vec<Vec<f64>>> {
    data.par_iter()
        .map(|ex| pooled(encoder, prompts, &ex.features, include_prompts))
        .collect()
}

/// Predicts each noisy item's noise subtype from its pooled representation.
pub fn noise_probe<S: Real>(
    arm: &str,
    encoder: &EncoderModel<S>,
    prompts: &PromptMatrix<S>,
    data: &[Example<S>],
    config: &ProbeConfig,
) -> Result<ProbeReport> {
    let items: Vec<&Example<S>> = data.iter().filter(|e| e.noise.is_some()).collect();
    let ids: Vec<usize> = items.iter().map(|e| e.noise.expect("filtered").1).collect();
    let owned: Vec<Example<S>> = items.into_iter().cloned().collect();
    let x = pooled_features(encoder, prompts, &owned, config.include_prompts)?;
    let accuracies = probe_accuracies(&x, &ids, config)?;
    Ok(ProbeReport {
        arm: arm.to_string(),
        classes: dense_labels(&ids).1,
        samples: x.len(),
        accuracies,
    })
}
