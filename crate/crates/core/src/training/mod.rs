//! Backbone pretraining on clean data and prompt tuning against a frozen
//! encoder.

mod optim;
mod record;

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{ctc_loss, DecoderHead};
use crate::encoder::{EncoderConfig, EncoderModel, PromptMatrix};
use crate::error::{contract, Error, Result};
use crate::model::{Example, PromptedModel};
use crate::params::ParamRefs;
use crate::tensor::{Real, Tape, Tensor};

pub use optim::{Adam, AdamConfig};
pub use record::{RecordLine, RunRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_grid: [f64; 2],
    pub grid_search: bool,
    pub batch_size: usize,
    pub max_steps: usize,
    pub warmup_steps: usize,
    pub prompts: usize,
    pub seed: u64,
    /// Two-layer head width; `None` is a single linear projection.
    pub head_hidden: Option<usize>,
    pub eval_interval: usize,
    /// Dev utterances scored at each eval interval.
    pub eval_limit: usize,
    pub log_interval: usize,
}

/// Default prompt-tuning budget: short and hot, so a full multi-seed run
/// fits on one core. [`TrainConfig::long_budget`] is the slow schedule.
impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            lr_grid: [2e-5, 3e-4],
            grid_search: false,
            batch_size: 4,
            max_steps: 3000,
            warmup_steps: 800,
            prompts: 20,
            seed: 0,
            head_hidden: None,
            eval_interval: 1000,
            eval_limit: 200,
            log_interval: 10,
        }
    }
}

impl TrainConfig {
    pub fn long_budget() -> Self {
        TrainConfig {
            lr: 1e-4,
            max_steps: 10_000,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.log_interval == 0 || self.eval_interval == 0 {
            return Err(contract("batch_size, log_interval and eval_interval must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(contract("learning rate must be positive"));
        }
        if self.grid_search && !(self.lr_grid[0]..=self.lr_grid[1]).contains(&self.lr) {
            return Err(contract(format!(
                "lr {} outside grid [{}, {}]",
                self.lr, self.lr_grid[0], self.lr_grid[1]
            )));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            warmup_steps: self.warmup_steps,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub encoder: EncoderConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub warmup_steps: usize,
    /// Dev-clean WER the backbone must reach before it is frozen.
    pub target_wer: f64,
    pub seed: u64,
    pub eval_interval: usize,
    pub eval_limit: usize,
    pub log_interval: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            encoder: EncoderConfig::default(),
            lr: 1e-3,
            batch_size: 4,
            max_steps: 6000,
            warmup_steps: 200,
            target_wer: 0.15,
            seed: 0,
            eval_interval: 250,
            eval_limit: 200,
            log_interval: 10,
        }
    }
}

/// Encoder and throwaway head trained jointly.
struct Backbone<S> {
    encoder: EncoderModel<S>,
    head: DecoderHead<S>,
}

impl<S: Real> ParamRefs<S> for Backbone<S> {
    fn params(&self) -> Vec<(String, &Arc<Tensor<S>>)> {
        let mut v = self.encoder.params();
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Arc<Tensor<S>>)> {
        let mut v = self.encoder.params_mut();
        v.extend(self.head.params_mut());
        v
    }
}

struct LoopSpec {
    max_steps: usize,
    batch_size: usize,
    eval_interval: usize,
    log_interval: usize,
    seed: u64,
}

enum Control {
    Continue,
    Stop,
}

/// Minibatch loop shared by both stages. `grad` returns the loss and one
/// gradient per `params_mut` slot; `eval` runs every `eval_interval` steps
/// and after the last one.
fn train_loop<S, P, G, E>(
    spec: &LoopSpec,
    adam: &mut Adam,
    state: &mut P,
    n: usize,
    record: &mut RunRecord,
    grad: G,
    mut eval: E,
) -> Result<()>
where
    S: Real,
    P: ParamRefs<S>,
    G: Fn(&P, usize) -> Result<(f64, Vec<Tensor<S>>)>,
    E: FnMut(&P, usize, &mut RunRecord) -> Result<Control>,
{
    if n == 0 {
        return Err(contract("training set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(7);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut window = 0.0;
    for step in 0..spec.max_steps {
        let mut acc: Option<Vec<Tensor<S>>> = None;
        let mut loss = 0.0;
        for _ in 0..spec.batch_size {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let idx = order[cursor];
            cursor += 1;
            let (l, g) = grad(state, idx).map_err(|e| match e {
                Error::NonFinite { .. } | Error::Numerical { .. } => Error::NanLoss { step },
                other => other,
            })?;
            if !l.is_finite() {
                return Err(Error::NanLoss { step });
            }
            loss += l;
            match acc.as_mut() {
                None => acc = Some(g),
                Some(a) => {
                    for (x, y) in a.iter_mut().zip(&g) {
                        for (p, q) in x.data_mut().iter_mut().zip(y.data()) {
                            *p = *p + *q;
                        }
                    }
                }
            }
        }
        let inv = S::lit(1.0 / spec.batch_size as f64);
        let mut grads = acc.expect("batch_size > 0");
        grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v = *v * inv));
        {
            let mut slots: Vec<&mut Arc<Tensor<S>>> = state.params_mut().into_iter().map(|(_, t)| t).collect();
            adam.step(&mut slots, &grads);
        }
        window += loss / spec.batch_size as f64;
        if (step + 1) % spec.log_interval == 0 {
            record.push_loss(step + 1, window / spec.log_interval as f64);
            window = 0.0;
        }
        let last = step + 1 == spec.max_steps;
        if (step + 1) % spec.eval_interval == 0 || last {
            if let Control::Stop = eval(state, step + 1, record)? {
                break;
            }
        }
    }
    Ok(())
}

fn collect_grads<S: Real>(grads: &mut crate::tensor::Gradients<S>, vars: &[crate::Var], tape: &Tape<S>) -> Vec<Tensor<S>> {
    vars.iter()
        .map(|&v| grads.take(v).unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
        .collect()
}

/// Supervised CTC pretraining of encoder + linear head on clean data; the
/// encoder is frozen once dev-clean WER drops below the target.
pub fn pretrain_backbone<S: Real>(
    train: &[Example<S>],
    dev: &[Example<S>],
    vocab: usize,
    config: &PretrainConfig,
) -> Result<(EncoderModel<S>, RunRecord)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let encoder = EncoderModel::new(config.encoder.clone(), &mut rng)?;
    let head = DecoderHead::new(config.encoder.d_model, vocab, None, &mut rng);
    let mut state = Backbone { encoder, head };
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        warmup_steps: config.warmup_steps,
        ..AdamConfig::default()
    });
    let mut record = RunRecord::new("pretrain", "adam", serde_json::to_value(config)?);
    let spec = LoopSpec {
        max_steps: config.max_steps,
        batch_size: config.batch_size,
        eval_interval: config.eval_interval,
        log_interval: config.log_interval,
        seed: config.seed,
    };
    let dev = &dev[..dev.len().min(config.eval_limit)];
    let mut reached = false;
    train_loop(
        &spec,
        &mut adam,
        &mut state,
        train.len(),
        &mut record,
        |s: &Backbone<S>, i| {
            let ex = &train[i];
            let mut tape = Tape::new();
            let ev = s.encoder.bind(&mut tape, true);
            let hv = s.head.bind(&mut tape, true);
            let fwd = s.encoder.forward_tape(&mut tape, &ev, &ex.features, None)?;
            let logits = hv.logits(&mut tape, fwd.frames)?;
            let loss = ctc_loss(&mut tape, logits, &ex.tokens)?;
            let mut g = tape.backward(loss)?;
            let mut vars = ev.all();
            vars.extend(hv.all());
            Ok((tape.value(loss).item().as_f64(), collect_grads(&mut g, &vars, &tape)))
        },
        |s, step, rec| {
            let wer = crate::model::evaluate(&s.encoder, &PromptMatrix::empty(s.encoder.d_model()), &s.head, dev)?
                .rate();
            rec.push_dev_wer(step, wer);
            if wer < config.target_wer {
                reached = true;
                return Ok(Control::Stop);
            }
            Ok(Control::Continue)
        },
    )?;
    if !reached {
        return Err(Error::TrainingFailure {
            reason: format!(
                "dev-clean WER stayed above {:.3} for {} steps",
                config.target_wer, config.max_steps
            ),
            last_loss: record.loss_curve().last().map(|&(_, l)| l),
            curve: record.loss_curve().to_vec(),
        });
    }
    let mut encoder = state.encoder;
    encoder.freeze();
    record.set_frozen_hash(encoder.frozen_hash());
    Ok((encoder, record))
}

/// Per-dimension std of embedding outputs over (up to `limit`) utterances.
pub fn embedding_std<S: Real>(encoder: &EncoderModel<S>, data: &[Example<S>], limit: usize) -> Result<Vec<f64>> {
    let d = encoder.d_model();
    let (mut sum, mut sq, mut n) = (vec![0.0; d], vec![0.0; d], 0usize);
    for ex in data.iter().take(limit) {
        let e = encoder.embed(&ex.features)?;
        for t in 0..e.rows() {
            for (j, v) in e.row_slice(t).iter().enumerate() {
                let v = v.as_f64();
                sum[j] += v;
                sq[j] += v * v;
            }
        }
        n += e.rows();
    }
    if n < 2 {
        return Err(contract("need at least two embedded frames for prompt init"));
    }
    Ok((0..d)
        .map(|j| {
            let mean = sum[j] / n as f64;
            (sq[j] / n as f64 - mean * mean).max(0.0).sqrt()
        })
        .collect())
}

/// `m` rows of zero-mean Gaussians with per-dimension `std`.
pub fn init_prompts<S: Real>(m: usize, std: &[f64], rng: &mut ChaCha8Rng) -> Result<PromptMatrix<S>> {
    let rows: Vec<Vec<S>> = (0..m)
        .map(|_| {
            std.iter()
                .map(|&s| S::lit(Normal::new(0.0, s.max(1e-6)).expect("finite std").sample(rng)))
                .collect()
        })
        .collect();
    PromptMatrix::from_rows(std.len(), &rows)
}

pub struct TuneOutcome<S> {
    pub model: PromptedModel<S>,
    pub record: RunRecord,
}

/// Trains prompts and head on `train` with the encoder frozen. `m = 0` is
/// the head-only baseline; its encoder outputs are computed once and reused.
pub fn prompt_tune<S: Real>(
    encoder: &Arc<EncoderModel<S>>,
    train: &[Example<S>],
    dev: &[Example<S>],
    prompt_std: &[f64],
    vocab: usize,
    config: &TrainConfig,
) -> Result<TuneOutcome<S>> {
    config.validate()?;
    if !encoder.is_frozen() {
        return Err(contract("prompt tuning needs a frozen encoder"));
    }
    let d = encoder.d_model();
    if prompt_std.len() != d {
        return Err(contract(format!("prompt std has {} dims, encoder has {d}", prompt_std.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(3);
    let prompts = init_prompts(config.prompts, prompt_std, &mut rng)?;
    let head = DecoderHead::new(d, vocab, config.head_hidden, &mut rng);
    let mut model = PromptedModel {
        encoder: Arc::clone(encoder),
        prompts,
        head,
    };
    let arm = if config.prompts == 0 {
        "baseline".to_string()
    } else {
        format!("prompt_tuning_{}", config.prompts)
    };
    let mut record = RunRecord::new(&arm, "adam", serde_json::to_value(config)?);
    let mut adam = Adam::new(config.adam());
    let spec = LoopSpec {
        max_steps: config.max_steps,
        batch_size: config.batch_size,
        eval_interval: config.eval_interval,
        log_interval: config.log_interval,
        seed: config.seed,
    };
    let dev = &dev[..dev.len().min(config.eval_limit)];
    let eval = |s: &PromptedModel<S>, step, rec: &mut RunRecord| {
        rec.push_dev_wer(step, s.evaluate(dev)?.rate());
        Ok(Control::Continue)
    };

    if config.prompts == 0 {
        let empty = PromptMatrix::empty(d);
        let cached: Vec<Tensor<S>> = train
            .par_iter()
            .map(|ex| encoder.forward(&ex.features, &empty).map(|o| o.frames))
            .collect::<Result<_>>()?;
        train_loop(
            &spec,
            &mut adam,
            &mut model,
            train.len(),
            &mut record,
            |s: &PromptedModel<S>, i| {
                let mut tape = Tape::new();
                let hv = s.head.bind(&mut tape, true);
                let frames = tape.constant(cached[i].clone());
                let logits = hv.logits(&mut tape, frames)?;
                let loss = ctc_loss(&mut tape, logits, &train[i].tokens)?;
                let mut g = tape.backward(loss)?;
                Ok((tape.value(loss).item().as_f64(), collect_grads(&mut g, &hv.all(), &tape)))
            },
            eval,
        )?;
    } else {
        train_loop(
            &spec,
            &mut adam,
            &mut model,
            train.len(),
            &mut record,
            |s: &PromptedModel<S>, i| {
                let ex = &train[i];
                let mut tape = Tape::new();
                let ev = s.encoder.bind(&mut tape, false);
                let p = tape.param(Arc::clone(s.prompts.tensor().expect("m > 0")));
                let hv = s.head.bind(&mut tape, true);
                let fwd = s.encoder.forward_tape(&mut tape, &ev, &ex.features, Some(p))?;
                let logits = hv.logits(&mut tape, fwd.frames)?;
                let loss = ctc_loss(&mut tape, logits, &ex.tokens)?;
                let mut g = tape.backward(loss)?;
                let mut vars = vec![p];
                vars.extend(hv.all());
                Ok((tape.value(loss).item().as_f64(), collect_grads(&mut g, &vars, &tape)))
            },
            eval,
        )?;
    }
    Ok(TuneOutcome { model, record })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best_lr: f64,
    /// `(lr, dev-clean WER)` per candidate, in candidate order.
    pub rows: Vec<(f64, f64)>,
}

/// Tunes one arm per candidate rate and keeps the one with the lowest
/// dev-clean WER (ties go to the smaller rate).
pub fn grid_search_lr<S: Real>(
    candidates: &[f64],
    encoder: &Arc<EncoderModel<S>>,
    train: &[Example<S>],
    dev_clean: &[Example<S>],
    prompt_std: &[f64],
    vocab: usize,
    config: &TrainConfig,
) -> Result<GridResult> {
    match candidates {
        [] => Err(contract("grid search needs at least one candidate")),
        [only] => Ok(GridResult {
            best_lr: *only,
            rows: Vec::new(),
        }),
        _ => {
            let mut rows = Vec::with_capacity(candidates.len());
            for &lr in candidates {
                let cfg = TrainConfig {
                    lr,
                    grid_search: false,
                    ..config.clone()
                };
                let out = prompt_tune(encoder, train, dev_clean, prompt_std, vocab, &cfg)?;
                let dev = &dev_clean[..dev_clean.len().min(config.eval_limit)];
                rows.push((lr, out.model.evaluate(dev)?.rate()));
            }
            let best = rows
                .iter()
                .copied()
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)))
                .expect("non-empty");
            Ok(GridResult { best_lr: best.0, rows })
        }
    }
}

/// Evenly spaced points in log space over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

#[cfg(test)]
mod tests;
