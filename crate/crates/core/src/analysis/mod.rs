//! Post-hoc experiments on a tuned model: prompt attacks and removal,
//! single-prompt ablation, clustering into content and noise sets, subset
//! evaluation, 2-D projection and the pooled-representation noise probe.

pub mod kmeans;
pub mod pca;
pub mod probe;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoder::PromptMatrix;
use crate::error::{contract, Result};
use crate::model::{Example, PromptedModel};
use crate::synth::{stream_rng, Split};
use crate::tensor::Real;

pub use kmeans::{kmeans, Clustering};
pub use pca::{project_2d, symmetric_eigen, Projection};
pub use probe::{noise_probe, probe_accuracies, LogisticProbe, ProbeConfig, ProbeReport};

const DOMAIN_ATTACK: u64 = 4;
pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_MAX_RETRIES: usize = 10;

/// Labelled evaluation sets, reported in the given order.
pub type EvalSets<S> = [(Split, Vec<Example<S>>)];

pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "median of an empty sample");
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WerRow {
    pub arm: String,
    pub split: Split,
    pub wer: f64,
    pub edits: usize,
    pub reference_tokens: usize,
}

pub fn wer_rows<S: Real>(arm: &str, model: &PromptedModel<S>, sets: &EvalSets<S>) -> Result<Vec<WerRow>> {
    sets.iter()
        .map(|(split, data)| {
            let t = model.evaluate(data)?;
            Ok(WerRow {
                arm: arm.to_string(),
                split: *split,
                wer: t.rate(),
                edits: t.edits,
                reference_tokens: t.reference_tokens,
            })
        })
        .collect()
}

/// Standard-normal replacement rows, one stream per seed.
pub fn random_prompts<S: Real>(m: usize, d: usize, seed: u64) -> Result<PromptMatrix<S>> {
    let mut rng = stream_rng(seed, DOMAIN_ATTACK, 0);
    let rows: Vec<Vec<S>> = (0..m)
        .map(|_| (0..d).map(|_| S::lit(StandardNormal.sample(&mut rng))).collect())
        .collect();
    PromptMatrix::from_rows(d, &rows)
}

/// Tuned prompts against Gaussian and all-zero replacements.
pub fn attack_random_prompts<S: Real>(model: &PromptedModel<S>, sets: &EvalSets<S>, seed: u64) -> Result<Vec<WerRow>> {
    let (m, d) = (model.m(), model.encoder.d_model());
    let random = model.with_prompts(random_prompts(m, d, seed)?);
    let zero = model.with_prompts(PromptMatrix::from_rows(d, &vec![vec![S::zero(); d]; m])?);
    let mut rows = wer_rows("tuned", model, sets)?;
    rows.extend(wer_rows("random_gaussian", &random, sets)?);
    rows.extend(wer_rows("zero", &zero, sets)?);
    Ok(rows)
}

/// Tuned prompts against inference with every prompt dropped (tuned head kept).
pub fn remove_all_prompts_eval<S: Real>(model: &PromptedModel<S>, sets: &EvalSets<S>) -> Result<Vec<WerRow>> {
    let removed = model.with_prompts(PromptMatrix::empty(model.encoder.d_model()));
    let mut rows = wer_rows("tuned", model, sets)?;
    rows.extend(wer_rows("removed", &removed, sets)?);
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// 1-based prompt id.
    pub prompt: usize,
    pub wer: Vec<f64>,
    /// `wer - full` per split.
    pub delta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub splits: Vec<Split>,
    pub full: Vec<f64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Delta column for `split`, one entry per prompt.
    pub fn deltas(&self, split: Split) -> Option<Vec<f64>> {
        let j = self.splits.iter().position(|&s| s == split)?;
        Some(self.rows.iter().map(|r| r.delta[j]).collect())
    }
}

/// WER after removing each prompt in turn.
pub fn ablate_single_prompts<S: Real>(model: &PromptedModel<S>, sets: &EvalSets<S>) -> Result<AblationReport> {
    let m = model.m();
    if m < 2 {
        return Err(contract(format!("ablation needs at least 2 prompts, got {m}")));
    }
    let full: Vec<f64> = sets
        .iter()
        .map(|(_, d)| model.evaluate(d).map(|t| t.rate()))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(m);
    for k in 0..m {
        let active: Vec<usize> = (0..m).filter(|&j| j != k).collect();
        let wer: Vec<f64> = sets
            .iter()
            .map(|(_, d)| model.evaluate_masked(&active, d).map(|t| t.rate()))
            .collect::<Result<_>>()?;
        let delta = wer.iter().zip(&full).map(|(w, f)| w - f).collect();
        rows.push(AblationRow {
            prompt: k + 1,
            wer,
            delta,
        });
    }
    Ok(AblationReport {
        splits: sets.iter().map(|(s, _)| *s).collect(),
        full,
        rows,
    })
}

/// Content (set 1) and noise (set 2) prompt ids, 1-based and ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPartition {
    pub set1_content: Vec<usize>,
    pub set2_noise: Vec<usize>,
}

impl PromptPartition {
    pub fn validate(&self, m: usize) -> Result<()> {
        let mut all: Vec<usize> = self.set1_content.iter().chain(&self.set2_noise).copied().collect();
        all.sort_unstable();
        if all != (1..=m).collect::<Vec<_>>() {
            return Err(contract(format!("partition does not cover 1..={m} exactly once")));
        }
        Ok(())
    }

    pub fn set1_rows(&self) -> Vec<usize> {
        self.set1_content.iter().map(|k| k - 1).collect()
    }

    pub fn set2_rows(&self) -> Vec<usize> {
        self.set2_noise.iter().map(|k| k - 1).collect()
    }
}

/// Cluster count used for a prompt matrix of `m` rows.
pub fn default_clusters(m: usize) -> usize {
    if m >= 50 {
        3
    } else {
        2
    }
}

/// k-means over the raw prompt rows. The cluster with the largest mean
/// clean-split ablation delta becomes the content set; the rest form the
/// noise set. Rows are clustered in a canonical (lexicographic) order so the
/// result follows any permutation of the prompt matrix.
pub fn derive_partition<S: Real>(
    ablation: &AblationReport,
    prompts: &PromptMatrix<S>,
    k: usize,
    seed: u64,
) -> Result<PromptPartition> {
    let m = prompts.m();
    if ablation.rows.len() != m {
        return Err(contract(format!("ablation has {} rows for {m} prompts", ablation.rows.len())));
    }
    let clean = ablation
        .deltas(Split::TestClean)
        .ok_or_else(|| contract("ablation lacks a test_clean column"))?;
    let rows: Vec<Vec<f64>> = prompts.rows().iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        rows[a]
            .iter()
            .zip(&rows[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(clean[a].total_cmp(&clean[b]))
    });
    let canonical: Vec<Vec<f64>> = order.iter().map(|&i| rows[i].clone()).collect();
    let clustering = kmeans(&canonical, k, seed, KMEANS_MAX_ITER, KMEANS_MAX_RETRIES)?;
    let mut sums = vec![(0.0, 0usize); k];
    for (pos, &c) in clustering.assignments.iter().enumerate() {
        sums[c].0 += clean[order[pos]];
        sums[c].1 += 1;
    }
    // Ties go to the cluster holding the earliest canonical row.
    let first_pos = |c: usize| clustering.assignments.iter().position(|&a| a == c).expect("non-empty");
    let content = (0..k)
        .max_by(|&a, &b| {
            let (ma, mb) = (sums[a].0 / sums[a].1 as f64, sums[b].0 / sums[b].1 as f64);
            ma.total_cmp(&mb).then(first_pos(b).cmp(&first_pos(a)))
        })
        .expect("k >= 1");
    let mut set1 = Vec::new();
    let mut set2 = Vec::new();
    for (pos, &c) in clustering.assignments.iter().enumerate() {
        if c == content {
            set1.push(order[pos] + 1);
        } else {
            set2.push(order[pos] + 1);
        }
    }
    set1.sort_unstable();
    set2.sort_unstable();
    Ok(PromptPartition {
        set1_content: set1,
        set2_noise: set2,
    })
}

/// Full prompts against each set on its own.
pub fn eval_prompt_subsets<S: Real>(
    model: &PromptedModel<S>,
    partition: &PromptPartition,
    sets: &EvalSets<S>,
) -> Result<Vec<WerRow>> {
    partition.validate(model.m())?;
    let mut rows = wer_rows("full", model, sets)?;
    for (arm, active) in [("set1", partition.set1_rows()), ("set2", partition.set2_rows())] {
        let sub = model.with_prompts(model.prompts.select(&active)?);
        rows.extend(wer_rows(arm, &sub, sets)?);
    }
    Ok(rows)
}

pub fn project_prompts_2d<S: Real>(prompts: &PromptMatrix<S>) -> Result<Projection> {
    let rows: Vec<Vec<f64>> = prompts.rows().iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect();
    project_2d(&rows)
}
