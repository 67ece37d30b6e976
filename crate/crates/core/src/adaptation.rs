//! Zero-shot adaptation to unseen noise: pool a handful of out-of-domain
//! noise clips through the tuned model into one bias vector, then rescale
//! the noise prompts by it elementwise.

use serde::{Deserialize, Serialize};

use crate::analysis::{wer_rows, EvalSets, PromptPartition, WerRow};
use crate::encoder::PromptMatrix;
use crate::error::{contract, Error, Result};
use crate::model::{pooled, PromptedModel};
use crate::synth::NoiseClip;
use crate::tensor::Real;

pub const DEFAULT_CLIPS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Rms,
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub method: Normalization,
    /// Factor the mean pooled vector was multiplied by.
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseBiasVector {
    pub v: Vec<f64>,
    pub source: Vec<String>,
    pub with_prompts: bool,
    pub normalization: NormalizationRecord,
}

pub fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Averages the time-pooled frame outputs of `clips` (each forwarded with the
/// model's prompts unless `with_prompts` is false).
pub fn extract_noise_bias<S: Real>(
    model: &PromptedModel<S>,
    clips: &[&NoiseClip],
    with_prompts: bool,
    method: Normalization,
) -> Result<NoiseBiasVector> {
    if clips.is_empty() {
        return Err(contract("noise bias needs at least one clip"));
    }
    if let Some(c) = clips.iter().find(|c| c.frames.rows() == 0) {
        return Err(contract(format!("clip {} has no frames", c.id())));
    }
    let d = model.encoder.d_model();
    let empty = PromptMatrix::empty(d);
    let prompts = if with_prompts { &model.prompts } else { &empty };
    let pools = clips
        .iter()
        .map(|clip| pooled(&model.encoder, prompts, &clip.frames.cast(), false))
        .collect::<Result<Vec<_>>>()?;
    bias_from_pools(&pools, clips.iter().map(|c| c.id()).collect(), with_prompts, method)
}

/// Mean of per-clip pooled vectors, then the requested normalization.
pub fn bias_from_pools(
    pools: &[Vec<f64>],
    source: Vec<String>,
    with_prompts: bool,
    method: Normalization,
) -> Result<NoiseBiasVector> {
    if pools.is_empty() {
        return Err(contract("noise bias needs at least one pooled vector"));
    }
    let d = pools[0].len();
    let mut mean = vec![0.0; d];
    for p in pools {
        mean.iter_mut().zip(p).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= pools.len() as f64);
    if mean.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { op: "noise_bias" });
    }
    let scale = match method {
        Normalization::Raw => 1.0,
        Normalization::Rms => {
            let r = rms(&mean);
            if r == 0.0 {
                return Err(Error::DegenerateBias);
            }
            1.0 / r
        }
    };
    Ok(NoiseBiasVector {
        v: mean.iter().map(|x| x * scale).collect(),
        source,
        with_prompts,
        normalization: NormalizationRecord { method, scale },
    })
}

/// Noise rows become `row ⊙ v`; content rows are copied unchanged.
pub fn shift_noise_prompts<S: Real>(
    prompts: &PromptMatrix<S>,
    partition: &PromptPartition,
    v: &[f64],
) -> Result<PromptMatrix<S>> {
    partition.validate(prompts.m())?;
    if v.len() != prompts.d() {
        return Err(contract(format!("bias vector has {} entries, prompts have d = {}", v.len(), prompts.d())));
    }
    let mut rows = prompts.rows();
    for k in partition.set2_rows() {
        for (x, s) in rows[k].iter_mut().zip(v) {
            *x = *x * S::lit(*s);
        }
    }
    PromptMatrix::from_rows(prompts.d(), &rows)
}

/// Baseline, vanilla tuned and shifted arms on the given (OOD) sets. Only
/// inference runs here; no parameter is written.
pub fn zero_shot_adapt_eval<S: Real>(
    baseline: &PromptedModel<S>,
    tuned: &PromptedModel<S>,
    partition: &PromptPartition,
    bias: &NoiseBiasVector,
    sets: &EvalSets<S>,
) -> Result<Vec<WerRow>> {
    let shifted = tuned.with_prompts(shift_noise_prompts(&tuned.prompts, partition, &bias.v)?);
    let mut rows = wer_rows("baseline", baseline, sets)?;
    rows.extend(wer_rows("vanilla", tuned, sets)?);
    rows.extend(wer_rows("shifted", &shifted, sets)?);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::analysis::random_prompts;
    use crate::decoder::DecoderHead;
    use crate::encoder::{EncoderConfig, EncoderModel};
    use crate::synth::{ClipSplit, NoiseBank, NoiseFamily};
    use crate::tensor::Tensor;

    fn model(m: usize) -> PromptedModel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut enc = EncoderModel::new(
            EncoderConfig {
                feature_dim: 6,
                d_model: 8,
                n_heads: 2,
                n_layers: 1,
                ffn_dim: 16,
            },
            &mut rng,
        )
        .unwrap();
        enc.freeze();
        PromptedModel {
            encoder: Arc::new(enc),
            prompts: random_prompts(m, 8, 1).unwrap(),
            head: DecoderHead::new(8, 3, None, &mut rng),
        }
    }

    fn bank() -> NoiseBank {
        NoiseBank::generate(4, 2, 2, 8, 30, 6)
    }

    fn partition() -> PromptPartition {
        PromptPartition {
            set1_content: vec![1, 3],
            set2_noise: vec![2, 4, 5],
        }
    }

    #[test]
    fn single_clip_is_its_own_normalized_pool() {
        let model = model(5);
        let b = bank();
        let clips = b.select(&[NoiseFamily::Ood], ClipSplit::Adapt);
        let bias = extract_noise_bias(&model, &clips[..1], true, Normalization::Rms).unwrap();
        let u = pooled(&model.encoder, &model.prompts, &clips[0].frames, false).unwrap();
        let r = rms(&u);
        for (a, b) in bias.v.iter().zip(&u) {
            assert!((a - b / r).abs() < 1e-12);
        }
        assert!((rms(&bias.v) - 1.0).abs() < 1e-12);
        assert_eq!(bias.normalization.scale, 1.0 / r);
        assert_eq!(bias.source, vec![clips[0].id()]);
    }

    #[test]
    fn mean_over_eight_clips_matches_a_manual_loop() {
        let model = model(5);
        let b = bank();
        let clips = b.select(&[NoiseFamily::Ood], ClipSplit::Adapt);
        assert_eq!(clips.len(), 16);
        let chosen = &clips[..DEFAULT_CLIPS];
        let bias = extract_noise_bias(&model, chosen, true, Normalization::Rms).unwrap();
        let mut acc = vec![0.0; 8];
        for c in chosen {
            let out = model.encoder.forward(&c.frames, &model.prompts).unwrap().frames;
            for t in 0..out.rows() {
                for j in 0..8 {
                    acc[j] += out.get(t, j) / out.rows() as f64 / chosen.len() as f64;
                }
            }
        }
        let r = (acc.iter().map(|x| x * x).sum::<f64>() / 8.0).sqrt();
        for (a, e) in bias.v.iter().zip(&acc) {
            assert!((a - e / r).abs() < 1e-6);
        }
        let raw = extract_noise_bias(&model, chosen, true, Normalization::Raw).unwrap();
        for (a, e) in raw.v.iter().zip(&acc) {
            assert!((a - e).abs() < 1e-9);
        }
        let bare = extract_noise_bias(&model, chosen, false, Normalization::Rms).unwrap();
        assert_ne!(bare.v, bias.v);
    }

    #[test]
    fn cancelling_clips_and_empty_sets_are_rejected() {
        let model = model(0);
        let b = bank();
        let clip = b.select(&[NoiseFamily::Ood], ClipSplit::Adapt)[0].clone();
        assert!(extract_noise_bias(&model, &[], true, Normalization::Rms).is_err());
        let u = vec![0.5, -1.0, 2.0];
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        let ids = vec!["a".into(), "b".into()];
        assert!(matches!(
            bias_from_pools(&[u, neg], ids, true, Normalization::Rms),
            Err(Error::DegenerateBias)
        ));
        let empty = NoiseClip {
            frames: Tensor::zeros(&[0, 6]),
            ..clip
        };
        assert!(extract_noise_bias(&model, &[&empty], true, Normalization::Rms).is_err());
    }

    #[test]
    fn shift_identities() {
        let p = random_prompts::<f64>(5, 8, 7).unwrap();
        let part = partition();
        assert_eq!(shift_noise_prompts(&p, &part, &[1.0; 8]).unwrap(), p);
        let zeroed = shift_noise_prompts(&p, &part, &[0.0; 8]).unwrap();
        for k in part.set1_rows() {
            assert_eq!(zeroed.row(k), p.row(k));
        }
        for k in part.set2_rows() {
            assert!(zeroed.row(k).iter().all(|&x| x == 0.0));
        }
        assert!(shift_noise_prompts(&p, &part, &[1.0; 7]).is_err());
    }

    #[test]
    fn identity_shift_reproduces_vanilla_arm() {
        let tuned = model(5);
        let baseline = tuned.with_prompts(PromptMatrix::empty(8));
        let bias = NoiseBiasVector {
            v: vec![1.0; 8],
            source: vec![],
            with_prompts: true,
            normalization: NormalizationRecord {
                method: Normalization::Raw,
                scale: 1.0,
            },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data: Vec<crate::model::Example<f64>> = (0..3)
            .map(|i| crate::model::Example {
                id: format!("x{i}"),
                tokens: vec![i % 3, 1],
                features: Tensor::matrix(12, 6, (0..72).map(|_| rand::Rng::gen::<f64>(&mut rng)).collect()).unwrap(),
                noise: None,
            })
            .collect();
        let sets = [(crate::synth::Split::TestOodNoisy, data)];
        let hash = tuned.tuned_hash();
        let rows = zero_shot_adapt_eval(&baseline, &tuned, &partition(), &bias, &sets).unwrap();
        assert_eq!(rows.iter().map(|r| r.arm.as_str()).collect::<Vec<_>>(), ["baseline", "vanilla", "shifted"]);
        assert_eq!(rows[1].wer, rows[2].wer);
        assert_eq!(rows[1].edits, rows[2].edits);
        assert_eq!(tuned.tuned_hash(), hash);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn shift_is_elementwise_and_linear(
            a in prop::collection::vec(-3.0f64..3.0, 8),
            b in prop::collection::vec(-3.0f64..3.0, 8),
            seed in 0u64..100,
        ) {
            let p = random_prompts::<f64>(5, 8, seed).unwrap();
            let part = partition();
            let once = shift_noise_prompts(&p, &part, &a).unwrap();
            for k in 0..5 {
                for j in 0..8 {
                    let expect = if part.set2_noise.contains(&(k + 1)) { p.row(k)[j] * a[j] } else { p.row(k)[j] };
                    prop_assert_eq!(once.row(k)[j], expect);
                }
            }
            let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
            let direct = shift_noise_prompts(&p, &part, &ab).unwrap();
            let twice = shift_noise_prompts(&once, &part, &b).unwrap();
            for k in 0..5 {
                for j in 0..8 {
                    prop_assert!((direct.row(k)[j] - twice.row(k)[j]).abs() <= 1e-7);
                }
            }
        }
    }
}
