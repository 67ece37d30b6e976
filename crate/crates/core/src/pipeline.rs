//! End-to-end experiment driver: corpus, backbone, tuned arms per seed, and
//! the full analysis battery written out as CSV/JSON artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::adaptation::{extract_noise_bias, zero_shot_adapt_eval, NoiseBiasVector};
use crate::analysis::{
    ablate_single_prompts, attack_random_prompts, default_clusters, derive_partition, eval_prompt_subsets, median,
    noise_probe, project_prompts_2d, remove_all_prompts_eval, wer_rows, AblationReport, ProbeConfig, PromptPartition,
};
use crate::checkpoint::{write_atomic, Checkpoint};
use crate::config::ExperimentConfig;
use crate::encoder::{EncoderModel, PromptMatrix};
use crate::error::{contract, Result};
use crate::manifest::{ExperimentManifest, ManifestStep};
use crate::model::{clean_examples, examples, Example, PromptedModel};
use crate::report::{
    median_probe, median_wer, write_csv, write_json, AblationRecord, ProbeRecord, PromptRecord, RunMetadata,
    WerRecord,
};
use crate::synth::{generate_corpus, ClipSplit, Corpus, NoiseClip, NoiseFamily, Split};
use crate::tensor::Real;
use crate::training::{embedding_std, pretrain_backbone, prompt_tune, RunRecord, TrainConfig, TuneOutcome};

/// Utterances used to estimate the prompt-init statistics.
const PROMPT_STD_UTTERANCES: usize = 200;

pub const ARTIFACTS: [&str; 8] = [
    "table1_analog",
    "table2_analog",
    "table3_analog",
    "table4_analog",
    "fig2_analog",
    "fig3_analog",
    "fig4_analog",
    "fig5_analog",
];

/// Corpus plus the views every subcommand needs.
pub struct Workspace {
    pub config: ExperimentConfig,
    pub corpus: Corpus,
}

fn limited<S: Real>(utts: &[crate::synth::Utterance], limit: usize) -> Vec<Example<S>> {
    let n = if limit == 0 { utts.len() } else { utts.len().min(limit) };
    examples(&utts[..n])
}

impl Workspace {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        info!("generating corpus (seed {})", config.corpus_seed);
        let corpus = generate_corpus(&config.synth, config.corpus_seed)?;
        Ok(Workspace { config, corpus })
    }

    pub fn vocab(&self) -> usize {
        self.config.synth.vocab
    }

    pub fn split<S: Real>(&self, split: Split, limit: usize) -> Vec<Example<S>> {
        limited(self.corpus.split(split), limit)
    }

    pub fn clean_train<S: Real>(&self) -> Vec<Example<S>> {
        clean_examples(self.corpus.split(Split::Train))
    }

    pub fn test_sets<S: Real>(&self, limit: usize) -> Vec<(Split, Vec<Example<S>>)> {
        Split::TESTS.iter().map(|&s| (s, self.split(s, limit))).collect()
    }

    pub fn ood_sets<S: Real>(&self, limit: usize) -> Vec<(Split, Vec<Example<S>>)> {
        vec![(Split::TestOodNoisy, self.split(Split::TestOodNoisy, limit))]
    }

    /// OOD adaptation clips, alternating subtypes, optionally one subtype only.
    pub fn adapt_clips(&self) -> Vec<&NoiseClip> {
        let cfg = &self.config.adapt;
        let mut clips: Vec<&NoiseClip> = self
            .corpus
            .noise
            .select(&[NoiseFamily::Ood], ClipSplit::Adapt)
            .into_iter()
            .filter(|c| {
                cfg.ood_family
                    .as_deref()
                    .map_or(true, |name| crate::synth::subtype(c.subtype).map_or(false, |s| s.name == name))
            })
            .collect();
        clips.sort_by_key(|c| (c.stream, c.subtype));
        clips.truncate(cfg.n_clips);
        clips
    }

    pub fn pretrain<S: Real>(&self, seed: u64) -> Result<(EncoderModel<S>, RunRecord)> {
        let cfg = crate::training::PretrainConfig {
            seed,
            ..self.config.pretrain.clone()
        };
        let train = self.clean_train::<S>();
        let dev = self.split::<S>(Split::DevClean, 0);
        info!("pretraining backbone (seed {seed}, up to {} steps)", cfg.max_steps);
        pretrain_backbone(&train, &dev, self.vocab(), &cfg)
    }

    pub fn prompt_std<S: Real>(&self, encoder: &EncoderModel<S>) -> Result<Vec<f64>> {
        embedding_std(encoder, &self.clean_train::<S>(), PROMPT_STD_UTTERANCES)
    }

    pub fn tune_config(&self, m: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            prompts: m,
            seed,
            ..self.config.tune.clone()
        }
    }

    pub fn tune<S: Real>(
        &self,
        encoder: &Arc<EncoderModel<S>>,
        prompt_std: &[f64],
        train: &[Example<S>],
        m: usize,
        seed: u64,
    ) -> Result<TuneOutcome<S>> {
        let cfg = self.tune_config(m, seed);
        let dev = self.split::<S>(Split::DevNoisy, cfg.eval_limit);
        info!("tuning m = {m} (seed {seed}, {} steps)", cfg.max_steps);
        prompt_tune(encoder, train, &dev, prompt_std, self.vocab(), &cfg)
    }

    pub fn probe_config(&self, seed: u64) -> ProbeConfig {
        ProbeConfig {
            seed: self.config.analysis.probe.seed ^ seed,
            ..self.config.analysis.probe.clone()
        }
    }
}

/// Tuning seed for entry `index` of the seed list under run seed `run_seed`.
pub fn arm_seed(run_seed: u64, index_seed: u64) -> u64 {
    run_seed.wrapping_mul(1000).wrapping_add(index_seed)
}

/// Per-seed outputs of the analysis battery.
#[derive(Clone, Debug, Default)]
pub struct SeedResults {
    pub table1: Vec<WerRecord>,
    pub table2: Vec<WerRecord>,
    pub table3: Vec<WerRecord>,
    pub table4: Vec<WerRecord>,
    pub fig2: Vec<ProbeRecord>,
    pub fig3: Vec<PromptRecord>,
    pub fig4: Vec<AblationRecord>,
    pub fig5: Vec<ProbeRecord>,
    pub partition: Option<PromptPartition>,
    pub bias: Option<NoiseBiasVector>,
}

impl SeedResults {
    fn extend(&mut self, other: SeedResults) {
        self.table1.extend(other.table1);
        self.table2.extend(other.table2);
        self.table3.extend(other.table3);
        self.table4.extend(other.table4);
        self.fig2.extend(other.fig2);
        self.fig3.extend(other.fig3);
        self.fig4.extend(other.fig4);
        self.fig5.extend(other.fig5);
    }
}

/// Ablation on the (possibly smaller) ablation sets, then clustering.
pub fn partition_model<S: Real>(
    ws: &Workspace,
    tuned: &PromptedModel<S>,
) -> Result<(AblationReport, PromptPartition)> {
    let ablation_sets = ws.test_sets::<S>(ws.config.analysis.ablation_limit);
    let report = ablate_single_prompts(tuned, &ablation_sets)?;
    let k = default_clusters(tuned.m());
    let partition = derive_partition(&report, &tuned.prompts, k, ws.config.analysis.kmeans_seed)?;
    Ok((report, partition))
}

/// Every analysis for one tuning seed.
pub fn analyze_seed<S: Real>(
    ws: &Workspace,
    baseline: &PromptedModel<S>,
    tuned: &PromptedModel<S>,
    seed: u64,
) -> Result<SeedResults> {
    let limit = ws.config.analysis.eval_limit;
    let sets = ws.test_sets::<S>(limit);
    let mut out = SeedResults::default();

    info!("seed {seed}: attack and removal");
    let base_rows = wer_rows("baseline", baseline, &sets)?;
    let attack = attack_random_prompts(tuned, &sets, seed)?;
    out.table1 = WerRecord::from_rows(seed, &base_rows);
    out.table1.extend(WerRecord::from_rows(seed, &attack));
    let removed = remove_all_prompts_eval(tuned, &sets)?;
    out.table3 = WerRecord::from_rows(seed, &base_rows);
    out.table3.extend(WerRecord::from_rows(seed, &removed));

    info!("seed {seed}: ablation sweep over {} prompts", tuned.m());
    let (report, partition) = partition_model(ws, tuned)?;
    out.fig4 = AblationRecord::from_report(seed, &report);
    out.table2 = WerRecord::from_rows(seed, &eval_prompt_subsets(tuned, &partition, &sets)?);
    if tuned.m() >= 3 {
        if let Ok(p) = project_prompts_2d(&tuned.prompts) {
            out.fig3 = PromptRecord::from_projection(seed, &partition, &p);
        }
    }

    info!("seed {seed}: noise probes");
    let noisy = ws.split::<S>(Split::TestNoisy, limit);
    let pcfg = ws.probe_config(seed);
    let enc = &tuned.encoder;
    let empty = PromptMatrix::empty(enc.d_model());
    let arms: [(&str, PromptMatrix<S>); 4] = [
        ("baseline", empty),
        ("full", tuned.prompts.clone()),
        ("set1", tuned.prompts.select(&partition.set1_rows())?),
        ("set2", tuned.prompts.select(&partition.set2_rows())?),
    ];
    for (arm, prompts) in &arms {
        let r = noise_probe(arm, enc, prompts, &noisy, &pcfg)?;
        let recs = ProbeRecord::from_report(seed, &r);
        match *arm {
            "baseline" | "full" => out.fig2.extend(recs),
            _ => out.fig5.extend(recs),
        }
    }

    info!("seed {seed}: zero-shot adaptation");
    let clips = ws.adapt_clips();
    let a = &ws.config.adapt;
    let bias = extract_noise_bias(tuned, &clips, a.with_prompts, a.normalization)?;
    let ood = ws.ood_sets::<S>(limit);
    out.table4 = WerRecord::from_rows(seed, &zero_shot_adapt_eval(baseline, tuned, &partition, &bias, &ood)?);
    out.partition = Some(partition);
    out.bias = Some(bias);
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReproduceSummary {
    pub seed: u64,
    pub corpus_seed: u64,
    pub arm_seeds: Vec<u64>,
    pub frozen_hash: String,
    pub artifacts: BTreeMap<String, Value>,
}

fn save_model<S: Real>(dir: &Path, name: &str, out: &TuneOutcome<S>, seed: u64) -> Result<PathBuf> {
    let path = dir.join(format!("{name}.ckpt"));
    Checkpoint::tuned(&out.model, out.record.arm(), seed).save(&path)?;
    let mut rec = out.record.clone();
    rec.set_checkpoint(path.display().to_string());
    write_atomic(&dir.join(format!("{name}.jsonl")), rec.to_jsonl()?.as_bytes())?;
    Ok(path)
}

fn wer_medians_only(records: &[WerRecord], arms: &[&str]) -> Value {
    let m = median_wer(records);
    json!(arms
        .iter()
        .filter_map(|a| m.get(*a).map(|v| (a.to_string(), json!(v))))
        .collect::<BTreeMap<_, _>>())
}

/// pretrain → tune baseline and `m` arms per seed (+ optional larger-m
/// variant) → every table/figure analog. Returns the summary written to
/// `out/summary.json`.
pub fn reproduce_all<S: Real>(config: &ExperimentConfig, seed: u64, out: &Path) -> Result<ReproduceSummary> {
    let ws = Workspace::new(config.clone())?;
    std::fs::create_dir_all(out)?;
    let ckpt_dir = out.join("checkpoints");
    let mut meta = RunMetadata::new("reproduce-all", config.hash(), config.corpus_seed, seed, S::PRECISION);

    let (encoder, pre_record) = ws.pretrain::<S>(seed)?;
    let backbone_path = ckpt_dir.join("backbone.ckpt");
    Checkpoint::backbone(encoder.clone()).save(&backbone_path)?;
    write_atomic(&ckpt_dir.join("pretrain.jsonl"), pre_record.to_jsonl()?.as_bytes())?;
    meta.checkpoints.insert("backbone".into(), encoder.frozen_hash());
    let frozen_hash = encoder.frozen_hash();
    let encoder = Arc::new(encoder);
    let prompt_std = ws.prompt_std(&encoder)?;
    let train = ws.split::<S>(Split::Train, 0);
    let chash = config.hash();
    let mut manifest = ExperimentManifest::default();
    let mut step = |name: &str, inputs: Vec<String>, outputs: Vec<String>, s: u64| {
        manifest.push(ManifestStep {
            subcommand: name.into(),
            config: chash.clone(),
            inputs,
            outputs,
            seed: s,
        })
    };
    let ck = |name: &str| format!("checkpoints/{name}.ckpt");
    step("pretrain", vec![], vec![ck("backbone"), "checkpoints/pretrain.jsonl".into()], seed);
    let mut tuned_ckpts = Vec::new();

    let m = config.tune.prompts;
    if m < 3 {
        return Err(contract(format!("reproduce-all needs tune.prompts >= 3, got {m}")));
    }
    let mut all = SeedResults::default();
    let mut params = BTreeMap::new();
    let mut partitions = BTreeMap::new();
    let arm_seeds: Vec<u64> = config.reproduce.seeds.iter().map(|&s| arm_seed(seed, s)).collect();
    for &s in &arm_seeds {
        let base = ws.tune(&encoder, &prompt_std, &train, 0, s)?;
        save_model(&ckpt_dir, &format!("baseline_seed{s}"), &base, s)?;
        let tuned = ws.tune(&encoder, &prompt_std, &train, m, s)?;
        save_model(&ckpt_dir, &format!("prompt_tuning_{m}_seed{s}"), &tuned, s)?;
        if tuned.model.encoder.frozen_hash() != frozen_hash {
            return Err(contract("encoder weights changed during prompt tuning"));
        }
        meta.checkpoints.insert(format!("baseline_seed{s}"), base.model.tuned_hash());
        meta.checkpoints.insert(format!("prompt_tuning_{m}_seed{s}"), tuned.model.tuned_hash());
        params.insert(format!("prompt_tuning_{m}"), tuned.model.trainable_parameter_count());
        params.insert("baseline".to_string(), base.model.trainable_parameter_count());
        for name in [format!("baseline_seed{s}"), format!("prompt_tuning_{m}_seed{s}")] {
            step("prompt-tune", vec![ck("backbone")], vec![ck(&name), format!("checkpoints/{name}.jsonl")], s);
            tuned_ckpts.push(ck(&name));
        }
        let r = analyze_seed(&ws, &base.model, &tuned.model, s)?;
        if let Some(b) = &r.bias {
            write_json(&out.join(format!("noise_bias_seed{s}.json")), b)?;
        }
        partitions.insert(format!("m{m}_seed{s}"), r.partition.clone());
        all.extend(r);
    }

    if let Some(mv) = config.reproduce.variant_prompts {
        let s = arm_seeds[0];
        let variant = ws.tune(&encoder, &prompt_std, &train, mv, s)?;
        save_model(&ckpt_dir, &format!("prompt_tuning_{mv}_seed{s}"), &variant, s)?;
        meta.checkpoints.insert(format!("prompt_tuning_{mv}_seed{s}"), variant.model.tuned_hash());
        params.insert(format!("prompt_tuning_{mv}"), variant.model.trainable_parameter_count());
        info!("variant m = {mv}: ablation and clustering");
        let (report, partition) = partition_model(&ws, &variant.model)?;
        all.fig4.extend(AblationRecord::from_report(s, &report));
        let projection = project_prompts_2d(&variant.model.prompts)?;
        all.fig3.extend(PromptRecord::from_projection(s, &partition, &projection));
        partitions.insert(format!("m{mv}_seed{s}"), Some(partition));
        let name = format!("prompt_tuning_{mv}_seed{s}");
        step("prompt-tune", vec![ck("backbone")], vec![ck(&name), format!("checkpoints/{name}.jsonl")], s);
        tuned_ckpts.push(ck(&name));
    }
    let biases: Vec<String> = arm_seeds.iter().map(|s| format!("noise_bias_seed{s}.json")).collect();
    for (name, artifacts) in [
        ("attack", vec!["table1_analog.csv".to_string()]),
        ("remove-prompts", vec!["table3_analog.csv".into()]),
        ("ablate", vec!["fig4_analog.csv".into()]),
        ("subsets", vec!["table2_analog.csv".into()]),
        ("project", vec!["fig3_analog.csv".into()]),
        ("probe", vec!["fig2_analog.csv".into(), "fig5_analog.csv".into()]),
        ("adapt", [vec!["table4_analog.csv".into()], biases].concat()),
    ] {
        step(name, tuned_ckpts.clone(), artifacts, seed);
    }
    manifest.validate(None)?;
    write_atomic(&out.join("manifest.jsonl"), manifest.to_jsonl()?.as_bytes())?;

    write_csv(&out.join("table1_analog.csv"), "table1_analog", &all.table1)?;
    write_csv(&out.join("table2_analog.csv"), "table2_analog", &all.table2)?;
    write_csv(&out.join("table3_analog.csv"), "table3_analog", &all.table3)?;
    write_csv(&out.join("table4_analog.csv"), "table4_analog", &all.table4)?;
    write_csv(&out.join("fig2_analog.csv"), "fig2_analog", &all.fig2)?;
    write_csv(&out.join("fig3_analog.csv"), "fig3_analog", &all.fig3)?;
    write_csv(&out.join("fig4_analog.csv"), "fig4_analog", &all.fig4)?;
    write_csv(&out.join("fig5_analog.csv"), "fig5_analog", &all.fig5)?;

    let mut artifacts = BTreeMap::new();
    artifacts.insert(
        "table1_analog".into(),
        wer_medians_only(&all.table1, &["baseline", "tuned", "random_gaussian", "zero"]),
    );
    artifacts.insert("table2_analog".into(), wer_medians_only(&all.table2, &["full", "set1", "set2"]));
    artifacts.insert("table3_analog".into(), wer_medians_only(&all.table3, &["baseline", "tuned", "removed"]));
    artifacts.insert(
        "table4_analog".into(),
        wer_medians_only(&all.table4, &["baseline", "vanilla", "shifted"]),
    );
    artifacts.insert("fig2_analog".into(), json!(median_probe(&all.fig2)));
    artifacts.insert("fig5_analog".into(), json!(median_probe(&all.fig5)));
    artifacts.insert("fig3_analog".into(), json!(partitions));
    artifacts.insert("fig4_analog".into(), fig4_summary(&all.fig4));
    artifacts.insert(
        "pretrain".into(),
        json!({
            "dev_wer": pre_record.dev_wer().last().map(|x| x.1),
            "steps": pre_record.loss_curve().last().map(|x| x.0),
        }),
    );
    artifacts.insert("trainable_parameters".into(), json!(params));
    let summary = ReproduceSummary {
        seed,
        corpus_seed: config.corpus_seed,
        arm_seeds,
        frozen_hash,
        artifacts,
    };
    write_json(&out.join("summary.json"), &summary)?;
    meta.finish(&out.join("run_metadata.json"))?;
    Ok(summary)
}

/// Median clean-split delta per prompt id, keyed by prompt count.
fn fig4_summary(records: &[AblationRecord]) -> Value {
    let mut groups: BTreeMap<usize, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.split == Split::TestClean && r.prompt > 0) {
        groups.entry(r.m).or_default().entry(r.prompt).or_default().push(r.delta);
    }
    json!(groups
        .into_iter()
        .map(|(m, per)| {
            let v: Vec<f64> = per.values().map(|d| median(d)).collect();
            (format!("m{m}"), v)
        })
        .collect::<BTreeMap<_, _>>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::synth::SynthConfig;
    use crate::training::PretrainConfig;

    /// A configuration small enough to run the whole pipeline in seconds.
    pub(crate) fn tiny_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.precision = crate::Precision::F64;
        cfg.synth = SynthConfig {
            feature_dim: 8,
            vocab: 4,
            template_contrast: 1.0,
            template_min_distance: 3.0,
            min_tokens: 2,
            max_tokens: 4,
            clip_frames: 40,
            n_train: 40,
            n_dev: 12,
            n_test: 16,
            ..SynthConfig::default()
        };
        cfg.pretrain = PretrainConfig {
            encoder: EncoderConfig {
                feature_dim: 8,
                d_model: 16,
                n_heads: 2,
                n_layers: 1,
                ffn_dim: 32,
            },
            lr: 3e-3,
            max_steps: 40,
            warmup_steps: 5,
            target_wer: 1.5,
            eval_interval: 40,
            ..PretrainConfig::default()
        };
        cfg.tune = TrainConfig {
            lr: 3e-3,
            prompts: 4,
            max_steps: 20,
            warmup_steps: 5,
            eval_interval: 20,
            eval_limit: 6,
            ..TrainConfig::default()
        };
        cfg.analysis.probe.bootstraps = 3;
        cfg.analysis.probe.iterations = 20;
        cfg.adapt.n_clips = 4;
        cfg.reproduce.seeds = vec![0, 1];
        cfg.reproduce.variant_prompts = Some(6);
        cfg
    }

    #[test]
    fn tiny_pipeline_writes_every_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let summary = reproduce_all::<f64>(&tiny_config(), 3, dir.path()).unwrap();
        for a in ARTIFACTS {
            let text = std::fs::read_to_string(dir.path().join(format!("{a}.csv"))).unwrap();
            assert!(text.starts_with(&format!("# artifact: {a}\n")), "{a}");
            assert!(text.lines().count() > 2, "{a} is empty");
            assert!(summary.artifacts.contains_key(a), "{a}");
        }
        assert_eq!(summary.arm_seeds, vec![3000, 3001]);
        assert!(dir.path().join("run_metadata.json").exists());
        assert!(dir.path().join("checkpoints/backbone.ckpt").exists());
        let r = crate::checkpoint::validate_checkpoint(&dir.path().join("checkpoints/prompt_tuning_4_seed3000.ckpt"))
            .unwrap();
        assert_eq!(r.prompt_parameters, 4 * 16);
        assert_eq!(summary.artifacts["trainable_parameters"]["prompt_tuning_4"], 4 * 16 + 16 * 5 + 5);
    }

    #[test]
    fn adapt_clips_alternate_subtypes() {
        let mut cfg = tiny_config();
        let ws = Workspace::new(cfg.clone()).unwrap();
        let clips = ws.adapt_clips();
        assert_eq!(clips.len(), 4);
        assert_ne!(clips[0].subtype, clips[1].subtype);
        cfg.adapt.ood_family = Some("printer".into());
        let ws = Workspace::new(cfg).unwrap();
        assert!(ws.adapt_clips().iter().all(|c| crate::synth::subtype(c.subtype).unwrap().name == "printer"));
    }
}
