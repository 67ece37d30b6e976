use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use promptlab::adaptation::{extract_noise_bias, shift_noise_prompts, zero_shot_adapt_eval, Normalization};
use promptlab::analysis::{
    ablate_single_prompts, attack_random_prompts, derive_partition, eval_prompt_subsets, noise_probe,
    project_prompts_2d, remove_all_prompts_eval, wer_rows, PromptPartition,
};
use promptlab::checkpoint::{encode_features, stored_precision, validate_checkpoint, write_atomic, Checkpoint};
use promptlab::config::ExperimentConfig;
use promptlab::encoder::PromptMatrix;
use promptlab::model::PromptedModel;
use promptlab::pipeline::{partition_model, reproduce_all, Workspace};
use promptlab::report::{
    csv_bytes, median_probe, median_wer, write_json, AblationRecord, ProbeRecord, PromptRecord, RunMetadata,
    WerRecord,
};
use promptlab::synth::Split;
use promptlab::training::{grid_search_lr, log_grid};
use promptlab::{Precision, Real};

use crate::checks::{self, Check};
use crate::{Cli, Command, PartitionArg};

/// Runs `body` with the scalar type matching `$p`.
macro_rules! dispatch {
    ($p:expr, $f:ident($($arg:expr),*)) => {
        match $p {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

struct Ctx<'a> {
    cli: &'a Cli,
    config: ExperimentConfig,
    out: PathBuf,
    name: &'static str,
}

impl Ctx<'_> {
    fn seed(&self) -> u64 {
        self.cli.global.seed
    }

    fn workspace(&self) -> Result<Workspace> {
        Ok(Workspace::new(self.config.clone())?)
    }

    fn metadata(&self, precision: Precision) -> RunMetadata {
        RunMetadata::new(self.name, self.config.hash(), self.config.corpus_seed, self.seed(), precision)
    }

    fn finish(&self, meta: RunMetadata) -> Result<()> {
        meta.finish(&self.out.join(format!("{}.metadata.json", self.name)))?;
        Ok(())
    }

    fn csv<T: Serialize>(&self, artifact: &str, rows: &[T]) -> Result<PathBuf> {
        let path = self.out.join(format!("{artifact}.csv"));
        write_atomic(&path, &csv_bytes(artifact, rows)?)?;
        info!("wrote {}", path.display());
        Ok(path)
    }

    fn summary(&self, value: serde_json::Value) -> Result<()> {
        write_json(&self.out.join(format!("{}.summary.json", self.name)), &value)?;
        Ok(())
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.global.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(p) = cli.global.precision {
        cfg.precision = p.into();
    }
    if let Some(s) = cli.global.corpus_seed {
        cfg.corpus_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::GenerateCorpus => "generate-corpus",
        Command::Pretrain => "pretrain",
        Command::PromptTune { .. } => "prompt-tune",
        Command::GridLr { .. } => "grid-lr",
        Command::Eval { .. } => "eval",
        Command::Attack { .. } => "attack",
        Command::RemovePrompts { .. } => "remove-prompts",
        Command::Ablate { .. } => "ablate",
        Command::Partition { .. } => "partition",
        Command::Subsets { .. } => "subsets",
        Command::Project { .. } => "project",
        Command::Probe { .. } => "probe",
        Command::Adapt { .. } => "adapt",
        Command::ValidateCheckpoint { .. } => "validate-checkpoint",
        Command::ReproduceAll => "reproduce-all",
    }
}

fn checkpoint_precision(path: &Path) -> Result<Precision> {
    if !path.exists() {
        bail!("checkpoint {} does not exist", path.display());
    }
    stored_precision(path).with_context(|| format!("reading {}", path.display()))
}

pub fn run(cli: &Cli) -> Result<Vec<Check>> {
    if let Command::ValidateCheckpoint { path } = &cli.command {
        return validate(path);
    }
    let mut config = load_config(cli)?;
    if let Command::Adapt {
        ood_family,
        n_clips,
        raw,
        promptless,
        ..
    } = &cli.command
    {
        if ood_family.is_some() {
            config.adapt.ood_family = ood_family.clone();
        }
        if let Some(n) = n_clips {
            config.adapt.n_clips = *n;
        }
        if *raw {
            config.adapt.normalization = Normalization::Raw;
        }
        if *promptless {
            config.adapt.with_prompts = false;
        }
        config.validate()?;
    }
    let ctx = Ctx {
        cli,
        config,
        out: cli.global.out.clone(),
        name: name(&cli.command),
    };
    std::fs::create_dir_all(&ctx.out).with_context(|| format!("creating {}", ctx.out.display()))?;
    let run_precision = ctx.config.precision;
    match &cli.command {
        Command::GenerateCorpus => dispatch!(run_precision, generate_corpus(&ctx)),
        Command::Pretrain => dispatch!(run_precision, pretrain(&ctx)),
        Command::PromptTune { backbone, prompts } => {
            let p = checkpoint_precision(backbone)?;
            dispatch!(p, prompt_tune(&ctx, backbone, *prompts))
        }
        Command::GridLr {
            backbone,
            prompts,
            points,
        } => {
            let p = checkpoint_precision(backbone)?;
            dispatch!(p, grid_lr(&ctx, backbone, *prompts, *points))
        }
        Command::ReproduceAll => dispatch!(run_precision, reproduce(&ctx)),
        Command::Eval { tuned, ood } => {
            let p = checkpoint_precision(&tuned.checkpoint)?;
            dispatch!(p, eval(&ctx, &tuned.checkpoint, *ood))
        }
        Command::Attack { tuned, baseline } => {
            let p = checkpoint_precision(&tuned.checkpoint)?;
            dispatch!(p, attack(&ctx, &tuned.checkpoint, baseline.as_deref()))
        }
        Command::RemovePrompts { tuned, baseline } => {
            let p = checkpoint_precision(&tuned.checkpoint)?;
            dispatch!(p, remove_prompts(&ctx, &tuned.checkpoint, baseline.as_deref()))
        }
        Command::Ablate { tuned } => {
            let p = checkpoint_precision(&tuned.checkpoint)?;
            dispatch!(p, ablate(&ctx, &tuned.checkpoint))
        }
        Command::Partition { tuned, clusters } => {
            let p = checkpoint_precision(&tuned.checkpoint)?;
            dispatch!(p, partition(&ctx, &tuned.checkpoint, *clusters))
        }
        Command::Subsets { tuned, partition } => {
            let p = checkpoint_precision(&tuned.checkpoint)?;
            dispatch!(p, subsets(&ctx, &tuned.checkpoint, partition))
        }
        Command::Project { tuned, partition } => {
            let p = checkpoint_precision(&tuned.checkpoint)?;
            dispatch!(p, project(&ctx, &tuned.checkpoint, partition))
        }
        Command::Probe { tuned, partition, include_prompts } => {
            let p = checkpoint_precision(&tuned.checkpoint)?;
            dispatch!(p, probe(&ctx, &tuned.checkpoint, partition, *include_prompts))
        }
        Command::Adapt {
            tuned,
            baseline,
            partition,
            ..
        } => {
            let p = checkpoint_precision(&tuned.checkpoint)?;
            dispatch!(p, adapt(&ctx, &tuned.checkpoint, baseline, partition))
        }
        Command::ValidateCheckpoint { .. } => unreachable!(),
    }
}

fn validate(path: &Path) -> Result<Vec<Check>> {
    if !path.exists() {
        bail!("checkpoint {} does not exist", path.display());
    }
    let r = validate_checkpoint(path).with_context(|| format!("validating {}", path.display()))?;
    println!(
        "OK {}: version {} {} {:?} m={} d={} layers={} tensors={}",
        path.display(),
        r.version,
        r.precision,
        r.kind,
        r.m,
        r.d,
        r.layers,
        r.tensors.len()
    );
    println!("frozen hash: {}", r.frozen_hash);
    println!(
        "trainable parameters: {} ({} prompt + {} head); frozen encoder parameters: {}",
        r.trainable_parameters(),
        r.prompt_parameters,
        r.head_parameters,
        r.encoder_parameters
    );
    Ok(Vec::new())
}

/// Loads a tuned checkpoint and checks it matches the configured corpus.
fn load_tuned<S: Real>(ctx: &Ctx, path: &Path, meta: &mut RunMetadata) -> Result<PromptedModel<S>> {
    let ck = Checkpoint::<S>::load(path).with_context(|| format!("loading {}", path.display()))?;
    if ck.meta.encoder.feature_dim != ctx.config.synth.feature_dim {
        bail!(
            "{} expects {}-dim features but the config generates {}",
            path.display(),
            ck.meta.encoder.feature_dim,
            ctx.config.synth.feature_dim
        );
    }
    if let Some(v) = ck.meta.vocab {
        if v != ctx.config.synth.vocab {
            bail!("{} has vocabulary {v}, config has {}", path.display(), ctx.config.synth.vocab);
        }
    }
    if S::PRECISION != ctx.config.precision && ctx.cli.global.precision.is_some() {
        warn!("{} is stored in {}; using that precision", path.display(), S::PRECISION);
    }
    let model = ck.into_model().with_context(|| format!("loading {}", path.display()))?;
    meta.checkpoints.insert(path.display().to_string(), model.tuned_hash());
    Ok(model)
}

fn load_backbone<S: Real>(path: &Path, meta: &mut RunMetadata) -> Result<Arc<promptlab::encoder::EncoderModel<S>>> {
    let ck = Checkpoint::<S>::load(path).with_context(|| format!("loading {}", path.display()))?;
    meta.checkpoints.insert(path.display().to_string(), ck.meta.frozen_hash.clone());
    Ok(Arc::new(ck.encoder))
}

fn load_partition<S: Real>(
    ctx: &Ctx,
    ws: &Workspace,
    model: &PromptedModel<S>,
    arg: &PartitionArg,
) -> Result<PromptPartition> {
    match &arg.partition {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let p: PromptPartition =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            p.validate(model.m())?;
            Ok(p)
        }
        None => {
            info!("no --partition given; deriving one ({} prompts)", model.m());
            let _ = ctx;
            Ok(partition_model(ws, model)?.1)
        }
    }
}

fn generate_corpus<S: Real>(ctx: &Ctx) -> Result<Vec<Check>> {
    let ws = ctx.workspace()?;
    let meta = ctx.metadata(S::PRECISION);
    write_atomic(&ctx.out.join("manifest.jsonl"), ws.corpus.manifest_jsonl()?.as_bytes())?;
    for split in Split::ALL {
        let bytes = encode_features::<S>(ctx.config.corpus_seed, split, ws.corpus.split(split))?;
        write_atomic(&ctx.out.join(format!("features_{split}.bin")), &bytes)?;
    }
    let counts: serde_json::Map<String, serde_json::Value> =
        Split::ALL.iter().map(|s| (s.to_string(), json!(ws.corpus.split(*s).len()))).collect();
    ctx.summary(json!({ "corpus_seed": ctx.config.corpus_seed, "utterances": counts }))?;
    ctx.finish(meta)?;
    Ok(Vec::new())
}

fn pretrain<S: Real>(ctx: &Ctx) -> Result<Vec<Check>> {
    let ws = ctx.workspace()?;
    let mut meta = ctx.metadata(S::PRECISION);
    let (encoder, mut record) = ws.pretrain::<S>(ctx.seed())?;
    let path = ctx.out.join("backbone.ckpt");
    Checkpoint::backbone(encoder.clone()).save(&path)?;
    record.set_checkpoint(path.display().to_string());
    write_atomic(&ctx.out.join("pretrain.jsonl"), record.to_jsonl()?.as_bytes())?;
    meta.checkpoints.insert(path.display().to_string(), encoder.frozen_hash());
    let dev = record.dev_wer().last().map(|x| x.1);
    println!("backbone: {} (dev-clean WER {:?})", path.display(), dev);
    ctx.summary(json!({ "checkpoint": path, "frozen_hash": encoder.frozen_hash(), "dev_clean_wer": dev }))?;
    ctx.finish(meta)?;
    let target = ctx.config.pretrain.target_wer;
    Ok(vec![Check::new(
        "backbone_reaches_target",
        dev.is_some_and(|w| w <= target),
        format!("dev-clean WER {dev:?} <= {target}"),
    )])
}

fn prompt_tune<S: Real>(ctx: &Ctx, backbone: &Path, prompts: Option<usize>) -> Result<Vec<Check>> {
    let ws = ctx.workspace()?;
    let mut meta = ctx.metadata(S::PRECISION);
    let encoder = load_backbone::<S>(backbone, &mut meta)?;
    let before = encoder.frozen_hash();
    let m = prompts.unwrap_or(ctx.config.tune.prompts);
    let std = ws.prompt_std(&encoder)?;
    let train = ws.split::<S>(Split::Train, 0);
    let mut outcome = ws.tune(&encoder, &std, &train, m, ctx.seed())?;
    let arm = if m == 0 { "baseline".to_string() } else { format!("prompt_tuning_{m}") };
    let stem = format!("{arm}_seed{}", ctx.seed());
    let path = ctx.out.join(format!("{stem}.ckpt"));
    Checkpoint::tuned(&outcome.model, &arm, ctx.seed()).save(&path)?;
    outcome.record.set_checkpoint(path.display().to_string());
    write_atomic(&ctx.out.join(format!("{stem}.jsonl")), outcome.record.to_jsonl()?.as_bytes())?;
    let after = outcome.model.encoder.frozen_hash();
    meta.checkpoints.insert(path.display().to_string(), outcome.model.tuned_hash());
    let params = outcome.model.trainable_parameter_count();
    println!(
        "{}: {params} trainable parameters ({} prompt + {} head)",
        path.display(),
        outcome.model.prompts.parameter_count(),
        outcome.model.head.parameter_count()
    );
    ctx.summary(json!({
        "checkpoint": path,
        "arm": arm,
        "trainable_parameters": params,
        "dev_noisy_wer": outcome.record.dev_wer().last().map(|x| x.1),
    }))?;
    ctx.finish(meta)?;
    Ok(vec![Check::new("encoder_frozen", before == after, format!("hash {before}"))])
}

#[derive(Serialize)]
struct GridRow {
    lr: f64,
    dev_clean_wer: f64,
    selected: bool,
}

fn grid_lr<S: Real>(ctx: &Ctx, backbone: &Path, prompts: Option<usize>, points: usize) -> Result<Vec<Check>> {
    let ws = ctx.workspace()?;
    let mut meta = ctx.metadata(S::PRECISION);
    let encoder = load_backbone::<S>(backbone, &mut meta)?;
    let mut cfg = ws.tune_config(prompts.unwrap_or(ctx.config.tune.prompts), ctx.seed());
    let [lo, hi] = cfg.lr_grid;
    let candidates = log_grid(lo, hi, points);
    cfg.grid_search = false;
    let std = ws.prompt_std(&encoder)?;
    let train = ws.split::<S>(Split::Train, 0);
    let dev = ws.split::<S>(Split::DevClean, cfg.eval_limit);
    let r = grid_search_lr(&candidates, &encoder, &train, &dev, &std, ws.vocab(), &cfg)?;
    let rows: Vec<GridRow> = r
        .rows
        .iter()
        .map(|&(lr, w)| GridRow {
            lr,
            dev_clean_wer: w,
            selected: lr == r.best_lr,
        })
        .collect();
    ctx.csv("grid_lr", &rows)?;
    println!("best lr {}", r.best_lr);
    ctx.summary(json!({ "best_lr": r.best_lr, "candidates": candidates }))?;
    ctx.finish(meta)?;
    Ok(Vec::new())
}

fn eval<S: Real>(ctx: &Ctx, ckpt: &Path, ood: bool) -> Result<Vec<Check>> {
    let ws = ctx.workspace()?;
    let mut meta = ctx.metadata(S::PRECISION);
    let model = load_tuned::<S>(ctx, ckpt, &mut meta)?;
    let mut sets = ws.test_sets::<S>(ctx.config.analysis.eval_limit);
    if ood {
        sets.extend(ws.ood_sets::<S>(ctx.config.analysis.eval_limit));
    }
    let arm = if model.m() == 0 { "baseline" } else { "tuned" };
    let recs = WerRecord::from_rows(ctx.seed(), &wer_rows(arm, &model, &sets)?);
    for r in &recs {
        println!("{} {}: WER {:.4} ({} / {})", r.arm, r.split, r.wer, r.edits, r.reference_tokens);
    }
    ctx.csv("eval", &recs)?;
    ctx.summary(json!(median_wer(&recs)))?;
    ctx.finish(meta)?;
    Ok(Vec::new())
}

fn with_baseline<S: Real>(
    ctx: &Ctx,
    baseline: Option<&Path>,
    sets: &promptlab::analysis::EvalSets<S>,
    meta: &mut RunMetadata,
) -> Result<Vec<WerRecord>> {
    match baseline {
        Some(p) => {
            let b = load_tuned::<S>(ctx, p, meta)?;
            Ok(WerRecord::from_rows(ctx.seed(), &wer_rows("baseline", &b, sets)?))
        }
        None => Ok(Vec::new()),
    }
}

fn attack<S: Real>(ctx: &Ctx, ckpt: &Path, baseline: Option<&Path>) -> Result<Vec<Check>> {
    let ws = ctx.workspace()?;
    let mut meta = ctx.metadata(S::PRECISION);
    let model = load_tuned::<S>(ctx, ckpt, &mut meta)?;
    let sets = ws.test_sets::<S>(ctx.config.analysis.eval_limit);
    let mut recs = with_baseline(ctx, baseline, &sets, &mut meta)?;
    recs.extend(WerRecord::from_rows(ctx.seed(), &attack_random_prompts(&model, &sets, ctx.seed())?));
    ctx.csv("table1_analog", &recs)?;
    let med = median_wer(&recs);
    ctx.summary(json!({ "table1_analog": med }))?;
    ctx.finish(meta)?;
    Ok(checks::table1(&med))
}

fn remove_prompts<S: Real>(ctx: &Ctx, ckpt: &Path, baseline: Option<&Path>) -> Result<Vec<Check>> {
    let ws = ctx.workspace()?;
    let mut meta = ctx.metadata(S::PRECISION);
    let model = load_tuned::<S>(ctx, ckpt, &mut meta)?;
    let sets = ws.test_sets::<S>(ctx.config.analysis.eval_limit);
    let mut recs = with_baseline(ctx, baseline, &sets, &mut meta)?;
    recs.extend(WerRecord::from_rows(ctx.seed(), &remove_all_prompts_eval(&model, &sets)?));
    ctx.csv("table3_analog", &recs)?;
    let med = median_wer(&recs);
    ctx.summary(json!({ "table3_analog": med }))?;
    ctx.finish(meta)?;
    Ok(checks::table3(&med))
}

fn ablate<S: Real>(ctx: &Ctx, ckpt: &Path) -> Result<Vec<Check>> {
    let ws = ctx.workspace()?;
    let mut meta = ctx.metadata(S::PRECISION);
    let model = load_tuned::<S>(ctx, ckpt, &mut meta)?;
    let sets = ws.test_sets::<S>(ctx.config.analysis.ablation_limit);
    let report = ablate_single_prompts(&model, &sets)?;
    ctx.csv("fig4_analog", &AblationRecord::from_report(ctx.seed(), &report))?;
    ctx.summary(json!({
        "fig4_analog": {
            "full": report.full,
            "splits": report.splits,
            "clean_delta": report.deltas(Split::TestClean),
        }
    }))?;
    ctx.finish(meta)?;
    Ok(Vec::new())
}

fn partition<S: Real>(ctx: &Ctx, ckpt: &Path, clusters: Option<usize>) -> Result<Vec<Check>> {
    let ws = ctx.workspace()?;
    let mut meta = ctx.metadata(S::PRECISION);
    let model = load_tuned::<S>(ctx, ckpt, &mut meta)?;
    let p = match clusters {
        None => partition_model(&ws, &model)?.1,
        Some(k) => {
            let sets = ws.test_sets::<S>(ctx.config.analysis.ablation_limit);
            let report = ablate_single_prompts(&model, &sets)?;
            derive_partition(&report, &model.prompts, k, ctx.config.analysis.kmeans_seed)?
        }
    };
    let path = ctx.out.join("partition.json");
    write_json(&path, &p)?;
    println!("set1 (content): {:?}\nset2 (noise): {:?}", p.set1_content, p.set2_noise);
    ctx.summary(json!({ "partition": p, "path": path }))?;
    ctx.finish(meta)?;
    Ok(Vec::new())
}

fn subsets<S: Real>(ctx: &Ctx, ckpt: &Path, arg: &PartitionArg) -> Result<Vec<Check>> {
    let ws = ctx.workspace()?;
    let mut meta = ctx.metadata(S::PRECISION);
    let model = load_tuned::<S>(ctx, ckpt, &mut meta)?;
    let p = load_partition(ctx, &ws, &model, arg)?;
    let sets = ws.test_sets::<S>(ctx.config.analysis.eval_limit);
    let recs = WerRecord::from_rows(ctx.seed(), &eval_prompt_subsets(&model, &p, &sets)?);
    ctx.csv("table2_analog", &recs)?;
    let med = median_wer(&recs);
    ctx.summary(json!({ "table2_analog": med, "partition": p }))?;
    ctx.finish(meta)?;
    Ok(checks::table2(&med))
}

fn project<S: Real>(ctx: &Ctx, ckpt: &Path, arg: &PartitionArg) -> Result<Vec<Check>> {
    let ws = ctx.workspace()?;
    let mut meta = ctx.metadata(S::PRECISION);
    let model = load_tuned::<S>(ctx, ckpt, &mut meta)?;
    let p = load_partition(ctx, &ws, &model, arg)?;
    let proj = project_prompts_2d(&model.prompts)?;
    ctx.csv("fig3_analog", &PromptRecord::from_projection(ctx.seed(), &p, &proj))?;
    ctx.summary(json!({ "fig3_analog": { "partition": p, "eigenvalues": proj.eigenvalues } }))?;
    ctx.finish(meta)?;
    Ok(Vec::new())
}

fn probe<S: Real>(ctx: &Ctx, ckpt: &Path, arg: &PartitionArg, include_prompts: bool) -> Result<Vec<Check>> {
    let ws = ctx.workspace()?;
    let mut meta = ctx.metadata(S::PRECISION);
    let model = load_tuned::<S>(ctx, ckpt, &mut meta)?;
    let p = load_partition(ctx, &ws, &model, arg)?;
    let noisy = ws.split::<S>(Split::TestNoisy, ctx.config.analysis.eval_limit);
    let mut cfg = ws.probe_config(ctx.seed());
    cfg.include_prompts |= include_prompts;
    let enc = &model.encoder;
    let arms: [(&str, PromptMatrix<S>); 4] = [
        ("baseline", PromptMatrix::empty(enc.d_model())),
        ("full", model.prompts.clone()),
        ("set1", model.prompts.select(&p.set1_rows())?),
        ("set2", model.prompts.select(&p.set2_rows())?),
    ];
    let mut fig2 = Vec::new();
    let mut fig5 = Vec::new();
    for (arm, prompts) in &arms {
        let r = noise_probe(arm, enc, prompts, &noisy, &cfg)?;
        println!("{arm}: median accuracy {:.4} over {} resamples", r.median(), r.accuracies.len());
        let recs = ProbeRecord::from_report(ctx.seed(), &r);
        if matches!(*arm, "baseline" | "full") {
            fig2.extend(recs);
        } else {
            fig5.extend(recs);
        }
    }
    ctx.csv("fig2_analog", &fig2)?;
    ctx.csv("fig5_analog", &fig5)?;
    let (m2, m5) = (median_probe(&fig2), median_probe(&fig5));
    ctx.summary(json!({ "fig2_analog": m2, "fig5_analog": m5 }))?;
    ctx.finish(meta)?;
    Ok(vec![
        checks::probe_order("prompts_carry_noise", &m2, "full", "baseline"),
        checks::probe_order("noise_set_carries_noise", &m5, "set2", "set1"),
    ])
}

fn adapt<S: Real>(ctx: &Ctx, ckpt: &Path, baseline: &Path, arg: &PartitionArg) -> Result<Vec<Check>> {
    let ws = ctx.workspace()?;
    let mut meta = ctx.metadata(S::PRECISION);
    let model = load_tuned::<S>(ctx, ckpt, &mut meta)?;
    let base = load_tuned::<S>(ctx, baseline, &mut meta)?;
    let p = load_partition(ctx, &ws, &model, arg)?;
    let a = &ctx.config.adapt;
    let clips = ws.adapt_clips();
    let bias = extract_noise_bias(&model, &clips, a.with_prompts, a.normalization)?;
    let sets = ws.ood_sets::<S>(ctx.config.analysis.eval_limit);
    let recs = WerRecord::from_rows(ctx.seed(), &zero_shot_adapt_eval(&base, &model, &p, &bias, &sets)?);
    ctx.csv("table4_analog", &recs)?;
    write_json(&ctx.out.join("noise_bias.json"), &bias)?;

    let ones = vec![1.0; model.prompts.d()];
    let identity = model.with_prompts(shift_noise_prompts(&model.prompts, &p, &ones)?);
    let (id_tally, vanilla_tally) = (identity.evaluate(&sets[0].1)?, model.evaluate(&sets[0].1)?);
    let id_exact = identity.prompts == model.prompts && id_tally == vanilla_tally;

    let med = median_wer(&recs);
    ctx.summary(json!({ "table4_analog": med, "partition": p, "bias_clips": bias.source }))?;
    ctx.finish(meta)?;
    let mut out = checks::table4(&med);
    out.push(Check::new("identity_shift_is_vanilla", id_exact, format!("{id_tally:?}")));
    Ok(out)
}

fn reproduce<S: Real>(ctx: &Ctx) -> Result<Vec<Check>> {
    let summary = reproduce_all::<S>(&ctx.config, ctx.seed(), &ctx.out)?;
    println!("summary: {}", ctx.out.join("summary.json").display());
    let medians = |key: &str| -> checks::Medians {
        serde_json::from_value(summary.artifacts[key].clone()).unwrap_or_default()
    };
    let probes = |key: &str| -> std::collections::BTreeMap<String, f64> {
        serde_json::from_value(summary.artifacts[key].clone()).unwrap_or_default()
    };
    let mut out = checks::table1(&medians("table1_analog"));
    out.extend(checks::table3(&medians("table3_analog")));
    out.extend(checks::table2(&medians("table2_analog")));
    out.extend(checks::table4(&medians("table4_analog")));
    out.push(checks::probe_order("prompts_carry_noise", &probes("fig2_analog"), "full", "baseline"));
    out.push(checks::probe_order("noise_set_carries_noise", &probes("fig5_analog"), "set2", "set1"));
    Ok(out)
}
