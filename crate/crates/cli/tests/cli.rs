use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
schema_version = 1
precision = "f64"

[synth]
feature_dim = 8
vocab = 4
template_contrast = 1.0
template_min_distance = 3.0
min_tokens = 2
max_tokens = 4
clip_frames = 40
n_train = 40
n_dev = 12
n_test = 16

[pretrain]
max_steps = 40
eval_interval = 40
target_wer = 100.0

[pretrain.encoder]
feature_dim = 8
d_model = 16
n_heads = 2
n_layers = 1
ffn_dim = 32

[tune]
prompts = 4
max_steps = 20
eval_interval = 20
eval_limit = 6

[analysis.probe]
bootstraps = 3
iterations = 20

[adapt]
n_clips = 4

[reproduce]
seeds = [0, 1]
variant_prompts = 6
"#;

fn promptlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_promptlab"))
        .args(args)
        .arg("--config")
        .arg(dir.join("tiny.toml"))
        .arg("--out")
        .arg(dir.join("out"))
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

#[test]
fn config_errors_name_the_field() {
    let dir = setup();
    std::fs::write(dir.path().join("tiny.toml"), "schema_version = 1\n[tune]\nlearning_rate = 1\n").unwrap();
    let o = promptlab(dir.path(), &["pretrain"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("tune.learning_rate"), "{}", text(&o));
}

#[test]
fn missing_checkpoint_is_an_error() {
    let dir = setup();
    let o = promptlab(dir.path(), &["eval", "--checkpoint", "nowhere.ckpt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("nowhere.ckpt"));
}

#[test]
fn checkpoint_lifecycle() {
    let dir = setup();
    let out = dir.path().join("out");
    let o = promptlab(dir.path(), &["pretrain", "--seed", "1"]);
    assert!(o.status.code().unwrap() < 2, "{}", text(&o));
    let backbone = out.join("backbone.ckpt");
    let b = backbone.to_str().unwrap();

    let o = promptlab(dir.path(), &["prompt-tune", "--backbone", b, "--prompts", "0", "--seed", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let o = promptlab(dir.path(), &["prompt-tune", "--backbone", b, "--seed", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(text(&o).contains("149 trainable parameters (64 prompt + 85 head)"), "{}", text(&o));
    let tuned = out.join("prompt_tuning_4_seed2.ckpt");
    let t = tuned.to_str().unwrap();
    let baseline = out.join("baseline_seed2.ckpt");

    let o = promptlab(dir.path(), &["validate-checkpoint", t]);
    assert_eq!(o.status.code(), Some(0));
    assert!(text(&o).contains("m=4 d=16 layers=1"), "{}", text(&o));

    let o = promptlab(dir.path(), &["eval", "--checkpoint", baseline.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let csv = std::fs::read_to_string(out.join("eval.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# artifact: eval");
    assert_eq!(lines.len(), 2 + 3);
    for (line, split) in lines[2..].iter().zip(["test_clean", "test_other", "test_noisy"]) {
        assert!(line.contains(&format!(",baseline,{split},")), "{line}");
    }
    let o = promptlab(dir.path(), &["eval", "--checkpoint", baseline.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(out.join("eval.csv")).unwrap(), csv);
    assert!(out.join("eval.metadata.json").exists());

    let o = promptlab(dir.path(), &["partition", "--checkpoint", t]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let part = out.join("partition.json");
    for cmd in ["subsets", "project", "probe"] {
        let o = promptlab(dir.path(), &[cmd, "--checkpoint", t, "--partition", part.to_str().unwrap()]);
        assert!(o.status.code().unwrap() < 2, "{cmd}: {}", text(&o));
    }
    let o = promptlab(dir.path(), &["probe", "--checkpoint", t, "--include-prompts"]);
    assert!(o.status.code().unwrap() < 2, "{}", text(&o));
    for art in ["table2_analog", "fig3_analog", "fig2_analog", "fig5_analog"] {
        let s = std::fs::read_to_string(out.join(format!("{art}.csv"))).unwrap();
        assert!(s.starts_with(&format!("# artifact: {art}\n")));
    }
    let o = promptlab(
        dir.path(),
        &["adapt", "--checkpoint", t, "--baseline", baseline.to_str().unwrap(), "--ood-family", "printer", "--raw"],
    );
    assert!(o.status.code().unwrap() < 2, "{}", text(&o));
    assert!(text(&o).contains("check identity_shift_is_vanilla: ok"), "{}", text(&o));
    let bias: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("noise_bias.json")).unwrap()).unwrap();
    assert_eq!(bias["normalization"]["method"], "raw");
    assert!(bias["source"].as_array().unwrap().iter().all(|s| s.as_str().unwrap().starts_with("printer")));

    let bytes = std::fs::read(&tuned).unwrap();
    let cut = dir.path().join("cut.ckpt");
    std::fs::write(&cut, &bytes[..bytes.len() - 200]).unwrap();
    let o = promptlab(dir.path(), &["validate-checkpoint", cut.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("last readable tensor"), "{}", text(&o));
}

#[test]
fn reproduce_all_writes_the_summary() {
    let dir = setup();
    let o = promptlab(dir.path(), &["reproduce-all", "--seed", "4"]);
    assert!(o.status.code().unwrap() < 2, "{}", text(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    for key in ["table1_analog", "table2_analog", "table3_analog", "table4_analog", "fig2_analog", "fig3_analog"] {
        assert!(summary["artifacts"].get(key).is_some(), "{key}");
    }
    assert!(text(&o).contains("check random_prompts_hurt"));
}
