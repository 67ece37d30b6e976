//! CSV and JSON artifacts. Every CSV starts with a `# artifact: <name>` line
//! naming the table or figure it mirrors; bodies contain no timestamps.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{AblationReport, ProbeReport, Projection, PromptPartition, WerRow};
use crate::checkpoint::write_atomic;
use crate::error::Result;
use crate::synth::Split;
use crate::tensor::Precision;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn csv_bytes<T: Serialize>(artifact: &str, rows: &[T]) -> Result<Vec<u8>> {
    let mut out = format!("# artifact: {artifact}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(out)
}

pub fn write_csv<T: Serialize>(path: &Path, artifact: &str, rows: &[T]) -> Result<()> {
    write_atomic(path, &csv_bytes(artifact, rows)?)
}

/// Reads rows back, skipping the artifact line. Returns the artifact name.
pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(String, Vec<T>)> {
    let text = std::fs::read_to_string(path)?;
    let (first, body) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    let artifact = first.strip_prefix("# artifact: ").unwrap_or_default().to_string();
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok((artifact, rows))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WerRecord {
    pub seed: u64,
    pub arm: String,
    pub split: Split,
    pub wer: f64,
    pub edits: usize,
    pub reference_tokens: usize,
}

impl WerRecord {
    pub fn from_rows(seed: u64, rows: &[WerRow]) -> Vec<Self> {
        rows.iter()
            .map(|r| WerRecord {
                seed,
                arm: r.arm.clone(),
                split: r.split,
                wer: r.wer,
                edits: r.edits,
                reference_tokens: r.reference_tokens,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRecord {
    pub seed: u64,
    pub m: usize,
    /// 0 is the full-prompt reference row.
    pub prompt: usize,
    pub split: Split,
    pub wer: f64,
    pub delta: f64,
}

impl AblationRecord {
    pub fn from_report(seed: u64, report: &AblationReport) -> Vec<Self> {
        let m = report.rows.len();
        let mut out = Vec::new();
        for (j, &split) in report.splits.iter().enumerate() {
            out.push(AblationRecord {
                seed,
                m,
                prompt: 0,
                split,
                wer: report.full[j],
                delta: 0.0,
            });
        }
        for row in &report.rows {
            for (j, &split) in report.splits.iter().enumerate() {
                out.push(AblationRecord {
                    seed,
                    m,
                    prompt: row.prompt,
                    split,
                    wer: row.wer[j],
                    delta: row.delta[j],
                });
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub seed: u64,
    pub m: usize,
    pub prompt: usize,
    pub set: String,
    pub pc1: f64,
    pub pc2: f64,
}

impl PromptRecord {
    pub fn from_projection(seed: u64, partition: &PromptPartition, projection: &Projection) -> Vec<Self> {
        let m = projection.coords.len();
        (0..m)
            .map(|k| PromptRecord {
                seed,
                m,
                prompt: k + 1,
                set: if partition.set1_content.contains(&(k + 1)) { "set1" } else { "set2" }.to_string(),
                pc1: projection.coords[k][0],
                pc2: projection.coords[k][1],
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub seed: u64,
    pub arm: String,
    pub resample: usize,
    pub accuracy: f64,
}

impl ProbeRecord {
    pub fn from_report(seed: u64, report: &ProbeReport) -> Vec<Self> {
        report
            .accuracies
            .iter()
            .enumerate()
            .map(|(i, &a)| ProbeRecord {
                seed,
                arm: report.arm.clone(),
                resample: i,
                accuracy: a,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool_version: String,
    pub subcommand: String,
    pub config_hash: String,
    pub corpus_seed: u64,
    pub seed: u64,
    pub precision: Precision,
    pub checkpoints: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunMetadata {
    pub fn new(subcommand: &str, config_hash: String, corpus_seed: u64, seed: u64, precision: Precision) -> Self {
        let now = unix_now();
        RunMetadata {
            tool_version: TOOL_VERSION.to_string(),
            subcommand: subcommand.to_string(),
            config_hash,
            corpus_seed,
            seed,
            precision,
            checkpoints: BTreeMap::new(),
            started_unix: now,
            finished_unix: now,
        }
    }

    pub fn finish(mut self, path: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        write_json(path, &self)
    }
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Median WER per `(arm, split)` over seeds.
pub fn median_wer(records: &[WerRecord]) -> BTreeMap<String, BTreeMap<String, f64>> {
    let mut groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.arm.clone(), r.split.to_string()))
            .or_default()
            .push(r.wer);
    }
    let mut out: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for ((arm, split), v) in groups {
        out.entry(arm).or_default().insert(split, crate::analysis::median(&v));
    }
    out
}

/// Median accuracy per arm, pooling resamples across seeds.
pub fn median_probe(records: &[ProbeRecord]) -> BTreeMap<String, f64> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry(r.arm.clone()).or_default().push(r.accuracy);
    }
    groups.into_iter().map(|(k, v)| (k, crate::analysis::median(&v))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(seed: u64, arm: &str, split: Split, wer: f64) -> WerRecord {
        WerRecord {
            seed,
            arm: arm.into(),
            split,
            wer,
            edits: 0,
            reference_tokens: 10,
        }
    }

    #[test]
    fn csv_roundtrip_keeps_the_artifact_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![rec(0, "tuned", Split::TestNoisy, 0.25), rec(1, "baseline", Split::TestClean, 1.0 / 3.0)];
        write_csv(&path, "table1_analog", &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# artifact: table1_analog\nseed,arm,split,wer,edits,reference_tokens\n"));
        let (artifact, back): (String, Vec<WerRecord>) = read_csv(&path).unwrap();
        assert_eq!(artifact, "table1_analog");
        assert_eq!(back, rows);
        assert_eq!(csv_bytes("x", &rows).unwrap(), csv_bytes("x", &rows).unwrap());
    }

    #[test]
    fn medians_group_by_arm_and_split() {
        let rows = vec![
            rec(0, "tuned", Split::TestNoisy, 0.3),
            rec(1, "tuned", Split::TestNoisy, 0.1),
            rec(2, "tuned", Split::TestNoisy, 0.2),
            rec(0, "tuned", Split::TestClean, 0.05),
        ];
        let m = median_wer(&rows);
        assert_eq!(m["tuned"]["test_noisy"], 0.2);
        assert_eq!(m["tuned"]["test_clean"], 0.05);
        let p = vec![
            ProbeRecord {
                seed: 0,
                arm: "full".into(),
                resample: 0,
                accuracy: 0.5,
            },
            ProbeRecord {
                seed: 1,
                arm: "full".into(),
                resample: 0,
                accuracy: 0.7,
            },
        ];
        assert_eq!(median_probe(&p)["full"], 0.6);
    }
}
