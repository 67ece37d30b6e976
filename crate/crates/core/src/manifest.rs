//! Ordered record of the steps a run performed: which subcommand, with which
//! config, consuming and producing which files.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestStep {
    pub subcommand: String,
    /// Config hash or path.
    pub config: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExperimentManifest {
    pub steps: Vec<ManifestStep>,
}

fn bad(detail: String) -> Error {
    Error::Config {
        path: "manifest".into(),
        detail,
    }
}

impl ExperimentManifest {
    pub fn push(&mut self, step: ManifestStep) {
        self.steps.push(step);
    }

    /// Outputs must be unique; every input must come from an earlier step or
    /// already exist under `root`.
    pub fn validate(&self, root: Option<&Path>) -> Result<()> {
        let mut produced = BTreeSet::new();
        for (i, step) in self.steps.iter().enumerate() {
            for input in &step.inputs {
                let on_disk = root.is_some_and(|r| r.join(input).exists());
                if !produced.contains(input) && !on_disk {
                    return Err(bad(format!(
                        "step {i} ({}) references `{input}`, which no earlier step produces",
                        step.subcommand
                    )));
                }
            }
            for out in &step.outputs {
                if !produced.insert(out.clone()) {
                    return Err(bad(format!("output `{out}` is written twice (step {i})")));
                }
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for step in &self.steps {
            s.push_str(&serde_json::to_string(step)?);
            s.push('\n');
        }
        Ok(s)
    }

    /// Parses and validates; inputs are resolved against `root` when given.
    pub fn from_jsonl(text: &str, root: Option<&Path>) -> Result<Self> {
        let steps = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| bad(format!("line {}: {e}", i + 1))))
            .collect::<Result<Vec<ManifestStep>>>()?;
        let m = ExperimentManifest { steps };
        m.validate(root)?;
        Ok(m)
    }
}
