use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Loss curve, dev WER checkpoints and the config the run started with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    arm: String,
    optimizer: String,
    config: serde_json::Value,
    loss_curve: Vec<(usize, f64)>,
    dev_wer: Vec<(usize, f64)>,
    frozen_hash: Option<String>,
    checkpoint: Option<String>,
}

/// One line of the JSONL rendering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordLine {
    Run {
        arm: String,
        optimizer: String,
        config: serde_json::Value,
    },
    Loss {
        step: usize,
        loss: f64,
    },
    DevWer {
        step: usize,
        wer: f64,
    },
    Artifact {
        frozen_hash: Option<String>,
        checkpoint: Option<String>,
    },
}

impl RunRecord {
    pub fn new(arm: &str, optimizer: &str, config: serde_json::Value) -> Self {
        RunRecord {
            arm: arm.to_string(),
            optimizer: optimizer.to_string(),
            config,
            loss_curve: Vec::new(),
            dev_wer: Vec::new(),
            frozen_hash: None,
            checkpoint: None,
        }
    }

    pub fn arm(&self) -> &str {
        &self.arm
    }

    pub fn config(&self) -> &serde_json::Value {
        &self.config
    }

    pub fn loss_curve(&self) -> &[(usize, f64)] {
        &self.loss_curve
    }

    pub fn dev_wer(&self) -> &[(usize, f64)] {
        &self.dev_wer
    }

    pub fn frozen_hash(&self) -> Option<&str> {
        self.frozen_hash.as_deref()
    }

    pub fn checkpoint(&self) -> Option<&str> {
        self.checkpoint.as_deref()
    }

    pub(crate) fn push_loss(&mut self, step: usize, loss: f64) {
        debug_assert!(self.loss_curve.last().is_none_or(|&(s, _)| s < step));
        self.loss_curve.push((step, loss));
    }

    pub(crate) fn push_dev_wer(&mut self, step: usize, wer: f64) {
        debug_assert!(self.dev_wer.last().is_none_or(|&(s, _)| s < step));
        self.dev_wer.push((step, wer));
    }

    pub(crate) fn set_frozen_hash(&mut self, hash: String) {
        self.frozen_hash = Some(hash);
    }

    pub fn set_checkpoint(&mut self, path: impl Into<String>) {
        self.checkpoint = Some(path.into());
    }

    pub fn lines(&self) -> Vec<RecordLine> {
        let mut out = vec![RecordLine::Run {
            arm: self.arm.clone(),
            optimizer: self.optimizer.clone(),
            config: self.config.clone(),
        }];
        out.extend(self.loss_curve.iter().map(|&(step, loss)| RecordLine::Loss { step, loss }));
        out.extend(self.dev_wer.iter().map(|&(step, wer)| RecordLine::DevWer { step, wer }));
        out.push(RecordLine::Artifact {
            frozen_hash: self.frozen_hash.clone(),
            checkpoint: self.checkpoint.clone(),
        });
        out
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for line in self.lines() {
            s.push_str(&serde_json::to_string(&line)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut rec = RunRecord::new("", "", serde_json::Value::Null);
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str(line)? {
                RecordLine::Run { arm, optimizer, config } => {
                    rec.arm = arm;
                    rec.optimizer = optimizer;
                    rec.config = config;
                }
                RecordLine::Loss { step, loss } => rec.loss_curve.push((step, loss)),
                RecordLine::DevWer { step, wer } => rec.dev_wer.push((step, wer)),
                RecordLine::Artifact { frozen_hash, checkpoint } => {
                    rec.frozen_hash = frozen_hash;
                    rec.checkpoint = checkpoint;
                }
            }
        }
        Ok(rec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let mut r = RunRecord::new("baseline", "adam", serde_json::json!({"lr": 1e-4}));
        r.push_loss(10, 3.5);
        r.push_loss(20, 2.25);
        r.push_dev_wer(20, 0.5);
        r.set_checkpoint("runs/x.ckpt");
        let text = r.to_jsonl().unwrap();
        assert_eq!(text.lines().count(), 5);
        assert_eq!(RunRecord::from_jsonl(&text).unwrap(), r);
    }
}
