//! Binary checkpoint container.
//!
//! Layout (little-endian):
//! `magic[8] | version u32 | precision u8 | meta_len u32 | meta JSON |
//!  count u32 | count × (name_len u16 | name | rank u8 | dims u64… | values) |
//!  sha256[32]` where the digest covers every preceding byte.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoder::DecoderHead;
use crate::encoder::{EncoderConfig, EncoderModel, PromptMatrix};
use crate::error::{Error, Result};
use crate::model::PromptedModel;
use crate::params::ParamRefs;
use crate::synth::{Split, Utterance};
use crate::tensor::{Precision, Real, Tensor};

pub const MAGIC: &[u8; 8] = b"PLABCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    /// Frozen encoder only.
    Backbone,
    /// Frozen encoder plus tuned prompts and head.
    Tuned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub kind: CheckpointKind,
    pub encoder: EncoderConfig,
    pub frozen_hash: String,
    pub vocab: Option<usize>,
    pub prompts: usize,
    pub head_hidden: Option<usize>,
    pub tuned_hash: Option<String>,
    pub arm: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<S> {
    pub meta: CheckpointMeta,
    pub encoder: EncoderModel<S>,
    pub prompts: PromptMatrix<S>,
    pub head: Option<DecoderHead<S>>,
}

impl<S: Real> Checkpoint<S> {
    pub fn backbone(encoder: EncoderModel<S>) -> Self {
        let d = encoder.d_model();
        Checkpoint {
            meta: CheckpointMeta {
                kind: CheckpointKind::Backbone,
                encoder: encoder.config().clone(),
                frozen_hash: encoder.frozen_hash(),
                vocab: None,
                prompts: 0,
                head_hidden: None,
                tuned_hash: None,
                arm: None,
                seed: None,
            },
            encoder,
            prompts: PromptMatrix::empty(d),
            head: None,
        }
    }

    pub fn tuned(model: &PromptedModel<S>, arm: &str, seed: u64) -> Self {
        let encoder = (*model.encoder).clone();
        Checkpoint {
            meta: CheckpointMeta {
                kind: CheckpointKind::Tuned,
                encoder: encoder.config().clone(),
                frozen_hash: encoder.frozen_hash(),
                vocab: Some(model.head.vocab()),
                prompts: model.m(),
                head_hidden: model.head.hidden_dim(),
                tuned_hash: Some(model.tuned_hash()),
                arm: Some(arm.to_string()),
                seed: Some(seed),
            },
            encoder,
            prompts: model.prompts.clone(),
            head: Some(model.head.clone()),
        }
    }

    pub fn into_model(self) -> Result<PromptedModel<S>> {
        let head = self.head.ok_or_else(|| Error::Checkpoint {
            section: "meta".into(),
            detail: "backbone checkpoint has no decoder head".into(),
        })?;
        Ok(PromptedModel {
            encoder: std::sync::Arc::new(self.encoder),
            prompts: self.prompts,
            head,
        })
    }

    fn tensors(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out: Vec<(String, &Tensor<S>)> =
            self.encoder.params().into_iter().map(|(n, t)| (n, t.as_ref())).collect();
        out.extend(self.prompts.params().into_iter().map(|(n, t)| (n, t.as_ref())));
        if let Some(h) = &self.head {
            out.extend(h.params().into_iter().map(|(n, t)| (n, t.as_ref())));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode_container(&self.meta, &self.tensors())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (meta, mut named) = decode_container::<S>(bytes)?;
        let meta: CheckpointMeta = serde_json::from_value(meta).map_err(|e| Error::Checkpoint {
            section: "meta".into(),
            detail: format!("invalid checkpoint metadata: {e}"),
        })?;
        let head_names = |n: &str| n.starts_with("head.");
        let head_parts: Vec<(String, Tensor<S>)> = named.iter().filter(|(n, _)| head_names(n)).cloned().collect();
        named.retain(|(n, _)| !head_names(n));
        let prompts = match named.iter().position(|(n, _)| n == "prompts") {
            Some(i) => PromptMatrix::new(named.remove(i).1)?,
            None => PromptMatrix::empty(meta.encoder.d_model),
        };
        let encoder = EncoderModel::from_named(meta.encoder.clone(), named, true).map_err(|e| Error::Checkpoint {
            section: "encoder".into(),
            detail: e.to_string(),
        })?;
        if encoder.frozen_hash() != meta.frozen_hash {
            return Err(Error::Checkpoint {
                section: "encoder".into(),
                detail: format!(
                    "frozen-weight hash {} does not match recorded {}",
                    encoder.frozen_hash(),
                    meta.frozen_hash
                ),
            });
        }
        if prompts.m() != meta.prompts {
            return Err(Error::Checkpoint {
                section: "prompts".into(),
                detail: format!("meta records m = {} but the tensor has {} rows", meta.prompts, prompts.m()),
            });
        }
        let head = match meta.kind {
            CheckpointKind::Backbone => None,
            CheckpointKind::Tuned => Some(build_head(&meta, head_parts)?),
        };
        Ok(Checkpoint {
            meta,
            encoder,
            prompts,
            head,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn build_head<S: Real>(meta: &CheckpointMeta, parts: Vec<(String, Tensor<S>)>) -> Result<DecoderHead<S>> {
    let bad = |detail: String| Error::Checkpoint {
        section: "head".into(),
        detail,
    };
    let vocab = meta.vocab.ok_or_else(|| bad("tuned checkpoint lacks a vocabulary size".into()))?;
    let get = |name: &str| {
        parts
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| bad(format!("missing tensor `{name}`")))
    };
    let hidden = match meta.head_hidden {
        Some(_) => Some((get("head.hidden.weight")?, get("head.hidden.bias")?)),
        None => None,
    };
    let proj = get("head.proj.weight")?;
    let bias = get("head.proj.bias")?;
    DecoderHead::from_parts(vocab, hidden, proj, bias).map_err(|e| bad(e.to_string()))
}

/// Serializes `meta` and the named tensors into the container layout.
pub fn encode_container<S: Real, M: Serialize>(meta: &M, tensors: &[(String, &Tensor<S>)]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(S::PRECISION.tag());
    let meta = serde_json::to_vec(meta)?;
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        if name.len() > u16::MAX as usize || t.shape().len() > u8::MAX as usize {
            return Err(Error::Checkpoint {
                section: format!("tensor `{name}`"),
                detail: "name or rank too large for the container".into(),
            });
        }
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.shape().len() as u8);
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.push_le(&mut buf);
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

/// Metadata and tensors of any container, converted to `S`.
pub fn decode_container<S: Real>(bytes: &[u8]) -> Result<(serde_json::Value, Vec<(String, Tensor<S>)>)> {
    let raw = parse(bytes)?;
    if raw.precision != S::PRECISION {
        return Err(Error::Checkpoint {
            section: "header".into(),
            detail: format!("stored precision {} but {} was requested", raw.precision, S::PRECISION),
        });
    }
    let tensors = raw
        .tensors
        .into_iter()
        .map(|t| {
            let data = t.values.chunks_exact(S::PRECISION.bytes()).map(S::read_le).collect();
            Tensor::new(t.shape, data).map(|x| (t.name, x))
        })
        .collect::<Result<_>>()?;
    Ok((raw.meta, tensors))
}

struct RawTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<u8>,
}

struct RawCheckpoint {
    version: u32,
    precision: Precision,
    meta: serde_json::Value,
    tensors: Vec<RawTensor>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

fn parse(bytes: &[u8]) -> Result<RawCheckpoint> {
    let err = |section: &str, detail: String| Error::Checkpoint {
        section: section.to_string(),
        detail,
    };
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(8).ok_or_else(|| err("header", "file shorter than the magic bytes".into()))?;
    if magic != MAGIC {
        return Err(err("header", "bad magic; not a checkpoint file".into()));
    }
    let version = c.u32().ok_or_else(|| err("header", "truncated before the version".into()))?;
    if version != VERSION {
        return Err(err("header", format!("unsupported container version {version} (expected {VERSION})")));
    }
    let tag = c.u8().ok_or_else(|| err("header", "truncated before the precision tag".into()))?;
    let precision = Precision::from_tag(tag).ok_or_else(|| err("header", format!("unknown precision tag {tag}")))?;
    let meta_len = c.u32().ok_or_else(|| err("meta", "truncated before the metadata length".into()))?;
    let meta_bytes = c
        .take(meta_len as usize)
        .ok_or_else(|| err("meta", format!("metadata block of {meta_len} bytes is truncated")))?;
    let meta: serde_json::Value =
        serde_json::from_slice(meta_bytes).map_err(|e| err("meta", format!("invalid metadata: {e}")))?;
    let count = c.u32().ok_or_else(|| err("tensor table", "truncated before the tensor count".into()))?;
    let mut tensors: Vec<RawTensor> = Vec::with_capacity(count as usize);
    for i in 0..count {
        let last = tensors.last().map_or("none".to_string(), |t| format!("`{}`", t.name));
        let trunc = |what: &str| {
            err(
                &format!("tensor #{i}"),
                format!("file ends inside the {what}; last readable tensor: {last}"),
            )
        };
        let name_len = c.u16().ok_or_else(|| trunc("name length"))?;
        let name = c.take(name_len as usize).ok_or_else(|| trunc("name"))?;
        let name = String::from_utf8(name.to_vec()).map_err(|_| err(&format!("tensor #{i}"), "name is not UTF-8".into()))?;
        let trunc = |what: &str| {
            err(
                &format!("tensor `{name}`"),
                format!("file ends inside the {what}; last readable tensor: {last}"),
            )
        };
        let rank = c.u8().ok_or_else(|| trunc("rank"))?;
        let shape = (0..rank)
            .map(|_| c.u64().map(|e| e as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| trunc("shape"))?;
        let n: usize = shape.iter().product();
        let values = c
            .take(n * precision.bytes())
            .ok_or_else(|| trunc("values"))?
            .to_vec();
        tensors.push(RawTensor { name, shape, values });
    }
    let body_end = c.pos;
    let last = tensors.last().map_or("none".to_string(), |t| format!("`{}`", t.name));
    let digest = c
        .take(32)
        .ok_or_else(|| err("footer", format!("checksum missing or truncated; last readable tensor: {last}")))?;
    if c.pos != bytes.len() {
        return Err(err("footer", format!("{} trailing bytes after the checksum", bytes.len() - c.pos)));
    }
    if Sha256::digest(&bytes[..body_end]).as_slice() != digest {
        return Err(err("footer", "checksum mismatch; the file is corrupt".into()));
    }
    Ok(RawCheckpoint {
        version,
        precision,
        meta,
        tensors,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMeta {
    pub kind: String,
    pub corpus_seed: u64,
    pub split: Split,
    pub utterances: usize,
}

/// Model-input features of one split, one tensor per utterance id.
pub fn encode_features<S: Real>(corpus_seed: u64, split: Split, utts: &[Utterance]) -> Result<Vec<u8>> {
    let feats: Vec<(String, Tensor<S>)> = utts.iter().map(|u| (u.id.clone(), u.features().cast())).collect();
    let refs: Vec<(String, &Tensor<S>)> = feats.iter().map(|(n, t)| (n.clone(), t)).collect();
    let meta = FeatureMeta {
        kind: "features".into(),
        corpus_seed,
        split,
        utterances: utts.len(),
    };
    encode_container(&meta, &refs)
}

pub fn decode_features<S: Real>(bytes: &[u8]) -> Result<(FeatureMeta, Vec<(String, Tensor<S>)>)> {
    let (meta, tensors) = decode_container::<S>(bytes)?;
    let meta: FeatureMeta = serde_json::from_value(meta).map_err(|e| Error::Checkpoint {
        section: "meta".into(),
        detail: format!("invalid feature metadata: {e}"),
    })?;
    if meta.kind != "features" || meta.utterances != tensors.len() {
        return Err(Error::Checkpoint {
            section: "meta".into(),
            detail: format!("expected {} feature tensors, found {}", meta.utterances, tensors.len()),
        });
    }
    Ok((meta, tensors))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointReport {
    pub version: u32,
    pub precision: Precision,
    pub kind: CheckpointKind,
    pub m: usize,
    pub d: usize,
    pub layers: usize,
    pub frozen_hash: String,
    pub tensors: Vec<(String, Vec<usize>)>,
    pub encoder_parameters: usize,
    pub prompt_parameters: usize,
    pub head_parameters: usize,
}

impl CheckpointReport {
    pub fn trainable_parameters(&self) -> usize {
        self.prompt_parameters + self.head_parameters
    }
}

/// Full structural check: header, metadata, shape table, checksum, and the
/// recorded frozen-weight hash.
pub fn validate_bytes(bytes: &[u8]) -> Result<CheckpointReport> {
    let raw = parse(bytes)?;
    let (version, precision) = (raw.version, raw.precision);
    let tensors: Vec<(String, Vec<usize>)> = raw.tensors.iter().map(|t| (t.name.clone(), t.shape.clone())).collect();
    let count = |pred: &dyn Fn(&str) -> bool| -> usize {
        tensors
            .iter()
            .filter(|(n, _)| pred(n))
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    };
    let prompt_parameters = count(&|n| n == "prompts");
    let head_parameters = count(&|n| n.starts_with("head."));
    let encoder_parameters = count(&|n| n != "prompts" && !n.starts_with("head."));
    let meta = match precision {
        Precision::F32 => Checkpoint::<f32>::from_bytes(bytes)?.meta,
        Precision::F64 => Checkpoint::<f64>::from_bytes(bytes)?.meta,
    };
    Ok(CheckpointReport {
        version,
        precision,
        kind: meta.kind,
        m: meta.prompts,
        d: meta.encoder.d_model,
        layers: meta.encoder.n_layers,
        frozen_hash: meta.frozen_hash,
        tensors,
        encoder_parameters,
        prompt_parameters,
        head_parameters,
    })
}

pub fn validate_checkpoint(path: &Path) -> Result<CheckpointReport> {
    validate_bytes(&std::fs::read(path)?)
}

/// Precision tag of a stored checkpoint.
pub fn stored_precision(path: &Path) -> Result<Precision> {
    Ok(parse(&std::fs::read(path)?)?.precision)
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::analysis::random_prompts;

    fn tuned(m: usize, hidden: Option<usize>) -> PromptedModel<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut enc = EncoderModel::new(EncoderConfig::default(), &mut rng).unwrap();
        enc.freeze();
        PromptedModel {
            encoder: Arc::new(enc),
            prompts: random_prompts(m, 64, 0).unwrap(),
            head: DecoderHead::new(64, 12, hidden, &mut rng),
        }
    }

    #[test]
    fn tuned_roundtrip_is_exact() {
        let model = tuned(20, None);
        let ck = Checkpoint::tuned(&model, "prompt_tuning_20", 3);
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        let again = back.into_model().unwrap();
        assert_eq!(again.tuned_hash(), model.tuned_hash());
        assert_eq!(again.encoder.frozen_hash(), model.encoder.frozen_hash());
        assert!(Checkpoint::<f64>::from_bytes(&bytes).is_err());
    }

    #[test]
    fn backbone_and_hidden_head_roundtrip() {
        let model = tuned(0, Some(32));
        let ck = Checkpoint::tuned(&model, "baseline", 0);
        assert_eq!(Checkpoint::<f32>::from_bytes(&ck.to_bytes().unwrap()).unwrap(), ck);
        let bb = Checkpoint::backbone((*model.encoder).clone());
        let back = Checkpoint::<f32>::from_bytes(&bb.to_bytes().unwrap()).unwrap();
        assert_eq!(back.meta.kind, CheckpointKind::Backbone);
        assert!(back.into_model().is_err());
    }

    #[test]
    fn report_counts_trainable_parameters() {
        let ck = Checkpoint::tuned(&tuned(20, None), "prompt_tuning_20", 0);
        let r = validate_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!((r.m, r.d, r.layers), (20, 64, 4));
        assert_eq!(r.prompt_parameters, 1280);
        assert_eq!(r.head_parameters, 64 * 13 + 13);
        assert_eq!(r.trainable_parameters(), 1280 + 845);
        assert_eq!(r.encoder_parameters, ck.encoder.parameter_count());
    }

    #[test]
    fn truncation_names_the_last_readable_tensor() {
        let ck = Checkpoint::tuned(&tuned(4, None), "prompt_tuning_4", 0);
        let bytes = ck.to_bytes().unwrap();
        let names: Vec<String> = ck.tensors().into_iter().map(|(n, _)| n).collect();
        // cut in the middle of the final tensor's values
        let cut = &bytes[..bytes.len() - 32 - 5];
        let msg = validate_bytes(cut).unwrap_err().to_string();
        assert!(msg.contains(&format!("tensor `{}`", names[names.len() - 1])), "{msg}");
        assert!(msg.contains(&format!("last readable tensor: `{}`", names[names.len() - 2])), "{msg}");
        let msg = validate_bytes(&bytes[..bytes.len() - 10]).unwrap_err().to_string();
        assert!(msg.contains("footer"), "{msg}");
        assert!(validate_bytes(&bytes[..6]).unwrap_err().to_string().contains("header"));
    }

    #[test]
    fn corruption_and_hash_mismatch_are_caught() {
        let ck = Checkpoint::tuned(&tuned(2, None), "prompt_tuning_2", 0);
        let mut bytes = ck.to_bytes().unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        assert!(validate_bytes(&bytes).unwrap_err().to_string().contains("checksum"));
        let mut forged = ck.clone();
        forged.meta.frozen_hash = "00".repeat(32);
        let msg = validate_bytes(&forged.to_bytes().unwrap()).unwrap_err().to_string();
        assert!(msg.contains("frozen-weight hash"), "{msg}");
    }

    #[test]
    fn feature_blobs_roundtrip() {
        let cfg = crate::synth::SynthConfig {
            n_train: 3,
            n_dev: 3,
            n_test: 4,
            ..crate::synth::SynthConfig::default()
        };
        let corpus = crate::synth::generate_corpus(&cfg, 1).unwrap();
        let utts = corpus.split(Split::TestNoisy);
        let bytes = encode_features::<f64>(1, Split::TestNoisy, utts).unwrap();
        let (meta, feats) = decode_features::<f64>(&bytes).unwrap();
        assert_eq!((meta.split, meta.utterances), (Split::TestNoisy, 4));
        for (u, (id, t)) in utts.iter().zip(&feats) {
            assert_eq!(&u.id, id);
            assert_eq!(t, u.features());
        }
        assert!(Checkpoint::<f64>::from_bytes(&bytes).is_err());
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/model.ckpt");
        let ck = Checkpoint::tuned(&tuned(3, None), "prompt_tuning_3", 0);
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::<f32>::load(&path).unwrap(), ck);
        assert_eq!(stored_precision(&path).unwrap(), Precision::F32);
        assert_eq!(std::fs::read_dir(path.parent().unwrap()).unwrap().count(), 1);
    }
}
