//! Named parameter access shared by the encoder, prompts and decoder head.

use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::tensor::{Real, Tensor};

pub trait ParamRefs<S> {
    /// Parameters in a fixed canonical order.
    fn params(&self) -> Vec<(String, &Arc<Tensor<S>>)>;

    fn params_mut(&mut self) -> Vec<(String, &mut Arc<Tensor<S>>)>;
}

/// SHA-256 over names, shapes and little-endian values, in canonical order.
pub fn content_hash<S: Real>(params: &[(String, &Arc<Tensor<S>>)]) -> String {
    let mut hasher = Sha256::new();
    let mut buf = Vec::new();
    for (name, t) in params {
        hasher.update((name.len() as u32).to_le_bytes());
        hasher.update(name.as_bytes());
        hasher.update((t.shape().len() as u32).to_le_bytes());
        for &e in t.shape() {
            hasher.update((e as u64).to_le_bytes());
        }
        buf.clear();
        for &v in t.data() {
            v.push_le(&mut buf);
        }
        hasher.update(&buf);
    }
    hex::encode(hasher.finalize())
}
