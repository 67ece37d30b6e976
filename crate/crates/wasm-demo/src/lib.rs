//! wasm-bindgen bindings for the static demo page in `www/`. Every entry
//! point takes plain numbers and returns a JSON string.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use promptlab::adaptation::rms;
use promptlab::analysis::{project_2d, random_prompts};
use promptlab::encoder::{EncoderConfig, EncoderModel};
use promptlab::synth::{generate_clip, mix_at_offset, subtypes, ClipSplit, NoiseFamily, SynthConfig, TemplateSet, SUBTYPES};
use promptlab::Tensor;

const FEATURES: usize = 16;
const D_MODEL: usize = 32;

fn to_js<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn demo_config() -> SynthConfig {
    SynthConfig {
        feature_dim: FEATURES,
        vocab: 6,
        template_contrast: 0.6,
        template_min_distance: 0.0,
        ..SynthConfig::default()
    }
}

fn utterance(seed: u64, tokens: &[usize]) -> Result<Tensor<f64>, JsError> {
    let templates = TemplateSet::generate(&demo_config(), seed).map_err(err)?;
    templates.synth_utterance(tokens, seed, 0.1).map_err(err)
}

#[derive(Serialize)]
struct AttentionView {
    size: usize,
    prompts: usize,
    /// Row-major `size × size` weights; rows attend to columns.
    weights: Vec<f64>,
}

/// Attention map of one head in a randomly initialised encoder, with `m`
/// random prompts prepended to a short synthetic utterance.
#[wasm_bindgen]
pub fn attention_map(seed: u64, m: usize, layer: usize, head: usize) -> Result<String, JsError> {
    let cfg = EncoderConfig {
        feature_dim: FEATURES,
        d_model: D_MODEL,
        n_heads: 4,
        n_layers: 2,
        ffn_dim: 64,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = EncoderModel::<f64>::new(cfg, &mut rng).map_err(err)?;
    let x = utterance(seed, &[0, 3, 1])?;
    let prompts = random_prompts::<f64>(m, D_MODEL, seed).map_err(err)?;
    let out = enc.forward_with_attention(&x, &prompts).map_err(err)?;
    let maps = out.attention.expect("requested");
    let map = maps
        .get(layer)
        .and_then(|l| l.get(head))
        .ok_or_else(|| JsError::new("layer or head out of range"))?;
    Ok(to_js(&AttentionView {
        size: map.rows(),
        prompts: m,
        weights: map.data().to_vec(),
    }))
}

#[derive(Serialize)]
struct MixView {
    noise: &'static str,
    alpha: f64,
    realized_snr_db: f64,
    frames: usize,
    /// Per-frame energy of the clean, scaled-noise and mixed signals.
    clean: Vec<f64>,
    noise_energy: Vec<f64>,
    mixed: Vec<f64>,
}

fn frame_energy(t: &Tensor<f64>) -> Vec<f64> {
    (0..t.rows())
        .map(|i| t.row_slice(i).iter().map(|v| v * v).sum::<f64>() / t.cols() as f64)
        .collect()
}

/// Mixes a synthetic utterance with noise subtype `noise` (index into the
/// subtype table) at `snr_db`.
#[wasm_bindgen]
pub fn mix_snr(seed: u64, noise: usize, snr_db: f64) -> Result<String, JsError> {
    let st = SUBTYPES.get(noise).ok_or_else(|| JsError::new("unknown noise subtype"))?;
    let clean = utterance(seed, &[2, 5, 1, 4])?;
    let clip = generate_clip(seed, st, ClipSplit::Eval, 0, clean.rows() + 20, FEATURES);
    let mix = mix_at_offset(&clean, &clip.frames, snr_db, 10).map_err(err)?;
    let crop = clip.frames.slice_rows(10, 10 + clean.rows()).map_err(err)?.map(|v| v * mix.alpha);
    let (pc, pn) = (mean(&frame_energy(&clean)), mean(&frame_energy(&crop)));
    Ok(to_js(&MixView {
        noise: st.name,
        alpha: mix.alpha,
        realized_snr_db: 10.0 * (pc / pn).log10(),
        frames: clean.rows(),
        clean: frame_energy(&clean),
        noise_energy: frame_energy(&crop),
        mixed: frame_energy(&mix.mixed),
    }))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Names of the noise subtypes, in index order, grouped by family.
#[wasm_bindgen]
pub fn noise_subtypes() -> String {
    let families = [NoiseFamily::TypeA, NoiseFamily::TypeB, NoiseFamily::Ood];
    let rows: Vec<(usize, &str, &str)> = families
        .iter()
        .flat_map(|&f| subtypes(f).map(move |s| (s.id, s.name, f.as_str())))
        .collect();
    to_js(&rows)
}

#[derive(Serialize)]
struct PcaView {
    before: Vec<[f64; 2]>,
    after: Vec<[f64; 2]>,
    /// 1 for rows in the shifted (noise) set.
    shifted: Vec<u8>,
    explained: f64,
}

/// Projects `m` random prompts onto their top two principal axes, then
/// shows where the second half lands after an elementwise shift by a random
/// RMS-normalized vector mixed with ones at `strength`.
#[wasm_bindgen]
pub fn prompt_shift(seed: u64, m: usize, strength: f64) -> Result<String, JsError> {
    if m < 3 {
        return Err(JsError::new("need at least 3 prompts"));
    }
    let p = random_prompts::<f64>(m, D_MODEL, seed).map_err(err)?;
    let rows = p.rows();
    let proj = project_2d(&rows).map_err(err)?;
    let raw: Vec<f64> = random_prompts::<f64>(1, D_MODEL, seed + 1).map_err(err)?.rows()[0].clone();
    let scale = rms(&raw);
    let v: Vec<f64> = raw.iter().map(|x| (1.0 - strength) + strength * x / scale).collect();
    let noise_rows = m / 2..m;
    let shifted_rows: Vec<Vec<f64>> = rows
        .iter()
        .enumerate()
        .map(|(k, r)| {
            if noise_rows.contains(&k) {
                r.iter().zip(&v).map(|(a, b)| a * b).collect()
            } else {
                r.clone()
            }
        })
        .collect();
    let centre: Vec<f64> = (0..D_MODEL).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / m as f64).collect();
    let onto = |r: &Vec<f64>| -> [f64; 2] {
        let c: Vec<f64> = r.iter().zip(&centre).map(|(a, b)| a - b).collect();
        [0, 1].map(|i| c.iter().zip(&proj.axes[i]).map(|(a, b)| a * b).sum())
    };
    Ok(to_js(&PcaView {
        before: proj.coords.clone(),
        after: shifted_rows.iter().map(onto).collect(),
        shifted: (0..m).map(|k| noise_rows.contains(&k) as u8).collect(),
        explained: proj.explained_ratio(),
    }))
}
