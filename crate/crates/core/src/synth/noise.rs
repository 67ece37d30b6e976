use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::stream_rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    /// Stationary colored noise.
    TypeA,
    /// Amplitude-modulated, non-stationary bursts.
    TypeB,
    /// Impulsive click trains never seen in training.
    Ood,
}

impl NoiseFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            NoiseFamily::TypeA => "type_a",
            NoiseFamily::TypeB => "type_b",
            NoiseFamily::Ood => "ood",
        }
    }
}

/// Which pool of streams a clip belongs to. OOD subtypes only have `Adapt`
/// (bias extraction) and `Eval` streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipSplit {
    Train,
    Eval,
    Adapt,
}

impl ClipSplit {
    fn index(self) -> u64 {
        match self {
            ClipSplit::Train => 0,
            ClipSplit::Eval => 1,
            ClipSplit::Adapt => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Shape {
    /// AR(1) coefficient and spectral tilt center (fraction of f).
    Colored { rho: f64, center: f64, width: f64 },
    /// Burst period (frames), duty cycle and band center.
    Bursts { period: f64, duty: f64, center: f64, width: f64 },
    /// Click probability per frame, decay per frame, band center.
    Clicks { rate: f64, decay: f64, center: f64, width: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSubtype {
    pub id: usize,
    pub name: &'static str,
    pub family: NoiseFamily,
    shape: Shape,
}

pub const SUBTYPES: [NoiseSubtype; 9] = [
    NoiseSubtype {
        id: 0,
        name: "car",
        family: NoiseFamily::TypeA,
        shape: Shape::Colored { rho: 0.95, center: 0.1, width: 0.2 },
    },
    NoiseSubtype {
        id: 1,
        name: "metro",
        family: NoiseFamily::TypeA,
        shape: Shape::Colored { rho: 0.8, center: 0.45, width: 0.25 },
    },
    NoiseSubtype {
        id: 2,
        name: "traffic",
        family: NoiseFamily::TypeA,
        shape: Shape::Colored { rho: 0.6, center: 0.3, width: 0.6 },
    },
    NoiseSubtype {
        id: 3,
        name: "babble",
        family: NoiseFamily::TypeB,
        shape: Shape::Bursts { period: 9.0, duty: 0.5, center: 0.35, width: 0.3 },
    },
    NoiseSubtype {
        id: 4,
        name: "airport",
        family: NoiseFamily::TypeB,
        shape: Shape::Bursts { period: 40.0, duty: 0.3, center: 0.55, width: 0.4 },
    },
    NoiseSubtype {
        id: 5,
        name: "cafe",
        family: NoiseFamily::TypeB,
        shape: Shape::Bursts { period: 17.0, duty: 0.6, center: 0.7, width: 0.3 },
    },
    NoiseSubtype {
        id: 6,
        name: "vacuum",
        family: NoiseFamily::TypeB,
        shape: Shape::Bursts { period: 64.0, duty: 0.8, center: 0.9, width: 0.2 },
    },
    NoiseSubtype {
        id: 7,
        name: "keyboard",
        family: NoiseFamily::Ood,
        shape: Shape::Clicks { rate: 0.25, decay: 0.3, center: 0.8, width: 0.25 },
    },
    NoiseSubtype {
        id: 8,
        name: "printer",
        family: NoiseFamily::Ood,
        shape: Shape::Clicks { rate: 0.08, decay: 0.7, center: 0.2, width: 0.4 },
    },
];

pub fn subtypes(family: NoiseFamily) -> impl Iterator<Item = &'static NoiseSubtype> {
    SUBTYPES.iter().filter(move |s| s.family == family)
}

pub fn subtype(id: usize) -> Option<&'static NoiseSubtype> {
    SUBTYPES.get(id)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseClip {
    pub family: NoiseFamily,
    pub subtype: usize,
    pub split: ClipSplit,
    pub stream: usize,
    /// Seed-stream index the clip was generated from (unique per clip).
    pub stream_id: u64,
    pub frames: Tensor<f64>,
}

impl NoiseClip {
    pub fn id(&self) -> String {
        let name = SUBTYPES[self.subtype].name;
        let split = match self.split {
            ClipSplit::Train => "train",
            ClipSplit::Eval => "eval",
            ClipSplit::Adapt => "adapt",
        };
        format!("{name}-{split}-{:02}", self.stream)
    }
}

/// Gaussian band gain over feature dims, floored so no dim is silent.
fn band(f: usize, center: f64, width: f64) -> Vec<f64> {
    (0..f)
        .map(|i| {
            let x = i as f64 / f.max(2).saturating_sub(1) as f64;
            0.15 + (-((x - center) / width).powi(2)).exp()
        })
        .collect()
}

pub(crate) fn clip_stream(subtype: usize, split: ClipSplit, stream: usize) -> u64 {
    ((subtype as u64) << 16) | (split.index() << 8) | stream as u64
}

/// Renders one clip of `frames × f`, normalized to unit mean-square.
pub fn generate_clip(
    corpus_seed: u64,
    subtype: &NoiseSubtype,
    split: ClipSplit,
    stream: usize,
    frames: usize,
    f: usize,
) -> NoiseClip {
    let stream_id = clip_stream(subtype.id, split, stream);
    let mut rng = stream_rng(corpus_seed, super::DOMAIN_NOISE, stream_id);
    let mut data = vec![0.0f64; frames * f];
    let white = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    // per-stream perturbation of the subtype profile: same family look,
    // distinct recordings
    let jitter: f64 = rng.gen_range(-0.05..0.05);
    match subtype.shape {
        Shape::Colored { rho, center, width } => {
            let gain = band(f, center + jitter, width);
            let innov = (1.0 - rho * rho).sqrt();
            let mut state: Vec<f64> = (0..f).map(|_| white(&mut rng)).collect();
            for t in 0..frames {
                for j in 0..f {
                    state[j] = rho * state[j] + innov * white(&mut rng);
                    data[t * f + j] = gain[j] * state[j];
                }
            }
        }
        Shape::Bursts { period, duty, center, width } => {
            let gain = band(f, center + jitter, width);
            let period = period * (1.0 + jitter);
            let phase: f64 = rng.gen_range(0.0..period);
            for t in 0..frames {
                let cycle = ((t as f64 + phase) % period) / period;
                let env = if cycle < duty {
                    0.2 + (PI * cycle / duty).sin()
                } else {
                    0.2
                };
                for j in 0..f {
                    data[t * f + j] = env * gain[j] * white(&mut rng);
                }
            }
        }
        Shape::Clicks { rate, decay, center, width } => {
            let gain = band(f, center + jitter, width);
            let mut level = 0.0f64;
            let mut polarity: Vec<f64> = vec![1.0; f];
            for t in 0..frames {
                if rng.gen_bool(rate) {
                    level = rng.gen_range(2.0..4.0);
                    for p in polarity.iter_mut() {
                        *p = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    }
                } else {
                    level *= decay;
                }
                for j in 0..f {
                    data[t * f + j] = gain[j] * (level * polarity[j] + 0.05 * white(&mut rng));
                }
            }
        }
    }
    let ms = data.iter().map(|v| v * v).sum::<f64>() / data.len() as f64;
    let scale = 1.0 / ms.sqrt();
    data.iter_mut().for_each(|v| *v *= scale);
    NoiseClip {
        family: subtype.family,
        subtype: subtype.id,
        split,
        stream,
        stream_id,
        frames: Tensor::matrix(frames, f, data).expect("clip shape"),
    }
}

/// Every noise clip of a corpus, grouped by split.
#[derive(Clone, Debug, Default)]
pub struct NoiseBank {
    pub clips: Vec<NoiseClip>,
}

impl NoiseBank {
    pub fn generate(
        corpus_seed: u64,
        train_streams: usize,
        eval_streams: usize,
        adapt_streams: usize,
        frames: usize,
        f: usize,
    ) -> Self {
        let mut clips = Vec::new();
        for st in &SUBTYPES {
            let pools: &[(ClipSplit, usize)] = match st.family {
                NoiseFamily::Ood => &[(ClipSplit::Adapt, adapt_streams), (ClipSplit::Eval, eval_streams)],
                _ => &[(ClipSplit::Train, train_streams), (ClipSplit::Eval, eval_streams)],
            };
            for &(split, n) in pools {
                for stream in 0..n {
                    clips.push(generate_clip(corpus_seed, st, split, stream, frames, f));
                }
            }
        }
        NoiseBank { clips }
    }

    pub fn select(&self, families: &[NoiseFamily], split: ClipSplit) -> Vec<&NoiseClip> {
        self.clips
            .iter()
            .filter(|c| c.split == split && families.contains(&c.family))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clips_have_unit_power_and_are_seeded() {
        for st in &SUBTYPES {
            let a = generate_clip(3, st, ClipSplit::Eval, 2, 120, 8);
            let ms = a.frames.data().iter().map(|v| v * v).sum::<f64>() / a.frames.len() as f64;
            assert!((ms - 1.0).abs() < 1e-12);
            assert_eq!(a, generate_clip(3, st, ClipSplit::Eval, 2, 120, 8));
            assert_ne!(a.frames, generate_clip(3, st, ClipSplit::Eval, 3, 120, 8).frames);
        }
    }

    #[test]
    fn stream_ids_are_unique_and_ood_has_no_train_pool() {
        let bank = NoiseBank::generate(1, 10, 8, 8, 16, 4);
        let mut ids: Vec<u64> = bank.clips.iter().map(|c| c.stream_id).collect();
        let n = ids.len();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), n);
        assert!(bank.select(&[NoiseFamily::Ood], ClipSplit::Train).is_empty());
        assert_eq!(bank.select(&[NoiseFamily::TypeA], ClipSplit::Train).len(), 30);
        assert_eq!(bank.select(&[NoiseFamily::TypeB], ClipSplit::Eval).len(), 32);
    }

    #[test]
    fn type_b_is_less_stationary_than_type_a() {
        // variance of per-frame energy relative to its mean
        let spread = |c: &NoiseClip| {
            let e: Vec<f64> = (0..c.frames.rows())
                .map(|t| c.frames.row_slice(t).iter().map(|v| v * v).sum::<f64>())
                .collect();
            let m = e.iter().sum::<f64>() / e.len() as f64;
            e.iter().map(|x| (x - m).powi(2)).sum::<f64>() / e.len() as f64 / (m * m)
        };
        let a = generate_clip(0, &SUBTYPES[2], ClipSplit::Train, 0, 400, 40);
        let b = generate_clip(0, &SUBTYPES[3], ClipSplit::Train, 0, 400, 40);
        assert!(spread(&b) > 2.0 * spread(&a), "{} vs {}", spread(&b), spread(&a));
    }
}
