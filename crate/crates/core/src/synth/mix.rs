use rand::Rng;

use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

pub fn mean_square(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mix {
    pub mixed: Tensor<f64>,
    /// Scale applied to the noise crop.
    pub alpha: f64,
    /// First noise frame used.
    pub offset: usize,
}

/// Scale that puts `noise` at `snr_db` below `clean` (powers as mean squares).
pub fn snr_scale(clean_power: f64, noise_power: f64, snr_db: f64) -> f64 {
    (clean_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt()
}

/// SNR implied by a stored scale, recomputed from the signals.
pub fn realized_snr_db(clean: &Tensor<f64>, noise_crop: &[f64], alpha: f64) -> f64 {
    10.0 * (mean_square(clean.data()) / (alpha * alpha * mean_square(noise_crop))).log10()
}

/// `clean + α·noise[offset..offset+T]` with a random contiguous crop.
pub fn mix_at_snr(clean: &Tensor<f64>, noise: &Tensor<f64>, snr_db: f64, rng: &mut impl Rng) -> Result<Mix> {
    let (t, f) = (clean.rows(), clean.cols());
    if noise.cols() != f {
        return Err(Error::Shape {
            op: "mix_at_snr",
            lhs: clean.shape().to_vec(),
            rhs: noise.shape().to_vec(),
        });
    }
    if noise.rows() < t {
        return Err(contract(format!("noise clip has {} frames, utterance needs {t}", noise.rows())));
    }
    let offset = rng.gen_range(0..=noise.rows() - t);
    mix_at_offset(clean, noise, snr_db, offset)
}

pub fn mix_at_offset(clean: &Tensor<f64>, noise: &Tensor<f64>, snr_db: f64, offset: usize) -> Result<Mix> {
    let (t, f) = (clean.rows(), clean.cols());
    let crop = &noise.data()[offset * f..(offset + t) * f];
    let p_noise = mean_square(crop);
    if p_noise == 0.0 {
        return Err(contract("noise crop has zero power"));
    }
    let p_clean = mean_square(clean.data());
    if p_clean == 0.0 {
        return Err(contract("clean signal has zero power"));
    }
    let alpha = snr_scale(p_clean, p_noise, snr_db);
    let data = clean.data().iter().zip(crop).map(|(c, n)| c + alpha * n).collect();
    Ok(Mix {
        mixed: Tensor::matrix(t, f, data)?,
        alpha,
        offset,
    })
}
