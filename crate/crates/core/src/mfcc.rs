//! Time-averaged MFCC profiles.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use std::f64::consts::PI;

use crate::audio::AudioBuffer;
use crate::error::{invalid, Result};

pub const N_MFCC: usize = 40;
pub const N_MELS: usize = 128;
pub const FRAME_LENGTH: usize = 2048;
pub const FRAME_HOP: usize = 512;

/// Frame-averaged 40-coefficient MFCC vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccVector {
    pub coeffs: Vec<f64>,
    /// Set once the vector has been standardized against a bank.
    pub standardized: bool,
}

impl MfccVector {
    pub fn distance(&self, other: &MfccVector) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters over the `FRAME_LENGTH / 2 + 1` FFT bins.
fn mel_filterbank(sample_rate: u32) -> Vec<Vec<(usize, f64)>> {
    let sr = f64::from(sample_rate);
    let n_freqs = FRAME_LENGTH / 2 + 1;
    let mel_max = hz_to_mel(sr / 2.0);
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (N_MELS + 1) as f64))
        .collect();
    (0..N_MELS)
        .map(|m| {
            let (lo, centre, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_freqs)
                .filter_map(|k| {
                    let f = k as f64 * sr / FRAME_LENGTH as f64;
                    let w = if f > lo && f <= centre {
                        (f - lo) / (centre - lo)
                    } else if f > centre && f < hi {
                        (hi - f) / (hi - centre)
                    } else {
                        0.0
                    };
                    (w > 0.0).then_some((k, w))
                })
                .collect()
        })
        .collect()
}

fn dct_ii_ortho(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(i, v)| v * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Mean over frames of the MFCCs (128 mel bands, natural log, orthonormal DCT-II).
pub fn compute_mfcc_profile(audio: &AudioBuffer) -> Result<MfccVector> {
    if audio.len() < FRAME_LENGTH {
        return invalid(format!(
            "audio has {} samples, at least {FRAME_LENGTH} are needed for one frame",
            audio.len()
        ));
    }
    let x = audio.to_f64();
    let filters = mel_filterbank(audio.sample_rate());
    let window: Vec<f64> = (0..FRAME_LENGTH)
        .map(|m| 0.5 - 0.5 * (2.0 * PI * m as f64 / FRAME_LENGTH as f64).cos())
        .collect();
    let fft = FftPlanner::new().plan_fft_forward(FRAME_LENGTH);
    let n_frames = (x.len() - FRAME_LENGTH) / FRAME_HOP + 1;
    let mut sum = vec![0.0; N_MFCC];
    let mut buf = vec![Complex::new(0.0, 0.0); FRAME_LENGTH];
    for f in 0..n_frames {
        let frame = &x[f * FRAME_HOP..f * FRAME_HOP + FRAME_LENGTH];
        for ((b, s), w) in buf.iter_mut().zip(frame).zip(&window) {
            *b = Complex::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        let log_mel: Vec<f64> = filters
            .iter()
            .map(|bank| {
                let e: f64 = bank.iter().map(|&(k, w)| w * buf[k].norm_sqr()).sum();
                e.max(1e-30).ln()
            })
            .collect();
        for (acc, c) in sum.iter_mut().zip(dct_ii_ortho(&log_mel, N_MFCC)) {
            *acc += c;
        }
    }
    Ok(MfccVector {
        coeffs: sum.into_iter().map(|s| s / n_frames as f64).collect(),
        standardized: false,
    })
}
