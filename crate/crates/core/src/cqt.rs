//! Constant-Q and harmonic constant-Q transforms.
//!
//! Every bin is a Hann-windowed complex sinusoid inner product evaluated at
//! hopped frame centres. Low bins run on an octave pyramid of the input
//! (repeated half-band filtering and decimation by two) so that their long
//! windows stay cheap; a bin is analysed at the coarsest level whose sample
//! rate is still at least four times the bin frequency.

use ndarray::{Array2, Array3, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::audio::AudioBuffer;
use crate::error::{invalid, Result};

/// C1 in Hz.
pub const C1_HZ: f64 = 32.703_195_662_574_83;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CqtParams {
    pub f_min: f64,
    pub bins_per_octave: usize,
    pub n_octaves: usize,
    /// Frame hop in samples.
    pub hop_length: usize,
    pub sample_rate: u32,
}

impl Default for CqtParams {
    fn default() -> Self {
        Self {
            f_min: C1_HZ,
            bins_per_octave: 60,
            n_octaves: 6,
            hop_length: 256,
            sample_rate: 22050,
        }
    }
}

impl CqtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_min > 0.0) || !self.f_min.is_finite() {
            return invalid("f_min must be positive");
        }
        if self.bins_per_octave == 0 || self.n_octaves == 0 {
            return invalid("bins_per_octave and n_octaves must be at least 1");
        }
        if self.hop_length == 0 || self.sample_rate == 0 {
            return invalid("hop length and sample rate must be positive");
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.bins_per_octave * self.n_octaves
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop_length as f64 / f64::from(self.sample_rate)
    }

    /// Quality factor shared by every bin.
    pub fn q_factor(&self) -> f64 {
        1.0 / (2f64.powf(1.0 / self.bins_per_octave as f64) - 1.0)
    }

    pub fn bin_frequency(&self, f_min: f64, bin: usize) -> f64 {
        f_min * 2f64.powf(bin as f64 / self.bins_per_octave as f64)
    }

    /// Centre frequencies for a transform starting at `f_min`.
    pub fn frequencies(&self, f_min: f64) -> Vec<f64> {
        (0..self.n_bins()).map(|k| self.bin_frequency(f_min, k)).collect()
    }

    /// Frames are centred at multiples of the hop, starting at sample 0.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        n_samples / self.hop_length + 1
    }

    fn check_range(&self, f_min: f64, sample_rate: u32) -> Result<()> {
        self.validate()?;
        if sample_rate != self.sample_rate {
            return invalid(format!(
                "audio sample rate {sample_rate} does not match analysis rate {}",
                self.sample_rate
            ));
        }
        let top = f_min * 2f64.powi(self.n_octaves as i32);
        let nyquist = f64::from(self.sample_rate) / 2.0;
        if !(f_min > 0.0) || top >= nyquist {
            return invalid(format!("frequency range up to {top:.1} Hz exceeds Nyquist {nyquist:.1} Hz"));
        }
        Ok(())
    }
}

const HALFBAND_TAPS: usize = 47;

fn halfband_filter() -> Vec<f64> {
    let c = (HALFBAND_TAPS - 1) as f64 / 2.0;
    let cutoff = 0.25;
    let mut h: Vec<f64> = (0..HALFBAND_TAPS)
        .map(|m| {
            let x = m as f64 - c;
            let sinc = if x == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * x).sin() / (PI * x)
            };
            let t = 2.0 * PI * m as f64 / (HALFBAND_TAPS - 1) as f64;
            let blackman = 0.42 - 0.5 * t.cos() + 0.08 * (2.0 * t).cos();
            sinc * blackman
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

fn decimate(x: &[f64], h: &[f64]) -> Vec<f64> {
    let c = h.len() / 2;
    let n_out = x.len().div_ceil(2);
    (0..n_out)
        .map(|n| {
            let centre = 2 * n;
            let lo = c.saturating_sub(centre);
            let hi = h.len().min(x.len() + c - centre);
            (lo..hi).map(|m| h[m] * x[centre + m - c]).sum()
        })
        .collect()
}

/// Octave pyramid: level `j` holds the signal at `sample_rate / 2^j`.
struct Pyramid {
    levels: Vec<Vec<f64>>,
}

impl Pyramid {
    fn new(samples: &[f64], n_levels: usize) -> Self {
        let h = halfband_filter();
        let mut levels = vec![samples.to_vec()];
        for _ in 1..n_levels {
            let next = decimate(levels.last().expect("non-empty"), &h);
            levels.push(next);
        }
        Self { levels }
    }
}

fn max_level(params: &CqtParams) -> usize {
    params.hop_length.trailing_zeros() as usize
}

fn level_for(freq: f64, params: &CqtParams) -> usize {
    let sr = f64::from(params.sample_rate);
    let mut level = 0;
    while level < max_level(params) && freq * 4.0 <= sr / f64::from(1u32 << (level + 1)) {
        level += 1;
    }
    level
}

fn bin_magnitudes(pyr: &Pyramid, params: &CqtParams, freq: f64, n_frames: usize) -> Vec<f32> {
    let level = level_for(freq, params);
    let decim = 1usize << level;
    let x = &pyr.levels[level];
    let rate = f64::from(params.sample_rate) / decim as f64;
    let n = ((params.q_factor() * rate / freq).round() as usize).max(1);
    let window: Vec<f64> = (0..n).map(|m| 0.5 - 0.5 * (2.0 * PI * (m as f64 + 0.5) / n as f64).cos()).collect();
    let norm: f64 = window.iter().sum();
    let omega = 2.0 * PI * freq / rate;
    let re: Vec<f64> = (0..n).map(|m| window[m] * (omega * m as f64).cos() / norm).collect();
    let im: Vec<f64> = (0..n).map(|m| -window[m] * (omega * m as f64).sin() / norm).collect();
    let half = n / 2;
    let hop = params.hop_length / decim;
    (0..n_frames)
        .map(|t| {
            let start = (t * hop) as isize - half as isize;
            let m_lo = (-start).max(0) as usize;
            let m_hi = (x.len() as isize - start).clamp(0, n as isize) as usize;
            if m_lo >= m_hi {
                return 0.0;
            }
            let seg = &x[(start + m_lo as isize) as usize..(start + m_hi as isize) as usize];
            let (mut acc_re, mut acc_im) = (0.0, 0.0);
            for ((s, r), i) in seg.iter().zip(&re[m_lo..m_hi]).zip(&im[m_lo..m_hi]) {
                acc_re += s * r;
                acc_im += s * i;
            }
            (acc_re * acc_re + acc_im * acc_im).sqrt() as f32
        })
        .collect()
}

fn cqt_from_pyramid(pyr: &Pyramid, params: &CqtParams, f_min: f64, n_frames: usize) -> Array2<f32> {
    let rows: Vec<Vec<f32>> = params
        .frequencies(f_min)
        .into_par_iter()
        .map(|f| bin_magnitudes(pyr, params, f, n_frames))
        .collect();
    let mut out = Array2::zeros((params.n_bins(), n_frames));
    for (k, row) in rows.iter().enumerate() {
        out.row_mut(k).iter_mut().zip(row).for_each(|(o, &v)| *o = v);
    }
    out
}

/// Magnitude CQT `[bin, frame]` with bin `k` centred at `f_min_override * 2^(k / bins_per_octave)`.
pub fn compute_cqt(audio: &AudioBuffer, params: &CqtParams, f_min_override: f64) -> Result<Array2<f32>> {
    params.check_range(f_min_override, audio.sample_rate())?;
    let pyr = Pyramid::new(&audio.to_f64(), max_level(params) + 1);
    Ok(cqt_from_pyramid(&pyr, params, f_min_override, params.n_frames(audio.len())))
}

/// Stack of CQTs `[harmonic, bin, frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HcqtTensor {
    pub data: Array3<f32>,
    pub harmonics: Vec<usize>,
    pub params: CqtParams,
}

impl HcqtTensor {
    pub fn n_frames(&self) -> usize {
        self.data.len_of(Axis(2))
    }

    /// `ln(1 + scale * |X|)`, the network input scaling.
    pub fn log_compressed(&self, scale: f32) -> Array3<f32> {
        self.data.mapv(|v| (1.0 + scale * v).ln())
    }
}

/// Harmonic CQT: slice `h` is the CQT with minimum frequency `h * f_min`.
pub fn compute_hcqt(audio: &AudioBuffer, params: &CqtParams, harmonics: &[usize]) -> Result<HcqtTensor> {
    if harmonics.is_empty() || harmonics[0] != 1 || harmonics.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("harmonics must be strictly ascending and start at 1");
    }
    let h_max = *harmonics.last().expect("non-empty") as f64;
    params.check_range(h_max * params.f_min, audio.sample_rate())?;
    let pyr = Pyramid::new(&audio.to_f64(), max_level(params) + 1);
    let n_frames = params.n_frames(audio.len());
    let slices: Vec<Array2<f32>> = harmonics
        .par_iter()
        .map(|&h| cqt_from_pyramid(&pyr, params, h as f64 * params.f_min, n_frames))
        .collect();
    let common = slices.iter().map(|s| s.ncols()).min().unwrap_or(0);
    let mut data = Array3::zeros((harmonics.len(), params.n_bins(), common));
    for (i, s) in slices.iter().enumerate() {
        data.index_axis_mut(Axis(0), i).assign(&s.slice(ndarray::s![.., ..common]));
    }
    Ok(HcqtTensor {
        data,
        harmonics: harmonics.to_vec(),
        params: *params,
    })
}

/// Network input: log-compressed HCQT magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub cqt: CqtParams,
    pub harmonics: Vec<usize>,
    /// `C` in `ln(1 + C |X|)`.
    pub log_scale: f32,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            cqt: CqtParams::default(),
            harmonics: vec![1, 2, 3, 4, 5],
            log_scale: 1000.0,
        }
    }
}

impl FeatureConfig {
    /// `[harmonic, bin, frame]` network input for `audio`.
    pub fn compute(&self, audio: &AudioBuffer) -> Result<Array3<f32>> {
        self.cqt.validate()?;
        Ok(compute_hcqt(audio, &self.cqt, &self.harmonics)?.log_compressed(self.log_scale))
    }
}
