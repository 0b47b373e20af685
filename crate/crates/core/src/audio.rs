//! Audio buffers, WAV I/O and test-signal synthesis.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{invalid, Error, Result};

/// Mono audio at an integer sample rate.
///
/// Samples are stored as `f32` so that float WAV round trips are bit exact.
/// Amplitudes are not clipped here: a sum of unit partials legitimately
/// exceeds 1 and only the PCM-16 writer saturates.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return invalid("sample rate must be positive");
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return invalid(format!("non-finite sample at index {i}"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn from_f64(samples: &[f64], sample_rate: u32) -> Result<Self> {
        Self::new(samples.iter().map(|&s| s as f32).collect(), sample_rate)
    }

    pub fn silence(n_samples: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; n_samples], sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| f64::from(s)).collect()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Multiplies every sample by `gain`.
    pub fn scaled(&self, gain: f32) -> Result<Self> {
        Self::new(self.samples.iter().map(|s| s * gain).collect(), self.sample_rate)
    }

    /// Appends `other`; both buffers must share a sample rate.
    pub fn concat(&self, other: &AudioBuffer) -> Result<Self> {
        if other.sample_rate != self.sample_rate {
            return invalid("cannot concatenate buffers with different sample rates");
        }
        let mut samples = self.samples.clone();
        samples.extend_from_slice(&other.samples);
        Self::new(samples, self.sample_rate)
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

/// Sample encodings supported by [`save_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavFormat {
    Pcm16,
    #[default]
    Float32,
}

/// Reads a PCM-16 or float-32 WAV file. Multi-channel files are averaged to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels);
    if channels == 0 || channels > 2 {
        return Err(Error::Format(format!("{}: unsupported channel count {channels}", path.display())));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f32::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (hound::SampleFormat::Float, 32) => reader.into_samples::<f32>().collect::<std::result::Result<_, _>>(),
        (fmt, bits) => return Err(Error::Format(format!("{}: unsupported codec {fmt:?} {bits}-bit", path.display()))),
    }
    .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved.chunks_exact(2).map(|c| 0.5 * (c[0] + c[1])).collect()
    };
    AudioBuffer::new(samples, spec.sample_rate).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn save_wav(buffer: &AudioBuffer, path: impl AsRef<Path>, format: WavFormat) -> Result<()> {
    let path = path.as_ref();
    let (bits, sample_format) = match format {
        WavFormat::Pcm16 => (16, hound::SampleFormat::Int),
        WavFormat::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate,
        bits_per_sample: bits,
        sample_format,
    };
    let fmt_err = |e: hound::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = hound::WavWriter::create(path, spec).map_err(fmt_err)?;
    for &s in &buffer.samples {
        match format {
            WavFormat::Pcm16 => {
                let q = (f64::from(s) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(q).map_err(fmt_err)?;
            }
            WavFormat::Float32 => writer.write_sample(s).map_err(fmt_err)?,
        }
    }
    writer.finalize().map_err(fmt_err)
}

/// Sum of `n_harmonics` unit-amplitude sines at integer multiples of `f0`.
pub fn synth_harmonic_signal(f0: f64, n_harmonics: usize, duration: f64, sample_rate: u32) -> Result<AudioBuffer> {
    let sr = f64::from(sample_rate);
    if !(f0 > 0.0) || n_harmonics == 0 || !(duration >= 0.0) || sample_rate == 0 {
        return invalid("f0, harmonic count, duration and sample rate must be positive");
    }
    if f0 * n_harmonics as f64 >= sr / 2.0 {
        return invalid(format!(
            "highest partial {} Hz is not below Nyquist {} Hz",
            f0 * n_harmonics as f64,
            sr / 2.0
        ));
    }
    let n = (duration * sr).round() as usize;
    let samples: Vec<f64> = (0..n)
        .map(|k| (1..=n_harmonics).map(|h| (2.0 * PI * f0 * h as f64 * k as f64 / sr).sin()).sum())
        .collect();
    AudioBuffer::from_f64(&samples, sample_rate)
}
