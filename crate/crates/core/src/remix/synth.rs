use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::NoteEvent;
use crate::audio::AudioBuffer;
use crate::error::{invalid, Result};

const RAMP_SECONDS: f64 = 0.01;
const PEAK: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vibrato {
    pub rate_hz: f64,
    pub depth_cents: f64,
}

/// Timbre of the toy synthesizer: partial `h` has amplitude `1/h` and the
/// whole note decays as `exp(-decay * t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToneSpec {
    pub n_harmonics: usize,
    /// Per second.
    pub decay: f64,
    pub vibrato: Option<Vibrato>,
}

impl Default for ToneSpec {
    fn default() -> Self {
        Self {
            n_harmonics: 6,
            decay: 2.0,
            vibrato: None,
        }
    }
}

impl ToneSpec {
    /// Fundamental of `note` at `t` seconds after its start.
    pub fn instantaneous_freq(&self, note: &NoteEvent, t: f64) -> f64 {
        let f = note.freq();
        match self.vibrato {
            Some(v) => f * 2f64.powf(v.depth_cents / 1200.0 * (2.0 * PI * v.rate_hz * t).sin()),
            None => f,
        }
    }
}

/// Renders notes with the default [`ToneSpec`].
pub fn synth_note_events(events: &[NoteEvent], sample_rate: u32) -> Result<AudioBuffer> {
    synth_with(events, sample_rate, &ToneSpec::default(), None)
}

/// Sum of decaying harmonic tones with 10 ms linear attack and release,
/// scaled by velocity / 127 and peak-normalised to 0.9. The output spans
/// `n_samples` if given, else up to the last note end. Partials at or above
/// Nyquist are skipped and note portions before time 0 are cut.
pub fn synth_with(events: &[NoteEvent], sample_rate: u32, tone: &ToneSpec, n_samples: Option<usize>) -> Result<AudioBuffer> {
    if sample_rate == 0 {
        return invalid("sample rate must be positive");
    }
    for e in events {
        e.validate()?;
    }
    let sr = f64::from(sample_rate);
    let n = n_samples.unwrap_or_else(|| events.iter().map(|e| (e.end * sr).ceil().max(0.0) as usize).max().unwrap_or(0));
    let mut out = vec![0.0f64; n];
    let nyquist = sr / 2.0;
    for e in events {
        let first = (e.start * sr).ceil().max(0.0) as usize;
        let last = ((e.end * sr).ceil().max(0.0) as usize).min(n);
        let dur = e.end - e.start;
        let ramp = RAMP_SECONDS.min(dur / 2.0);
        let gain = f64::from(e.velocity) / 127.0;
        let mut phase = 0.0;
        let mut prev_t = (first as f64 / sr) - e.start;
        for (k, o) in out.iter_mut().enumerate().take(last).skip(first) {
            let t = k as f64 / sr - e.start;
            let f0 = tone.instantaneous_freq(e, t);
            phase += 2.0 * PI * f0 * (t - prev_t);
            prev_t = t;
            let env = (t / ramp).min((dur - t) / ramp).clamp(0.0, 1.0) * (-tone.decay * t).exp();
            let mut v = 0.0;
            for h in 1..=tone.n_harmonics {
                if f0 * h as f64 >= nyquist {
                    break;
                }
                v += (h as f64 * phase).sin() / h as f64;
            }
            *o += gain * env * v;
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= PEAK / peak);
    }
    AudioBuffer::from_f64(&out, sample_rate)
}
