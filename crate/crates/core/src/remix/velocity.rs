use super::{midi_to_hz, NoteEvent};
use crate::audio::AudioBuffer;
use crate::cqt::{compute_cqt, CqtParams};
use crate::error::{invalid, Result};

/// Lowest analysed note (A0).
const LOWEST_MIDI: u8 = 21;
const HOP: usize = 256;
/// Region energies at or below this are treated as silence.
const SILENCE: f64 = 1e-12;
/// Energies are floored this far (60 dB) below the loudest note.
const DYNAMIC_RANGE: f64 = 1e-6;

/// MIDI velocity per note from a semitone-resolution CQT of `stem`.
///
/// A note's energy is the mean squared magnitude of its pitch bin over the
/// frames inside `[start, end)`. Log energies, floored 60 dB below the
/// loudest note, are min-max normalised over the notes and mapped to
/// 1..=127; silent regions get 1 and a lone non-silent note 127. Pitches
/// outside the analysed range use the nearest edge bin.
pub fn estimate_velocities(stem: &AudioBuffer, notes: &[NoteEvent]) -> Result<Vec<u8>> {
    for n in notes {
        n.validate()?;
        if n.start < 0.0 || n.start >= stem.duration() {
            return invalid(format!("note at {} s starts outside the stem", n.start));
        }
    }
    if notes.is_empty() {
        return Ok(Vec::new());
    }
    let sr = stem.sample_rate();
    let f_min = midi_to_hz(f64::from(LOWEST_MIDI));
    let n_octaves = ((0.45 * f64::from(sr) / f_min).log2().floor() as usize).min(8);
    if n_octaves == 0 {
        return invalid("sample rate too low for the velocity analysis");
    }
    let params = CqtParams {
        f_min,
        bins_per_octave: 12,
        n_octaves,
        hop_length: HOP,
        sample_rate: sr,
    };
    let cqt = compute_cqt(stem, &params, f_min)?;
    let (n_bins, n_frames) = cqt.dim();
    let hop = params.hop_seconds();
    let energies: Vec<f64> = notes
        .iter()
        .map(|n| {
            let bin = usize::from(n.midi_note.saturating_sub(LOWEST_MIDI)).min(n_bins - 1);
            let lo = (n.start / hop).ceil() as usize;
            let hi = ((n.end / hop).ceil() as usize).min(n_frames);
            // a note shorter than a hop still reads its nearest frame
            let (lo, hi) = if lo < hi {
                (lo, hi)
            } else {
                let k = ((n.start / hop).round() as usize).min(n_frames - 1);
                (k, k + 1)
            };
            (lo..hi).map(|t| f64::from(cqt[[bin, t]]).powi(2)).sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let loudest = energies.iter().copied().fold(0.0, f64::max);
    if loudest <= SILENCE {
        return Ok(vec![1; notes.len()]);
    }
    let logs: Vec<f64> = energies.iter().map(|&e| e.max(loudest * DYNAMIC_RANGE).ln()).collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = loudest.ln();
    Ok(logs
        .iter()
        .zip(&energies)
        .map(|(&l, &e)| {
            if e <= SILENCE {
                1
            } else if hi == lo {
                127
            } else {
                1 + (126.0 * (l - lo) / (hi - lo)).round() as u8
            }
        })
        .collect())
}
