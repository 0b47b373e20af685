use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::nnls::nnls;
use super::{InstrumentClass, MixSpec, Stem, StemAnnotation};
use crate::audio::AudioBuffer;
use crate::error::{invalid, Result};
use crate::model::TaskId;
use crate::salience::{resample_multi, Annotation, MultiF0Track};

/// Envelope frame length.
pub const ENVELOPE_SECONDS: f64 = 0.046;

/// What the mixing weights are fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixObjective {
    /// `|y[n]| ~ sum_i a_i |x_i[n]|` on raw samples.
    AbsSamples,
    /// Frame mean-square envelopes. The envelope of a linear mix is the
    /// quadratic form `ms_f(y) = sum_ij a_i a_j c_ij,f` with `c_ij,f` the frame
    /// mean of `x_i x_j`. Dropping the cross terms makes it linear in `a_i^2`,
    /// which NNLS solves for a starting point; projected Gauss-Newton steps,
    /// each itself an NNLS problem, then fit the full form.
    #[default]
    Envelope,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixWeights {
    pub weights: Vec<f64>,
    /// Stems with no energy; their weight is fixed to 0.
    pub silent_stems: Vec<usize>,
    /// Residual norm of the fitted problem.
    pub residual: f64,
}

fn frame_len(sample_rate: u32) -> usize {
    ((ENVELOPE_SECONDS * f64::from(sample_rate)).round() as usize).max(1)
}

/// Mean-square power over consecutive non-overlapping frames of
/// [`ENVELOPE_SECONDS`]; a trailing partial frame is averaged over its length.
pub fn envelope(audio: &AudioBuffer) -> Vec<f64> {
    audio
        .samples()
        .chunks(frame_len(audio.sample_rate()))
        .map(|c| c.iter().map(|&s| f64::from(s) * f64::from(s)).sum::<f64>() / c.len() as f64)
        .collect()
}

/// Per frame, the `m x m` matrix of frame means of `x_i x_j`, row-major.
fn frame_grams(stems: &[AudioBuffer]) -> Vec<Vec<f64>> {
    let m = stems.len();
    let frame = frame_len(stems[0].sample_rate());
    let n = stems[0].len();
    (0..n.div_ceil(frame))
        .map(|f| {
            let (lo, hi) = (f * frame, ((f + 1) * frame).min(n));
            let mut g = vec![0.0; m * m];
            for i in 0..m {
                let xi = &stems[i].samples()[lo..hi];
                for j in i..m {
                    let xj = &stems[j].samples()[lo..hi];
                    let v = xi.iter().zip(xj).map(|(&a, &b)| f64::from(a) * f64::from(b)).sum::<f64>() / (hi - lo) as f64;
                    g[i * m + j] = v;
                    g[j * m + i] = v;
                }
            }
            g
        })
        .collect()
}

fn fit_envelopes(stems: &[AudioBuffer], mix: &AudioBuffer) -> Result<MixWeights> {
    const MAX_STEPS: usize = 100;
    let m = stems.len();
    let target = DVector::from_vec(envelope(mix));
    let grams = frame_grams(stems);
    let n_frames = grams.len();
    let model = |a: &[f64]| -> DVector<f64> {
        DVector::from_fn(n_frames, |f, _| {
            let g = &grams[f];
            (0..m).map(|i| (0..m).map(|j| a[i] * a[j] * g[i * m + j]).sum::<f64>()).sum()
        })
    };

    let diag = DMatrix::from_fn(n_frames, m, |f, i| grams[f][i * m + i]);
    let start = nnls(&diag, &target)?;
    let mut a: Vec<f64> = start.x.iter().map(|v| v.sqrt()).collect();
    let mut cost = (model(&a) - &target).norm();
    for _ in 0..MAX_STEPS {
        // Linearise around `a` and solve for the next iterate directly:
        // min |J a' - (t - m(a) + J a)| over a' >= 0.
        let jac = DMatrix::from_fn(n_frames, m, |f, i| 2.0 * (0..m).map(|j| grams[f][i * m + j] * a[j]).sum::<f64>());
        let rhs = &target - model(&a) + &jac * DVector::from_column_slice(&a);
        let proposal = nnls(&jac, &rhs)?.x;
        // Backtrack along the step until the envelope fit improves.
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-6 {
            let trial: Vec<f64> = a.iter().zip(&proposal).map(|(x, p)| x + step * (p - x)).collect();
            let c = (model(&trial) - &target).norm();
            if c < cost {
                accepted = Some((trial, c));
                break;
            }
            step *= 0.5;
        }
        let Some((next, c)) = accepted else { break };
        let change = next.iter().zip(&a).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let scale = next.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(f64::MIN_POSITIVE);
        a = next;
        cost = c;
        if change <= 1e-12 * scale {
            break;
        }
    }
    for &i in &start.zero_columns {
        a[i] = 0.0;
    }
    Ok(MixWeights {
        weights: a,
        silent_stems: start.zero_columns,
        residual: cost,
    })
}

pub fn estimate_mix_weights(stems: &[AudioBuffer], mix: &AudioBuffer, objective: MixObjective) -> Result<MixWeights> {
    if stems.is_empty() {
        return invalid("at least one stem is required");
    }
    for (i, s) in stems.iter().enumerate() {
        if s.len() != mix.len() || s.sample_rate() != mix.sample_rate() {
            return invalid(format!("stem {i} differs from the mix in length or sample rate"));
        }
    }
    if mix.is_empty() {
        return invalid("cannot fit weights on empty audio");
    }
    match objective {
        MixObjective::Envelope => fit_envelopes(stems, mix),
        MixObjective::AbsSamples => {
            let abs = |a: &AudioBuffer| a.samples().iter().map(|v| f64::from(v.abs())).collect::<Vec<_>>();
            let columns: Vec<Vec<f64>> = stems.iter().map(abs).collect();
            let a = DMatrix::from_fn(mix.len(), stems.len(), |r, c| columns[c][r]);
            let sol = nnls(&a, &DVector::from_vec(abs(mix)))?;
            Ok(MixWeights {
                weights: sol.x,
                silent_stems: sol.zero_columns,
                residual: sol.residual,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Remix {
    pub audio: AudioBuffer,
    /// Annotation per task whose pitch content is fully known; a task
    /// with no contributing stem gets an empty ("null") annotation.
    pub annotations: BTreeMap<TaskId, Annotation>,
}

fn stem_pitches(stem: &Stem, times: &[f64], hop: f64) -> Result<Option<MultiF0Track>> {
    Ok(match &stem.annotation {
        None => None,
        Some(StemAnnotation::F0(track)) => Some(resample_multi(&track.to_multi(), hop, Some(times.len()))?),
        Some(StemAnnotation::Notes(notes)) => {
            let mut out = MultiF0Track::empty(times.to_vec());
            for n in notes {
                for (t, set) in times.iter().zip(out.pitch_sets.iter_mut()) {
                    if *t >= n.start && *t < n.end {
                        set.push(n.freq());
                    }
                }
            }
            Some(out)
        }
    })
}

fn union(tracks: &[MultiF0Track], times: &[f64]) -> MultiF0Track {
    let mut out = MultiF0Track::empty(times.to_vec());
    for t in tracks {
        for (dst, src) in out.pitch_sets.iter_mut().zip(&t.pitch_sets) {
            dst.extend_from_slice(src);
        }
    }
    for set in &mut out.pitch_sets {
        set.sort_by(f64::total_cmp);
        set.dedup();
    }
    out
}

/// `y~[n] = sum a_i x~_i[n]` over surviving stems, where `x~_i` is the
/// replacement of stem `i` if it has one. Annotations of the surviving stems
/// are merged per task on frames `k * hop_seconds`.
pub fn render_remix(spec: &MixSpec, hop_seconds: f64) -> Result<Remix> {
    let MixSpec {
        stems,
        weights,
        removed,
        replacements,
    } = spec;
    if stems.is_empty() {
        return invalid("a mix needs at least one stem");
    }
    if weights.len() != stems.len() {
        return invalid(format!("{} weights for {} stems", weights.len(), stems.len()));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return invalid(format!("mixing weight {w} is not a finite non-negative number"));
    }
    if let Some(i) = removed.iter().chain(replacements.keys()).find(|&&i| i >= stems.len()) {
        return invalid(format!("stem index {i} out of range"));
    }
    if let Some(i) = removed.iter().find(|i| replacements.contains_key(i)) {
        return invalid(format!("stem {i} is both removed and replaced"));
    }
    if !(hop_seconds > 0.0) {
        return invalid("annotation hop must be positive");
    }
    let sr = stems[0].audio.sample_rate();
    let n = stems[0].audio.len();
    let hop_samples = (hop_seconds * f64::from(sr)).round().max(1.0) as usize;
    let mut survivors: Vec<(f64, &Stem)> = Vec::new();
    for (i, stem) in stems.iter().enumerate() {
        let chosen = replacements.get(&i).unwrap_or(stem);
        for (what, s) in [("stem", stem), ("replacement", chosen)] {
            if s.audio.sample_rate() != sr {
                return invalid(format!("{what} {i} has sample rate {}, expected {sr}", s.audio.sample_rate()));
            }
            if s.audio.len().abs_diff(n) > hop_samples {
                return invalid(format!("{what} {i} differs in length from the mix by more than one hop"));
            }
        }
        if !removed.contains(&i) {
            survivors.push((weights[i], chosen));
        }
    }

    let mut out = vec![0.0f64; n];
    for (w, stem) in &survivors {
        for (o, &s) in out.iter_mut().zip(stem.audio.samples()) {
            *o += w * f64::from(s);
        }
    }
    let audio = AudioBuffer::from_f64(&out, sr)?;

    let n_frames = (audio.duration() / hop_seconds + 1e-9).floor() as usize + 1;
    let times: Vec<f64> = (0..n_frames).map(|k| k as f64 * hop_seconds).collect();
    let mut annotations = BTreeMap::new();
    for task in TaskId::ALL {
        let contributing: Vec<&Stem> = survivors
            .iter()
            .map(|(_, s)| *s)
            .filter(|s| match task {
                TaskId::Multif0 => s.class != InstrumentClass::Unpitched,
                t => s.tasks.contains(&t),
            })
            .collect();
        let mut tracks = Vec::with_capacity(contributing.len());
        let mut known = true;
        for s in contributing {
            match stem_pitches(s, &times, hop_seconds)? {
                Some(t) => tracks.push(t),
                None => known = false,
            }
        }
        if !known {
            continue;
        }
        let merged = union(&tracks, &times);
        let ann = if task.is_multi_pitch() {
            Annotation::Multi(merged)
        } else {
            Annotation::Single(merged.to_single())
        };
        annotations.insert(task, ann);
    }
    Ok(Remix { audio, annotations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::remix::NoteEvent;
    use crate::rng;
    use crate::salience::F0Track;
    use rand::Rng;
    use std::collections::BTreeSet;

    fn noise(n: usize, seed: u64) -> AudioBuffer {
        let mut r = rng::stream(seed, "noise");
        AudioBuffer::from_f64(&(0..n).map(|_| r.gen_range(-0.5..0.5)).collect::<Vec<_>>(), 8000).unwrap()
    }

    fn mix_of(stems: &[AudioBuffer], w: &[f64]) -> AudioBuffer {
        let n = stems[0].len();
        let y: Vec<f64> = (0..n)
            .map(|k| stems.iter().zip(w).map(|(s, a)| a * f64::from(s.samples()[k])).sum())
            .collect();
        AudioBuffer::from_f64(&y, stems[0].sample_rate()).unwrap()
    }

    #[test]
    fn abs_path_recovers_weights_of_nonnegative_stems() {
        let x1 = AudioBuffer::from_f64(&(0..4000).map(|k| ((k % 37) as f64) / 37.0).collect::<Vec<_>>(), 8000).unwrap();
        let x2 = AudioBuffer::from_f64(&(0..4000).map(|k| ((k * 7 % 53) as f64) / 53.0).collect::<Vec<_>>(), 8000).unwrap();
        let y = mix_of(&[x1.clone(), x2.clone()], &[2.0, 3.0]);
        let w = estimate_mix_weights(&[x1, x2], &y, MixObjective::AbsSamples).unwrap();
        assert!((w.weights[0] - 2.0).abs() < 1e-4 && (w.weights[1] - 3.0).abs() < 1e-4, "{w:?}");
    }

    #[test]
    fn single_stem_and_silent_stems() {
        let x = noise(4000, 1);
        for obj in [MixObjective::AbsSamples, MixObjective::Envelope] {
            let w = estimate_mix_weights(std::slice::from_ref(&x), &x, obj).unwrap();
            assert!((w.weights[0] - 1.0).abs() < 1e-6);
            let silent = AudioBuffer::silence(4000, 8000).unwrap();
            let w = estimate_mix_weights(&[silent.clone(), silent], &noise(4000, 2), obj).unwrap();
            assert_eq!(w.weights, vec![0.0, 0.0]);
            assert_eq!(w.silent_stems, vec![0, 1]);
        }
    }

    /// Noise under a random gain that changes every quarter second.
    fn gated_noise(n: usize, seed: u64) -> AudioBuffer {
        let mut r = rng::stream(seed, "gate");
        let gains: Vec<f64> = (0..n / 2000 + 1).map(|_| r.gen_range(0.0..1.0)).collect();
        let x = noise(n, seed);
        AudioBuffer::from_f64(
            &x.to_f64().iter().enumerate().map(|(k, v)| v * gains[k / 2000]).collect::<Vec<_>>(),
            8000,
        )
        .unwrap()
    }

    #[test]
    fn envelope_path_recovers_weights_of_independent_stems() {
        let stems: Vec<AudioBuffer> = (0..3).map(|i| gated_noise(80_000, 10 + i)).collect();
        let truth = [0.4, 1.7, 2.5];
        let w = estimate_mix_weights(&stems, &mix_of(&stems, &truth), MixObjective::Envelope).unwrap();
        for (e, t) in w.weights.iter().zip(truth) {
            assert!((e - t).abs() / t < 0.02, "{w:?}");
        }
    }

    fn stem(audio: AudioBuffer, class: InstrumentClass, tasks: &[TaskId], ann: Option<StemAnnotation>) -> Stem {
        Stem::new(audio, class, tasks.iter().copied().collect::<BTreeSet<_>>(), ann).unwrap()
    }

    fn notes(midi: u8) -> Option<StemAnnotation> {
        Some(StemAnnotation::Notes(vec![NoteEvent::new(0.1, 0.4, midi, 100).unwrap()]))
    }

    #[test]
    fn identity_remix_is_the_weighted_sum() {
        let stems: Vec<AudioBuffer> = (0..3).map(|i| noise(4000, i)).collect();
        let w = [0.5, 1.0, 2.0];
        let spec = MixSpec {
            stems: stems
                .iter()
                .map(|a| stem(a.clone(), InstrumentClass::Unpitched, &[], None))
                .collect(),
            weights: w.to_vec(),
            removed: BTreeSet::new(),
            replacements: BTreeMap::new(),
        };
        let r = render_remix(&spec, 0.032).unwrap();
        assert_eq!(r.audio, mix_of(&stems, &w));
        // only unpitched stems: every pitch annotation is known and null
        assert_eq!(r.annotations.len(), TaskId::ALL.len());
        assert!(r.annotations.values().all(Annotation::is_silent));
    }

    #[test]
    fn removing_polyphonic_stems_leaves_union_of_monophonic_lines() {
        let a = || noise(4000, 3);
        let spec = MixSpec {
            stems: vec![
                stem(a(), InstrumentClass::Monophonic, &[TaskId::Melody, TaskId::Vocal], notes(72)),
                stem(a(), InstrumentClass::Monophonic, &[TaskId::Bass], notes(40)),
                stem(a(), InstrumentClass::Polyphonic, &[TaskId::Piano], None),
                stem(a(), InstrumentClass::Unpitched, &[], None),
            ],
            weights: vec![1.0; 4],
            removed: BTreeSet::new(),
            replacements: BTreeMap::new(),
        };
        let orig = render_remix(&spec, 0.05).unwrap();
        // piano pitches unknown: neither multif0 nor piano is available
        assert!(!orig.annotations.contains_key(&TaskId::Multif0));
        assert!(!orig.annotations.contains_key(&TaskId::Piano));
        assert!(orig.annotations[&TaskId::Guitar].is_silent());

        let rmx = render_remix(
            &MixSpec {
                removed: BTreeSet::from([2]),
                ..spec.clone()
            },
            0.05,
        )
        .unwrap();
        let Annotation::Multi(m) = &rmx.annotations[&TaskId::Multif0] else {
            panic!()
        };
        let f72 = crate::remix::midi_to_hz(72.0);
        let f40 = crate::remix::midi_to_hz(40.0);
        assert_eq!(m.pitch_sets[4], vec![f40, f72]);
        assert!(m.pitch_sets[0].is_empty() && m.pitch_sets[9].is_empty());
        assert!(rmx.annotations[&TaskId::Piano].is_silent());
        let Annotation::Single(mel) = &rmx.annotations[&TaskId::Melody] else {
            panic!()
        };
        assert_eq!(mel.freqs[4], f72);

        let mut replacements = BTreeMap::new();
        replacements.insert(2, stem(a(), InstrumentClass::Polyphonic, &[TaskId::Piano], notes(60)));
        let rmx_p = render_remix(&MixSpec { replacements, ..spec }, 0.05).unwrap();
        let Annotation::Multi(m) = &rmx_p.annotations[&TaskId::Multif0] else {
            panic!()
        };
        assert_eq!(m.pitch_sets[4].len(), 3);
    }

    #[test]
    fn f0_stems_and_length_checks() {
        let audio = noise(4000, 5);
        let track = F0Track::new((0..11).map(|k| k as f64 * 0.05).collect(), vec![220.0; 11]).unwrap();
        let s = stem(
            audio.clone(),
            InstrumentClass::Monophonic,
            &[TaskId::Bass],
            Some(StemAnnotation::F0(track)),
        );
        let long = stem(noise(4000 + 800, 6), InstrumentClass::Unpitched, &[], None);
        let spec = MixSpec {
            stems: vec![s.clone(), long],
            weights: vec![1.0, 1.0],
            removed: BTreeSet::new(),
            replacements: BTreeMap::new(),
        };
        assert!(render_remix(&spec, 0.05).is_err());
        let ok = MixSpec {
            stems: vec![s],
            weights: vec![1.0],
            removed: BTreeSet::new(),
            replacements: BTreeMap::new(),
        };
        let r = render_remix(&ok, 0.05).unwrap();
        let Annotation::Single(b) = &r.annotations[&TaskId::Bass] else {
            panic!()
        };
        assert!(b.freqs.iter().all(|&f| f == 220.0));
        assert!(render_remix(&MixSpec { weights: vec![-1.0], ..ok }, 0.05).is_err());
    }
}
