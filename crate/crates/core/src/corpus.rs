//! Seeded synthetic multitrack corpus with exact annotations.
//!
//! Each base track draws a random subset of six stem roles, mixes them with
//! random weights and is emitted as four mixtures: the original mix, and
//! remixes where the piano and guitar stems are replaced by re-synthesized
//! versions (RMX-PG), only piano is replaced and guitar removed (RMX-P), or
//! both are removed (RMX). Replacements go through the same chain as real
//! data would: velocity estimation and sound-font matching for piano, chord
//! segments re-strummed for guitar, and mixing weights estimated from the
//! original mix.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{load_wav, save_wav, AudioBuffer, WavFormat};
use crate::error::{invalid, Error, Result};
use crate::io;
use crate::model::TaskId;
use crate::remix::{
    estimate_mix_weights, estimate_velocities, generate_strums, match_sound_font, render_remix, synth_with, ChordSegment, InstrumentClass,
    MixObjective, MixSpec, NoteEvent, Stem, StemAnnotation, ToneSpec, Vibrato, VoicingDict,
};
use crate::rng;
use crate::salience::{Annotation, F0Track};

/// Pitch classes of C major.
const C_MAJOR: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
const WEIGHT_RANGE: (f64, f64) = (0.5, 1.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Melody,
    Bass,
    Vocal,
    Piano,
    Guitar,
    Percussion,
}

impl Role {
    pub const ALL: [Role; 6] = [Role::Melody, Role::Bass, Role::Vocal, Role::Piano, Role::Guitar, Role::Percussion];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Melody => "melody",
            Role::Bass => "bass",
            Role::Vocal => "vocal",
            Role::Piano => "piano",
            Role::Guitar => "guitar",
            Role::Percussion => "percussion",
        }
    }

    pub fn class(self) -> InstrumentClass {
        match self {
            Role::Melody | Role::Bass | Role::Vocal => InstrumentClass::Monophonic,
            Role::Piano | Role::Guitar => InstrumentClass::Polyphonic,
            Role::Percussion => InstrumentClass::Unpitched,
        }
    }

    pub fn task(self) -> Option<TaskId> {
        match self {
            Role::Melody => Some(TaskId::Melody),
            Role::Bass => Some(TaskId::Bass),
            Role::Vocal => Some(TaskId::Vocal),
            Role::Piano => Some(TaskId::Piano),
            Role::Guitar => Some(TaskId::Guitar),
            Role::Percussion => None,
        }
    }

    /// Timbre of the stem as it appears in the original mix.
    pub fn tone(self) -> ToneSpec {
        match self {
            Role::Bass => ToneSpec {
                n_harmonics: 3,
                decay: 0.5,
                vibrato: None,
            },
            Role::Melody => ToneSpec {
                n_harmonics: 8,
                decay: 0.5,
                vibrato: None,
            },
            Role::Vocal => ToneSpec {
                n_harmonics: 8,
                decay: 0.2,
                vibrato: Some(Vibrato {
                    rate_hz: 5.0,
                    depth_cents: 20.0,
                }),
            },
            Role::Piano => ToneSpec {
                n_harmonics: 6,
                decay: 6.0,
                vibrato: None,
            },
            Role::Guitar => ToneSpec {
                n_harmonics: 7,
                decay: 3.0,
                vibrato: None,
            },
            Role::Percussion => ToneSpec {
                n_harmonics: 0,
                decay: 0.0,
                vibrato: None,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MixVariant {
    #[serde(rename = "ORIG")]
    Orig,
    #[serde(rename = "RMX-PG")]
    RmxPg,
    #[serde(rename = "RMX-P")]
    RmxP,
    #[serde(rename = "RMX")]
    Rmx,
}

impl MixVariant {
    pub const ALL: [MixVariant; 4] = [MixVariant::Orig, MixVariant::RmxPg, MixVariant::RmxP, MixVariant::Rmx];

    pub fn as_str(self) -> &'static str {
        match self {
            MixVariant::Orig => "ORIG",
            MixVariant::RmxPg => "RMX-PG",
            MixVariant::RmxP => "RMX-P",
            MixVariant::Rmx => "RMX",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolePresence {
    pub melody: f64,
    pub bass: f64,
    pub vocal: f64,
    pub piano: f64,
    pub guitar: f64,
    pub percussion: f64,
}

impl Default for RolePresence {
    fn default() -> Self {
        Self {
            melody: 0.9,
            bass: 0.8,
            vocal: 0.5,
            piano: 0.6,
            guitar: 0.6,
            percussion: 0.8,
        }
    }
}

impl RolePresence {
    pub fn get(&self, role: Role) -> f64 {
        match role {
            Role::Melody => self.melody,
            Role::Bass => self.bass,
            Role::Vocal => self.vocal,
            Role::Piano => self.piano,
            Role::Guitar => self.guitar,
            Role::Percussion => self.percussion,
        }
    }
}

/// Inclusive MIDI ranges per pitched role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PitchRanges {
    pub bass: [u8; 2],
    pub melody: [u8; 2],
    pub vocal: [u8; 2],
    pub piano: [u8; 2],
    pub guitar: [u8; 2],
}

impl Default for PitchRanges {
    fn default() -> Self {
        Self {
            bass: [28, 52],
            melody: [48, 84],
            vocal: [48, 84],
            piano: [40, 84],
            guitar: [40, 84],
        }
    }
}

impl PitchRanges {
    fn get(&self, role: Role) -> [u8; 2] {
        match role {
            Role::Bass => self.bass,
            Role::Melody => self.melody,
            Role::Vocal => self.vocal,
            Role::Piano => self.piano,
            Role::Guitar | Role::Percussion => self.guitar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub n_tracks: usize,
    /// Seconds per track.
    pub duration: f64,
    pub seed: u64,
    pub sample_rate: u32,
    /// Frame spacing of the written annotations.
    pub hop_seconds: f64,
    pub presence: RolePresence,
    pub ranges: PitchRanges,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_tracks: 24,
            duration: 4.0,
            seed: 0,
            sample_rate: 22050,
            hop_seconds: 256.0 / 22050.0,
            presence: RolePresence::default(),
            ranges: PitchRanges::default(),
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_tracks == 0 {
            return invalid("corpus needs at least one track");
        }
        if !(self.duration >= 0.5) || !self.duration.is_finite() {
            return invalid("track duration must be at least 0.5 s");
        }
        if self.sample_rate < 8000 {
            return invalid("sample rate must be at least 8000 Hz");
        }
        if !(self.hop_seconds > 0.0) || !self.hop_seconds.is_finite() {
            return invalid("annotation hop must be positive");
        }
        for role in Role::ALL {
            let p = self.presence.get(role);
            if !(0.0..=1.0).contains(&p) {
                return invalid(format!("{} presence probability {p} outside [0, 1]", role.as_str()));
            }
            if role != Role::Percussion {
                let [lo, hi] = self.ranges.get(role);
                if lo > hi || hi > 127 {
                    return invalid(format!("{} pitch range {lo}-{hi} is not within 0-127", role.as_str()));
                }
                if !(lo..=hi).any(|m| C_MAJOR.contains(&(m % 12))) {
                    return invalid(format!("{} pitch range holds no C-major note", role.as_str()));
                }
            }
        }
        let dict = voicing_dict(self.ranges.guitar);
        if dict.is_empty() {
            return invalid("guitar range excludes every chord voicing");
        }
        Ok(())
    }

    fn n_samples(&self) -> usize {
        (self.duration * f64::from(self.sample_rate)).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StemInfo {
    pub role: Role,
    pub class: InstrumentClass,
    /// True for a re-synthesized replacement of the original stem.
    pub replaced: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTrack {
    /// `<base_id>_<variant>`.
    pub id: String,
    pub base_id: String,
    pub variant: MixVariant,
    pub mix: AudioBuffer,
    /// Every task is present; an empty annotation means "null".
    pub annotations: BTreeMap<TaskId, Annotation>,
    /// Stems audible in this mix.
    pub stems: Vec<StemInfo>,
}

/// Built-in guitar chord shapes, limited to voicings inside `range`.
pub fn voicing_dict(range: [u8; 2]) -> VoicingDict {
    let shapes: [(&str, [&[u8]; 2]); 6] = [
        ("C", [&[48, 52, 55, 60, 64], &[55, 60, 64, 67, 72]]),
        ("Dm", [&[50, 57, 62, 65], &[57, 62, 65, 69, 74]]),
        ("Em", [&[40, 47, 52, 55, 59, 64], &[52, 59, 64, 67, 71]]),
        ("F", [&[41, 48, 53, 57, 60, 65], &[53, 57, 60, 65, 69]]),
        ("G", [&[43, 47, 50, 55, 59, 67], &[55, 59, 62, 67, 71]]),
        ("Am", [&[45, 52, 57, 60, 64], &[57, 64, 69, 72, 76]]),
    ];
    let mut dict = VoicingDict::new();
    for (label, voicings) in shapes {
        let kept: Vec<Vec<u8>> = voicings
            .iter()
            .filter(|v| v.iter().all(|m| (range[0]..=range[1]).contains(m)))
            .map(|v| v.to_vec())
            .collect();
        if !kept.is_empty() {
            dict.insert(label.to_string(), kept);
        }
    }
    dict
}

/// Replacement timbres for piano and guitar stems.
pub fn sound_font_bank() -> Vec<(String, ToneSpec)> {
    let tone = |n_harmonics, decay| ToneSpec {
        n_harmonics,
        decay,
        vibrato: None,
    };
    vec![
        ("keys-soft".into(), tone(3, 6.0)),
        ("keys-bright".into(), tone(10, 5.0)),
        ("organ".into(), tone(6, 0.0)),
        ("pluck".into(), tone(8, 3.0)),
    ]
}

/// Scales and chords rendered with every bank font, for timbre matching.
fn render_font_probes(sample_rate: u32) -> Result<Vec<(String, AudioBuffer)>> {
    let mut events = Vec::new();
    let mut t = 0.0;
    for &pc in C_MAJOR.iter().chain(&[12]) {
        events.push(NoteEvent::new(t, t + 0.25, 60 + pc, 100)?);
        t += 0.25;
    }
    for chord in [[48u8, 52, 55, 60], [53, 57, 60, 65], [55, 59, 62, 67]] {
        for m in chord {
            events.push(NoteEvent::new(t, t + 1.0, m, 90)?);
        }
        t += 1.0;
    }
    sound_font_bank()
        .into_iter()
        .map(|(id, tone)| Ok((id, synth_with(&events, sample_rate, &tone, None)?)))
        .collect()
}

fn scale_notes(range: [u8; 2]) -> Vec<u8> {
    (range[0]..=range[1]).filter(|m| C_MAJOR.contains(&(m % 12))).collect()
}

/// Random walk over the C-major notes in `range`: steps of at most two
/// scale degrees, note lengths 0.2-1.0 s and occasional rests.
fn melodic_line(rng: &mut impl Rng, range: [u8; 2], duration: f64) -> Result<Vec<NoteEvent>> {
    let scale = scale_notes(range);
    let mut idx = rng.gen_range(0..scale.len());
    let mut t = rng.gen_range(0.0..0.3);
    let mut notes = Vec::new();
    while t < duration - 0.05 {
        let len: f64 = rng.gen_range(0.2..=1.0);
        if rng.gen_bool(0.1) {
            t += len.min(0.5);
            continue;
        }
        let end = (t + len).min(duration);
        notes.push(NoteEvent::new(t, end, scale[idx], rng.gen_range(70..=120))?);
        t = end;
        let step: i64 = rng.gen_range(-2..=2);
        idx = (idx as i64 + step).clamp(0, scale.len() as i64 - 1) as usize;
    }
    Ok(notes)
}

/// Block chords stacked in thirds over a wandering scale degree.
fn piano_part(rng: &mut impl Rng, range: [u8; 2], duration: f64) -> Result<Vec<NoteEvent>> {
    let scale = scale_notes(range);
    let mut notes = Vec::new();
    let mut t = rng.gen_range(0.0..0.3);
    let mut root = rng.gen_range(0..scale.len());
    while t < duration - 0.05 {
        let end = (t + rng.gen_range(0.2..=1.0)).min(duration);
        let size = rng.gen_range(2..=4usize);
        let mut pitches: Vec<u8> = (0..size)
            .map(|k| root + 2 * k)
            .filter(|&i| i < scale.len())
            .map(|i| scale[i])
            .collect();
        pitches.dedup();
        for m in pitches {
            notes.push(NoteEvent::new(t, end, m, rng.gen_range(40..=120))?);
        }
        t = end;
        let step: i64 = rng.gen_range(-3..=3);
        root = (root as i64 + step).clamp(0, scale.len() as i64 - 1) as usize;
    }
    Ok(notes)
}

fn chord_segments(rng: &mut impl Rng, dict: &VoicingDict, duration: f64) -> Result<Vec<ChordSegment>> {
    let labels: Vec<&String> = dict.keys().collect();
    let mut segments = Vec::new();
    // start late enough that the strum lead-in stays inside the track
    let mut t = rng.gen_range(0.05..0.3);
    while t < duration - 0.1 {
        let end = (t + rng.gen_range(0.4..=1.2)).min(duration);
        segments.push(ChordSegment::new(t, end, labels[rng.gen_range(0..labels.len())].clone())?);
        t = end;
    }
    Ok(segments)
}

/// Exponentially decaying noise bursts through a one-pole filter, low-pass
/// ("kick") or high-pass ("hat"), on a quarter-second grid.
fn percussion(rng: &mut impl Rng, n: usize, sample_rate: u32) -> Result<AudioBuffer> {
    let sr = f64::from(sample_rate);
    let mut out = vec![0.0f64; n];
    let slot = (0.25 * sr) as usize;
    for start in (0..n).step_by(slot.max(1)) {
        if !rng.gen_bool(0.6) {
            continue;
        }
        let kick = rng.gen_bool(0.5);
        let (len, decay, alpha) = if kick { (0.12, 30.0, 0.05) } else { (0.05, 80.0, 0.6) };
        let gain = rng.gen_range(0.5..1.0);
        let mut lp = 0.0;
        for k in 0..((len * sr) as usize).min(n - start) {
            let w: f64 = rng.gen_range(-1.0..1.0);
            lp += alpha * (w - lp);
            let v = if kick { lp } else { w - lp };
            out[start + k] += gain * v * (-decay * k as f64 / sr).exp();
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.9 / peak);
    }
    AudioBuffer::from_f64(&out, sample_rate)
}

/// Frame-level f0 of a vibrato line, evaluated on the annotation grid.
fn vibrato_track(notes: &[NoteEvent], tone: &ToneSpec, n_frames: usize, hop: f64) -> Result<F0Track> {
    let times: Vec<f64> = (0..n_frames).map(|k| k as f64 * hop).collect();
    let freqs = times
        .iter()
        .map(|&t| {
            notes
                .iter()
                .find(|n| n.start <= t && t < n.end)
                .map_or(0.0, |n| tone.instantaneous_freq(n, t - n.start))
        })
        .collect();
    F0Track::new(times, freqs)
}

struct BaseStem {
    role: Role,
    stem: Stem,
    replacement: Option<Stem>,
}

fn task_set(role: Role) -> BTreeSet<TaskId> {
    role.task().into_iter().collect()
}

fn generate_base(spec: &CorpusSpec, index: usize, probes: &[(String, AudioBuffer)], dict: &VoicingDict) -> Result<Vec<BaseStem>> {
    let seed = spec.seed;
    let sr = spec.sample_rate;
    let n = spec.n_samples();
    let dur = n as f64 / f64::from(sr);
    let n_frames = (dur / spec.hop_seconds + 1e-9).floor() as usize + 1;
    let name = |what: &str| format!("corpus/track{index}/{what}");

    let mut pick = rng::stream(seed, &name("presence"));
    let mut roles: Vec<Role> = Role::ALL.into_iter().filter(|&r| pick.gen_bool(spec.presence.get(r))).collect();
    if roles.iter().all(|r| r.class() == InstrumentClass::Unpitched) {
        // every track keeps at least one pitched stem
        let fallback = [Role::Melody, Role::Bass, Role::Vocal, Role::Piano, Role::Guitar]
            .into_iter()
            .max_by(|a, b| spec.presence.get(*a).total_cmp(&spec.presence.get(*b)))
            .unwrap_or(Role::Melody);
        roles.push(fallback);
        roles.sort();
    }

    let mut stems = Vec::with_capacity(roles.len());
    for role in roles {
        let mut r = rng::stream(seed, &name(role.as_str()));
        let tone = role.tone();
        let range = spec.ranges.get(role);
        let base = match role {
            Role::Melody | Role::Bass => {
                let notes = melodic_line(&mut r, range, dur)?;
                let audio = synth_with(&notes, sr, &tone, Some(n))?;
                BaseStem {
                    role,
                    stem: Stem::new(audio, role.class(), task_set(role), Some(StemAnnotation::Notes(notes)))?,
                    replacement: None,
                }
            }
            Role::Vocal => {
                let notes = melodic_line(&mut r, range, dur)?;
                let audio = synth_with(&notes, sr, &tone, Some(n))?;
                let track = vibrato_track(&notes, &tone, n_frames, spec.hop_seconds)?;
                BaseStem {
                    role,
                    stem: Stem::new(audio, role.class(), task_set(role), Some(StemAnnotation::F0(track)))?,
                    replacement: None,
                }
            }
            Role::Piano => {
                let notes = piano_part(&mut r, range, dur)?;
                let audio = synth_with(&notes, sr, &tone, Some(n))?;
                let velocities = estimate_velocities(&audio, &notes)?;
                let replayed: Vec<NoteEvent> = notes
                    .iter()
                    .zip(velocities)
                    .map(|(e, v)| NoteEvent::new(e.start, e.end, e.midi_note, v))
                    .collect::<Result<_>>()?;
                let font = match_sound_font(&audio, probes)?;
                let rep_audio = synth_with(&replayed, sr, &sound_font_bank()[font.index].1, Some(n))?;
                BaseStem {
                    role,
                    stem: Stem::new(audio, role.class(), task_set(role), Some(StemAnnotation::Notes(notes)))?,
                    replacement: Some(Stem::new(
                        rep_audio,
                        role.class(),
                        task_set(role),
                        Some(StemAnnotation::Notes(replayed)),
                    )?),
                }
            }
            Role::Guitar => {
                let segments = chord_segments(&mut r, dict, dur)?;
                let notes = generate_strums(&segments, dict, &mut r)?;
                let audio = synth_with(&notes, sr, &tone, Some(n))?;
                let mut strum_rng = rng::stream(seed, &name("guitar-replacement"));
                let restrummed = generate_strums(&segments, dict, &mut strum_rng)?;
                let font = match_sound_font(&audio, probes)?;
                let rep_audio = synth_with(&restrummed, sr, &sound_font_bank()[font.index].1, Some(n))?;
                BaseStem {
                    role,
                    stem: Stem::new(audio, role.class(), task_set(role), Some(StemAnnotation::Notes(notes)))?,
                    replacement: Some(Stem::new(
                        rep_audio,
                        role.class(),
                        task_set(role),
                        Some(StemAnnotation::Notes(restrummed)),
                    )?),
                }
            }
            Role::Percussion => BaseStem {
                role,
                stem: Stem::new(percussion(&mut r, n, sr)?, role.class(), BTreeSet::new(), None)?,
                replacement: None,
            },
        };
        stems.push(base);
    }
    Ok(stems)
}

fn generate_track(spec: &CorpusSpec, index: usize, probes: &[(String, AudioBuffer)], dict: &VoicingDict) -> Result<Vec<LabeledTrack>> {
    let base = generate_base(spec, index, probes, dict)?;
    let base_id = format!("track{index:03}");
    let mut wr = rng::stream(spec.seed, &format!("corpus/track{index}/weights"));
    let weights: Vec<f64> = base.iter().map(|_| wr.gen_range(WEIGHT_RANGE.0..=WEIGHT_RANGE.1)).collect();
    let stems: Vec<Stem> = base.iter().map(|b| b.stem.clone()).collect();
    let mut spec_orig = MixSpec {
        stems,
        weights,
        removed: BTreeSet::new(),
        replacements: BTreeMap::new(),
    };
    let orig = render_remix(&spec_orig, spec.hop_seconds)?;
    // remixes reuse weights estimated from the original mix
    let audios: Vec<AudioBuffer> = base.iter().map(|b| b.stem.audio.clone()).collect();
    let estimated = estimate_mix_weights(&audios, &orig.audio, MixObjective::Envelope)?.weights;

    let mut out = Vec::with_capacity(MixVariant::ALL.len());
    for variant in MixVariant::ALL {
        let (replace, remove): (&[Role], &[Role]) = match variant {
            MixVariant::Orig => (&[], &[]),
            MixVariant::RmxPg => (&[Role::Piano, Role::Guitar], &[]),
            MixVariant::RmxP => (&[Role::Piano], &[Role::Guitar]),
            MixVariant::Rmx => (&[], &[Role::Piano, Role::Guitar]),
        };
        let mut infos = Vec::new();
        let remix = if variant == MixVariant::Orig {
            infos.extend(base.iter().map(|b| StemInfo {
                role: b.role,
                class: b.role.class(),
                replaced: false,
            }));
            orig.clone()
        } else {
            spec_orig.weights.clone_from(&estimated);
            spec_orig.removed.clear();
            spec_orig.replacements.clear();
            for (i, b) in base.iter().enumerate() {
                if remove.contains(&b.role) {
                    spec_orig.removed.insert(i);
                    continue;
                }
                let replaced = replace.contains(&b.role);
                if replaced {
                    let rep = b
                        .replacement
                        .clone()
                        .ok_or_else(|| Error::InvalidInput(format!("{} has no replacement", b.role.as_str())))?;
                    spec_orig.replacements.insert(i, rep);
                }
                infos.push(StemInfo {
                    role: b.role,
                    class: b.role.class(),
                    replaced,
                });
            }
            render_remix(&spec_orig, spec.hop_seconds)?
        };
        out.push(LabeledTrack {
            id: format!("{base_id}_{}", variant.as_str()),
            base_id: base_id.clone(),
            variant,
            mix: remix.audio,
            annotations: remix.annotations,
            stems: infos,
        });
    }
    Ok(out)
}

/// All four mixture variants of every track, in track order. Tracks are
/// generated in parallel from independent named streams of `spec.seed`.
/// A track whose draws leave no pitched stem gets the most probable one.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<LabeledTrack>> {
    spec.validate()?;
    let probes = render_font_probes(spec.sample_rate)?;
    let dict = voicing_dict(spec.ranges.guitar);
    let per_track = (0..spec.n_tracks)
        .into_par_iter()
        .map(|i| generate_track(spec, i, &probes, &dict))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_track.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

impl<T> Default for CorpusSplit<T> {
    fn default() -> Self {
        Self {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        }
    }
}

/// Shuffles `ids` with the seed's "split" stream and cuts it into groups of
/// `round(r * n)` for train and validation; test takes the rest.
pub fn split_ids(ids: &[String], ratios: [f64; 3], seed: u64) -> Result<CorpusSplit<String>> {
    if ratios.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) || ratios.iter().sum::<f64>() <= 0.0 {
        return invalid("split ratios must be non-negative with a positive sum");
    }
    let total: f64 = ratios.iter().sum();
    let mut unique: Vec<String> = ids.to_vec();
    unique.sort();
    unique.dedup();
    let n = unique.len();
    let mut r = rng::stream(seed, "split");
    for i in (1..n).rev() {
        unique.swap(i, r.gen_range(0..=i));
    }
    let n_train = ((ratios[0] / total * n as f64).round() as usize).min(n);
    let n_val = ((ratios[1] / total * n as f64).round() as usize).min(n - n_train);
    let test = unique.split_off(n_train + n_val);
    let val = unique.split_off(n_train);
    Ok(CorpusSplit { train: unique, val, test })
}

/// Track-conditional split: all variants of a base track land in one group.
pub fn split_corpus(tracks: Vec<LabeledTrack>, ratios: [f64; 3], seed: u64) -> Result<CorpusSplit<LabeledTrack>> {
    let ids: Vec<String> = tracks.iter().map(|t| t.base_id.clone()).collect();
    let groups = split_ids(&ids, ratios, seed)?;
    let mut out = CorpusSplit::default();
    for t in tracks {
        if groups.train.contains(&t.base_id) {
            out.train.push(t);
        } else if groups.val.contains(&t.base_id) {
            out.val.push(t);
        } else {
            out.test.push(t);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub base_id: String,
    pub variant: MixVariant,
    pub audio: String,
    pub stems: Vec<StemInfo>,
    /// Task to annotation CSV, relative to the corpus directory.
    pub annotations: BTreeMap<TaskId, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub spec: CorpusSpec,
    pub tracks: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `<id>.wav` (float32), `<id>.<task>.csv` per task and the manifest.
pub fn write_corpus(dir: &Path, spec: &CorpusSpec, tracks: &[LabeledTrack]) -> Result<CorpusManifest> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(tracks.len());
    for t in tracks {
        let audio = format!("{}.wav", t.id);
        save_wav(&t.mix, dir.join(&audio), WavFormat::Float32)?;
        let mut annotations = BTreeMap::new();
        for (task, ann) in &t.annotations {
            let file = format!("{}.{task}.csv", t.id);
            let text = match ann {
                Annotation::Single(a) => io::single_f0_to_csv(a),
                Annotation::Multi(a) => io::multi_f0_to_csv(a),
            };
            fs::write(dir.join(&file), text)?;
            annotations.insert(*task, file);
        }
        entries.push(ManifestEntry {
            id: t.id.clone(),
            base_id: t.base_id.clone(),
            variant: t.variant,
            audio,
            stems: t.stems.clone(),
            annotations,
        });
    }
    let manifest = CorpusManifest {
        spec: spec.clone(),
        tracks: entries,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CorpusManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_track(dir: &Path, entry: &ManifestEntry) -> Result<LabeledTrack> {
    let mix = load_wav(dir.join(&entry.audio))?;
    let mut annotations = BTreeMap::new();
    for (task, file) in &entry.annotations {
        let path = dir.join(file);
        let ann = if task.is_multi_pitch() {
            Annotation::Multi(io::load_multi_f0(&path)?)
        } else {
            Annotation::Single(io::load_single_f0(&path)?)
        };
        annotations.insert(*task, ann);
    }
    Ok(LabeledTrack {
        id: entry.id.clone(),
        base_id: entry.base_id.clone(),
        variant: entry.variant,
        mix,
        annotations,
        stems: entry.stems.clone(),
    })
}

pub fn load_corpus(dir: &Path) -> Result<(CorpusSpec, Vec<LabeledTrack>)> {
    let manifest = read_manifest(dir)?;
    let tracks = manifest.tracks.iter().map(|e| load_track(dir, e)).collect::<Result<_>>()?;
    Ok((manifest.spec, tracks))
}
