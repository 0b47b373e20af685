//! Dataset fabrication: mixing-weight estimation, remixing, strummed
//! chords, velocity estimation, sound-font matching and a toy synthesizer.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{invalid, Result};
use crate::model::TaskId;
use crate::salience::F0Track;

mod fontmatch;
mod mix;
pub mod nnls;
mod strum;
mod synth;
mod velocity;

pub use fontmatch::{match_sound_font, FontMatch};
pub use mix::{envelope, estimate_mix_weights, render_remix, MixObjective, MixWeights, Remix, ENVELOPE_SECONDS};
pub use strum::{generate_strums, voicing_distance, STRUM_VELOCITY};
pub use synth::{synth_note_events, synth_with, ToneSpec, Vibrato};
pub use velocity::estimate_velocities;

pub fn midi_to_hz(midi: f64) -> f64 {
    440.0 * 2f64.powf((midi - 69.0) / 12.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstrumentClass {
    Monophonic,
    Polyphonic,
    Unpitched,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub start: f64,
    pub end: f64,
    pub midi_note: u8,
    pub velocity: u8,
}

impl NoteEvent {
    pub fn new(start: f64, end: f64, midi_note: u8, velocity: u8) -> Result<Self> {
        let e = Self {
            start,
            end,
            midi_note,
            velocity,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.start.is_finite() || !self.end.is_finite() || self.end <= self.start {
            return invalid(format!("note {} needs finite times with end > start", self.midi_note));
        }
        if self.midi_note > 127 || !(1..=127).contains(&self.velocity) {
            return invalid(format!("note {} / velocity {} out of MIDI range", self.midi_note, self.velocity));
        }
        Ok(())
    }

    pub fn freq(&self) -> f64 {
        midi_to_hz(f64::from(self.midi_note))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChordSegment {
    pub onset: f64,
    pub offset: f64,
    pub label: String,
}

impl ChordSegment {
    pub fn new(onset: f64, offset: f64, label: impl Into<String>) -> Result<Self> {
        if !onset.is_finite() || !offset.is_finite() || offset <= onset {
            return invalid("chord segment needs finite times with offset > onset");
        }
        Ok(Self {
            onset,
            offset,
            label: label.into(),
        })
    }
}

/// Chord label to candidate voicings, each in playing ("down") order.
pub type VoicingDict = BTreeMap<String, Vec<Vec<u8>>>;

pub fn validate_voicings(dict: &VoicingDict) -> Result<()> {
    for (label, voicings) in dict {
        if voicings.is_empty() || voicings.iter().any(Vec::is_empty) {
            return invalid(format!("chord {label} has an empty voicing list or voicing"));
        }
        if voicings.iter().flatten().any(|&m| m > 127) {
            return invalid(format!("chord {label} has a note outside 0-127"));
        }
    }
    Ok(())
}

/// Pitch content of a stem: a frame-level track or a list of notes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StemAnnotation {
    F0(F0Track),
    Notes(Vec<NoteEvent>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stem {
    pub audio: AudioBuffer,
    pub class: InstrumentClass,
    /// Mixture-level tasks this stem's pitches count towards, besides
    /// multif0 (implied for every pitched stem).
    pub tasks: BTreeSet<TaskId>,
    pub annotation: Option<StemAnnotation>,
}

impl Stem {
    pub fn new(audio: AudioBuffer, class: InstrumentClass, tasks: BTreeSet<TaskId>, annotation: Option<StemAnnotation>) -> Result<Self> {
        if class == InstrumentClass::Unpitched && (!tasks.is_empty() || annotation.is_some()) {
            return invalid("unpitched stems carry no pitch annotation or task");
        }
        if tasks.contains(&TaskId::Multif0) {
            return invalid("multif0 is implied for pitched stems and cannot be listed");
        }
        match &annotation {
            Some(StemAnnotation::Notes(notes)) => {
                for n in notes {
                    n.validate()?;
                }
            }
            Some(StemAnnotation::F0(track)) => {
                // the last frame must reach within one hop of the end
                let hop = if track.len() > 1 { track.times[1] - track.times[0] } else { 0.0 };
                let end = track.times.last().map_or(f64::NEG_INFINITY, |&t| t + hop);
                if end < audio.duration() - 1e-6 {
                    return invalid("stem annotation ends before the audio does");
                }
            }
            None => {}
        }
        Ok(Self {
            audio,
            class,
            tasks,
            annotation,
        })
    }
}

/// Stems with mixing weights, a set of removed stems and replacements.
#[derive(Debug, Clone, PartialEq)]
pub struct MixSpec {
    pub stems: Vec<Stem>,
    pub weights: Vec<f64>,
    pub removed: BTreeSet<usize>,
    pub replacements: BTreeMap<usize, Stem>,
}
