//! Annotation CSV files, note/chord/voicing/mix-spec formats and the TNSR
//! tensor container.
//!
//! TNSR layout (little-endian): `b"TNSR"`, `u16` version, `u32` entry count,
//! then per entry `u32` name length, UTF-8 name, `u8` rank, `rank` x `u32`
//! dims and the row-major `f32` data.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::audio::load_wav;
use crate::error::{Error, Result};
use crate::model::TaskId;
use crate::remix::{
    estimate_mix_weights, validate_voicings, ChordSegment, InstrumentClass, MixObjective, MixSpec, NoteEvent, Stem, StemAnnotation,
    VoicingDict,
};
use crate::salience::{F0Track, MultiF0Track};

const MAGIC: &[u8; 4] = b"TNSR";
const VERSION: u16 = 1;

pub type TensorMap = BTreeMap<String, ArrayD<f32>>;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn parse_rows(text: &str) -> Result<Vec<(f64, Vec<f64>)>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).filter(|f| !f.is_empty()).collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            // a non-numeric first line is a header
            Err(_) if rows.is_empty() && lineno == 0 => continue,
            Err(e) => return Err(format_err(format!("line {}: {e}", lineno + 1))),
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(format_err(format!("line {}: non-finite value", lineno + 1)));
        }
        if values.iter().any(|v| *v < 0.0) {
            return Err(format_err(format!("line {}: negative value", lineno + 1)));
        }
        let (&t, rest) = values
            .split_first()
            .ok_or_else(|| format_err(format!("line {}: empty row", lineno + 1)))?;
        if let Some((prev, _)) = rows.last() {
            if t <= *prev {
                return Err(format_err(format!("line {}: times must be strictly increasing", lineno + 1)));
            }
        }
        rows.push((t, rest.to_vec()));
    }
    Ok(rows)
}

/// `time_sec,freq_hz` rows; a frequency of 0 marks an unvoiced frame.
pub fn parse_single_f0_csv(text: &str) -> Result<F0Track> {
    let rows = parse_rows(text)?;
    let mut times = Vec::with_capacity(rows.len());
    let mut freqs = Vec::with_capacity(rows.len());
    for (t, rest) in rows {
        if rest.len() != 1 {
            return Err(format_err(format!("row at {t} s needs exactly one frequency")));
        }
        times.push(t);
        freqs.push(rest[0]);
    }
    F0Track::new(times, freqs)
}

/// `time_sec,f1,f2,...` rows with any number of pitches; zeros are dropped.
pub fn parse_multi_f0_csv(text: &str) -> Result<MultiF0Track> {
    let (times, sets) = parse_rows(text)?
        .into_iter()
        .map(|(t, rest)| (t, rest.into_iter().filter(|&f| f > 0.0).collect::<Vec<_>>()))
        .unzip();
    MultiF0Track::new(times, sets)
}

pub fn single_f0_to_csv(track: &F0Track) -> String {
    let mut out = String::new();
    for (t, f) in track.times.iter().zip(&track.freqs) {
        let _ = writeln!(out, "{t},{f}");
    }
    out
}

pub fn multi_f0_to_csv(track: &MultiF0Track) -> String {
    let mut out = String::new();
    for (t, set) in track.times.iter().zip(&track.pitch_sets) {
        let _ = write!(out, "{t}");
        for f in set {
            let _ = write!(out, ",{f}");
        }
        out.push('\n');
    }
    out
}

pub fn load_single_f0(path: &Path) -> Result<F0Track> {
    parse_single_f0_csv(&fs::read_to_string(path)?)
}

pub fn load_multi_f0(path: &Path) -> Result<MultiF0Track> {
    parse_multi_f0_csv(&fs::read_to_string(path)?)
}

/// Splits CSV text into trimmed fields per data line, skipping blank
/// lines, `#` comments and a header line whose first field is `header`.
fn csv_records<'a>(text: &'a str, header: &str, width: usize) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if out.is_empty() && fields[0] == header {
            continue;
        }
        if fields.len() != width {
            return Err(format_err(format!(
                "line {}: expected {width} fields, found {}",
                lineno + 1,
                fields.len()
            )));
        }
        out.push((lineno + 1, fields));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(line: usize, what: &str, s: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| format_err(format!("line {line}: bad {what} {s:?}: {e}")))
}

/// `start,end,midi,velocity` rows (seconds, seconds, 0-127, 1-127).
pub fn parse_notes_csv(text: &str) -> Result<Vec<NoteEvent>> {
    csv_records(text, "start", 4)?
        .into_iter()
        .map(|(line, f)| {
            let e = NoteEvent {
                start: field(line, "start", f[0])?,
                end: field(line, "end", f[1])?,
                midi_note: field(line, "midi", f[2])?,
                velocity: field(line, "velocity", f[3])?,
            };
            e.validate().map_err(|err| format_err(format!("line {line}: {err}")))?;
            Ok(e)
        })
        .collect()
}

pub fn notes_to_csv(notes: &[NoteEvent]) -> String {
    let mut out = String::from("start,end,midi,velocity\n");
    for n in notes {
        let _ = writeln!(out, "{},{},{},{}", n.start, n.end, n.midi_note, n.velocity);
    }
    out
}

/// `onset,offset,label` rows.
pub fn parse_chords_csv(text: &str) -> Result<Vec<ChordSegment>> {
    csv_records(text, "onset", 3)?
        .into_iter()
        .map(|(line, f)| {
            if f[2].is_empty() {
                return Err(format_err(format!("line {line}: empty chord label")));
            }
            ChordSegment::new(field(line, "onset", f[0])?, field(line, "offset", f[1])?, f[2])
                .map_err(|err| format_err(format!("line {line}: {err}")))
        })
        .collect()
}

pub fn chords_to_csv(segments: &[ChordSegment]) -> String {
    let mut out = String::from("onset,offset,label\n");
    for s in segments {
        let _ = writeln!(out, "{},{},{}", s.onset, s.offset, s.label);
    }
    out
}

/// JSON object from chord label to a list of MIDI-note arrays.
pub fn parse_voicings_json(text: &str) -> Result<VoicingDict> {
    let dict: VoicingDict = serde_json::from_str(text)?;
    validate_voicings(&dict)?;
    Ok(dict)
}

pub fn load_notes(path: &Path) -> Result<Vec<NoteEvent>> {
    parse_notes_csv(&fs::read_to_string(path)?)
}

pub fn load_chords(path: &Path) -> Result<Vec<ChordSegment>> {
    parse_chords_csv(&fs::read_to_string(path)?)
}

pub fn load_voicings(path: &Path) -> Result<VoicingDict> {
    parse_voicings_json(&fs::read_to_string(path)?)
}

/// One stem in a mix-spec file. Paths are relative to the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StemFile {
    pub audio: PathBuf,
    pub class: InstrumentClass,
    #[serde(default)]
    pub tasks: BTreeSet<TaskId>,
    /// Note-event CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<PathBuf>,
    /// Single-f0 CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f0: Option<PathBuf>,
}

/// JSON description of a remix. Weights are either given or estimated
/// from `mix`, the original mixture, with `objective`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSpecFile {
    pub stems: Vec<StemFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mix: Option<PathBuf>,
    #[serde(default)]
    pub objective: MixObjective,
    #[serde(default)]
    pub removed: BTreeSet<usize>,
    #[serde(default)]
    pub replacements: BTreeMap<usize, StemFile>,
    /// Frame spacing of the merged annotations.
    pub hop_seconds: f64,
}

fn load_stem(base: &Path, s: &StemFile) -> Result<Stem> {
    let audio = load_wav(base.join(&s.audio))?;
    let annotation = match (&s.notes, &s.f0) {
        (Some(_), Some(_)) => return Err(Error::InvalidInput(format!("{}: give notes or f0, not both", s.audio.display()))),
        (Some(p), None) => Some(StemAnnotation::Notes(load_notes(&base.join(p))?)),
        (None, Some(p)) => Some(StemAnnotation::F0(load_single_f0(&base.join(p))?)),
        (None, None) => None,
    };
    Stem::new(audio, s.class, s.tasks.clone(), annotation)
}

/// Reads a mix-spec file and everything it points to.
pub fn load_mix_spec(path: &Path) -> Result<(MixSpec, f64)> {
    let file: MixSpecFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let stems = file.stems.iter().map(|s| load_stem(base, s)).collect::<Result<Vec<_>>>()?;
    let mut replacements = BTreeMap::new();
    for (&i, s) in &file.replacements {
        replacements.insert(i, load_stem(base, s)?);
    }
    let weights = match (&file.weights, &file.mix) {
        (Some(w), _) => w.clone(),
        (None, Some(mix)) => {
            let mix = load_wav(base.join(mix))?;
            let audios: Vec<_> = stems.iter().map(|s| s.audio.clone()).collect();
            estimate_mix_weights(&audios, &mix, file.objective)?.weights
        }
        (None, None) => {
            return Err(Error::InvalidInput(
                "mix spec needs either weights or a mix to estimate them from".into(),
            ))
        }
    };
    Ok((
        MixSpec {
            stems,
            weights,
            removed: file.removed,
            replacements,
        },
        file.hop_seconds,
    ))
}

pub fn encode_tensors(tensors: &TensorMap) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(
        &u32::try_from(tensors.len())
            .map_err(|_| format_err("too many tensors"))?
            .to_le_bytes(),
    );
    for (name, t) in tensors {
        let rank = u8::try_from(t.ndim()).map_err(|_| format_err(format!("{name}: rank too large")))?;
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| format_err(format!("{name}: dimension too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format_err(format!("truncated tensor file at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_tensors(bytes: &[u8]) -> Result<TensorMap> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(format_err("not a TNSR file"));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(format_err(format!("unsupported TNSR version {version}")));
    }
    let count = r.u32()?;
    let mut out = TensorMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| format_err("tensor name is not UTF-8"))?
            .to_string();
        let rank = r.take(1)?[0] as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| format_err(format!("{name}: shape overflows")))?;
        let data: Vec<f32> = r
            .take(n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let array = ArrayD::from_shape_vec(IxDyn(&dims), data).expect("length checked");
        if out.insert(name.clone(), array).is_some() {
            return Err(format_err(format!("duplicate tensor name {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(format_err("trailing bytes after last tensor"));
    }
    Ok(out)
}

pub fn save_tensors(path: &Path, tensors: &TensorMap) -> Result<()> {
    fs::write(path, encode_tensors(tensors)?)?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<TensorMap> {
    decode_tensors(&fs::read(path)?)
}
