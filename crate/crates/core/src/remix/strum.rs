use rand::Rng;

use super::{validate_voicings, ChordSegment, NoteEvent, VoicingDict};
use crate::error::{invalid, Result};

/// Velocity given to every strummed note.
pub const STRUM_VELOCITY: u8 = 100;

/// Lead of the first strummed note before the chord onset.
const LEAD: f64 = 0.01;
const MIN_GAP: f64 = 0.01;
const MAX_GAP: f64 = 0.05;

/// Sum of absolute MIDI differences over aligned positions, plus 12 per
/// note present in only one of the voicings.
pub fn voicing_distance(a: &[u8], b: &[u8]) -> u32 {
    let aligned: u32 = a.iter().zip(b).map(|(x, y)| u32::from(x.abs_diff(*y))).sum();
    aligned + 12 * a.len().abs_diff(b.len()) as u32
}

/// Strummed note events for a chord sequence.
///
/// Each segment picks the voicing closest to the previous one (ties to the
/// earliest listed; the first segment takes the first voicing). Strums
/// alternate down (voicing order) and up (reversed), starting down. The
/// first note starts 10 ms before the onset and each later note a uniform
/// 10-50 ms after its predecessor; all notes end at the segment offset.
/// Notes whose start would not precede the offset are dropped.
pub fn generate_strums(segments: &[ChordSegment], dict: &VoicingDict, rng: &mut impl Rng) -> Result<Vec<NoteEvent>> {
    validate_voicings(dict)?;
    let unknown: Vec<&str> = segments
        .iter()
        .filter(|s| !dict.contains_key(&s.label))
        .map(|s| s.label.as_str())
        .collect();
    if !unknown.is_empty() {
        return invalid(format!("unknown chord labels: {}", unknown.join(", ")));
    }
    let mut events = Vec::new();
    let mut previous: Option<&[u8]> = None;
    for (i, seg) in segments.iter().enumerate() {
        if !(seg.offset > seg.onset) {
            return invalid(format!("segment {i} has offset <= onset"));
        }
        let options = &dict[&seg.label];
        let voicing: &[u8] = match previous {
            None => &options[0],
            Some(prev) => options.iter().min_by_key(|v| voicing_distance(prev, v)).expect("non-empty"),
        };
        previous = Some(voicing);
        let order: Vec<u8> = if i % 2 == 0 {
            voicing.to_vec()
        } else {
            voicing.iter().rev().copied().collect()
        };
        let mut start = seg.onset - LEAD;
        for (k, &midi) in order.iter().enumerate() {
            if k > 0 {
                start += rng.gen_range(MIN_GAP..=MAX_GAP);
            }
            if start < seg.offset {
                events.push(NoteEvent::new(start, seg.offset, midi, STRUM_VELOCITY)?);
            }
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn dict() -> VoicingDict {
        VoicingDict::from([
            ("C".to_string(), vec![vec![48, 52, 55, 60], vec![60, 64, 67, 72]]),
            ("G".to_string(), vec![vec![43, 47, 50, 55, 59, 67], vec![55, 59, 62, 67]]),
        ])
    }

    #[test]
    fn distance_definition() {
        assert_eq!(voicing_distance(&[48, 52], &[48, 52]), 0);
        assert_eq!(voicing_distance(&[48, 52], &[50, 51]), 3);
        assert_eq!(voicing_distance(&[48], &[48, 52, 55]), 24);
    }

    #[test]
    fn single_chord_timing() {
        let seg = vec![ChordSegment::new(1.0, 2.0, "C").unwrap()];
        let ev = generate_strums(&seg, &dict(), &mut rng::stream(0, "strum")).unwrap();
        assert_eq!(ev.len(), 4);
        assert!((ev[0].start - 0.99).abs() < 1e-12);
        for w in ev.windows(2) {
            let d = w[1].start - w[0].start;
            assert!((0.01 - 1e-12..=0.05 + 1e-12).contains(&d), "{d}");
        }
        assert!(ev.iter().all(|e| e.end == 2.0));
        assert_eq!(ev.iter().map(|e| e.midi_note).collect::<Vec<_>>(), vec![48, 52, 55, 60]);
    }

    #[test]
    fn repeated_chord_keeps_voicing_and_reverses() {
        let seg = vec![ChordSegment::new(0.5, 1.0, "C").unwrap(), ChordSegment::new(1.0, 1.5, "C").unwrap()];
        let ev = generate_strums(&seg, &dict(), &mut rng::stream(1, "strum")).unwrap();
        let second: Vec<u8> = ev[4..].iter().map(|e| e.midi_note).collect();
        assert_eq!(second, vec![60, 55, 52, 48]);
    }

    #[test]
    fn nearest_voicing_follows_previous_chord() {
        let seg = vec![ChordSegment::new(0.5, 1.0, "C").unwrap(), ChordSegment::new(1.0, 1.5, "G").unwrap()];
        let d = dict();
        let ev = generate_strums(&seg, &d, &mut rng::stream(1, "strum")).unwrap();
        // distance from [48,52,55,60]: 6-note voicing 5+5+5+5+24 = 44, 4-note 7+7+7+7 = 28
        let mut second: Vec<u8> = ev[4..].iter().map(|e| e.midi_note).collect();
        second.reverse();
        assert_eq!(second, d["G"][1]);
    }

    #[test]
    fn empty_and_unknown() {
        assert!(generate_strums(&[], &dict(), &mut rng::stream(0, "s")).unwrap().is_empty());
        let err = generate_strums(&[ChordSegment::new(0.0, 1.0, "F#m7").unwrap()], &dict(), &mut rng::stream(0, "s")).unwrap_err();
        assert!(err.to_string().contains("F#m7"));
    }

    #[test]
    fn short_segment_drops_late_notes() {
        let seg = vec![ChordSegment::new(1.0, 1.02, "G").unwrap()];
        let ev = generate_strums(&seg, &dict(), &mut rng::stream(0, "s")).unwrap();
        assert!(!ev.is_empty() && ev.len() < 6);
        assert!(ev.iter().all(|e| e.start < e.end));
    }
}
