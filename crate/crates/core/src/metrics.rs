//! Single-f0 (RPA, RCA, VR, VFA, OA) and multiple-f0 (Acc) evaluation.
//!
//! Scores whose denominator is zero are reported as `None` and excluded from
//! dataset aggregates.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::salience::{F0Track, MultiF0Track};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogFreqScale {
    pub f_ref: f64,
}

impl Default for LogFreqScale {
    fn default() -> Self {
        Self { f_ref: 10.0 }
    }
}

impl LogFreqScale {
    pub fn semitones(&self, freq: f64) -> f64 {
        12.0 * (freq / self.f_ref).log2()
    }
}

/// 1 when two pitches are strictly less than a quartertone apart.
pub fn quartertone_match(semitone_diff: f64) -> u32 {
    u32::from(semitone_diff.abs() < 0.5)
}

/// Folds a semitone difference into `[-6, 6)`.
pub fn chroma_wrap(a: f64) -> f64 {
    a - 12.0 * (a / 12.0 + 0.5).floor()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleF0Scores {
    pub rpa: Option<f64>,
    pub rca: Option<f64>,
    pub vr: Option<f64>,
    pub vfa: Option<f64>,
    pub oa: Option<f64>,
}

impl SingleF0Scores {
    pub fn named(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("RPA", self.rpa),
            ("RCA", self.rca),
            ("VR", self.vr),
            ("VFA", self.vfa),
            ("OA", self.oa),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiF0Scores {
    pub acc: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn check_grid(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| (x - y).abs() > 1e-6) {
        return invalid("reference and estimate are on different frame grids; resample first");
    }
    Ok(())
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

pub fn score_single_f0(reference: &F0Track, estimate: &F0Track, scale: &LogFreqScale) -> Result<SingleF0Scores> {
    check_grid(&reference.times, &estimate.times)?;
    let (mut voiced, mut unvoiced) = (0.0, 0.0);
    let (mut pitch_hits, mut chroma_hits, mut recall_hits, mut false_alarms, mut overall) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&f, &fe) in reference.freqs.iter().zip(&estimate.freqs) {
        let (v, ve) = (f > 0.0, fe > 0.0);
        if v {
            voiced += 1.0;
            if ve {
                recall_hits += 1.0;
            }
            if fe > 0.0 {
                let diff = scale.semitones(fe) - scale.semitones(f);
                let hit = f64::from(quartertone_match(diff));
                pitch_hits += hit;
                chroma_hits += f64::from(quartertone_match(chroma_wrap(diff)));
                if ve {
                    overall += hit;
                }
            }
        } else {
            unvoiced += 1.0;
            if ve {
                false_alarms += 1.0;
            } else {
                overall += 1.0;
            }
        }
    }
    Ok(SingleF0Scores {
        rpa: ratio(pitch_hits, voiced),
        rca: ratio(chroma_hits, voiced),
        vr: ratio(recall_hits, voiced),
        vfa: ratio(false_alarms, unvoiced),
        oa: ratio(overall, voiced + unvoiced),
    })
}

/// Maximum number of one-to-one pairs closer than a quartertone.
///
/// Both sides are swept in ascending order; with a common tolerance every
/// reference is matched to the lowest unused estimate inside its window,
/// which is a maximum-cardinality matching.
pub fn match_count(reference: &[f64], estimate: &[f64]) -> usize {
    let mut r = reference.to_vec();
    let mut e = estimate.to_vec();
    r.sort_by(f64::total_cmp);
    e.sort_by(f64::total_cmp);
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < r.len() && j < e.len() {
        if e[j] <= r[i] - 0.5 {
            j += 1;
        } else if e[j] >= r[i] + 0.5 {
            i += 1;
        } else {
            count += 1;
            i += 1;
            j += 1;
        }
    }
    count
}

pub fn score_multi_f0(reference: &MultiF0Track, estimate: &MultiF0Track, scale: &LogFreqScale) -> Result<MultiF0Scores> {
    check_grid(&reference.times, &estimate.times)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (r, e) in reference.pitch_sets.iter().zip(&estimate.pitch_sets) {
        let rs: Vec<f64> = r.iter().map(|&f| scale.semitones(f)).collect();
        let es: Vec<f64> = e.iter().map(|&f| scale.semitones(f)).collect();
        let hits = match_count(&rs, &es);
        tp += hits;
        fp += es.len() - hits;
        fn_ += rs.len() - hits;
    }
    Ok(MultiF0Scores {
        acc: ratio(tp as f64, (tp + fp + fn_) as f64),
        tp,
        fp,
        fn_,
    })
}

/// Boxplot statistics over per-track values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Summary of the defined values; `None` when nothing is defined.
pub fn summarize(values: impl IntoIterator<Item = Option<f64>>) -> Option<Summary> {
    let mut v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(Summary {
        count: v.len(),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        median: quantile(&v, 0.5),
        q1: quantile(&v, 0.25),
        q3: quantile(&v, 0.75),
        min: v[0],
        max: v[v.len() - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(freqs: &[f64]) -> F0Track {
        F0Track::new((0..freqs.len()).map(|n| n as f64 * 0.01).collect(), freqs.to_vec()).unwrap()
    }

    fn hz(scale: &LogFreqScale, semitones: f64) -> f64 {
        scale.f_ref * 2f64.powf(semitones / 12.0)
    }

    #[test]
    fn quartertone_is_strict() {
        assert_eq!(quartertone_match(0.0), 1);
        assert_eq!(quartertone_match(0.5), 0);
        assert_eq!(quartertone_match(-0.49), 1);
    }

    #[test]
    fn chroma_wrap_examples() {
        assert_eq!(chroma_wrap(13.0), 1.0);
        assert_eq!(chroma_wrap(-12.0), 0.0);
        assert_eq!(chroma_wrap(6.0), -6.0);
    }

    #[test]
    fn identity_scores() {
        let s = LogFreqScale::default();
        let t = track(&[0.0, 220.0, 230.0, 0.0]);
        let r = score_single_f0(&t, &t, &s).unwrap();
        assert_eq!(r.rpa, Some(1.0));
        assert_eq!(r.rca, Some(1.0));
        assert_eq!(r.vr, Some(1.0));
        assert_eq!(r.oa, Some(1.0));
        assert_eq!(r.vfa, Some(0.0));
    }

    #[test]
    fn octave_errors_forgiven_by_chroma() {
        let s = LogFreqScale::default();
        let r = track(&[110.0, 220.0, 330.0]);
        let e = track(&[220.0, 440.0, 660.0]);
        let sc = score_single_f0(&r, &e, &s).unwrap();
        assert_eq!(sc.rpa, Some(0.0));
        assert_eq!(sc.rca, Some(1.0));
    }

    #[test]
    fn four_frame_hand_example() {
        let s = LogFreqScale::default();
        let r = track(&[hz(&s, 60.0), hz(&s, 62.0), 0.0, 0.0]);
        let e = track(&[hz(&s, 60.3), 0.0, 0.0, hz(&s, 55.0)]);
        let sc = score_single_f0(&r, &e, &s).unwrap();
        // Frame 0 voiced and within 0.3 st; frame 1 missed; frame 2 correct
        // rejection; frame 3 false alarm.
        for (name, v) in [("rpa", sc.rpa), ("vr", sc.vr), ("vfa", sc.vfa), ("oa", sc.oa)] {
            assert!((v.unwrap() - 0.5).abs() < 1e-12, "{name}");
        }
    }

    #[test]
    fn degenerate_denominators_are_undefined() {
        let s = LogFreqScale::default();
        let all_voiced = track(&[100.0, 200.0]);
        let sc = score_single_f0(&all_voiced, &all_voiced, &s).unwrap();
        assert_eq!(sc.vfa, None);
        let silent = track(&[0.0, 0.0]);
        let sc = score_single_f0(&silent, &all_voiced, &s).unwrap();
        assert_eq!(sc.rpa, None);
        assert_eq!(sc.vr, None);
        assert_eq!(sc.vfa, Some(1.0));
        assert_eq!(sc.oa, Some(0.0));
    }

    #[test]
    fn vfa_complements_vr_on_flipped_voicing() {
        let s = LogFreqScale::default();
        let est = track(&[100.0, 0.0, 100.0, 0.0, 0.0]);
        let unvoiced_ref = track(&[0.0; 5]);
        let voiced_ref = track(&[100.0; 5]);
        let vfa = score_single_f0(&unvoiced_ref, &est, &s).unwrap().vfa.unwrap();
        let complement = track(&[0.0, 100.0, 0.0, 100.0, 100.0]);
        let vr = score_single_f0(&voiced_ref, &complement, &s).unwrap().vr.unwrap();
        assert!((vfa - (1.0 - vr)).abs() < 1e-12);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let s = LogFreqScale::default();
        assert!(score_single_f0(&track(&[1.0, 2.0]), &track(&[1.0]), &s).is_err());
    }

    #[test]
    fn multi_examples() {
        let s = LogFreqScale::default();
        let r = MultiF0Track::new(vec![0.0], vec![vec![110.0, 220.0]]).unwrap();
        let e = MultiF0Track::new(vec![0.0], vec![vec![110.0, 222.0, 330.0]]).unwrap();
        let sc = score_multi_f0(&r, &e, &s).unwrap();
        assert_eq!((sc.tp, sc.fp, sc.fn_), (2, 1, 0));
        assert!((sc.acc.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(score_multi_f0(&r, &r, &s).unwrap().acc, Some(1.0));
        let empty = MultiF0Track::empty(vec![0.0]);
        let sc = score_multi_f0(&r, &empty, &s).unwrap();
        assert_eq!((sc.acc, sc.fn_), (Some(0.0), 2));
        assert_eq!(score_multi_f0(&empty, &empty, &s).unwrap().acc, None);
    }

    #[test]
    fn sweep_beats_distance_sorted_greedy() {
        // Distance-sorted greedy pairs (0, 0.3) first and then strands both
        // remaining points; the optimum pairs (0, -0.45) and (0.7, 0.3).
        assert_eq!(match_count(&[0.0, 0.7], &[0.3, -0.45]), 2);
    }

    fn brute_force(r: &[f64], e: &[f64]) -> usize {
        let Some((&first, rest)) = r.split_first() else {
            return 0;
        };
        let mut best = brute_force(rest, e);
        for j in 0..e.len() {
            if (first - e[j]).abs() < 0.5 {
                let mut others = e.to_vec();
                others.remove(j);
                best = best.max(1 + brute_force(rest, &others));
            }
        }
        best
    }

    #[test]
    fn sweep_matches_exhaustive_search() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let nr = rng.gen_range(0..=6);
            let ne = rng.gen_range(0..=6);
            let r: Vec<f64> = (0..nr).map(|_| rng.gen_range(0.0..4.0)).collect();
            let e: Vec<f64> = (0..ne).map(|_| rng.gen_range(0.0..4.0)).collect();
            assert_eq!(match_count(&r, &e), brute_force(&r, &e), "{r:?} {e:?}");
        }
    }

    #[test]
    fn summary_statistics() {
        let s = summarize([Some(1.0), None, Some(3.0), Some(2.0), Some(4.0)]).unwrap();
        assert_eq!(s.count, 4);
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.q1, 1.75);
        assert_eq!(s.q3, 3.25);
        assert!(summarize([None]).is_none());
    }
}
