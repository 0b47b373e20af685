use serde::{Deserialize, Serialize};

use super::TaskId;
use crate::error::{invalid, Result};
use crate::metrics::{score_multi_f0, score_single_f0, LogFreqScale, MultiF0Scores, SingleF0Scores};
use crate::salience::{decode_multi_f0, decode_single_f0, Annotation, SalienceMap};

/// Candidate decoding thresholds 0.05, 0.10, ..., 0.95.
pub const THRESHOLD_GRID: [f32; 19] = [
    0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95,
];

/// Single-f0 decoding for melody, bass and vocal; multi-f0 otherwise.
pub fn decode(task: TaskId, map: &SalienceMap, threshold: f32) -> Annotation {
    if task.is_multi_pitch() {
        Annotation::Multi(decode_multi_f0(map, threshold))
    } else {
        Annotation::Single(decode_single_f0(map, threshold))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TaskScores {
    Single(SingleF0Scores),
    Multi(MultiF0Scores),
}

impl TaskScores {
    /// OA for single-f0 tasks, Acc for multi-f0 tasks.
    pub fn headline(&self) -> Option<f64> {
        match self {
            TaskScores::Single(s) => s.oa,
            TaskScores::Multi(s) => s.acc,
        }
    }
}

/// Scores `estimate` (on a grid of `hop`-second frames) against
/// `reference`, which is first resampled onto that grid.
pub fn score_estimate(task: TaskId, reference: &Annotation, estimate: &Annotation, hop: f64) -> Result<TaskScores> {
    let n = estimate.times().len();
    let reference = reference.resampled(hop, n)?;
    let scale = LogFreqScale::default();
    if task.is_multi_pitch() {
        Ok(TaskScores::Multi(score_multi_f0(
            &reference.to_multi(),
            &estimate.to_multi(),
            &scale,
        )?))
    } else {
        let single = |a: &Annotation| match a {
            Annotation::Single(t) => t.clone(),
            Annotation::Multi(t) => t.to_single(),
        };
        Ok(TaskScores::Single(score_single_f0(&single(&reference), &single(estimate), &scale)?))
    }
}

/// Threshold from [`THRESHOLD_GRID`] maximising the mean headline score
/// over tracks (ties go to the lower threshold), with that mean. Tracks
/// with an undefined score are skipped; `None` if every score is undefined.
pub fn sweep_threshold(task: TaskId, maps: &[SalienceMap], references: &[Annotation]) -> Result<Option<(f32, f64)>> {
    if maps.len() != references.len() {
        return invalid("one reference per salience map is required");
    }
    let mut best: Option<(f32, f64)> = None;
    for &thr in &THRESHOLD_GRID {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (map, reference) in maps.iter().zip(references) {
            let est = decode(task, map, thr);
            if let Some(v) = score_estimate(task, reference, &est, map.grid.hop_seconds)?.headline() {
                sum += v;
                count += 1;
            }
        }
        if count > 0 {
            let mean = sum / count as f64;
            if best.is_none_or(|(_, b)| mean > b) {
                best = Some((thr, mean));
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cqt::CqtParams;
    use crate::salience::{annotation_to_salience, F0Track, TimeFreqGrid};

    #[test]
    fn grid_is_evenly_spaced() {
        for (i, t) in THRESHOLD_GRID.iter().enumerate() {
            assert!((f64::from(*t) - 0.05 * (i + 1) as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn ideal_map_scores_perfectly_and_sweep_prefers_low_threshold_on_ties() {
        let grid = TimeFreqGrid::from_params(&CqtParams::default(), 6);
        let freqs = vec![0.0, 110.0, 110.0, 0.0, 220.0, 220.0];
        let reference = Annotation::Single(F0Track::new(grid.times(), freqs).unwrap());
        let (map, _) = annotation_to_salience(&reference, &grid);
        let est = decode(TaskId::Melody, &map, 0.5);
        let s = score_estimate(TaskId::Melody, &reference, &est, grid.hop_seconds).unwrap();
        assert_eq!(s.headline(), Some(1.0));
        let (thr, score) = sweep_threshold(TaskId::Melody, &[map], &[reference]).unwrap().unwrap();
        assert_eq!(score, 1.0);
        assert_eq!(thr, 0.05);
    }
}
