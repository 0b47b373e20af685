use std::collections::{BTreeMap, BTreeSet};

use ndarray::{s, Array2, Array3, Array4};
use rand::seq::SliceRandom;
use rand::Rng;

use super::TaskId;
use crate::error::{invalid, Error, Result};

/// Network input and salience targets of one track. A task missing from
/// `targets` has no annotation; a silent task has an all-zero target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackData {
    pub id: String,
    /// `[harmonic, bin, frame]`.
    pub features: Array3<f32>,
    /// `[bin, frame]` per annotated task.
    pub targets: BTreeMap<TaskId, Array2<f32>>,
}

impl TrackData {
    pub fn new(id: impl Into<String>, features: Array3<f32>, targets: BTreeMap<TaskId, Array2<f32>>) -> Result<Self> {
        let (_, f, t) = features.dim();
        if let Some((task, _)) = targets.iter().find(|(_, y)| y.dim() != (f, t)) {
            return invalid(format!("target for {task} does not match the feature grid ({f}, {t})"));
        }
        Ok(Self {
            id: id.into(),
            features,
            targets,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.features.dim().2
    }
}

/// One training batch; every tensor is `[example, channel, bin, frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub input: Array4<f32>,
    pub targets: BTreeMap<TaskId, Array4<f32>>,
    /// Per-example loss weight: 1 where the target exists, else 0.
    pub weights: BTreeMap<TaskId, Vec<f64>>,
    /// `(track index, first frame)` of each example.
    pub windows: Vec<(usize, usize)>,
}

/// Draws `batch_size` windows of `window` frames. Examples are assigned so
/// that every task is covered by some example when the batch is large
/// enough: each slot first serves a still-uncovered task (in shuffled
/// order), then tracks are drawn uniformly. Short tracks are zero-padded.
pub fn sample_batch(data: &[TrackData], tasks: &[TaskId], batch_size: usize, window: usize, rng: &mut impl Rng) -> Result<Batch> {
    if batch_size == 0 || window == 0 {
        return Err(Error::Config("batch size and window must be positive".into()));
    }
    let mut by_task: BTreeMap<TaskId, Vec<usize>> = BTreeMap::new();
    for &task in tasks {
        let ids: Vec<usize> = (0..data.len()).filter(|&i| data[i].targets.contains_key(&task)).collect();
        if ids.is_empty() {
            return Err(Error::Config(format!("no training track is annotated for task {task}")));
        }
        by_task.insert(task, ids);
    }
    let usable: Vec<usize> = (0..data.len())
        .filter(|&i| tasks.iter().any(|t| data[i].targets.contains_key(t)))
        .collect();
    let mut pending: Vec<TaskId> = tasks.to_vec();
    pending.shuffle(rng);
    let mut covered = BTreeSet::new();
    let mut picks = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        pending.retain(|t| !covered.contains(t));
        let track = match pending.first() {
            Some(task) => *by_task[task].choose(rng).expect("non-empty"),
            None => *usable.choose(rng).expect("non-empty"),
        };
        covered.extend(data[track].targets.keys().copied());
        picks.push(track);
    }

    let (h, f, _) = data[picks[0]].features.dim();
    let mut input = Array4::zeros((batch_size, h, f, window));
    let mut targets: BTreeMap<TaskId, Array4<f32>> = tasks.iter().map(|&t| (t, Array4::zeros((batch_size, 1, f, window)))).collect();
    let mut weights: BTreeMap<TaskId, Vec<f64>> = tasks.iter().map(|&t| (t, vec![0.0; batch_size])).collect();
    let mut windows = Vec::with_capacity(batch_size);
    for (n, &i) in picks.iter().enumerate() {
        let track = &data[i];
        if track.features.dim().0 != h || track.features.dim().1 != f {
            return invalid(format!("track {} has a different feature shape", track.id));
        }
        let frames = track.n_frames();
        let start = if frames > window { rng.gen_range(0..=frames - window) } else { 0 };
        let len = window.min(frames);
        input
            .slice_mut(s![n, .., .., ..len])
            .assign(&track.features.slice(s![.., .., start..start + len]));
        for &task in tasks {
            if let Some(y) = track.targets.get(&task) {
                targets
                    .get_mut(&task)
                    .expect("task slot")
                    .slice_mut(s![n, 0, .., ..len])
                    .assign(&y.slice(s![.., start..start + len]));
                weights.get_mut(&task).expect("task slot")[n] = 1.0;
            }
        }
        windows.push((i, start));
    }
    Ok(Batch {
        input,
        targets,
        weights,
        windows,
    })
}
