//! Ideal salience targets from f0 annotations, and decoding of salience maps.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::cqt::CqtParams;
use crate::error::{invalid, Result};

/// Gaussian blur (sigma = 1 bin) values at distance 0, 1 and 2 bins.
pub const BLUR: [f32; 3] = [1.0, 0.606_530_66, 0.135_335_28];

/// Time-frequency grid of a salience map: bin `k` sits at
/// `freq_centers[0] * 2^(k / bins_per_octave)`, frame `n` at `n * hop_seconds`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeFreqGrid {
    pub freq_centers: Vec<f64>,
    pub bins_per_octave: usize,
    pub hop_seconds: f64,
    pub n_frames: usize,
}

impl TimeFreqGrid {
    /// Grid of the first HCQT slice.
    pub fn from_params(params: &CqtParams, n_frames: usize) -> Self {
        Self {
            freq_centers: params.frequencies(params.f_min),
            bins_per_octave: params.bins_per_octave,
            hop_seconds: params.hop_seconds(),
            n_frames,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.freq_centers.len()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_frames).map(|n| n as f64 * self.hop_seconds).collect()
    }

    /// Nearest bin on the log-frequency axis, if inside the grid.
    pub fn nearest_bin(&self, freq: f64) -> Option<usize> {
        if !(freq > 0.0) || self.freq_centers.is_empty() {
            return None;
        }
        let k = (self.bins_per_octave as f64 * (freq / self.freq_centers[0]).log2()).round();
        (k >= 0.0 && (k as usize) < self.n_bins()).then_some(k as usize)
    }

    pub fn nearest_frame(&self, time: f64) -> Option<usize> {
        let n = (time / self.hop_seconds).round();
        (n >= 0.0 && (n as usize) < self.n_frames).then_some(n as usize)
    }
}

/// Single-pitch track; a frequency of 0 marks an unvoiced frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F0Track {
    pub times: Vec<f64>,
    pub freqs: Vec<f64>,
}

impl F0Track {
    pub fn new(times: Vec<f64>, freqs: Vec<f64>) -> Result<Self> {
        if times.len() != freqs.len() {
            return invalid("times and frequencies differ in length");
        }
        check_times(&times)?;
        if freqs.iter().any(|f| !(*f >= 0.0) || !f.is_finite()) {
            return invalid("frequencies must be finite and non-negative");
        }
        Ok(Self { times, freqs })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn voicing(&self) -> Vec<bool> {
        self.freqs.iter().map(|&f| f > 0.0).collect()
    }

    pub fn to_multi(&self) -> MultiF0Track {
        MultiF0Track {
            times: self.times.clone(),
            pitch_sets: self.freqs.iter().map(|&f| if f > 0.0 { vec![f] } else { Vec::new() }).collect(),
        }
    }
}

/// Variable number of pitches per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiF0Track {
    pub times: Vec<f64>,
    pub pitch_sets: Vec<Vec<f64>>,
}

impl MultiF0Track {
    pub fn new(times: Vec<f64>, pitch_sets: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != pitch_sets.len() {
            return invalid("times and pitch sets differ in length");
        }
        check_times(&times)?;
        if pitch_sets.iter().flatten().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return invalid("pitches must be finite and positive");
        }
        Ok(Self { times, pitch_sets })
    }

    /// Frame-aligned track with no pitches.
    pub fn empty(times: Vec<f64>) -> Self {
        let n = times.len();
        Self {
            times,
            pitch_sets: vec![Vec::new(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Per-frame pitch counts.
    pub fn counts(&self) -> Vec<usize> {
        self.pitch_sets.iter().map(Vec::len).collect()
    }

    /// Lowest pitch per frame, 0 when the frame is empty.
    pub fn to_single(&self) -> F0Track {
        F0Track {
            times: self.times.clone(),
            freqs: self
                .pitch_sets
                .iter()
                .map(|s| s.iter().copied().fold(f64::INFINITY, f64::min))
                .map(|f| if f.is_finite() { f } else { 0.0 })
                .collect(),
        }
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.iter().any(|t| !t.is_finite()) {
        return invalid("times must be finite");
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("times must be strictly increasing");
    }
    Ok(())
}

/// Anything that yields `(time, pitches)` frames.
pub trait PitchFrames {
    fn n_frames(&self) -> usize;
    fn frame(&self, i: usize) -> (f64, &[f64]);
}

impl PitchFrames for F0Track {
    fn n_frames(&self) -> usize {
        self.times.len()
    }

    fn frame(&self, i: usize) -> (f64, &[f64]) {
        let f = &self.freqs[i];
        (self.times[i], if *f > 0.0 { std::slice::from_ref(f) } else { &[] })
    }
}

impl PitchFrames for MultiF0Track {
    fn n_frames(&self) -> usize {
        self.times.len()
    }

    fn frame(&self, i: usize) -> (f64, &[f64]) {
        (self.times[i], &self.pitch_sets[i])
    }
}

/// A reference or estimate for either kind of task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Annotation {
    Single(F0Track),
    Multi(MultiF0Track),
}

impl Annotation {
    pub fn times(&self) -> &[f64] {
        match self {
            Annotation::Single(t) => &t.times,
            Annotation::Multi(t) => &t.times,
        }
    }

    pub fn to_multi(&self) -> MultiF0Track {
        match self {
            Annotation::Single(t) => t.to_multi(),
            Annotation::Multi(t) => t.clone(),
        }
    }

    /// True when no frame carries a pitch.
    pub fn is_silent(&self) -> bool {
        match self {
            Annotation::Single(t) => t.freqs.iter().all(|&f| f == 0.0),
            Annotation::Multi(t) => t.pitch_sets.iter().all(Vec::is_empty),
        }
    }

    /// Nearest-neighbour resampling onto `n_frames` frames of `hop` seconds,
    /// keeping the variant.
    pub fn resampled(&self, hop: f64, n_frames: usize) -> Result<Annotation> {
        let multi = resample_multi(&self.to_multi(), hop, Some(n_frames))?;
        Ok(match self {
            Annotation::Single(_) => Annotation::Single(multi.to_single()),
            Annotation::Multi(_) => Annotation::Multi(multi),
        })
    }
}

impl PitchFrames for Annotation {
    fn n_frames(&self) -> usize {
        self.times().len()
    }

    fn frame(&self, i: usize) -> (f64, &[f64]) {
        match self {
            Annotation::Single(t) => t.frame(i),
            Annotation::Multi(t) => t.frame(i),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SalienceMap {
    /// `[bin, frame]`, every value in `[0, 1]`.
    pub values: Array2<f32>,
    pub grid: TimeFreqGrid,
}

impl SalienceMap {
    pub fn new(values: Array2<f32>, grid: TimeFreqGrid) -> Result<Self> {
        if values.dim() != (grid.n_bins(), grid.n_frames) {
            return invalid(format!(
                "salience shape {:?} does not match grid ({}, {})",
                values.dim(),
                grid.n_bins(),
                grid.n_frames
            ));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return invalid("salience values must lie in [0, 1]");
        }
        Ok(Self { values, grid })
    }

    pub fn zeros(grid: TimeFreqGrid) -> Self {
        Self {
            values: Array2::zeros((grid.n_bins(), grid.n_frames)),
            grid,
        }
    }
}

/// Pitches that could not be placed on the grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SkipReport {
    pub pitches_out_of_range: usize,
    pub frames_out_of_range: usize,
}

/// Ideal salience: 1 at each annotated cell, blurred over +-2 bins in
/// frequency, overlapping blurs combined by max.
pub fn annotation_to_salience(track: &impl PitchFrames, grid: &TimeFreqGrid) -> (SalienceMap, SkipReport) {
    let mut map = SalienceMap::zeros(grid.clone());
    let mut report = SkipReport::default();
    let n_bins = grid.n_bins() as isize;
    for i in 0..track.n_frames() {
        let (time, pitches) = track.frame(i);
        if pitches.is_empty() {
            continue;
        }
        let Some(t) = grid.nearest_frame(time) else {
            report.frames_out_of_range += 1;
            continue;
        };
        for &f in pitches {
            let Some(k) = grid.nearest_bin(f) else {
                report.pitches_out_of_range += 1;
                continue;
            };
            for (d, &g) in BLUR.iter().enumerate() {
                for j in [k as isize - d as isize, k as isize + d as isize] {
                    if (0..n_bins).contains(&j) {
                        let cell = &mut map.values[[j as usize, t]];
                        *cell = cell.max(g);
                    }
                }
            }
        }
    }
    (map, report)
}

/// Per-frame argmax (ties to the lower bin); frames below `threshold` are unvoiced.
pub fn decode_single_f0(map: &SalienceMap, threshold: f32) -> F0Track {
    let freqs = map
        .values
        .columns()
        .into_iter()
        .map(|col| {
            let (k, v) = col
                .iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best });
            if !col.is_empty() && v >= threshold {
                map.grid.freq_centers[k]
            } else {
                0.0
            }
        })
        .collect();
    F0Track {
        times: map.grid.times(),
        freqs,
    }
}

/// Bins of the strict local maxima of `col` (plateaus report their lowest bin).
pub fn local_maxima(col: &[f32]) -> Vec<usize> {
    let mut peaks = Vec::new();
    let mut k = 0;
    while k < col.len() {
        let mut end = k;
        while end + 1 < col.len() && col[end + 1] == col[k] {
            end += 1;
        }
        let left_lower = k == 0 || col[k - 1] < col[k];
        let right_lower = end + 1 == col.len() || col[end + 1] < col[k];
        if left_lower && right_lower {
            peaks.push(k);
        }
        k = end + 1;
    }
    peaks
}

/// Every local maximum at or above `threshold` becomes a pitch.
pub fn decode_multi_f0(map: &SalienceMap, threshold: f32) -> MultiF0Track {
    let pitch_sets = map
        .values
        .columns()
        .into_iter()
        .map(|col| {
            let col = col.to_vec();
            local_maxima(&col)
                .into_iter()
                .filter(|&k| col[k] >= threshold)
                .map(|k| map.grid.freq_centers[k])
                .collect()
        })
        .collect();
    MultiF0Track {
        times: map.grid.times(),
        pitch_sets,
    }
}

/// Nearest-neighbour resampling onto frames `n * target_hop`.
pub fn resample_track(track: &F0Track, target_hop: f64) -> Result<F0Track> {
    if !(target_hop > 0.0) {
        return invalid("target hop must be positive");
    }
    if track.is_empty() {
        return Ok(track.clone());
    }
    let last = *track.times.last().expect("non-empty");
    let n_out = (last / target_hop + 1e-9).floor() as usize + 1;
    let mut src = 0;
    let mut times = Vec::with_capacity(n_out);
    let mut freqs = Vec::with_capacity(n_out);
    for n in 0..n_out {
        let t = n as f64 * target_hop;
        while src + 1 < track.len() && (track.times[src + 1] - t).abs() < (track.times[src] - t).abs() {
            src += 1;
        }
        times.push(t);
        freqs.push(track.freqs[src]);
    }
    Ok(F0Track { times, freqs })
}

/// Nearest-neighbour resampling of a multi-pitch track onto `n_frames`
/// frames (default: up to the last source time). Target frames further
/// than half a hop from every source frame stay empty.
pub fn resample_multi(track: &MultiF0Track, target_hop: f64, n_frames: Option<usize>) -> Result<MultiF0Track> {
    if !(target_hop > 0.0) {
        return invalid("target hop must be positive");
    }
    let n_out = match (n_frames, track.times.last()) {
        (Some(n), _) => n,
        (None, Some(&last)) => (last / target_hop + 1e-9).floor() as usize + 1,
        (None, None) => 0,
    };
    let mut out = MultiF0Track::empty((0..n_out).map(|n| n as f64 * target_hop).collect());
    if track.is_empty() {
        return Ok(out);
    }
    let src_hop = if track.len() >= 2 { track.times[1] - track.times[0] } else { 0.0 };
    let tol = target_hop.max(src_hop) / 2.0 + 1e-9;
    let mut src = 0;
    for (n, &t) in out.times.iter().enumerate() {
        while src + 1 < track.len() && (track.times[src + 1] - t).abs() < (track.times[src] - t).abs() {
            src += 1;
        }
        if (track.times[src] - t).abs() <= tol {
            out.pitch_sets[n] = track.pitch_sets[src].clone();
        }
    }
    Ok(out)
}
