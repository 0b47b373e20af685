//! Python bindings. Arrays cross the boundary as flat row-major lists plus
//! a shape; `numpy.asarray(values).reshape(shape)` restores them.

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

use polyf0::audio::AudioBuffer;
use polyf0::corpus::{generate_corpus, write_corpus};
use polyf0::cqt::{CqtParams, FeatureConfig};
use polyf0::model::{gradient_suite, score_estimate, Checkpoint, TaskId, TaskScores};
use polyf0::pipeline::{named_scores, predict_and_decode, RunConfig};
use polyf0::remix::{estimate_mix_weights, generate_strums, nnls, ChordSegment, MixObjective, VoicingDict};
use polyf0::rng;
use polyf0::salience::{
    annotation_to_salience, decode_multi_f0, decode_single_f0, Annotation, F0Track, MultiF0Track, SalienceMap, TimeFreqGrid,
};
use polyf0::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Numerical(_) | Error::TrainingDiverged { .. } => PyArithmeticError::new_err(e.to_string()),
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for polyf0::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn audio(samples: Vec<f32>, sample_rate: u32) -> PyResult<AudioBuffer> {
    AudioBuffer::new(samples, sample_rate).py()
}

/// Time-frequency grid of a salience map.
#[pyclass(frozen, skip_from_py_object, name = "Grid")]
#[derive(Clone)]
pub struct PyGrid(TimeFreqGrid);

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (n_frames, sample_rate=22050, hop_length=256, f_min=None, bins_per_octave=60, n_octaves=6))]
    pub fn new(
        n_frames: usize,
        sample_rate: u32,
        hop_length: usize,
        f_min: Option<f64>,
        bins_per_octave: usize,
        n_octaves: usize,
    ) -> PyResult<Self> {
        let params = CqtParams {
            f_min: f_min.unwrap_or(CqtParams::default().f_min),
            bins_per_octave,
            n_octaves,
            hop_length,
            sample_rate,
        };
        params.validate().py()?;
        Ok(Self(TimeFreqGrid::from_params(&params, n_frames)))
    }

    #[getter]
    pub fn freqs(&self) -> Vec<f64> {
        self.0.freq_centers.clone()
    }

    #[getter]
    pub fn times(&self) -> Vec<f64> {
        self.0.times()
    }

    #[getter]
    pub fn shape(&self) -> (usize, usize) {
        (self.0.n_bins(), self.0.n_frames)
    }

    fn nearest_bin(&self, freq: f64) -> Option<usize> {
        self.0.nearest_bin(freq)
    }
}

impl PyGrid {
    fn map(&self, values: Vec<f32>) -> PyResult<SalienceMap> {
        let arr = Array2::from_shape_vec((self.0.n_bins(), self.0.n_frames), values).map_err(|e| PyValueError::new_err(e.to_string()))?;
        SalienceMap::new(arr, self.0.clone()).py()
    }
}

/// Log-compressed HCQT `[harmonic, bin, frame]` as `(values, shape)`.
#[pyfunction]
#[pyo3(signature = (samples, sample_rate, hop_length=256, f_min=None, bins_per_octave=60, n_octaves=6, harmonics=None, log_scale=1000.0))]
#[allow(clippy::too_many_arguments)]
pub fn hcqt(
    samples: Vec<f32>,
    sample_rate: u32,
    hop_length: usize,
    f_min: Option<f64>,
    bins_per_octave: usize,
    n_octaves: usize,
    harmonics: Option<Vec<usize>>,
    log_scale: f32,
) -> PyResult<(Vec<f32>, (usize, usize, usize))> {
    let cfg = FeatureConfig {
        cqt: CqtParams {
            f_min: f_min.unwrap_or(CqtParams::default().f_min),
            bins_per_octave,
            n_octaves,
            hop_length,
            sample_rate,
        },
        harmonics: harmonics.unwrap_or_else(|| FeatureConfig::default().harmonics),
        log_scale,
    };
    let data = cfg.compute(&audio(samples, sample_rate)?).py()?;
    let shape = data.dim();
    Ok((data.iter().copied().collect(), shape))
}

/// Gaussian-blurred salience target of a multi-pitch annotation, frame
/// `n` of which sits at `times[n]`; resampled onto `grid`.
#[pyfunction]
pub fn salience_target(grid: &PyGrid, times: Vec<f64>, pitch_sets: Vec<Vec<f64>>) -> PyResult<Vec<f32>> {
    let ann = Annotation::Multi(MultiF0Track::new(times, pitch_sets).py()?)
        .resampled(grid.0.hop_seconds, grid.0.n_frames)
        .py()?;
    let (map, _) = annotation_to_salience(&ann, &grid.0);
    Ok(map.values.iter().copied().collect())
}

/// Per-frame peaks above `threshold` as `(times, pitch_sets)`.
#[pyfunction]
pub fn decode_multi(grid: &PyGrid, values: Vec<f32>, threshold: f32) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let t = decode_multi_f0(&grid.map(values)?, threshold);
    Ok((t.times, t.pitch_sets))
}

/// Per-frame argmax, 0 Hz where the peak is below `threshold`.
#[pyfunction]
pub fn decode_single(grid: &PyGrid, values: Vec<f32>, threshold: f32) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let t = decode_single_f0(&grid.map(values)?, threshold);
    Ok((t.times, t.freqs))
}

fn scores_dict(s: &TaskScores) -> BTreeMap<String, Option<f64>> {
    named_scores(s).into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn hop_of(times: &[f64]) -> PyResult<f64> {
    match times {
        [a, b, ..] => Ok(b - a),
        _ => Err(PyValueError::new_err("estimate needs at least two frames")),
    }
}

/// RPA, RCA, VR, VFA and OA; the reference is resampled onto the estimate's
/// frames. Undefined scores are `None`.
#[pyfunction]
pub fn single_f0_scores(
    ref_times: Vec<f64>,
    ref_freqs: Vec<f64>,
    est_times: Vec<f64>,
    est_freqs: Vec<f64>,
) -> PyResult<BTreeMap<String, Option<f64>>> {
    let hop = hop_of(&est_times)?;
    let r = Annotation::Single(F0Track::new(ref_times, ref_freqs).py()?);
    let e = Annotation::Single(F0Track::new(est_times, est_freqs).py()?);
    Ok(scores_dict(&score_estimate(TaskId::Melody, &r, &e, hop).py()?))
}

/// Multi-pitch accuracy with its true/false positive and false negative counts.
#[pyfunction]
pub fn multi_f0_scores(
    ref_times: Vec<f64>,
    ref_sets: Vec<Vec<f64>>,
    est_times: Vec<f64>,
    est_sets: Vec<Vec<f64>>,
) -> PyResult<BTreeMap<String, Option<f64>>> {
    let hop = hop_of(&est_times)?;
    let r = Annotation::Multi(MultiF0Track::new(ref_times, ref_sets).py()?);
    let e = Annotation::Multi(MultiF0Track::new(est_times, est_sets).py()?);
    match score_estimate(TaskId::Multif0, &r, &e, hop).py()? {
        TaskScores::Multi(m) => Ok(BTreeMap::from([
            ("Acc".to_string(), m.acc),
            ("TP".to_string(), Some(m.tp as f64)),
            ("FP".to_string(), Some(m.fp as f64)),
            ("FN".to_string(), Some(m.fn_ as f64)),
        ])),
        TaskScores::Single(_) => unreachable!("multif0 is scored as multi-pitch"),
    }
}

/// `argmin |A x - b|` over `x >= 0`, as `(x, residual)`; `a` is a list of rows.
#[pyfunction]
pub fn nnls_solve(a: Vec<Vec<f64>>, b: Vec<f64>) -> PyResult<(Vec<f64>, f64)> {
    let cols = a.first().map_or(0, Vec::len);
    if a.len() != b.len() || a.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("a must be a rectangular list of rows matching b"));
    }
    let m = DMatrix::from_fn(a.len(), cols, |i, j| a[i][j]);
    let s = nnls::nnls(&m, &DVector::from_vec(b)).py()?;
    Ok((s.x, s.residual))
}

/// Non-negative weights `a` with `mix ~ sum_i a_i stems[i]`.
#[pyfunction]
#[pyo3(signature = (stems, mix, sample_rate, objective="envelope"))]
pub fn mix_weights(stems: Vec<Vec<f32>>, mix: Vec<f32>, sample_rate: u32, objective: &str) -> PyResult<Vec<f64>> {
    let objective = match objective {
        "envelope" => MixObjective::Envelope,
        "abs_samples" => MixObjective::AbsSamples,
        other => return Err(PyValueError::new_err(format!("unknown objective {other:?}"))),
    };
    let stems = stems.into_iter().map(|s| audio(s, sample_rate)).collect::<PyResult<Vec<_>>>()?;
    Ok(estimate_mix_weights(&stems, &audio(mix, sample_rate)?, objective).py()?.weights)
}

/// Strummed `(start, end, midi, velocity)` notes for `(onset, offset, label)` chords.
#[pyfunction]
pub fn strum(chords: Vec<(f64, f64, String)>, voicings: VoicingDict, seed: u64) -> PyResult<Vec<(f64, f64, u8, u8)>> {
    let segments = chords
        .into_iter()
        .map(|(on, off, label)| ChordSegment::new(on, off, label))
        .collect::<polyf0::Result<Vec<_>>>()
        .py()?;
    let notes = generate_strums(&segments, &voicings, &mut rng::stream(seed, "strum")).py()?;
    Ok(notes.into_iter().map(|n| (n.start, n.end, n.midi_note, n.velocity)).collect())
}

/// Generates the synthetic corpus of a run config (JSON text) into `out_dir`
/// and returns the mixture ids.
#[pyfunction]
pub fn write_synthetic_corpus(config_json: &str, out_dir: PathBuf) -> PyResult<Vec<String>> {
    let cfg = RunConfig::from_json(config_json).py()?;
    let tracks = generate_corpus(&cfg.corpus).py()?;
    write_corpus(&out_dir, &cfg.corpus, &tracks).py()?;
    Ok(tracks.into_iter().map(|t| t.id).collect())
}

/// `(name, passed, worst relative error)` per finite-difference check.
#[pyfunction]
#[pyo3(signature = (tasks="multif0,melody,bass,vocal", seeds=1))]
pub fn gradient_check(tasks: &str, seeds: u64) -> PyResult<Vec<(String, bool, f64)>> {
    let tasks = TaskId::parse_list(tasks).py()?;
    let suite = gradient_suite(&tasks, seeds).py()?;
    Ok(suite
        .into_iter()
        .map(|e| (e.name, e.passed, e.report.max_rel_error.max(e.report.max_tensor_rel_error)))
        .collect())
}

/// Grid, flat salience values and decoded estimate of one task.
type TaskOutput = (PyGrid, Vec<f32>, Py<PyAny>);

/// A trained checkpoint directory.
#[pyclass(frozen, name = "Model")]
pub struct PyModel(Checkpoint);

#[pymethods]
impl PyModel {
    #[staticmethod]
    pub fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self(Checkpoint::load(&path).py()?))
    }

    #[getter]
    pub fn tasks(&self) -> Vec<String> {
        self.0.manifest.tasks.iter().map(ToString::to_string).collect()
    }

    #[getter]
    fn thresholds(&self) -> BTreeMap<String, f32> {
        self.0.manifest.thresholds.iter().map(|(t, v)| (t.to_string(), *v)).collect()
    }

    #[getter]
    fn sample_rate(&self) -> u32 {
        self.0.manifest.feature.cqt.sample_rate
    }

    /// Per task: `(grid, salience values, estimate)`; the estimate is
    /// `(times, f0)` for single-pitch tasks and `(times, pitch_sets)` otherwise.
    fn predict(&self, py: Python<'_>, samples: Vec<f32>, sample_rate: u32) -> PyResult<BTreeMap<String, TaskOutput>> {
        let buf = audio(samples, sample_rate)?;
        let out = py.detach(|| predict_and_decode(&self.0, &buf)).py()?;
        out.into_iter()
            .map(|(t, (map, est))| {
                let est = match est {
                    Annotation::Single(s) => (s.times, s.freqs).into_pyobject(py)?.into_any().unbind(),
                    Annotation::Multi(m) => (m.times, m.pitch_sets).into_pyobject(py)?.into_any().unbind(),
                };
                Ok((t.to_string(), (PyGrid(map.grid.clone()), map.values.iter().copied().collect(), est)))
            })
            .collect()
    }
}

#[pymodule]
fn polyf0_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(hcqt, m)?)?;
    m.add_function(wrap_pyfunction!(salience_target, m)?)?;
    m.add_function(wrap_pyfunction!(decode_multi, m)?)?;
    m.add_function(wrap_pyfunction!(decode_single, m)?)?;
    m.add_function(wrap_pyfunction!(single_f0_scores, m)?)?;
    m.add_function(wrap_pyfunction!(multi_f0_scores, m)?)?;
    m.add_function(wrap_pyfunction!(nnls_solve, m)?)?;
    m.add_function(wrap_pyfunction!(mix_weights, m)?)?;
    m.add_function(wrap_pyfunction!(strum, m)?)?;
    m.add_function(wrap_pyfunction!(write_synthetic_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    Ok(())
}
