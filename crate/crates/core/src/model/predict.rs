use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{s, Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use super::arch::{ModelConfig, INPUT};
use super::train::graph_tasks;
use super::TaskId;
use crate::audio::AudioBuffer;
use crate::cqt::FeatureConfig;
use crate::error::{Error, Result};
use crate::io::{load_tensors, save_tensors};
use crate::nn::{Mode, ModelGraph, ParamStore};
use crate::salience::{SalienceMap, TimeFreqGrid};

pub const PARAMS_FILE: &str = "params.tnsr";
pub const MANIFEST_FILE: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

/// Everything needed to rebuild and run a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub tasks: Vec<TaskId>,
    pub graph: ModelGraph,
    pub feature: FeatureConfig,
    pub model: ModelConfig,
    /// Frames per evaluation window.
    pub window: usize,
    pub step: u64,
    pub best_epoch: usize,
    /// Decoding threshold per task.
    pub thresholds: BTreeMap<TaskId, f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub store: ParamStore<f32>,
}

impl Checkpoint {
    pub fn new(
        graph: ModelGraph,
        store: ParamStore<f32>,
        feature: FeatureConfig,
        model: ModelConfig,
        window: usize,
        best_epoch: usize,
    ) -> Result<Self> {
        store.check_against(&graph)?;
        let tasks = graph_tasks(&graph)?;
        let thresholds = tasks.iter().map(|&t| (t, 0.5)).collect();
        Ok(Self {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                tasks,
                step: store.step,
                graph,
                feature,
                model,
                window,
                best_epoch,
                thresholds,
            },
            store,
        })
    }

    /// Writes `params.tnsr` and `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        save_tensors(&dir.join(PARAMS_FILE), &self.store.to_tensors())?;
        let mut json = serde_json::to_string_pretty(&self.manifest)?;
        json.push('\n');
        fs::write(dir.join(MANIFEST_FILE), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", manifest.format_version)));
        }
        if graph_tasks(&manifest.graph)? != manifest.tasks {
            return Err(Error::Format("checkpoint task list does not match its graph".into()));
        }
        let store = ParamStore::from_tensors(&load_tensors(&dir.join(PARAMS_FILE))?, manifest.step, &manifest.graph)?;
        Ok(Self { manifest, store })
    }
}

/// Salience per task for `[harmonic, bin, frame]` features, evaluated in
/// non-overlapping windows with frozen batchnorm; the last window is
/// zero-padded and the result cropped back to the input length.
pub fn predict_features(
    graph: &ModelGraph,
    store: &ParamStore<f32>,
    features: &Array3<f32>,
    window: usize,
) -> Result<BTreeMap<TaskId, Array2<f32>>> {
    const WINDOWS_PER_PASS: usize = 8;
    if window == 0 {
        return Err(Error::Config("window must be positive".into()));
    }
    let (h, f, t) = features.dim();
    let n_windows = t.div_ceil(window).max(1);
    let tasks = graph_tasks(graph)?;
    let mut out: BTreeMap<TaskId, Array2<f32>> = tasks.iter().map(|&k| (k, Array2::zeros((f, n_windows * window)))).collect();
    for first in (0..n_windows).step_by(WINDOWS_PER_PASS) {
        let count = WINDOWS_PER_PASS.min(n_windows - first);
        let mut x = Array4::zeros((count, h, f, window));
        for k in 0..count {
            let start = (first + k) * window;
            let end = (start + window).min(t);
            if end > start {
                x.slice_mut(s![k, .., .., ..end - start])
                    .assign(&features.slice(s![.., .., start..end]));
            }
        }
        let trace = graph.forward(store, &BTreeMap::from([(INPUT.to_string(), x)]), Mode::Inference)?;
        for &task in &tasks {
            let y = trace.output(task.as_str()).expect("graph output");
            let dst = out.get_mut(&task).expect("task slot");
            for k in 0..count {
                let start = (first + k) * window;
                dst.slice_mut(s![.., start..start + window]).assign(&y.slice(s![k, 0, .., ..]));
            }
        }
    }
    Ok(out.into_iter().map(|(k, v)| (k, v.slice(s![.., ..t]).to_owned())).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub maps: BTreeMap<TaskId, SalienceMap>,
    /// The audio was shorter than one window and was zero-padded.
    pub padded: bool,
}

pub fn predict(ckpt: &Checkpoint, audio: &AudioBuffer) -> Result<Prediction> {
    let m = &ckpt.manifest;
    let features = m.feature.compute(audio)?;
    let n_frames = features.dim().2;
    let grid = TimeFreqGrid::from_params(&m.feature.cqt, n_frames);
    let maps = predict_features(&m.graph, &ckpt.store, &features, m.window)?
        .into_iter()
        .map(|(task, v)| Ok((task, SalienceMap::new(v, grid.clone())?)))
        .collect::<Result<_>>()?;
    Ok(Prediction {
        maps,
        padded: n_frames < m.window,
    })
}
