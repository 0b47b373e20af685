//! Reproducible runs from one JSON config: corpus generation, training
//! with validation-set threshold selection, prediction and scoring.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{generate_corpus, load_corpus, split_corpus, write_corpus, CorpusSpec, LabeledTrack, MixVariant};
use crate::cqt::FeatureConfig;
use crate::error::{Error, Result};
use crate::metrics::{summarize, Summary};
use crate::model::{
    build_multitask_graph, build_singletask_graph, decode, history_csv, predict, predict_features, score_estimate, sweep_threshold, train,
    Checkpoint, EpochRecord, ModelConfig, TaskId, TaskScores, TrackData, TrainConfig,
};
use crate::salience::{annotation_to_salience, Annotation, SalienceMap, TimeFreqGrid};

fn default_split() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    /// Pick each task's threshold from the validation tracks.
    pub sweep_thresholds: bool,
    /// Thresholds used when not sweeping, or when validation has no
    /// scorable reference for a task. Missing tasks use 0.5.
    pub thresholds: BTreeMap<TaskId, f32>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            sweep_thresholds: true,
            thresholds: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Mixture variants scored on the test split.
    pub variants: Vec<MixVariant>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            variants: MixVariant::ALL.to_vec(),
        }
    }
}

/// The top-level `seed` drives every random stream; the `seed` fields of
/// the corpus and train sections must be left unset (or equal it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub corpus: CorpusSpec,
    /// Train / validation / test fractions of base tracks.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    #[serde(default)]
    pub feature: FeatureConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub decode: DecodeConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (what, s) in [("corpus", cfg.corpus.seed), ("train", cfg.train.seed)] {
            if s != 0 && s != cfg.seed {
                return Err(Error::Config(format!("{what}.seed conflicts with the top-level seed")));
            }
        }
        cfg.corpus.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?)
    }

    pub fn validate(&self) -> Result<()> {
        self.feature.cqt.validate()?;
        self.train.validate()?;
        self.corpus.validate()?;
        if self.feature.harmonics.is_empty() {
            return Err(Error::Config("feature.harmonics is empty".into()));
        }
        if self.feature.cqt.sample_rate != self.corpus.sample_rate {
            return Err(Error::Config(format!(
                "feature sample rate {} differs from corpus sample rate {}",
                self.feature.cqt.sample_rate, self.corpus.sample_rate
            )));
        }
        if self.split.iter().any(|r| !(*r >= 0.0)) || self.split.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("split fractions must be non-negative with a positive sum".into()));
        }
        if self.decode.thresholds.values().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config("decode thresholds must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Features of `track` and salience targets for those of `tasks` it
/// annotates, all on the feature frame grid.
pub fn track_data(track: &LabeledTrack, feature: &FeatureConfig, tasks: &[TaskId]) -> Result<TrackData> {
    let features = feature.compute(&track.mix)?;
    let n = features.dim().2;
    let grid = TimeFreqGrid::from_params(&feature.cqt, n);
    let mut targets = BTreeMap::new();
    for task in tasks {
        if let Some(ann) = track.annotations.get(task) {
            let ann = ann.resampled(grid.hop_seconds, n)?;
            targets.insert(*task, annotation_to_salience(&ann, &grid).0.values);
        }
    }
    TrackData::new(track.id.clone(), features, targets)
}

pub fn prepare(tracks: &[LabeledTrack], feature: &FeatureConfig, tasks: &[TaskId]) -> Result<Vec<TrackData>> {
    tracks.par_iter().map(|t| track_data(t, feature, tasks)).collect()
}

pub fn build_graph(tasks: &[TaskId], model: &ModelConfig, input_channels: usize) -> Result<crate::nn::ModelGraph> {
    match tasks {
        [] => Err(Error::Config("no task selected".into())),
        [single] => build_singletask_graph(*single, model, input_channels),
        many => build_multitask_graph(many, model, input_channels),
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Trains a model for `tasks` and sets its decoding thresholds.
pub fn train_model(
    cfg: &RunConfig,
    tasks: &[TaskId],
    train_tracks: &[LabeledTrack],
    val_tracks: &[LabeledTrack],
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedModel> {
    let train_data = prepare(train_tracks, &cfg.feature, tasks)?;
    let val_data = prepare(val_tracks, &cfg.feature, tasks)?;
    let graph = build_graph(tasks, &cfg.model, cfg.feature.harmonics.len())?;
    let outcome = train(&graph, &train_data, &val_data, &cfg.train, on_epoch)?;
    let mut checkpoint = Checkpoint::new(
        graph,
        outcome.store,
        cfg.feature.clone(),
        cfg.model.clone(),
        cfg.train.window,
        outcome.best_epoch,
    )?;
    let fixed = |t: TaskId| cfg.decode.thresholds.get(&t).copied().unwrap_or(0.5);
    let thresholds: BTreeMap<TaskId, f32> = if cfg.decode.sweep_thresholds {
        select_thresholds(&checkpoint, val_tracks, &val_data, fixed)?
    } else {
        tasks.iter().map(|&t| (t, fixed(t))).collect()
    };
    checkpoint.manifest.thresholds = thresholds;
    Ok(TrainedModel {
        checkpoint,
        history: outcome.history,
    })
}

fn select_thresholds(
    ckpt: &Checkpoint,
    tracks: &[LabeledTrack],
    data: &[TrackData],
    fallback: impl Fn(TaskId) -> f32,
) -> Result<BTreeMap<TaskId, f32>> {
    let m = &ckpt.manifest;
    let maps: Vec<BTreeMap<TaskId, SalienceMap>> = data
        .par_iter()
        .map(|d| {
            let grid = TimeFreqGrid::from_params(&m.feature.cqt, d.n_frames());
            predict_features(&m.graph, &ckpt.store, &d.features, m.window)?
                .into_iter()
                .map(|(t, v)| Ok((t, SalienceMap::new(v, grid.clone())?)))
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut out = BTreeMap::new();
    for &task in &m.tasks {
        let (task_maps, refs): (Vec<SalienceMap>, Vec<Annotation>) = tracks
            .iter()
            .zip(&maps)
            .filter_map(|(t, p)| Some((p[&task].clone(), t.annotations.get(&task)?.clone())))
            .unzip();
        let chosen = sweep_threshold(task, &task_maps, &refs)?.map_or_else(|| fallback(task), |(thr, _)| thr);
        out.insert(task, chosen);
    }
    Ok(out)
}

/// Salience map and decoded annotation per task of `ckpt`.
pub fn predict_and_decode(ckpt: &Checkpoint, audio: &crate::audio::AudioBuffer) -> Result<BTreeMap<TaskId, (SalienceMap, Annotation)>> {
    let prediction = predict(ckpt, audio)?;
    Ok(prediction
        .maps
        .into_iter()
        .map(|(task, map)| {
            let thr = ckpt.manifest.thresholds.get(&task).copied().unwrap_or(0.5);
            let est = decode(task, &map, thr);
            (task, (map, est))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub track: String,
    pub task: TaskId,
    pub scores: TaskScores,
}

/// Scores every annotated task of `ckpt` on each track.
pub fn evaluate_tracks(ckpt: &Checkpoint, tracks: &[LabeledTrack]) -> Result<Vec<ScoreRow>> {
    let per_track: Vec<Vec<ScoreRow>> = tracks
        .par_iter()
        .map(|t| {
            let decoded = predict_and_decode(ckpt, &t.mix)?;
            let mut rows = Vec::new();
            for (task, (map, est)) in decoded {
                if let Some(reference) = t.annotations.get(&task) {
                    rows.push(ScoreRow {
                        track: t.id.clone(),
                        task,
                        scores: score_estimate(task, reference, &est, map.grid.hop_seconds)?,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(per_track.into_iter().flatten().collect())
}

/// Metric name and value pairs of one score record.
pub fn named_scores(scores: &TaskScores) -> Vec<(&'static str, Option<f64>)> {
    match scores {
        TaskScores::Single(s) => s.named().to_vec(),
        TaskScores::Multi(s) => vec![("Acc", s.acc)],
    }
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |v| format!("{v}"))
}

/// `track,metric,value` rows for one task; undefined scores print `nan`.
pub fn scores_csv(rows: &[ScoreRow], task: TaskId) -> String {
    let mut out = String::from("track,metric,value\n");
    for r in rows.iter().filter(|r| r.task == task) {
        for (name, v) in named_scores(&r.scores) {
            let _ = writeln!(out, "{},{name},{}", r.track, fmt_value(v));
        }
    }
    out
}

/// Boxplot statistics per task and metric.
pub fn summarize_scores(rows: &[ScoreRow]) -> BTreeMap<TaskId, BTreeMap<String, Option<Summary>>> {
    let mut values: BTreeMap<TaskId, BTreeMap<String, Vec<Option<f64>>>> = BTreeMap::new();
    for r in rows {
        for (name, v) in named_scores(&r.scores) {
            values.entry(r.task).or_default().entry(name.to_string()).or_default().push(v);
        }
    }
    values
        .into_iter()
        .map(|(t, m)| (t, m.into_iter().map(|(k, v)| (k, summarize(v))).collect()))
        .collect()
}

/// Files written by [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub corpus_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub scores: BTreeMap<TaskId, PathBuf>,
    pub summary: PathBuf,
    pub rows: Vec<ScoreRow>,
}

/// Test-split tracks restricted to the configured mixture variants.
pub fn test_tracks(cfg: &RunConfig, tracks: Vec<LabeledTrack>) -> Result<(Vec<LabeledTrack>, Vec<LabeledTrack>, Vec<LabeledTrack>)> {
    let split = split_corpus(tracks, cfg.split, cfg.seed)?;
    let test = split.test.into_iter().filter(|t| cfg.eval.variants.contains(&t.variant)).collect();
    Ok((split.train, split.val, test))
}

/// Corpus generation, training, prediction and scoring into `out`:
/// `corpus/`, `checkpoint/` (with `history.csv`), `scores_<task>.csv` and
/// `summary.json`.
pub fn run_pipeline(cfg: &RunConfig, tasks: &[TaskId], out: &Path) -> Result<PipelineOutput> {
    cfg.validate()?;
    let corpus_dir = out.join("corpus");
    write_corpus(&corpus_dir, &cfg.corpus, &generate_corpus(&cfg.corpus)?)?;
    // train from what is on disk, as a separate invocation would
    let (_, tracks) = load_corpus(&corpus_dir)?;
    let (train_tracks, val_tracks, test) = test_tracks(cfg, tracks)?;
    let trained = train_model(cfg, tasks, &train_tracks, &val_tracks, |_| {})?;
    let checkpoint_dir = out.join("checkpoint");
    trained.checkpoint.save(&checkpoint_dir)?;
    fs::write(checkpoint_dir.join("history.csv"), history_csv(&trained.history))?;
    let ckpt = Checkpoint::load(&checkpoint_dir)?;
    let rows = evaluate_tracks(&ckpt, &test)?;
    let mut scores = BTreeMap::new();
    for &task in tasks {
        let path = out.join(format!("scores_{task}.csv"));
        fs::write(&path, scores_csv(&rows, task))?;
        scores.insert(task, path);
    }
    let summary = out.join("summary.json");
    fs::write(&summary, serde_json::to_string_pretty(&summarize_scores(&rows))?)?;
    Ok(PipelineOutput {
        corpus_dir,
        checkpoint_dir,
        scores,
        summary,
        rows,
    })
}
