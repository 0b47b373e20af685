use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::data::{sample_batch, Batch, TrackData};
use super::loss::batch_loss;
use super::{EpochRecord, TaskId};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, Mode, ModelGraph, ParamStore};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub val_batches: usize,
    pub batches_per_epoch: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    /// Frames per training window.
    pub window: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            val_batches: 50,
            batches_per_epoch: 50,
            patience: 25,
            max_epochs: 500,
            window: 50,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.val_batches == 0 || self.batches_per_epoch == 0 || self.max_epochs == 0 || self.window == 0 {
            return Err(Error::Config(
                "batch_size, val_batches, batches_per_epoch, max_epochs and window must be positive".into(),
            ));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub store: ParamStore<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

pub(crate) fn graph_tasks(graph: &ModelGraph) -> Result<Vec<TaskId>> {
    graph.output_names().iter().map(|n| n.parse()).collect()
}

fn evaluate(graph: &ModelGraph, store: &ParamStore<f32>, batches: &[Batch]) -> Result<(f64, BTreeMap<TaskId, f64>)> {
    let mut total = 0.0;
    let mut per_task = BTreeMap::new();
    for b in batches {
        let out = forward_loss(graph, store, b, Mode::Inference)?.1;
        total += out.total;
        for (t, l) in out.per_task {
            *per_task.entry(t).or_insert(0.0) += l;
        }
    }
    let n = batches.len() as f64;
    per_task.values_mut().for_each(|v| *v /= n);
    Ok((total / n, per_task))
}

fn forward_loss(
    graph: &ModelGraph,
    store: &ParamStore<f32>,
    batch: &Batch,
    mode: Mode,
) -> Result<(crate::nn::Trace<f32>, super::loss::LossOutput<f32>)> {
    let inputs = BTreeMap::from([(super::arch::INPUT.to_string(), batch.input.clone())]);
    let trace = graph.forward(store, &inputs, mode)?;
    let preds: BTreeMap<String, Array4<f32>> = trace.outputs();
    let loss = batch_loss(&preds, &batch.targets, &batch.weights)?;
    Ok((trace, loss))
}

fn diverged(reason: impl Into<String>, history: &[EpochRecord]) -> Error {
    Error::TrainingDiverged {
        reason: reason.into(),
        history: history.to_vec(),
    }
}

/// Adam training with early stopping on the weighted validation loss.
/// Validation batches are drawn once and reused every epoch.
pub fn train(
    graph: &ModelGraph,
    train_set: &[TrackData],
    val_set: &[TrackData],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_ids: BTreeSet<&str> = train_set.iter().map(|t| t.id.as_str()).collect();
    if let Some(t) = val_set.iter().find(|t| train_ids.contains(t.id.as_str())) {
        return Err(Error::Config(format!("track {} is in both training and validation sets", t.id)));
    }
    let tasks = graph_tasks(graph)?;
    let mut store = ParamStore::<f32>::init(graph, cfg.seed);
    let mut val_rng = rng::stream(cfg.seed, "validation");
    let val_batches = (0..cfg.val_batches)
        .map(|_| sample_batch(val_set, &tasks, cfg.batch_size, cfg.window, &mut val_rng))
        .collect::<Result<Vec<_>>>()?;
    let mut batch_rng = rng::stream(cfg.seed, "batching");
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, store.clone(), 0);
    let mut wait = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut train_loss = 0.0;
        for _ in 0..cfg.batches_per_epoch {
            let batch = sample_batch(train_set, &tasks, cfg.batch_size, cfg.window, &mut batch_rng)?;
            let (trace, loss) = forward_loss(graph, &store, &batch, Mode::Train)?;
            if !loss.total.is_finite() {
                return Err(diverged(format!("non-finite training loss at epoch {epoch}"), &history));
            }
            let grads = graph.backward(&store, &trace, &loss.output_grads)?;
            store.update_running_stats(graph, &trace);
            match store.adam_step(&grads, &cfg.adam) {
                Err(Error::TrainingDiverged { reason, .. }) => return Err(diverged(format!("{reason} at epoch {epoch}"), &history)),
                other => other?,
            }
            train_loss += loss.total;
        }
        let (val_loss, val_task_losses) = evaluate(graph, &store, &val_batches)?;
        if !val_loss.is_finite() {
            return Err(diverged(format!("non-finite validation loss at epoch {epoch}"), &history));
        }
        let record = EpochRecord {
            epoch,
            train_loss: train_loss / cfg.batches_per_epoch as f64,
            val_loss,
            val_task_losses,
        };
        on_epoch(&record);
        history.push(record);
        if val_loss < best.0 {
            best = (val_loss, store.clone(), epoch);
            wait = 0;
        } else {
            wait += 1;
            if wait > cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        store: best.1,
        history,
        best_epoch: best.2,
    })
}
