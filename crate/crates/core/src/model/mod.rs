//! Single-task and multitask salience models: graphs, loss, batching,
//! training with early stopping, prediction and checkpoints.

mod arch;
mod check;
mod data;
mod eval;
mod loss;
mod predict;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub use arch::{build_multitask_graph, build_singletask_graph, exclusive_params, ConvSpec, ModelConfig};
pub use check::{gradient_suite, tiny_model_config, SuiteEntry, GRAD_TOLERANCE};
pub use data::{sample_batch, Batch, TrackData};
pub use eval::{decode, score_estimate, sweep_threshold, TaskScores, THRESHOLD_GRID};
pub use loss::{batch_loss, pointwise_loss, LossOutput, LOSS_CLAMP};
pub use predict::{predict, predict_features, Checkpoint, Manifest, Prediction};
pub use train::{train, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskId {
    Multif0,
    Melody,
    Bass,
    Vocal,
    Piano,
    Guitar,
}

impl TaskId {
    pub const ALL: [TaskId; 6] = [
        TaskId::Multif0,
        TaskId::Melody,
        TaskId::Bass,
        TaskId::Vocal,
        TaskId::Piano,
        TaskId::Guitar,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Multif0 => "multif0",
            TaskId::Melody => "melody",
            TaskId::Bass => "bass",
            TaskId::Vocal => "vocal",
            TaskId::Piano => "piano",
            TaskId::Guitar => "guitar",
        }
    }

    /// Tasks annotated with pitch sets rather than one pitch per frame.
    pub fn is_multi_pitch(self) -> bool {
        matches!(self, TaskId::Multif0 | TaskId::Piano | TaskId::Guitar)
    }

    /// Parses a comma-separated list such as `multif0,melody`.
    pub fn parse_list(s: &str) -> Result<Vec<TaskId>> {
        s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::parse).collect()
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown task {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_task_losses: BTreeMap<TaskId, f64>,
}

/// Loss history as CSV: `epoch,train_loss,val_loss,val_<task>...`.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let tasks: Vec<TaskId> = history
        .first()
        .map(|r| r.val_task_losses.keys().copied().collect())
        .unwrap_or_default();
    let mut out = String::from("epoch,train_loss,val_loss");
    for t in &tasks {
        out.push_str(&format!(",val_{t}"));
    }
    out.push('\n');
    for r in history {
        out.push_str(&format!("{},{},{}", r.epoch, r.train_loss, r.val_loss));
        for t in &tasks {
            out.push_str(&format!(",{}", r.val_task_losses.get(t).copied().unwrap_or(f64::NAN)));
        }
        out.push('\n');
    }
    out
}
