use std::collections::BTreeMap;

use ndarray::Array4;

use super::TaskId;
use crate::error::{Error, Result};
use crate::nn::Real;

/// Predictions are clamped to `[LOSS_CLAMP, 1 - LOSS_CLAMP]`.
pub const LOSS_CLAMP: f64 = 1e-7;

/// Binary cross-entropy `-y ln(p) - (1 - y) ln(1 - p)`.
pub fn pointwise_loss(y: f64, yhat: f64) -> f64 {
    let p = yhat.clamp(LOSS_CLAMP, 1.0 - LOSS_CLAMP);
    -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
}

/// Weighted loss of one batch together with the gradient for each output.
#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub total: f64,
    pub per_task: BTreeMap<TaskId, f64>,
    /// Keyed by output name; tasks whose weights are all zero are omitted.
    pub output_grads: BTreeMap<String, Array4<T>>,
}

/// `total = sum_i (1/B) sum_b w_ib mean_{f,t} L(y, yhat)`. Predictions and
/// targets are `[B, 1, F, T]`; `weights[task][b]` is zero where the target
/// is unavailable, which removes both its loss and its gradient.
pub fn batch_loss<T: Real>(
    predictions: &BTreeMap<String, Array4<T>>,
    targets: &BTreeMap<TaskId, Array4<T>>,
    weights: &BTreeMap<TaskId, Vec<f64>>,
) -> Result<LossOutput<T>> {
    let mut out = LossOutput {
        total: 0.0,
        per_task: BTreeMap::new(),
        output_grads: BTreeMap::new(),
    };
    for (&task, w) in weights {
        let pred = predictions
            .get(task.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("no prediction for task {task}")))?;
        let target = targets
            .get(&task)
            .ok_or_else(|| Error::InvalidInput(format!("no target for task {task}")))?;
        let (b, c, f, t) = pred.dim();
        if target.dim() != pred.dim() || c != 1 || w.len() != b {
            return Err(Error::InvalidInput(format!(
                "target or weights for {task} do not match the prediction"
            )));
        }
        let per_example = (f * t) as f64;
        let mut task_loss = 0.0;
        let mut grad = Array4::<T>::zeros(pred.raw_dim());
        for (n, &wn) in w.iter().enumerate() {
            if wn == 0.0 {
                continue;
            }
            let scale = wn / (b as f64 * per_example);
            let mut sum = 0.0;
            let p = pred.index_axis(ndarray::Axis(0), n);
            let y = target.index_axis(ndarray::Axis(0), n);
            let mut g = grad.index_axis_mut(ndarray::Axis(0), n);
            ndarray::Zip::from(&mut g).and(&p).and(&y).for_each(|g, &p, &y| {
                let (p, y) = (p.f64(), y.f64());
                sum += pointwise_loss(y, p);
                if p > LOSS_CLAMP && p < 1.0 - LOSS_CLAMP {
                    *g = T::of(scale * (p - y) / (p * (1.0 - p)));
                }
            });
            task_loss += wn * sum / per_example;
        }
        task_loss /= b as f64;
        out.total += task_loss;
        out.per_task.insert(task, task_loss);
        if w.iter().any(|&x| x != 0.0) {
            out.output_grads.insert(task.as_str().to_string(), grad);
        }
    }
    Ok(out)
}
