//! Central finite-difference verification of analytic gradients.
//!
//! The scalar objective is `L = sum_o <r_o, y_o>` with fixed random
//! projections `r_o`. Coordinates whose perturbation flips the sign of any
//! ReLU input are skipped and counted: the objective is not differentiable
//! across those kinks, so neither side of the comparison is meaningful there.

use std::collections::BTreeMap;

use ndarray::Array4;
use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use super::graph::{Mode, ModelGraph, Op};
use super::params::ParamStore;
use crate::error::Result;
use crate::rng;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Entries checked per tensor; larger tensors are subsampled.
    pub max_entries_per_tensor: usize,
    /// Relative errors use `max(|analytic|, |numeric|, floor)` as denominator.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            max_entries_per_tensor: usize::MAX,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    /// Largest coordinate-wise relative error.
    pub max_rel_error: f64,
    /// Tensor holding the worst coordinate.
    pub worst: String,
    /// Largest tensor-wise error `|a - n|_2 / max(|a|_2, |n|_2, floor)`.
    pub max_tensor_rel_error: f64,
    pub worst_tensor: String,
    pub checked: usize,
    pub skipped_kinks: usize,
}

struct Objective<'a> {
    graph: &'a ModelGraph,
    projections: BTreeMap<String, Array4<f64>>,
    relus: Vec<usize>,
}

impl Objective<'_> {
    fn eval(&self, store: &ParamStore<f64>, inputs: &BTreeMap<String, Array4<f64>>) -> Result<(f64, Vec<bool>)> {
        let trace = self.graph.forward(store, inputs, Mode::Train)?;
        let loss = self
            .projections
            .iter()
            .map(|(name, r)| (r * trace.output(name).expect("output")).sum())
            .sum();
        let signs = self
            .relus
            .iter()
            .flat_map(|&id| trace.value(id).iter().map(|&v| v > 0.0).collect::<Vec<_>>())
            .collect();
        Ok((loss, signs))
    }
}

fn pick(len: usize, max: usize, r: &mut impl Rng) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        let mut idx = sample(r, len, max).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// Compares every parameter (and every graph input) gradient against
/// central differences in training mode.
pub fn check_gradients(
    graph: &ModelGraph,
    store: &ParamStore<f64>,
    inputs: &BTreeMap<String, Array4<f64>>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let trace = graph.forward(store, inputs, Mode::Train)?;
    let mut r = rng::stream(cfg.seed, "gradcheck");
    let projections: BTreeMap<String, Array4<f64>> = graph
        .output_names()
        .into_iter()
        .map(|name| {
            let y = trace.output(&name).expect("output");
            let scale = 1.0 / (y.len() as f64).sqrt();
            let p = Array4::from_shape_simple_fn(y.raw_dim(), || r.gen_range(-1.0..1.0) * scale);
            (name, p)
        })
        .collect();
    let grads = graph.backward(store, &trace, &projections)?;
    // ReLU outputs are zero exactly where inputs are non-positive, so the
    // sign pattern of the ReLU input is read off its producer node.
    let relus = graph
        .nodes()
        .iter()
        .filter(|n| matches!(n.op, Op::Relu))
        .map(|n| n.inputs[0])
        .collect();
    let obj = Objective { graph, projections, relus };
    let (_, base_signs) = obj.eval(store, inputs)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        max_tensor_rel_error: 0.0,
        worst_tensor: String::new(),
        checked: 0,
        skipped_kinks: 0,
    };
    // Per tensor: squared norms of the difference, analytic and numeric.
    let mut norms: BTreeMap<String, [f64; 3]> = BTreeMap::new();
    let mut record = |name: &str, analytic: f64, plus: (f64, Vec<bool>), minus: (f64, Vec<bool>)| {
        if plus.1 != base_signs || minus.1 != base_signs {
            report.skipped_kinks += 1;
            return;
        }
        let numeric = (plus.0 - minus.0) / (2.0 * cfg.epsilon);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(cfg.floor);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = name.to_string();
        }
        let n = norms.entry(name.to_string()).or_default();
        n[0] += (analytic - numeric).powi(2);
        n[1] += analytic.powi(2);
        n[2] += numeric.powi(2);
    };

    let mut work = store.clone();
    for (name, g) in &grads.params {
        let n = g.len();
        for idx in pick(n, cfg.max_entries_per_tensor, &mut r) {
            let orig = work.value(name).as_slice().expect("contiguous")[idx];
            let set = |w: &mut ParamStore<f64>, v: f64| {
                w.value_mut(name).expect("param").as_slice_mut().expect("contiguous")[idx] = v;
            };
            set(&mut work, orig + cfg.epsilon);
            let plus = obj.eval(&work, inputs)?;
            set(&mut work, orig - cfg.epsilon);
            let minus = obj.eval(&work, inputs)?;
            set(&mut work, orig);
            record(name, g.as_slice().expect("contiguous")[idx], plus, minus);
        }
    }
    let mut xs = inputs.clone();
    for (name, g) in &grads.inputs {
        for idx in pick(g.len(), cfg.max_entries_per_tensor, &mut r) {
            let set = |x: &mut BTreeMap<String, Array4<f64>>, v: f64| {
                x.get_mut(name).expect("input").as_slice_mut().expect("contiguous")[idx] = v;
            };
            let orig = inputs[name].as_slice().expect("contiguous")[idx];
            set(&mut xs, orig + cfg.epsilon);
            let plus = obj.eval(store, &xs)?;
            set(&mut xs, orig - cfg.epsilon);
            let minus = obj.eval(store, &xs)?;
            set(&mut xs, orig);
            record(&format!("input {name}"), g.as_slice().expect("contiguous")[idx], plus, minus);
        }
    }
    for (name, [d, a, n]) in norms {
        let rel = d.sqrt() / a.sqrt().max(n.sqrt()).max(cfg.floor);
        if rel > report.max_tensor_rel_error || report.worst_tensor.is_empty() {
            report.max_tensor_rel_error = report.max_tensor_rel_error.max(rel);
            report.worst_tensor = name;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::GraphBuilder;

    fn random_input(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut r = rng::stream(seed, "input");
        Array4::from_shape_simple_fn(shape, || r.gen_range(-1.0..1.0))
    }

    type Shape = (usize, usize, usize, usize);

    fn check(b: GraphBuilder, inputs: &[(&str, Shape)]) -> GradCheckReport {
        let g = b.build().unwrap();
        let store = ParamStore::<f64>::init(&g, 7);
        let xs = inputs
            .iter()
            .enumerate()
            .map(|(i, (n, s))| (n.to_string(), random_input(*s, i as u64)))
            .collect();
        let rep = check_gradients(&g, &store, &xs, &GradCheckConfig::default()).unwrap();
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
        assert!(rep.checked > 0);
        rep
    }

    #[test]
    fn conv_gradients() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", 3);
        let y = b.conv(x, "c", 2, 3, 3);
        b.output("y", y);
        check(b, &[("x", (2, 3, 5, 5))]);
    }

    #[test]
    fn conv_relu_batchnorm_gradients() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", 2);
        let c = b.conv(x, "c", 3, 3, 1);
        let r = b.relu(c);
        let y = b.batchnorm(r, "bn", 0.99, 1e-3);
        b.output("y", y);
        check(b, &[("x", (3, 2, 4, 5))]);
    }

    #[test]
    fn sigmoid_gradients() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", 2);
        let y = b.sigmoid(x);
        b.output("y", y);
        check(b, &[("x", (2, 2, 3, 3))]);
    }

    #[test]
    fn multiply_routes_gradient_to_both_operands() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", 3);
        let m = b.input("m", 1);
        let y = b.multiply(x, m);
        b.output("y", y);
        check(b, &[("x", (2, 3, 4, 3)), ("m", (2, 1, 4, 3))]);
    }

    #[test]
    fn concat_and_fan_out_gradients() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", 2);
        let c = b.conv(x, "c", 2, 3, 3);
        let s = b.sigmoid(c);
        let cat = b.concat(&[x, s, c]);
        let y = b.conv(cat, "d", 1, 1, 1);
        b.output("y", y);
        b.output("s", s);
        check(b, &[("x", (2, 2, 4, 4))]);
    }

    #[test]
    fn stop_gradient_blocks_flow() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", 1);
        let c = b.conv(x, "c", 1, 3, 3);
        let s = b.stop_gradient(c);
        let y = b.conv(s, "d", 1, 1, 1);
        b.output("y", y);
        let g = b.build().unwrap();
        let store = ParamStore::<f64>::init(&g, 1);
        let xs = BTreeMap::from([("x".to_string(), random_input((1, 1, 4, 4), 0))]);
        let trace = g.forward(&store, &xs, Mode::Train).unwrap();
        let dy = BTreeMap::from([("y".to_string(), Array4::ones((1, 1, 4, 4)))]);
        let grads = g.backward(&store, &trace, &dy).unwrap();
        assert!(grads.params["c.weight"].iter().all(|&v| v == 0.0));
        assert!(grads.params["d.weight"].iter().any(|&v| v != 0.0));
    }
}
