use std::collections::BTreeMap;

use ndarray::Array4;
use rand::Rng;
use serde::Serialize;

use super::arch::{build_multitask_graph, ConvSpec, ModelConfig, INPUT};
use super::TaskId;
use crate::error::Result;
use crate::nn::gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
use crate::nn::{GraphBuilder, ModelGraph, ParamStore};
use crate::rng;

/// Bound on the relative gradient error.
pub const GRAD_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
    pub passed: bool,
}

/// Small geometry that keeps every layer kind of the full model.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        trunk: vec![ConvSpec::new(3, 3, 3), ConvSpec::new(3, 3, 3)],
        timbre: ConvSpec::new(3, 1, 3),
        subnet: vec![ConvSpec::new(3, 3, 3), ConvSpec::new(2, 5, 1), ConvSpec::new(2, 1, 1)],
        ..ModelConfig::default()
    }
}

fn random(shape: (usize, usize, usize, usize), seed: u64, name: &str) -> Array4<f64> {
    let mut r = rng::stream(seed, name);
    Array4::from_shape_simple_fn(shape, || r.gen_range(-1.0..1.0))
}

/// Name, graph and `(input name, channels)` of each single-layer check.
type LayerCase = (&'static str, ModelGraph, Vec<(&'static str, usize)>);

fn layer_graphs() -> Result<Vec<LayerCase>> {
    let mut out = Vec::new();
    let mut b = GraphBuilder::new();
    let x = b.input("x", 3);
    let y = b.conv(x, "c", 2, 3, 3);
    b.output("y", y);
    out.push(("conv", b.build()?, vec![("x", 3)]));

    let mut b = GraphBuilder::new();
    let x = b.input("x", 2);
    let c = b.conv(x, "c", 3, 3, 1);
    let r = b.relu(c);
    let y = b.batchnorm(r, "bn", 0.99, 1e-3);
    b.output("y", y);
    out.push(("conv+relu+batchnorm", b.build()?, vec![("x", 2)]));

    let mut b = GraphBuilder::new();
    let x = b.input("x", 2);
    let y = b.sigmoid(x);
    b.output("y", y);
    out.push(("sigmoid", b.build()?, vec![("x", 2)]));

    let mut b = GraphBuilder::new();
    let x = b.input("x", 3);
    let m = b.input("m", 1);
    let y = b.multiply(x, m);
    b.output("y", y);
    out.push(("mask multiply", b.build()?, vec![("x", 3), ("m", 1)]));

    let mut b = GraphBuilder::new();
    let x = b.input("x", 2);
    let c = b.conv(x, "c", 2, 3, 3);
    let s = b.sigmoid(c);
    let cat = b.concat(&[x, s, c]);
    let y = b.conv(cat, "d", 1, 1, 1);
    b.output("y", y);
    b.output("s", s);
    out.push(("concat+fan-out", b.build()?, vec![("x", 2)]));
    Ok(out)
}

/// Finite-difference checks (float64, central differences at eps = 1e-4)
/// of every layer kind, coordinate-wise, and of the full graph for `tasks`
/// over `seeds`, tensor-wise.
pub fn gradient_suite(tasks: &[TaskId], seeds: u64) -> Result<Vec<SuiteEntry>> {
    let cfg = GradCheckConfig::default();
    let mut out = Vec::new();
    for (name, g, inputs) in layer_graphs()? {
        let store = ParamStore::<f64>::init(&g, 7);
        let xs: BTreeMap<String, Array4<f64>> = inputs.iter().map(|&(n, c)| (n.to_string(), random((3, c, 5, 4), 1, n))).collect();
        let report = check_gradients(&g, &store, &xs, &cfg)?;
        let passed = report.checked > 0 && report.max_rel_error < GRAD_TOLERANCE;
        out.push(SuiteEntry {
            name: name.to_string(),
            report,
            passed,
        });
    }
    let g = build_multitask_graph(tasks, &tiny_model_config(), 3)?;
    for seed in 0..seeds {
        let store = ParamStore::<f64>::init(&g, seed);
        let mut r = rng::stream(seed, "hcqt");
        let x = Array4::from_shape_simple_fn((2, 3, 8, 6), || r.gen_range(0.0..2.0));
        let report = check_gradients(&g, &store, &BTreeMap::from([(INPUT.to_string(), x)]), &cfg)?;
        let passed = report.checked > 0 && report.max_tensor_rel_error < GRAD_TOLERANCE && report.skipped_kinks * 20 < report.checked;
        let names: Vec<&str> = tasks.iter().map(|t| t.as_str()).collect();
        out.push(SuiteEntry {
            name: format!("graph {} seed {seed}", names.join(",")),
            report,
            passed,
        });
    }
    Ok(out)
}
