use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::TaskId;
use crate::error::{Error, Result};
use crate::nn::{GraphBuilder, ModelGraph, NodeId, Op};

/// One convolution layer: `channels` filters of `kernel_freq x kernel_time`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel_freq: usize,
    pub kernel_time: usize,
}

impl ConvSpec {
    pub const fn new(channels: usize, kernel_freq: usize, kernel_time: usize) -> Self {
        Self {
            channels,
            kernel_freq,
            kernel_time,
        }
    }
}

/// Layer geometry. Every listed layer is conv, ReLU, batchnorm; each head
/// ends in a 1x1 single-channel conv with sigmoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub trunk: Vec<ConvSpec>,
    pub timbre: ConvSpec,
    pub subnet: Vec<ConvSpec>,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    /// Treat the multiple-f0 mask as a constant for auxiliary losses.
    pub stop_gradient: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            trunk: vec![ConvSpec::new(16, 5, 5); 4],
            timbre: ConvSpec::new(16, 1, 11),
            subnet: vec![
                ConvSpec::new(16, 5, 5),
                ConvSpec::new(16, 5, 5),
                ConvSpec::new(16, 69, 3),
                ConvSpec::new(16, 3, 3),
            ],
            bn_momentum: 0.99,
            bn_epsilon: 1e-3,
            stop_gradient: false,
        }
    }
}

pub const INPUT: &str = "hcqt";

struct Builder<'a> {
    b: GraphBuilder,
    cfg: &'a ModelConfig,
}

impl Builder<'_> {
    fn layers(&mut self, mut x: NodeId, prefix: &str, specs: &[ConvSpec]) -> NodeId {
        for (i, s) in specs.iter().enumerate() {
            let c = self
                .b
                .conv(x, &format!("{prefix}.conv{i}"), s.channels, s.kernel_freq, s.kernel_time);
            let r = self.b.relu(c);
            x = self
                .b
                .batchnorm(r, &format!("{prefix}.bn{i}"), self.cfg.bn_momentum, self.cfg.bn_epsilon);
        }
        x
    }

    fn head(&mut self, x: NodeId, prefix: &str) -> NodeId {
        let c = self.b.conv(x, &format!("{prefix}.out"), 1, 1, 1);
        self.b.sigmoid(c)
    }

    /// Trunk and mask: returns `(hcqt, mask)`.
    fn trunk(&mut self, input_channels: usize, mask_prefix: &str) -> (NodeId, NodeId) {
        let x = self.b.input(INPUT, input_channels);
        let t = self.layers(x, "trunk", &self.cfg.trunk.clone());
        let m = self.head(t, mask_prefix);
        (x, m)
    }

    /// Masked input through the timbre layer, concatenated with the mask.
    fn shared_aux_input(&mut self, x: NodeId, m: NodeId) -> NodeId {
        let m = if self.cfg.stop_gradient { self.b.stop_gradient(m) } else { m };
        let masked = self.b.multiply(x, m);
        let timbre = self.layers(masked, "timbre", &[self.cfg.timbre]);
        self.b.concat(&[timbre, m])
    }

    fn subnet(&mut self, shared: NodeId, task: TaskId) -> NodeId {
        let h = self.layers(shared, task.as_str(), &self.cfg.subnet.clone());
        self.head(h, task.as_str())
    }
}

/// Trunk, multiple-f0 head, masking, timbre layer and one sub-network per
/// auxiliary task.
pub fn build_multitask_graph(tasks: &[TaskId], cfg: &ModelConfig, input_channels: usize) -> Result<ModelGraph> {
    let unique: BTreeSet<TaskId> = tasks.iter().copied().collect();
    if unique.len() != tasks.len() {
        return Err(Error::Graph(format!("duplicate task in {tasks:?}")));
    }
    if !unique.contains(&TaskId::Multif0) {
        return Err(Error::Graph("a multitask model needs the multif0 task".into()));
    }
    let mut bl = Builder {
        b: GraphBuilder::new(),
        cfg,
    };
    let (x, m) = bl.trunk(input_channels, "multif0");
    bl.b.output(TaskId::Multif0.as_str(), m);
    let aux: Vec<TaskId> = unique.into_iter().filter(|&t| t != TaskId::Multif0).collect();
    if !aux.is_empty() {
        let shared = bl.shared_aux_input(x, m);
        for t in aux {
            let y = bl.subnet(shared, t);
            bl.b.output(t.as_str(), y);
        }
    }
    bl.b.build()
}

/// Single-output model. For an auxiliary task the trunk's 1x1 sigmoid
/// layer is an unsupervised mask, so the parameter shapes equal the
/// multitask path `{multif0, task}`.
pub fn build_singletask_graph(task: TaskId, cfg: &ModelConfig, input_channels: usize) -> Result<ModelGraph> {
    if task == TaskId::Multif0 {
        return build_multitask_graph(&[TaskId::Multif0], cfg, input_channels);
    }
    let mut bl = Builder {
        b: GraphBuilder::new(),
        cfg,
    };
    let (x, m) = bl.trunk(input_channels, "mask");
    let shared = bl.shared_aux_input(x, m);
    let y = bl.subnet(shared, task);
    bl.b.output(task.as_str(), y);
    bl.b.build()
}

/// Parameters whose gradient can only come from `output`'s loss.
pub fn exclusive_params(graph: &ModelGraph, output: &str) -> Vec<String> {
    let nodes = graph.nodes();
    let mut reach: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); nodes.len()];
    for (name, &id) in graph.outputs() {
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            if !reach[n].insert(name.as_str()) || matches!(nodes[n].op, Op::StopGradient) {
                continue;
            }
            stack.extend(&nodes[n].inputs);
        }
    }
    let owned: BTreeMap<&str, &[&str]> = BTreeMap::from([("conv", &["weight", "bias"][..]), ("batchnorm", &["gamma", "beta"][..])]);
    let mut out = Vec::new();
    for (id, node) in nodes.iter().enumerate() {
        let (param, kind) = match &node.op {
            Op::Conv { param, .. } => (param, "conv"),
            Op::BatchNorm { param, .. } => (param, "batchnorm"),
            _ => continue,
        };
        if reach[id].len() == 1 && reach[id].contains(output) {
            out.extend(owned[kind].iter().map(|s| format!("{param}.{s}")));
        }
    }
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shapes(g: &ModelGraph) -> BTreeMap<String, Vec<usize>> {
        g.param_shapes()
    }

    #[test]
    fn multitask_outputs() {
        let cfg = ModelConfig::default();
        let g = build_multitask_graph(&[TaskId::Multif0], &cfg, 5).unwrap();
        assert_eq!(g.output_names(), vec!["multif0"]);
        let four = [TaskId::Multif0, TaskId::Melody, TaskId::Bass, TaskId::Vocal];
        let g4 = build_multitask_graph(&four, &cfg, 5).unwrap();
        assert_eq!(g4.outputs().len(), 4);
        let g6 = build_multitask_graph(&TaskId::ALL, &cfg, 5).unwrap();
        assert_eq!(g6.outputs().len(), 6);
        for (k, v) in shapes(&g) {
            assert_eq!(shapes(&g6)[&k], v, "trunk parameter {k}");
        }
    }

    #[test]
    fn construction_errors() {
        let cfg = ModelConfig::default();
        assert!(build_multitask_graph(&[TaskId::Melody], &cfg, 5).is_err());
        assert!(build_multitask_graph(&[TaskId::Multif0, TaskId::Multif0], &cfg, 5).is_err());
        let even = ModelConfig {
            subnet: vec![ConvSpec::new(4, 70, 3)],
            ..ModelConfig::default()
        };
        assert!(build_multitask_graph(&[TaskId::Multif0, TaskId::Bass], &even, 5).is_err());
    }

    #[test]
    fn singletask_parity() {
        let cfg = ModelConfig::default();
        assert_eq!(
            shapes(&build_singletask_graph(TaskId::Multif0, &cfg, 5).unwrap()),
            shapes(&build_multitask_graph(&[TaskId::Multif0], &cfg, 5).unwrap())
        );
        let mel = build_singletask_graph(TaskId::Melody, &cfg, 5).unwrap();
        let two = build_multitask_graph(&[TaskId::Multif0, TaskId::Melody], &cfg, 5).unwrap();
        assert_eq!(mel.output_names(), vec!["melody"]);
        assert_eq!(mel.parameter_count(), two.parameter_count());
        let bass = build_singletask_graph(TaskId::Bass, &cfg, 5).unwrap();
        let rename = |g: &ModelGraph, from: &str| -> Vec<Vec<usize>> {
            let mut v: Vec<_> = g.param_shapes().into_iter().map(|(k, s)| (k.replace(from, "task"), s)).collect();
            v.sort();
            v.into_iter().map(|(_, s)| s).collect()
        };
        assert_eq!(rename(&mel, "melody"), rename(&bass, "bass"));
    }

    #[test]
    fn exclusive_parameter_sets() {
        let cfg = ModelConfig::default();
        let g = build_multitask_graph(&TaskId::ALL, &cfg, 5).unwrap();
        let mel = exclusive_params(&g, "melody");
        assert!(!mel.is_empty());
        assert!(mel.iter().all(|p| p.starts_with("melody.")));
        assert!(exclusive_params(&g, "multif0").is_empty());
        let sg = ModelConfig {
            stop_gradient: true,
            ..cfg
        };
        let g = build_multitask_graph(&TaskId::ALL, &sg, 5).unwrap();
        let m = exclusive_params(&g, "multif0");
        assert!(m.contains(&"trunk.conv0.weight".to_string()));
        assert!(m.contains(&"multif0.out.weight".to_string()));
    }
}
