use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array4, ArrayView1, ArrayView4, Ix1, Ix4};
use serde::{Deserialize, Serialize};

use super::ops::{self, BnCache, BnStats};
use super::params::{Grads, ParamStore};
use super::Real;
use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Op {
    Input {
        name: String,
        channels: usize,
    },
    /// Same-padded convolution owning `{param}.weight` and `{param}.bias`.
    Conv {
        param: String,
        out_channels: usize,
        kernel_freq: usize,
        kernel_time: usize,
    },
    /// Owns `{param}.gamma`, `{param}.beta` and the running statistics.
    BatchNorm {
        param: String,
        momentum: f64,
        epsilon: f64,
    },
    Relu,
    Sigmoid,
    /// `inputs[0] * inputs[1]`, the second broadcast over channels.
    Multiply,
    Concat,
    /// Identity forward, blocks gradients backward.
    StopGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub op: Op,
    pub inputs: Vec<NodeId>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    nodes: Vec<Node>,
    outputs: BTreeMap<String, NodeId>,
}

/// Validated acyclic graph with inferred channel counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph", into = "RawGraph")]
pub struct ModelGraph {
    nodes: Vec<Node>,
    outputs: BTreeMap<String, NodeId>,
    order: Vec<NodeId>,
    channels: Vec<usize>,
}

impl From<ModelGraph> for RawGraph {
    fn from(g: ModelGraph) -> Self {
        RawGraph {
            nodes: g.nodes,
            outputs: g.outputs,
        }
    }
}

impl TryFrom<RawGraph> for ModelGraph {
    type Error = Error;

    fn try_from(raw: RawGraph) -> Result<Self> {
        ModelGraph::new(raw.nodes, raw.outputs)
    }
}

fn graph_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Graph(msg.into()))
}

impl ModelGraph {
    pub fn new(nodes: Vec<Node>, outputs: BTreeMap<String, NodeId>) -> Result<Self> {
        let n = nodes.len();
        if outputs.is_empty() {
            return graph_err("graph has no outputs");
        }
        for (id, node) in nodes.iter().enumerate() {
            if let Some(&bad) = node.inputs.iter().find(|&&i| i >= n) {
                return graph_err(format!("node {id} reads missing node {bad}"));
            }
        }
        if let Some((name, _)) = outputs.iter().find(|(_, &id)| id >= n) {
            return graph_err(format!("output {name} refers to a missing node"));
        }
        let order = topological_order(&nodes)?;
        let mut channels = vec![0; n];
        let mut input_names = BTreeSet::new();
        let mut param_names = BTreeSet::new();
        for &id in &order {
            let node = &nodes[id];
            let arity = |k: usize| -> Result<()> {
                if node.inputs.len() != k {
                    return graph_err(format!("node {id} ({:?}) needs {k} inputs, has {}", node.op, node.inputs.len()));
                }
                Ok(())
            };
            let first = node.inputs.first().map(|&i| channels[i]);
            channels[id] = match &node.op {
                Op::Input { name, channels } => {
                    arity(0)?;
                    if *channels == 0 {
                        return graph_err(format!("input {name} has zero channels"));
                    }
                    if !input_names.insert(name.clone()) {
                        return graph_err(format!("duplicate input {name}"));
                    }
                    *channels
                }
                Op::Conv {
                    param,
                    out_channels,
                    kernel_freq,
                    kernel_time,
                } => {
                    arity(1)?;
                    if kernel_freq % 2 == 0 || kernel_time % 2 == 0 {
                        return graph_err(format!(
                            "conv {param}: kernel {kernel_freq}x{kernel_time} must be odd in both dimensions"
                        ));
                    }
                    if *out_channels == 0 {
                        return graph_err(format!("conv {param} has zero output channels"));
                    }
                    if !param_names.insert(param.clone()) {
                        return graph_err(format!("duplicate parameter name {param}"));
                    }
                    *out_channels
                }
                Op::BatchNorm { param, momentum, epsilon } => {
                    arity(1)?;
                    if !(0.0..1.0).contains(momentum) || !(*epsilon > 0.0) {
                        return graph_err(format!("batchnorm {param}: momentum must be in [0, 1) and epsilon positive"));
                    }
                    if !param_names.insert(param.clone()) {
                        return graph_err(format!("duplicate parameter name {param}"));
                    }
                    first.expect("arity checked")
                }
                Op::Relu | Op::Sigmoid | Op::StopGradient => {
                    arity(1)?;
                    first.expect("arity checked")
                }
                Op::Multiply => {
                    arity(2)?;
                    let (a, m) = (channels[node.inputs[0]], channels[node.inputs[1]]);
                    if m != 1 && m != a {
                        return graph_err(format!("multiply node {id}: mask has {m} channels, operand has {a}"));
                    }
                    a
                }
                Op::Concat => {
                    if node.inputs.is_empty() {
                        return graph_err(format!("concat node {id} has no inputs"));
                    }
                    node.inputs.iter().map(|&i| channels[i]).sum()
                }
            };
        }
        Ok(Self {
            nodes,
            outputs,
            order,
            channels,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn outputs(&self) -> &BTreeMap<String, NodeId> {
        &self.outputs
    }

    pub fn output_names(&self) -> Vec<String> {
        self.outputs.keys().cloned().collect()
    }

    pub fn channels(&self, id: NodeId) -> usize {
        self.channels[id]
    }

    /// Named inputs with their channel counts.
    pub fn inputs(&self) -> BTreeMap<String, usize> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Input { name, channels } => Some((name.clone(), *channels)),
                _ => None,
            })
            .collect()
    }

    /// Shapes of the trainable parameters.
    pub fn param_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out = BTreeMap::new();
        for node in &self.nodes {
            match &node.op {
                Op::Conv {
                    param,
                    out_channels,
                    kernel_freq,
                    kernel_time,
                } => {
                    let c_in = self.channels[node.inputs[0]];
                    out.insert(format!("{param}.weight"), vec![*out_channels, c_in, *kernel_freq, *kernel_time]);
                    out.insert(format!("{param}.bias"), vec![*out_channels]);
                }
                Op::BatchNorm { param, .. } => {
                    let c = self.channels[node.inputs[0]];
                    out.insert(format!("{param}.gamma"), vec![c]);
                    out.insert(format!("{param}.beta"), vec![c]);
                }
                _ => {}
            }
        }
        out
    }

    /// Shapes of the non-trainable running statistics.
    pub fn state_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out = BTreeMap::new();
        for node in &self.nodes {
            if let Op::BatchNorm { param, .. } = &node.op {
                let c = self.channels[node.inputs[0]];
                out.insert(format!("{param}.running_mean"), vec![c]);
                out.insert(format!("{param}.running_var"), vec![c]);
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.param_shapes().values().map(|s| s.iter().product::<usize>()).sum()
    }

    /// Evaluates every node in topological order.
    pub fn forward<T: Real>(&self, store: &ParamStore<T>, inputs: &BTreeMap<String, Array4<T>>, mode: Mode) -> Result<Trace<T>> {
        store.check_against(self)?;
        let mut spatial: Option<(usize, usize, usize)> = None;
        for (name, channels) in self.inputs() {
            let x = inputs
                .get(&name)
                .ok_or_else(|| Error::InvalidInput(format!("missing graph input {name}")))?;
            let (b, c, f, t) = x.dim();
            if c != channels || b == 0 || f == 0 || t == 0 {
                return Err(Error::InvalidInput(format!(
                    "input {name} has shape {:?}, expected {channels} channels and non-empty axes",
                    x.dim()
                )));
            }
            if spatial.is_some_and(|s| s != (b, f, t)) {
                return Err(Error::InvalidInput("graph inputs disagree in batch or spatial shape".into()));
            }
            spatial = Some((b, f, t));
        }
        let n = self.nodes.len();
        let mut values: Vec<Option<Array4<T>>> = vec![None; n];
        let mut bn: Vec<Option<BnCache<T>>> = (0..n).map(|_| None).collect();
        let mut batch_stats = BTreeMap::new();
        for &id in &self.order {
            let node = &self.nodes[id];
            let arg = |k: usize| values[node.inputs[k]].as_ref().expect("topological order").view();
            let y = match &node.op {
                Op::Input { name, .. } => inputs[name].clone(),
                Op::Conv { param, .. } => ops::conv2d_forward(
                    arg(0),
                    store.view4(&format!("{param}.weight")),
                    store.view1(&format!("{param}.bias")),
                ),
                Op::BatchNorm { param, epsilon, .. } => {
                    let x = arg(0);
                    let gamma = store.view1(&format!("{param}.gamma"));
                    let beta = store.view1(&format!("{param}.beta"));
                    let eps = T::of(*epsilon);
                    let (y, cache) = match mode {
                        Mode::Train => {
                            let stats = ops::channel_stats(x);
                            let out = ops::batchnorm_forward(x, gamma, beta, stats.mean.view(), stats.var.view(), eps, true);
                            batch_stats.insert(param.clone(), stats);
                            out
                        }
                        Mode::Inference => {
                            let mean = store.state1(&format!("{param}.running_mean"));
                            let var = store.state1(&format!("{param}.running_var"));
                            ops::batchnorm_forward(x, gamma, beta, mean, var, eps, false)
                        }
                    };
                    bn[id] = Some(cache);
                    y
                }
                Op::Relu => ops::relu_forward(arg(0)),
                Op::Sigmoid => ops::sigmoid_forward(arg(0)),
                Op::Multiply => ops::multiply_forward(arg(0), arg(1)),
                Op::Concat => {
                    let parts: Vec<ArrayView4<T>> = (0..node.inputs.len()).map(arg).collect();
                    ops::concat_forward(&parts)
                }
                Op::StopGradient => arg(0).to_owned(),
            };
            values[id] = Some(y);
        }
        Ok(Trace {
            values: values.into_iter().map(|v| v.expect("all nodes evaluated")).collect(),
            bn,
            batch_stats,
            outputs: self.outputs.clone(),
            mode,
        })
    }

    /// Reverse-mode gradients of `sum_o <grad_o, output_o>` for every
    /// parameter and input. Outputs without an entry in `output_grads` contribute nothing.
    pub fn backward<T: Real>(
        &self,
        store: &ParamStore<T>,
        trace: &Trace<T>,
        output_grads: &BTreeMap<String, Array4<T>>,
    ) -> Result<Grads<T>> {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Array4<T>>> = vec![None; n];
        for (name, g) in output_grads {
            let &id = self
                .outputs
                .get(name)
                .ok_or_else(|| Error::InvalidInput(format!("gradient for unknown output {name}")))?;
            if g.dim() != trace.values[id].dim() {
                return Err(Error::InvalidInput(format!("gradient for {name} has the wrong shape")));
            }
            accumulate(&mut grads[id], g.clone());
        }
        let mut out = Grads::zeros_like(self);
        for &id in self.order.iter().rev() {
            let Some(dy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let x = |k: usize| trace.values[node.inputs[k]].view();
            match &node.op {
                Op::Input { name, .. } => {
                    out.inputs.insert(name.clone(), dy);
                }
                Op::StopGradient => {}
                Op::Conv { param, .. } => {
                    let g = ops::conv2d_backward(x(0), store.view4(&format!("{param}.weight")), dy.view());
                    out.add(&format!("{param}.weight"), g.dw.into_dyn());
                    out.add(&format!("{param}.bias"), g.db.into_dyn());
                    accumulate(&mut grads[node.inputs[0]], g.dx);
                }
                Op::BatchNorm { param, .. } => {
                    let cache = trace.bn[id].as_ref().expect("batchnorm cache");
                    let g = ops::batchnorm_backward(cache, store.view1(&format!("{param}.gamma")), dy.view());
                    out.add(&format!("{param}.gamma"), g.dgamma.into_dyn());
                    out.add(&format!("{param}.beta"), g.dbeta.into_dyn());
                    accumulate(&mut grads[node.inputs[0]], g.dx);
                }
                Op::Relu => accumulate(&mut grads[node.inputs[0]], ops::relu_backward(trace.values[id].view(), dy.view())),
                Op::Sigmoid => accumulate(
                    &mut grads[node.inputs[0]],
                    ops::sigmoid_backward(trace.values[id].view(), dy.view()),
                ),
                Op::Multiply => {
                    let (da, dm) = ops::multiply_backward(x(0), x(1), dy.view());
                    accumulate(&mut grads[node.inputs[0]], da);
                    accumulate(&mut grads[node.inputs[1]], dm);
                }
                Op::Concat => {
                    let channels: Vec<usize> = node.inputs.iter().map(|&i| self.channels[i]).collect();
                    for (&i, part) in node.inputs.iter().zip(ops::concat_backward(&channels, dy.view())) {
                        accumulate(&mut grads[i], part);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn accumulate<T: Real>(slot: &mut Option<Array4<T>>, g: Array4<T>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

fn topological_order(nodes: &[Node]) -> Result<Vec<NodeId>> {
    let n = nodes.len();
    let mut indegree = vec![0usize; n];
    let mut consumers = vec![Vec::new(); n];
    for (id, node) in nodes.iter().enumerate() {
        for &i in &node.inputs {
            indegree[id] += 1;
            consumers[i].push(id);
        }
    }
    let mut ready: std::collections::VecDeque<NodeId> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(id) = ready.pop_front() {
        order.push(id);
        for &c in &consumers[id] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push_back(c);
            }
        }
    }
    if order.len() != n {
        return graph_err("graph contains a cycle");
    }
    Ok(order)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batchnorm.
    Train,
    /// Frozen running statistics.
    Inference,
}

/// Activations of one forward pass, kept for the backward pass.
pub struct Trace<T> {
    values: Vec<Array4<T>>,
    bn: Vec<Option<BnCache<T>>>,
    batch_stats: BTreeMap<String, BnStats<T>>,
    outputs: BTreeMap<String, NodeId>,
    pub mode: Mode,
}

impl<T: Real> Trace<T> {
    pub fn output(&self, name: &str) -> Option<&Array4<T>> {
        self.outputs.get(name).map(|&id| &self.values[id])
    }

    pub fn value(&self, id: NodeId) -> &Array4<T> {
        &self.values[id]
    }

    pub fn outputs(&self) -> BTreeMap<String, Array4<T>> {
        self.outputs
            .iter()
            .map(|(name, &id)| (name.clone(), self.values[id].clone()))
            .collect()
    }

    pub(crate) fn batch_stats(&self) -> &BTreeMap<String, BnStats<T>> {
        &self.batch_stats
    }
}

/// Incremental construction; every check runs in [`GraphBuilder::build`].
#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    outputs: BTreeMap<String, NodeId>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>) -> NodeId {
        self.nodes.push(Node { op, inputs });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, name: &str, channels: usize) -> NodeId {
        self.push(
            Op::Input {
                name: name.into(),
                channels,
            },
            vec![],
        )
    }

    pub fn conv(&mut self, x: NodeId, param: &str, out_channels: usize, kernel_freq: usize, kernel_time: usize) -> NodeId {
        self.push(
            Op::Conv {
                param: param.into(),
                out_channels,
                kernel_freq,
                kernel_time,
            },
            vec![x],
        )
    }

    pub fn batchnorm(&mut self, x: NodeId, param: &str, momentum: f64, epsilon: f64) -> NodeId {
        self.push(
            Op::BatchNorm {
                param: param.into(),
                momentum,
                epsilon,
            },
            vec![x],
        )
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu, vec![x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sigmoid, vec![x])
    }

    pub fn multiply(&mut self, a: NodeId, mask: NodeId) -> NodeId {
        self.push(Op::Multiply, vec![a, mask])
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        self.push(Op::Concat, parts.to_vec())
    }

    pub fn stop_gradient(&mut self, x: NodeId) -> NodeId {
        self.push(Op::StopGradient, vec![x])
    }

    pub fn output(&mut self, name: &str, node: NodeId) {
        self.outputs.insert(name.into(), node);
    }

    pub fn build(self) -> Result<ModelGraph> {
        ModelGraph::new(self.nodes, self.outputs)
    }
}

impl<T: Real> ParamStore<T> {
    pub(crate) fn view4(&self, name: &str) -> ArrayView4<'_, T> {
        self.value(name).view().into_dimensionality::<Ix4>().expect("checked against graph")
    }

    pub(crate) fn view1(&self, name: &str) -> ArrayView1<'_, T> {
        self.value(name).view().into_dimensionality::<Ix1>().expect("checked against graph")
    }

    pub(crate) fn state1(&self, name: &str) -> ArrayView1<'_, T> {
        self.state_value(name)
            .view()
            .into_dimensionality::<Ix1>()
            .expect("checked against graph")
    }
}
