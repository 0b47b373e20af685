use std::collections::BTreeMap;

use ndarray::{Array4, ArrayD, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{ModelGraph, Op, Trace};
use super::Real;
use crate::error::{Error, Result};
use crate::io::TensorMap;
use crate::rng;

/// Gradients for every parameter (keyed like [`ParamStore`] values) and
/// for every graph input that received one.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub params: BTreeMap<String, ArrayD<T>>,
    pub inputs: BTreeMap<String, Array4<T>>,
}

impl<T: Real> Grads<T> {
    pub fn zeros_like(graph: &ModelGraph) -> Self {
        Self {
            params: graph
                .param_shapes()
                .into_iter()
                .map(|(k, s)| (k, ArrayD::zeros(IxDyn(&s))))
                .collect(),
            inputs: BTreeMap::new(),
        }
    }

    pub(crate) fn add(&mut self, name: &str, g: ArrayD<T>) {
        *self.params.get_mut(name).expect("gradient slot") += &g;
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<T>> {
        self.params.get(name)
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|a| a.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Trainable parameters with their Adam moments, plus batchnorm running
/// statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    values: BTreeMap<String, ArrayD<T>>,
    m: BTreeMap<String, ArrayD<T>>,
    v: BTreeMap<String, ArrayD<T>>,
    state: BTreeMap<String, ArrayD<T>>,
    pub step: u64,
}

impl<T: Real> ParamStore<T> {
    /// Uniform fan-in initialisation `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`
    /// for conv weights, zero biases, unit batchnorm scale. Each parameter
    /// draws from its own named stream so adding a head leaves the others
    /// unchanged.
    pub fn init(graph: &ModelGraph, seed: u64) -> Self {
        let mut values = BTreeMap::new();
        for (name, shape) in graph.param_shapes() {
            let a = if name.ends_with(".weight") {
                let fan_in: usize = shape[1..].iter().product();
                let limit = (6.0 / fan_in as f64).sqrt();
                let mut r = rng::stream(seed, &name);
                ArrayD::from_shape_simple_fn(IxDyn(&shape), || T::of(r.gen_range(-limit..limit)))
            } else if name.ends_with(".gamma") {
                ArrayD::ones(IxDyn(&shape))
            } else {
                ArrayD::zeros(IxDyn(&shape))
            };
            values.insert(name, a);
        }
        let state = graph
            .state_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let a = if name.ends_with(".running_var") {
                    ArrayD::ones(IxDyn(&shape))
                } else {
                    ArrayD::zeros(IxDyn(&shape))
                };
                (name, a)
            })
            .collect();
        let zeros: BTreeMap<_, _> = values
            .iter()
            .map(|(k, v): (&String, &ArrayD<T>)| (k.clone(), ArrayD::zeros(v.raw_dim())))
            .collect();
        Self {
            values,
            m: zeros.clone(),
            v: zeros,
            state,
            step: 0,
        }
    }

    pub fn value(&self, name: &str) -> &ArrayD<T> {
        &self.values[name]
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut ArrayD<T>> {
        self.values.get_mut(name)
    }

    pub fn state_value(&self, name: &str) -> &ArrayD<T> {
        &self.state[name]
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.values.keys()
    }

    pub fn values(&self) -> &BTreeMap<String, ArrayD<T>> {
        &self.values
    }

    pub fn check_against(&self, graph: &ModelGraph) -> Result<()> {
        let check = |have: &BTreeMap<String, ArrayD<T>>, want: BTreeMap<String, Vec<usize>>, what: &str| -> Result<()> {
            if have.len() != want.len() {
                return Err(Error::Graph(format!(
                    "{what}: store has {} entries, graph needs {}",
                    have.len(),
                    want.len()
                )));
            }
            for (name, shape) in want {
                match have.get(&name) {
                    Some(a) if a.shape() == shape.as_slice() => {}
                    Some(a) => {
                        return Err(Error::Graph(format!("{what} {name}: shape {:?}, graph needs {shape:?}", a.shape())));
                    }
                    None => return Err(Error::Graph(format!("{what} {name} missing from store"))),
                }
            }
            Ok(())
        };
        check(&self.values, graph.param_shapes(), "parameter")?;
        check(&self.m, graph.param_shapes(), "first moment")?;
        check(&self.v, graph.param_shapes(), "second moment")?;
        check(&self.state, graph.state_shapes(), "running statistic")
    }

    /// One bias-corrected Adam update. Non-finite gradients leave the store
    /// untouched and report divergence.
    pub fn adam_step(&mut self, grads: &Grads<T>, cfg: &AdamConfig) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::TrainingDiverged {
                reason: "non-finite gradient".into(),
                history: Vec::new(),
            });
        }
        for (name, g) in &grads.params {
            match self.values.get(name) {
                Some(p) if p.shape() == g.shape() => {}
                _ => return Err(Error::InvalidInput(format!("gradient {name} does not match a parameter"))),
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let c1 = T::of(1.0 - cfg.beta1.powi(t));
        let c2 = T::of(1.0 - cfg.beta2.powi(t));
        let (lr, eps) = (T::of(cfg.lr), T::of(cfg.epsilon));
        for (name, g) in &grads.params {
            let p = self.values.get_mut(name).expect("checked");
            let m = self.m.get_mut(name).expect("one moment per parameter");
            let v = self.v.get_mut(name).expect("one moment per parameter");
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            });
        }
        Ok(())
    }

    /// Exponential moving average of the batch statistics recorded in a
    /// training-mode trace.
    pub fn update_running_stats(&mut self, graph: &ModelGraph, trace: &Trace<T>) {
        for node in graph.nodes() {
            let Op::BatchNorm { param, momentum, .. } = &node.op else {
                continue;
            };
            let Some(stats) = trace.batch_stats().get(param) else { continue };
            let mom = T::of(*momentum);
            for (key, batch) in [("running_mean", &stats.mean), ("running_var", &stats.var_unbiased)] {
                let run = self.state.get_mut(&format!("{param}.{key}")).expect("state slot");
                ndarray::Zip::from(run).and(batch.view().into_dyn()).for_each(|r, &b| {
                    *r = mom * *r + (T::one() - mom) * b;
                });
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let conv = |m: &BTreeMap<String, ArrayD<T>>| -> BTreeMap<String, ArrayD<U>> {
            m.iter().map(|(k, a)| (k.clone(), a.mapv(|x| U::of(x.f64())))).collect()
        };
        ParamStore {
            values: conv(&self.values),
            m: conv(&self.m),
            v: conv(&self.v),
            state: conv(&self.state),
            step: self.step,
        }
    }

    /// Flattens into TNSR entries `param/`, `adam_m/`, `adam_v/`, `state/`.
    pub fn to_tensors(&self) -> TensorMap {
        let mut out = TensorMap::new();
        for (prefix, map) in [
            ("param", &self.values),
            ("adam_m", &self.m),
            ("adam_v", &self.v),
            ("state", &self.state),
        ] {
            for (k, a) in map {
                out.insert(format!("{prefix}/{k}"), a.mapv(|x| x.f64() as f32));
            }
        }
        out
    }

    pub fn from_tensors(tensors: &TensorMap, step: u64, graph: &ModelGraph) -> Result<Self> {
        let mut store = Self {
            values: BTreeMap::new(),
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            state: BTreeMap::new(),
            step,
        };
        for (key, a) in tensors {
            let (prefix, name) = key
                .split_once('/')
                .ok_or_else(|| Error::Format(format!("unexpected tensor entry {key}")))?;
            let map = match prefix {
                "param" => &mut store.values,
                "adam_m" => &mut store.m,
                "adam_v" => &mut store.v,
                "state" => &mut store.state,
                _ => return Err(Error::Format(format!("unexpected tensor entry {key}"))),
            };
            map.insert(name.to_string(), a.mapv(|x| T::of(f64::from(x))));
        }
        store.check_against(graph)?;
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::GraphBuilder;

    fn scalar_graph() -> ModelGraph {
        let mut b = GraphBuilder::new();
        let x = b.input("x", 1);
        let c = b.conv(x, "p", 1, 1, 1);
        b.output("y", c);
        b.build().unwrap()
    }

    fn grad(w: f64) -> Grads<f64> {
        Grads {
            params: BTreeMap::from([
                ("p.weight".to_string(), ArrayD::from_elem(IxDyn(&[1, 1, 1, 1]), w)),
                ("p.bias".to_string(), ArrayD::zeros(IxDyn(&[1]))),
            ]),
            inputs: BTreeMap::new(),
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let g = scalar_graph();
        let mut s = ParamStore::<f64>::init(&g, 1);
        let before = s.clone();
        s.adam_step(&grad(0.0), &AdamConfig::default()).unwrap();
        assert_eq!(s.values, before.values);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_hand_value() {
        // m = 0.05, v = 0.00025, m_hat = 0.5, v_hat = 0.25:
        // update = -0.001 * 0.5 / (0.5 + 1e-8).
        let g = scalar_graph();
        let mut s = ParamStore::<f64>::init(&g, 1);
        let p0 = s.value("p.weight")[[0, 0, 0, 0]];
        s.adam_step(&grad(0.5), &AdamConfig::default()).unwrap();
        let delta = s.value("p.weight")[[0, 0, 0, 0]] - p0;
        assert!((delta - (-0.001 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert!((delta + 0.000_999_999_98).abs() < 1e-13);
    }

    #[test]
    fn constant_gradient_descends_monotonically() {
        let g = scalar_graph();
        let mut s = ParamStore::<f64>::init(&g, 1);
        s.value_mut("p.weight").unwrap().fill(0.0);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut prev = 0.0;
        for _ in 0..20 {
            s.adam_step(&grad(1.0), &cfg).unwrap();
            let p = s.value("p.weight")[[0, 0, 0, 0]];
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn nan_gradient_reports_divergence() {
        let g = scalar_graph();
        let mut s = ParamStore::<f64>::init(&g, 1);
        let before = s.clone();
        let err = s.adam_step(&grad(f64::NAN), &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::TrainingDiverged { .. }));
        assert_eq!(s, before);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let g = scalar_graph();
        assert_eq!(ParamStore::<f32>::init(&g, 5), ParamStore::<f32>::init(&g, 5));
        assert_ne!(ParamStore::<f32>::init(&g, 5), ParamStore::<f32>::init(&g, 6));
        let w = ParamStore::<f64>::init(&g, 5).value("p.weight")[[0, 0, 0, 0]];
        assert!(w.abs() < 6f64.sqrt());
    }

    #[test]
    fn tensor_round_trip() {
        let g = scalar_graph();
        let s = ParamStore::<f32>::init(&g, 2);
        let back = ParamStore::<f32>::from_tensors(&s.to_tensors(), s.step, &g).unwrap();
        assert_eq!(back, s);
    }
}
