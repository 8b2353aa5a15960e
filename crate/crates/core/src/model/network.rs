use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::graph::{GraphDocument, LayerKind, NetworkGraph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::ops::{self, BnMode, RunningStats};
use crate::tensor::{
    fan_in_uniform, param_rng, ParamId, ParamStore, Parameter, Scalar, Tape, Tensor, Var,
};

/// A graph with materialized parameters and BatchNorm running statistics.
#[derive(Clone, Debug)]
pub struct Model<T> {
    graph: NetworkGraph,
    params: ParamStore<T>,
    node_params: Vec<Vec<ParamId>>,
    bn_stats: Vec<Option<RunningStats<T>>>,
}

impl<T: Scalar> Model<T> {
    /// Weights are fan-in uniform from a per-parameter stream of `seed`;
    /// biases and BatchNorm shifts start at zero, BatchNorm scales at one.
    pub fn init(graph: NetworkGraph, seed: u64) -> Self {
        let mut params = ParamStore::new();
        let mut node_params = Vec::with_capacity(graph.len());
        let mut bn_stats = Vec::with_capacity(graph.len());
        for node in graph.nodes() {
            let ids = node
                .kind
                .param_shapes()
                .into_iter()
                .map(|(pname, shape)| {
                    let full = format!("{}.{pname}", node.name);
                    let value = match pname {
                        "weight" => {
                            let fan_in = shape.c * shape.h * shape.w;
                            fan_in_uniform(shape, fan_in, &mut param_rng(seed, &full))
                        }
                        "gamma" => Tensor::full(shape, T::one()),
                        _ => Tensor::zeros(shape),
                    };
                    params.add(Parameter::new(full, value))
                })
                .collect();
            node_params.push(ids);
            bn_stats.push(match node.kind {
                LayerKind::BatchNorm { c } => Some(RunningStats::new(c)),
                _ => None,
            });
        }
        Self {
            graph,
            params,
            node_params,
            bn_stats,
        }
    }

    pub fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn node_params(&self, id: NodeId) -> &[ParamId] {
        &self.node_params[id]
    }

    pub fn running_stats(&self, id: NodeId) -> Option<&RunningStats<T>> {
        self.bn_stats[id].as_ref()
    }

    fn exec_err(&self, id: NodeId, reason: impl ToString) -> Error {
        Error::Exec {
            node: id,
            name: self.graph.node(id).name.clone(),
            reason: reason.to_string(),
        }
    }

    fn check_inputs(&self, id: NodeId, inputs: &[&Tensor<T>]) -> Result<()> {
        let node = self.graph.node(id);
        let expected: Vec<_> = match node.kind {
            LayerKind::Input { .. } => vec![self.graph.input_shape()],
            _ => node
                .inputs
                .iter()
                .map(|&src| self.graph.shape(src))
                .collect(),
        };
        if inputs.len() != expected.len() {
            return Err(self.exec_err(
                id,
                format!("expected {} inputs, got {}", expected.len(), inputs.len()),
            ));
        }
        for (t, want) in inputs.iter().zip(&expected) {
            if !t.shape().same_sample(want) {
                return Err(self.exec_err(
                    id,
                    format!("input shape {} does not match annotation {want}", t.shape()),
                ));
            }
        }
        if inputs.len() == 2 && inputs[0].shape().n != inputs[1].shape().n {
            return Err(self.exec_err(id, "operands disagree on batch size"));
        }
        Ok(())
    }

    /// Evaluates one node in inference mode. For the input node, `inputs`
    /// is the external tensor.
    pub fn eval_node(&self, id: NodeId, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        self.check_inputs(id, inputs)?;
        let p = &self.node_params[id];
        let value = |i: usize| self.params.value(p[i]);
        let out = match self.graph.node(id).kind {
            LayerKind::Input { .. } => Ok(inputs[0].clone()),
            LayerKind::Conv2d { stride, pad, .. } => {
                ops::conv2d_forward(inputs[0], value(0), value(1), stride, pad)
            }
            LayerKind::BottleneckEncode { .. } | LayerKind::BottleneckDecode { .. } => {
                ops::conv2d_forward(inputs[0], value(0), value(1), 1, 0)
            }
            LayerKind::BatchNorm { .. } => {
                let stats = self.bn_stats[id]
                    .as_ref()
                    .expect("batch norm node has stats");
                ops::batchnorm_eval(inputs[0], value(0), value(1), stats).map(|(y, _)| y)
            }
            LayerKind::Relu => Ok(ops::relu_forward(inputs[0])),
            LayerKind::ResidualAdd => ops::residual_add(inputs[0], inputs[1]),
            LayerKind::GlobalAvgPool => Ok(ops::global_avg_pool(inputs[0])),
            LayerKind::LinearHead { .. } => ops::linear_forward(inputs[0], value(0), value(1)),
        };
        out.map_err(|e| self.exec_err(id, e))
    }

    /// Inference-mode forward pass of the whole graph.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_observed(x, |_, _| {})
    }

    /// Like [`Model::forward`], calling `observe` with every node's output as
    /// it is produced.
    pub fn forward_observed(
        &self,
        x: &Tensor<T>,
        mut observe: impl FnMut(NodeId, &Tensor<T>),
    ) -> Result<Tensor<T>> {
        let g = &self.graph;
        let mut remaining: Vec<usize> = (0..g.len()).map(|i| g.consumers(i).len()).collect();
        let mut values: Vec<Option<Tensor<T>>> = vec![None; g.len()];
        for node in g.nodes() {
            let out = if node.id == g.input() {
                self.eval_node(node.id, &[x])?
            } else {
                let ins: Vec<&Tensor<T>> = node
                    .inputs
                    .iter()
                    .map(|&s| values[s].as_ref().expect("producer evaluated"))
                    .collect();
                self.eval_node(node.id, &ins)?
            };
            observe(node.id, &out);
            for &s in &node.inputs {
                remaining[s] -= 1;
                if remaining[s] == 0 {
                    values[s] = None;
                }
            }
            values[node.id] = Some(out);
        }
        Ok(values[g.output()].take().expect("output evaluated"))
    }

    /// Records a training-mode forward pass on `tape` and returns the logits.
    /// BatchNorm layers use batch statistics and update their running stats.
    pub fn forward_train(&mut self, tape: &mut Tape<T>, x: Tensor<T>) -> Result<Var> {
        self.check_inputs(self.graph.input(), &[&x])?;
        let mut vars: Vec<Option<Var>> = vec![None; self.graph.len()];
        for id in 0..self.graph.len() {
            let node = self.graph.node(id);
            let ins: Vec<Var> = node
                .inputs
                .iter()
                .map(|&s| vars[s].expect("producer recorded"))
                .collect();
            let p = &self.node_params[id];
            let var = match node.kind {
                LayerKind::Input { .. } => Ok(tape.input(x.clone())),
                LayerKind::Conv2d { stride, pad, .. } => {
                    tape.conv2d(&self.params, ins[0], p[0], p[1], stride, pad)
                }
                LayerKind::BottleneckEncode { .. } | LayerKind::BottleneckDecode { .. } => {
                    tape.conv2d(&self.params, ins[0], p[0], p[1], 1, 0)
                }
                LayerKind::BatchNorm { .. } => {
                    let stats = self.bn_stats[id]
                        .as_mut()
                        .expect("batch norm node has stats");
                    tape.batch_norm(&self.params, ins[0], p[0], p[1], stats, BnMode::Train)
                }
                LayerKind::Relu => Ok(tape.relu(ins[0])),
                LayerKind::ResidualAdd => tape.add(ins[0], ins[1]),
                LayerKind::GlobalAvgPool => Ok(tape.global_avg_pool(ins[0])),
                LayerKind::LinearHead { .. } => tape.linear(&self.params, ins[0], p[0], p[1]),
            };
            vars[id] = Some(var.map_err(|e| self.exec_err(id, e))?);
        }
        Ok(vars[self.graph.output()].expect("output recorded"))
    }
}

/// Serialized model state: the graph document, every parameter by name and
/// the BatchNorm running statistics by node name. Values are stored as f64
/// whatever the model precision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub graph: GraphDocument,
    pub params: BTreeMap<String, Vec<f64>>,
    pub running_stats: BTreeMap<String, RunningStatsDocument>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStatsDocument {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl<T: Scalar> Model<T> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let as_f64 = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        Checkpoint {
            graph: self.graph.to_document(),
            params: self
                .params
                .iter()
                .map(|p| (p.name.clone(), as_f64(p.value.data())))
                .collect(),
            running_stats: self
                .graph
                .nodes()
                .iter()
                .filter_map(|n| {
                    self.bn_stats[n.id].as_ref().map(|s| {
                        (
                            n.name.clone(),
                            RunningStatsDocument {
                                mean: as_f64(&s.mean),
                                var: as_f64(&s.var),
                            },
                        )
                    })
                })
                .collect(),
        }
    }

    /// Rebuilds a model from a checkpoint. Every parameter and running
    /// statistic must be present with the length its shape implies.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let graph = NetworkGraph::from_json(&serde_json::to_string(&ck.graph)?)?;
        let mut model = Self::init(graph, 0);
        let cast = |v: &[f64]| v.iter().map(|&x| T::of(x)).collect::<Vec<T>>();
        for p in model.params.iter_mut() {
            let values = ck
                .params
                .get(&p.name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {}", p.name)))?;
            p.value = Tensor::new(p.value.shape(), cast(values))
                .map_err(|e| Error::Format(format!("parameter {}: {e}", p.name)))?;
        }
        for node in model.graph.nodes() {
            if let Some(stats) = model.bn_stats[node.id].as_mut() {
                let doc = ck.running_stats.get(&node.name).ok_or_else(|| {
                    Error::Format(format!("checkpoint lacks running stats for {}", node.name))
                })?;
                if doc.mean.len() != stats.mean.len() || doc.var.len() != stats.var.len() {
                    return Err(Error::Format(format!(
                        "running stats for {} have the wrong length",
                        node.name
                    )));
                }
                stats.mean = cast(&doc.mean);
                stats.var = cast(&doc.var);
            }
        }
        Ok(model)
    }
}
