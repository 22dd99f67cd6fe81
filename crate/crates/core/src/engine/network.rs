use serde::{Deserialize, Serialize};

use super::layers::{Aux, LayerSpec};
use super::tensor::Tensor;
use super::{Mode, SeededRng};
use crate::error::{Result, SddsError};

/// One layer application. `inputs` index into the activation list, where
/// index 0 is the network input and index `i + 1` is the output of node `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub layer: LayerSpec,
    pub inputs: Vec<usize>,
}

/// A feed-forward layer graph with optional skip edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    /// Per-sample input shape, e.g. `[64, 64, 1]`.
    pub input_shape: Vec<usize>,
    pub nodes: Vec<Node>,
}

impl Graph {
    pub fn new(input_shape: Vec<usize>) -> Self {
        Self { input_shape, nodes: Vec::new() }
    }

    /// Appends a node fed by the most recent activation and returns its
    /// activation index.
    pub fn push(&mut self, name: impl Into<String>, layer: LayerSpec) -> usize {
        let last = self.nodes.len();
        self.push_with(name, layer, vec![last])
    }

    pub fn push_with(&mut self, name: impl Into<String>, layer: LayerSpec, inputs: Vec<usize>) -> usize {
        self.nodes.push(Node { name: name.into(), layer, inputs });
        self.nodes.len()
    }

    /// Validates wiring and returns the per-sample output shape.
    pub fn validate(&self) -> Result<Vec<usize>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(SddsError::InvalidSpec(format!("input shape {:?}", self.input_shape)));
        }
        let mut shapes: Vec<Vec<usize>> = vec![[&[1], self.input_shape.as_slice()].concat()];
        for (i, node) in self.nodes.iter().enumerate() {
            node.layer.validate()?;
            if node.inputs.len() != node.layer.arity() || node.inputs.iter().any(|&j| j > i) {
                return Err(SddsError::InvalidSpec(format!("bad wiring at node {}", node.name)));
            }
            let ins: Vec<&[usize]> = node.inputs.iter().map(|&j| shapes[j].as_slice()).collect();
            shapes.push(node.layer.output_shape(&ins)?);
        }
        Ok(shapes.pop().unwrap()[1..].to_vec())
    }

    /// Names of all parameter tensors, in graph order.
    pub fn param_names(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for node in &self.nodes {
            let shapes = node.layer.param_shapes();
            if let [w, b] = shapes.as_slice() {
                out.push((format!("{}.weight", node.name), w.clone()));
                out.push((format!("{}.bias", node.name), b.clone()));
            }
        }
        out
    }

    /// Index of the node producing the pre-activation scores, i.e. the input
    /// of a trailing sigmoid/softmax (or the last node when there is none).
    pub fn logit_node(&self) -> usize {
        match self.nodes.last().map(|n| &n.layer) {
            Some(LayerSpec::Sigmoid | LayerSpec::Softmax) => self.nodes.len() - 2,
            _ => self.nodes.len() - 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug)]
struct Tape {
    acts: Vec<Tensor>,
    aux: Vec<Aux>,
}

/// A graph together with its parameters and the record of the last forward pass.
#[derive(Clone, Debug)]
pub struct Network {
    graph: Graph,
    params: Vec<NamedTensor>,
    node_params: Vec<Option<usize>>,
    tape: Option<Tape>,
}

impl Network {
    /// Builds a network with zero-valued parameters.
    pub fn new(graph: Graph) -> Result<Self> {
        graph.validate()?;
        let params = graph
            .param_names()
            .into_iter()
            .map(|(name, shape)| NamedTensor { name, tensor: Tensor::zeros(&shape) })
            .collect();
        let mut node_params = Vec::with_capacity(graph.nodes.len());
        let mut next = 0;
        for node in &graph.nodes {
            if node.layer.param_shapes().is_empty() {
                node_params.push(None);
            } else {
                node_params.push(Some(next));
                next += 2;
            }
        }
        Ok(Self { graph, params, node_params, tape: None })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn params(&self) -> &[NamedTensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.tensor)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn clear_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.clear_grad());
    }

    pub fn clear_tape(&mut self) {
        self.tape = None;
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let shape = batch.shape();
        if shape.len() != self.graph.input_shape.len() + 1 || shape[1..] != self.graph.input_shape[..] {
            return Err(SddsError::Shape(format!(
                "batch {shape:?} does not match model input {:?}",
                self.graph.input_shape
            )));
        }
        Ok(())
    }

    fn node_params(&self, i: usize) -> Vec<&Tensor> {
        match self.node_params[i] {
            Some(p) => vec![&self.params[p].tensor, &self.params[p + 1].tensor],
            None => Vec::new(),
        }
    }

    fn run(&self, batch: &Tensor, mode: Mode, mut rng: Option<&mut SeededRng>) -> Result<Tape> {
        self.check_input(batch)?;
        let mut acts = Vec::with_capacity(self.graph.nodes.len() + 1);
        let mut aux = Vec::with_capacity(self.graph.nodes.len());
        acts.push(batch.clone());
        for (i, node) in self.graph.nodes.iter().enumerate() {
            let ins: Vec<&Tensor> = node.inputs.iter().map(|&j| &acts[j]).collect();
            let (out, a) = node.layer.forward(&ins, &self.node_params(i), mode, rng.as_deref_mut())?;
            out.ensure_finite(&format!("activation of {}", node.name))?;
            acts.push(out);
            aux.push(a);
        }
        Ok(Tape { acts, aux })
    }

    /// Runs the graph, records the computation for a later backward pass and
    /// returns the head output. Train mode needs an rng when dropout is active.
    pub fn forward(&mut self, batch: &Tensor, mode: Mode, rng: Option<&mut SeededRng>) -> Result<Tensor> {
        let tape = self.run(batch, mode, rng)?;
        let out = tape.acts.last().unwrap().clone();
        self.tape = Some(tape);
        Ok(out)
    }

    /// Eval-mode forward that records nothing.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let mut tape = self.run(batch, Mode::Eval, None)?;
        Ok(tape.acts.pop().unwrap())
    }

    /// Eval-mode forward returning the pre-activation scores (see [`Graph::logit_node`]).
    pub fn predict_logits(&self, batch: &Tensor) -> Result<Tensor> {
        self.activation(batch, self.graph.logit_node())
    }

    /// Eval-mode output of node `node`.
    pub fn activation(&self, batch: &Tensor, node: usize) -> Result<Tensor> {
        if node >= self.graph.nodes.len() {
            return Err(SddsError::Shape(format!("node {node} out of range")));
        }
        let mut tape = self.run(batch, Mode::Eval, None)?;
        tape.acts.truncate(node + 2);
        Ok(tape.acts.pop().unwrap())
    }

    /// Backpropagates `loss_grad` (gradient w.r.t. the head output) and
    /// overwrites every parameter's gradient buffer.
    pub fn backward(&mut self, loss_grad: &Tensor) -> Result<()> {
        let last = self.graph.nodes.len() - 1;
        self.backward_from(last, loss_grad).map(|_| ())
    }

    /// Backpropagates a gradient given at the output of `node`, populating
    /// parameter gradients of every node up to it, and returns the gradient
    /// with respect to the network input.
    pub fn backward_from(&mut self, node: usize, grad: &Tensor) -> Result<Tensor> {
        let tape = self.tape.as_ref().ok_or(SddsError::NoTape)?;
        if node >= self.graph.nodes.len() {
            return Err(SddsError::Shape(format!("node {node} out of range")));
        }
        if grad.shape() != tape.acts[node + 1].shape() {
            return Err(SddsError::Shape(format!(
                "loss gradient {:?} for output {:?}",
                grad.shape(),
                tape.acts[node + 1].shape()
            )));
        }
        let mut dacts: Vec<Option<Tensor>> = vec![None; tape.acts.len()];
        dacts[node + 1] = Some(grad.clone());
        let mut param_grads: Vec<Option<Vec<f64>>> = vec![None; self.params.len()];
        for i in (0..=node).rev() {
            let Some(g) = dacts[i + 1].take() else { continue };
            let n = &self.graph.nodes[i];
            let ins: Vec<&Tensor> = n.inputs.iter().map(|&j| &tape.acts[j]).collect();
            let grads = n.layer.backward(&g, &ins, &tape.acts[i + 1], &tape.aux[i], &self.node_params(i))?;
            for (&j, dx) in n.inputs.iter().zip(grads.inputs) {
                match &mut dacts[j] {
                    Some(acc) => acc.data_mut().iter_mut().zip(dx.data()).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(dx),
                }
            }
            if let Some(p) = self.node_params[i] {
                for (k, pg) in grads.params.into_iter().enumerate() {
                    param_grads[p + k] = Some(pg);
                }
            }
        }
        let input_grad = dacts[0].take().unwrap_or_else(|| Tensor::zeros(tape.acts[0].shape()));
        for (p, g) in self.params.iter_mut().zip(param_grads) {
            let g = g.unwrap_or_else(|| vec![0.0; p.tensor.numel()]);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(SddsError::NonFinite(format!("gradient of {}", p.name)));
            }
            p.tensor.set_grad(g)?;
        }
        Ok(input_grad)
    }
}
