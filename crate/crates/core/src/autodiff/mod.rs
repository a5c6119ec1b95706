//! Tape-based reverse-mode differentiation.
//!
//! Every vector-Jacobian product is itself built from graph operations, so the
//! tensors returned by [`Graph::gradient`] are ordinary graph nodes and can be
//! differentiated again. The attack objective relies on this: it compares
//! parameter gradients and then needs the derivative of that comparison with
//! respect to the input image.
//!
//! A [`Graph`] is single-threaded (it hands out `Copy` handles borrowing it).
//! Separate graphs are fully independent and may live on different threads.

pub mod check;
pub(crate) mod kernels;
mod ops;
mod tensor;

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

pub use check::{fd_check, fd_check_subset, FdReport};
pub use kernels::Padding;
pub use tensor::Tensor;

use crate::error::{Error, Result};
use kernels::{ConvGeom, PoolGeom};

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Affine { scale: f64 },
    Recip,
    Sqrt,
    Sigmoid,
    MatMul,
    Transpose,
    Reshape,
    /// View input as `[outer, mid, inner]`, sum over `outer` and `inner`.
    SumKeep { outer: usize, mid: usize, inner: usize },
    /// Adjoint of `SumKeep`: replicate a `[mid]` input over `outer` and `inner`.
    BroadcastKeep { outer: usize, mid: usize, inner: usize },
    Gather { index: Rc<[usize]> },
    ScatterAdd { index: Rc<[usize]> },
    Conv(ConvGeom),
    ConvInputAdjoint(ConvGeom),
    ConvWeightAdjoint(ConvGeom),
    AvgPool(PoolGeom),
    AvgPoolAdjoint(PoolGeom),
    Softmax { cols: usize },
    SoftmaxCrossEntropy { cols: usize, labels: Rc<[usize]> },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Affine { .. } => "affine",
            Op::Recip => "recip",
            Op::Sqrt => "sqrt",
            Op::Sigmoid => "sigmoid",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Reshape => "reshape",
            Op::SumKeep { .. } => "sum",
            Op::BroadcastKeep { .. } => "broadcast",
            Op::Gather { .. } => "gather",
            Op::ScatterAdd { .. } => "scatter_add",
            Op::Conv(_) => "conv2d",
            Op::ConvInputAdjoint(_) => "conv2d_input_adjoint",
            Op::ConvWeightAdjoint(_) => "conv2d_weight_adjoint",
            Op::AvgPool(_) => "avg_pool",
            Op::AvgPoolAdjoint(_) => "avg_pool_adjoint",
            Op::Softmax { .. } => "softmax",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) inputs: Vec<usize>,
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Rc<Vec<f64>>,
}

const KINK_SEED: u64 = 0xcbf2_9ce4_8422_2325;

/// Computation tape. Nodes are appended in evaluation order, so node ids are a
/// topological order of the graph.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    kinks: Cell<u64>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph").field("nodes", &self.len()).finish()
    }
}

/// Handle to a tensor recorded in a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), kinks: Cell::new(KINK_SEED) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops the whole trace. Requires that no [`Var`] is alive.
    pub fn reset(&mut self) {
        self.nodes.get_mut().clear();
        self.kinks.set(KINK_SEED);
    }

    /// Records a tensor as a leaf node (a differentiable input or a constant).
    pub fn leaf(&self, tensor: Tensor) -> Var<'_> {
        let shape = tensor.shape().to_vec();
        let id = self.push_unchecked(Op::Leaf, Vec::new(), shape, tensor.into_data());
        Var { graph: self, id }
    }

    /// Same as [`Graph::leaf`]; reads better for values never differentiated.
    pub fn constant(&self, tensor: Tensor) -> Var<'_> {
        self.leaf(tensor)
    }

    /// Looks up a named input.
    pub fn input<'g>(&'g self, bindings: &Bindings, name: &str) -> Result<Var<'g>> {
        let tensor = bindings
            .get(name)
            .ok_or_else(|| Error::UnboundInput(name.to_string()))?;
        Ok(self.leaf(tensor.clone()))
    }

    /// Hash of every discrete branch taken so far (ReLU masks, |x| signs,
    /// clamp regions, max-pool winners). Two evaluations with equal signatures
    /// lie on the same smooth piece of the function.
    pub fn kink_signature(&self) -> u64 {
        self.kinks.get()
    }

    pub(crate) fn note_branches(&self, branches: impl Iterator<Item = u64>) {
        let mut h = self.kinks.get();
        for b in branches {
            h ^= b.wrapping_add(0x9e37_79b9_7f4a_7c15);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.kinks.set(h);
    }

    fn push_unchecked(&self, op: Op, inputs: Vec<usize>, shape: Vec<usize>, value: Vec<f64>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, inputs, shape, value: Rc::new(value) });
        nodes.len() - 1
    }

    pub(crate) fn push(&self, op: Op, inputs: Vec<usize>, shape: Vec<usize>, value: Vec<f64>) -> Result<Var<'_>> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: op.name() });
        }
        let id = self.push_unchecked(op, inputs, shape, value);
        Ok(Var { graph: self, id })
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Vec<f64>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn shape_of(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].shape.clone()
    }

    fn var(&self, id: usize) -> Var<'_> {
        Var { graph: self, id }
    }

    /// Reverse-mode derivative of a single-element `output` with respect to
    /// each tensor in `wrt`.
    ///
    /// The results are graph nodes: they can be combined further and passed to
    /// `gradient` again.
    pub fn gradient<'g>(&'g self, output: Var<'g>, wrt: &[Var<'g>]) -> Result<Vec<Var<'g>>> {
        if !std::ptr::eq(output.graph, self) {
            return Err(Error::NotInGraph);
        }
        let out_shape = output.shape();
        if out_shape.iter().product::<usize>() != 1 {
            return Err(Error::NotScalar(out_shape));
        }
        for w in wrt {
            if !std::ptr::eq(w.graph, self) || w.id > output.id {
                return Err(Error::NotInGraph);
            }
        }
        let end = output.id + 1;
        let (ancestor, depends) = {
            let nodes = self.nodes.borrow();
            let mut ancestor = vec![false; end];
            ancestor[output.id] = true;
            for id in (0..end).rev() {
                if ancestor[id] {
                    for &input in &nodes[id].inputs {
                        ancestor[input] = true;
                    }
                }
            }
            let mut depends = vec![false; end];
            for w in wrt {
                depends[w.id] = true;
            }
            let start = wrt.iter().map(|w| w.id).min().unwrap_or(end);
            for id in start..end {
                if !depends[id] && nodes[id].inputs.iter().any(|&i| depends[i]) {
                    depends[id] = true;
                }
            }
            (ancestor, depends)
        };
        if wrt.iter().any(|w| !ancestor[w.id]) {
            return Err(Error::NotInGraph);
        }
        let relevant = |id: usize| ancestor[id] && depends[id];

        let mut adjoint: Vec<Option<Var<'g>>> = vec![None; end];
        adjoint[output.id] = Some(self.constant(Tensor::ones(&out_shape)));
        for id in (0..end).rev() {
            if !relevant(id) {
                continue;
            }
            let Some(upstream) = adjoint[id] else { continue };
            let (op, inputs) = {
                let nodes = self.nodes.borrow();
                (nodes[id].op.clone(), nodes[id].inputs.clone())
            };
            if matches!(op, Op::Leaf) {
                continue;
            }
            for (pos, &input) in inputs.iter().enumerate() {
                if !relevant(input) {
                    continue;
                }
                let contribution = ops::vjp(self, id, &op, &inputs, pos, upstream)?;
                adjoint[input] = Some(match adjoint[input] {
                    Some(acc) => acc.add(contribution)?,
                    None => contribution,
                });
            }
        }
        wrt.iter()
            .map(|w| match adjoint[w.id] {
                Some(v) => Ok(v),
                None => Ok(self.constant(Tensor::zeros(&w.shape()))),
            })
            .collect()
    }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.shape_of(self.id)
    }

    pub fn len(&self) -> usize {
        self.graph.nodes.borrow()[self.id].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy of the current value.
    pub fn value(&self) -> Tensor {
        let nodes = self.graph.nodes.borrow();
        let node = &nodes[self.id];
        Tensor::new(node.shape.clone(), node.value.as_ref().clone())
            .expect("graph nodes always hold consistent shapes")
    }

    pub(crate) fn data(&self) -> Rc<Vec<f64>> {
        self.graph.value_of(self.id)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        let data = self.data();
        if data.len() != 1 {
            return Err(Error::NotScalar(self.shape()));
        }
        Ok(data[0])
    }

    fn check_same_graph(&self, other: &Var<'g>) -> Result<()> {
        if std::ptr::eq(self.graph, other.graph) {
            Ok(())
        } else {
            Err(Error::NotInGraph)
        }
    }
}

/// Named input tensors for [`evaluate`].
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    inputs: HashMap<String, Tensor>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(mut self, name: impl Into<String>, tensor: Tensor) -> Self {
        self.inputs.insert(name.into(), tensor);
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.inputs.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.inputs.get(name)
    }
}

/// Builds a fresh graph, lets `build` trace a computation over the bound
/// inputs and returns the value of the traced output.
pub fn evaluate<F>(bindings: &Bindings, build: F) -> Result<Tensor>
where
    F: for<'g> FnOnce(&'g Graph, &Bindings) -> Result<Var<'g>>,
{
    let graph = Graph::new();
    let out = build(&graph, bindings)?;
    Ok(out.value())
}
