//! Differentiable primitives and their vector-Jacobian products.
//!
//! Branching primitives (ReLU, |x|, clamp, max-pool) are recorded as a product
//! with a constant mask or as a gather with constant indices. Their derivative
//! is then exact away from the kink and the branch choice itself contributes
//! nothing to higher derivatives. At a kink the mask selects the zero branch,
//! so ReLU'(0) = |.|'(0) = 0 consistently at every order.

use std::rc::Rc;

use super::kernels::{self, ConvGeom, Padding, PoolGeom};
use super::{Graph, Op, Tensor, Var};
use crate::error::{Error, Result};

fn mismatch(op: &'static str, lhs: Vec<usize>, rhs: Vec<usize>) -> Error {
    Error::ShapeMismatch { op, lhs, rhs }
}

impl<'g> Var<'g> {
    fn binary(self, other: Var<'g>, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'g>> {
        self.check_same_graph(&other)?;
        let (sa, sb) = (self.shape(), other.shape());
        if sa != sb {
            return Err(mismatch(op.name(), sa, sb));
        }
        let (a, b) = (self.data(), other.data());
        let value = a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect();
        self.graph.push(op, vec![self.id, other.id], sa, value)
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'g>> {
        let value = self.data().iter().map(|&x| f(x)).collect();
        self.graph.push(op, vec![self.id], self.shape(), value)
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Op::Sub, |a, b| a - b)
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.binary(other, Op::Mul, |a, b| a * b)
    }

    /// `scale * x + shift`.
    pub fn affine(self, scale: f64, shift: f64) -> Result<Var<'g>> {
        self.unary(Op::Affine { scale }, |x| scale * x + shift)
    }

    pub fn scale(self, factor: f64) -> Result<Var<'g>> {
        self.affine(factor, 0.0)
    }

    pub fn neg(self) -> Result<Var<'g>> {
        self.affine(-1.0, 0.0)
    }

    pub fn recip(self) -> Result<Var<'g>> {
        self.unary(Op::Recip, |x| 1.0 / x)
    }

    pub fn sqrt(self) -> Result<Var<'g>> {
        self.unary(Op::Sqrt, f64::sqrt)
    }

    pub fn sigmoid(self) -> Result<Var<'g>> {
        self.unary(Op::Sigmoid, |x| 1.0 / (1.0 + (-x).exp()))
    }

    fn masked(self, mask: Vec<f64>) -> Result<Var<'g>> {
        let mask = self.graph.constant(Tensor::new(self.shape(), mask)?);
        self.mul(mask)
    }

    pub fn relu(self) -> Result<Var<'g>> {
        let data = self.data();
        self.graph.note_branches(data.iter().map(|&x| (x > 0.0) as u64));
        let mask = data.iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect();
        self.masked(mask)
    }

    pub fn abs(self) -> Result<Var<'g>> {
        let data = self.data();
        let sign: Vec<f64> = data
            .iter()
            .map(|&x| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 })
            .collect();
        self.graph.note_branches(sign.iter().map(|&s| (s + 1.0) as u64));
        self.masked(sign)
    }

    /// Elementwise clamp into `[lo, hi]`; derivative 1 strictly inside.
    pub fn clamp(self, lo: f64, hi: f64) -> Result<Var<'g>> {
        if lo > hi {
            return Err(Error::InvalidArgument(format!("clamp bounds {lo} > {hi}")));
        }
        let data = self.data();
        let region: Vec<u64> = data
            .iter()
            .map(|&x| if x < lo { 0 } else if x > hi { 2 } else { 1 })
            .collect();
        self.graph.note_branches(region.iter().copied());
        let inside = region.iter().map(|&r| if r == 1 { 1.0 } else { 0.0 }).collect();
        let outside = data
            .iter()
            .zip(&region)
            .map(|(&x, &r)| if r == 1 { 0.0 } else { x.clamp(lo, hi) })
            .collect();
        let kept = self.masked(inside)?;
        kept.add(self.graph.constant(Tensor::new(self.shape(), outside)?))
    }

    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.check_same_graph(&other)?;
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (a, b) = (self.data(), other.data());
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, &a, k, 1, &b, n, 1, 0.0, &mut out);
        self.graph.push(Op::MatMul, vec![self.id, other.id], vec![m, n], out)
    }

    /// Transpose of a matrix.
    pub fn t(self) -> Result<Var<'g>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::InvalidShape(format!("transpose needs a matrix, got {s:?}")));
        }
        let out = kernels::transpose(&self.data(), s[0], s[1]);
        self.graph.push(Op::Transpose, vec![self.id], vec![s[1], s[0]], out)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        if shape.iter().product::<usize>() != self.len() || shape.contains(&0) {
            return Err(mismatch("reshape", self.shape(), shape.to_vec()));
        }
        let value = self.data().as_ref().clone();
        self.graph.push(Op::Reshape, vec![self.id], shape.to_vec(), value)
    }

    /// Collapses all but the leading (batch) dimension.
    pub fn flatten(self) -> Result<Var<'g>> {
        let s = self.shape();
        let rest: usize = s[1..].iter().product();
        self.reshape(&[s[0], rest])
    }

    /// Views the tensor as `[outer, mid, inner]` and sums over `outer` and
    /// `inner`, returning shape `[mid]`.
    pub fn sum_keep(self, outer: usize, mid: usize, inner: usize) -> Result<Var<'g>> {
        if outer * mid * inner != self.len() {
            return Err(mismatch("sum_keep", self.shape(), vec![outer, mid, inner]));
        }
        let data = self.data();
        let mut out = vec![0.0; mid];
        for o in 0..outer {
            for (m, acc) in out.iter_mut().enumerate() {
                let base = (o * mid + m) * inner;
                *acc += data[base..base + inner].iter().sum::<f64>();
            }
        }
        self.graph.push(Op::SumKeep { outer, mid, inner }, vec![self.id], vec![mid], out)
    }

    /// Replicates a `[mid]` tensor into `shape`, viewed as `[outer, mid, inner]`.
    pub fn broadcast_keep(self, outer: usize, mid: usize, inner: usize, shape: &[usize]) -> Result<Var<'g>> {
        if self.len() != mid || shape.iter().product::<usize>() != outer * mid * inner {
            return Err(mismatch("broadcast_keep", self.shape(), shape.to_vec()));
        }
        let data = self.data();
        let mut out = Vec::with_capacity(outer * mid * inner);
        for _ in 0..outer {
            for &v in data.iter() {
                out.extend(std::iter::repeat_n(v, inner));
            }
        }
        self.graph.push(Op::BroadcastKeep { outer, mid, inner }, vec![self.id], shape.to_vec(), out)
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(self) -> Result<Var<'g>> {
        self.sum_keep(1, 1, self.len())
    }

    pub fn mean(self) -> Result<Var<'g>> {
        let n = self.len() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Broadcasts a single-element tensor to `shape`.
    pub fn expand(self, shape: &[usize]) -> Result<Var<'g>> {
        if self.len() != 1 {
            return Err(Error::NotScalar(self.shape()));
        }
        self.broadcast_keep(1, 1, shape.iter().product(), shape)
    }

    /// Multiplies every entry by a single-element tensor.
    pub fn mul_scalar(self, s: Var<'g>) -> Result<Var<'g>> {
        let shape = self.shape();
        self.mul(s.expand(&shape)?)
    }

    pub fn dot(self, other: Var<'g>) -> Result<Var<'g>> {
        self.mul(other)?.sum()
    }

    pub fn l2_norm(self) -> Result<Var<'g>> {
        self.dot(self)?.sqrt()
    }

    /// `out[j] = x[index[j]]` over the flattened input.
    pub fn gather(self, index: Rc<[usize]>, shape: &[usize]) -> Result<Var<'g>> {
        let data = self.data();
        if shape.iter().product::<usize>() != index.len() || index.iter().any(|&i| i >= data.len()) {
            return Err(Error::InvalidArgument("gather index out of range".into()));
        }
        let out = index.iter().map(|&i| data[i]).collect();
        self.graph.push(Op::Gather { index }, vec![self.id], shape.to_vec(), out)
    }

    /// `out[index[j]] += x[j]` into a zero tensor of `shape`.
    pub fn scatter_add(self, index: Rc<[usize]>, shape: &[usize]) -> Result<Var<'g>> {
        let len: usize = shape.iter().product();
        if index.len() != self.len() || index.iter().any(|&i| i >= len) {
            return Err(Error::InvalidArgument("scatter index out of range".into()));
        }
        let data = self.data();
        let mut out = vec![0.0; len];
        for (&i, &v) in index.iter().zip(data.iter()) {
            out[i] += v;
        }
        self.graph.push(Op::ScatterAdd { index }, vec![self.id], shape.to_vec(), out)
    }

    /// Selects entries of the leading axis.
    pub fn select_outer(self, rows: &[usize]) -> Result<Var<'g>> {
        let shape = self.shape();
        let inner: usize = shape[1..].iter().product();
        if rows.iter().any(|&r| r >= shape[0]) {
            return Err(Error::InvalidArgument(format!("row index out of range for {shape:?}")));
        }
        let index: Rc<[usize]> = rows.iter().flat_map(|&r| r * inner..(r + 1) * inner).collect();
        let mut out_shape = shape;
        out_shape[0] = rows.len();
        self.gather(index, &out_shape)
    }

    /// 2-D convolution of an `N x C x H x W` batch with an `O x C x kh x kw`
    /// kernel (cross-correlation, as in common deep-learning frameworks).
    pub fn conv2d(self, weight: Var<'g>, stride: usize, pad: usize, padding: Padding) -> Result<Var<'g>> {
        self.check_same_graph(&weight)?;
        let geom = ConvGeom::new(&self.shape(), &weight.shape(), stride, pad, padding)
            .ok_or_else(|| mismatch("conv2d", self.shape(), weight.shape()))?;
        self.conv_with(weight, geom)
    }

    fn conv_with(self, weight: Var<'g>, geom: ConvGeom) -> Result<Var<'g>> {
        let out = kernels::conv2d(&self.data(), &weight.data(), &geom);
        self.graph.push(Op::Conv(geom), vec![self.id, weight.id], geom.output_shape(), out)
    }

    fn conv_input_adjoint(self, weight: Var<'g>, geom: ConvGeom) -> Result<Var<'g>> {
        let out = kernels::conv2d_input_adjoint(&self.data(), &weight.data(), &geom);
        self.graph
            .push(Op::ConvInputAdjoint(geom), vec![self.id, weight.id], geom.input_shape(), out)
    }

    fn conv_weight_adjoint(self, gy: Var<'g>, geom: ConvGeom) -> Result<Var<'g>> {
        let out = kernels::conv2d_weight_adjoint(&self.data(), &gy.data(), &geom);
        self.graph
            .push(Op::ConvWeightAdjoint(geom), vec![self.id, gy.id], geom.weight_shape(), out)
    }

    /// Adds a per-channel bias to an `N x C x ...` tensor.
    pub fn add_channel_bias(self, bias: Var<'g>) -> Result<Var<'g>> {
        let shape = self.shape();
        if shape.len() < 2 || bias.len() != shape[1] {
            return Err(mismatch("add_channel_bias", shape, bias.shape()));
        }
        let inner: usize = shape[2..].iter().product();
        let b = bias.broadcast_keep(shape[0], shape[1], inner, &shape)?;
        self.add(b)
    }

    pub fn max_pool(self, kernel: usize, stride: usize) -> Result<Var<'g>> {
        let shape = self.shape();
        let geom = PoolGeom::new(&shape, kernel, stride)
            .ok_or_else(|| Error::InvalidShape(format!("max_pool {kernel}/{stride} on {shape:?}")))?;
        let index = kernels::max_pool_indices(&self.data(), &geom);
        self.graph.note_branches(index.iter().map(|&i| i as u64));
        self.gather(index.into(), &[shape[0], shape[1], geom.out_h, geom.out_w])
    }

    pub fn avg_pool(self, kernel: usize, stride: usize) -> Result<Var<'g>> {
        let shape = self.shape();
        let geom = PoolGeom::new(&shape, kernel, stride)
            .ok_or_else(|| Error::InvalidShape(format!("avg_pool {kernel}/{stride} on {shape:?}")))?;
        let out = kernels::avg_pool(&self.data(), &geom);
        self.graph
            .push(Op::AvgPool(geom), vec![self.id], vec![shape[0], shape[1], geom.out_h, geom.out_w], out)
    }

    fn avg_pool_adjoint(self, geom: PoolGeom, shape: Vec<usize>) -> Result<Var<'g>> {
        let out = kernels::avg_pool_adjoint(&self.data(), &geom);
        self.graph.push(Op::AvgPoolAdjoint(geom), vec![self.id], shape, out)
    }

    /// Mean over the spatial dimensions: `N x C x H x W -> N x C`.
    pub fn global_avg_pool(self) -> Result<Var<'g>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::InvalidShape(format!("global_avg_pool needs NCHW, got {s:?}")));
        }
        let hw = s[2] * s[3];
        self.sum_keep(1, s[0] * s[1], hw)?.scale(1.0 / hw as f64)?.reshape(&[s[0], s[1]])
    }

    /// Batch normalization with per-batch statistics over every axis except
    /// the channel axis (axis 1).
    pub fn batch_norm(self, gamma: Var<'g>, beta: Var<'g>, eps: f64) -> Result<Var<'g>> {
        let shape = self.shape();
        if shape.len() < 2 || gamma.len() != shape[1] || beta.len() != shape[1] {
            return Err(mismatch("batch_norm", shape, gamma.shape()));
        }
        let (n, c) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let count = (n * inner) as f64;
        let mean = self.sum_keep(n, c, inner)?.scale(1.0 / count)?;
        let centered = self.sub(mean.broadcast_keep(n, c, inner, &shape)?)?;
        let var = centered.mul(centered)?.sum_keep(n, c, inner)?.scale(1.0 / count)?;
        let inv_std = var.affine(1.0, eps)?.sqrt()?.recip()?;
        let scale = inv_std.mul(gamma)?;
        let normalized = centered.mul(scale.broadcast_keep(n, c, inner, &shape)?)?;
        normalized.add(beta.broadcast_keep(n, c, inner, &shape)?)
    }

    /// Row-wise softmax of an `N x K` matrix.
    pub fn softmax(self) -> Result<Var<'g>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(Error::InvalidShape(format!("softmax needs N x K, got {s:?}")));
        }
        let out = kernels::softmax_rows(&self.data(), s[1]);
        self.graph.push(Op::Softmax { cols: s[1] }, vec![self.id], s, out)
    }

    /// Mean softmax cross-entropy of `N x K` logits against `labels`.
    pub fn softmax_cross_entropy(self, labels: &[usize]) -> Result<Var<'g>> {
        let s = self.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(mismatch("softmax_cross_entropy", s, vec![labels.len()]));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= s[1]) {
            return Err(Error::LabelOutOfRange { label, classes: s[1] });
        }
        let loss = kernels::softmax_cross_entropy(&self.data(), s[1], labels);
        self.graph.push(
            Op::SoftmaxCrossEntropy { cols: s[1], labels: labels.into() },
            vec![self.id],
            vec![1],
            vec![loss],
        )
    }
}

fn one_hot(rows: usize, cols: usize, labels: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(&[rows, cols]);
    for (r, &l) in labels.iter().enumerate() {
        t.data_mut()[r * cols + l] = 1.0;
    }
    t
}

/// Contribution of node `id` to the adjoint of its `pos`-th input, given the
/// node's adjoint `g`. Only graph operations are used, so the result can be
/// differentiated again.
pub(super) fn vjp<'g>(
    graph: &'g Graph,
    id: usize,
    op: &Op,
    inputs: &[usize],
    pos: usize,
    g: Var<'g>,
) -> Result<Var<'g>> {
    let input = |i: usize| graph.var(inputs[i]);
    let output = graph.var(id);
    match op {
        Op::Leaf => unreachable!("leaves have no inputs"),
        Op::Add => Ok(g),
        Op::Sub => {
            if pos == 0 {
                Ok(g)
            } else {
                g.neg()
            }
        }
        Op::Mul => g.mul(input(1 - pos)),
        Op::Affine { scale, .. } => g.scale(*scale),
        Op::Recip => g.mul(output.mul(output)?.neg()?),
        Op::Sqrt => g.mul(output.recip()?.scale(0.5)?),
        Op::Sigmoid => g.mul(output.mul(output.affine(-1.0, 1.0)?)?),
        Op::MatMul => {
            if pos == 0 {
                g.matmul(input(1).t()?)
            } else {
                input(0).t()?.matmul(g)
            }
        }
        Op::Transpose => g.t(),
        Op::Reshape => g.reshape(&graph.shape_of(inputs[0])),
        Op::SumKeep { outer, mid, inner } => {
            g.broadcast_keep(*outer, *mid, *inner, &graph.shape_of(inputs[0]))
        }
        Op::BroadcastKeep { outer, mid, inner } => {
            g.sum_keep(*outer, *mid, *inner)?.reshape(&graph.shape_of(inputs[0]))
        }
        Op::Gather { index } => g.scatter_add(Rc::clone(index), &graph.shape_of(inputs[0])),
        Op::ScatterAdd { index } => g.gather(Rc::clone(index), &graph.shape_of(inputs[0])),
        Op::Conv(geom) => {
            if pos == 0 {
                g.conv_input_adjoint(input(1), *geom)
            } else {
                input(0).conv_weight_adjoint(g, *geom)
            }
        }
        // inputs: (gy, w); output lives on the input grid
        Op::ConvInputAdjoint(geom) => {
            if pos == 0 {
                g.conv_with(input(1), *geom)
            } else {
                g.conv_weight_adjoint(input(0), *geom)
            }
        }
        // inputs: (x, gy); output lives on the weight grid
        Op::ConvWeightAdjoint(geom) => {
            if pos == 0 {
                input(1).conv_input_adjoint(g, *geom)
            } else {
                input(0).conv_with(g, *geom)
            }
        }
        Op::AvgPool(geom) => g.avg_pool_adjoint(*geom, graph.shape_of(inputs[0])),
        Op::AvgPoolAdjoint(geom) => {
            let out = kernels::avg_pool(&g.data(), geom);
            graph.push(Op::AvgPool(*geom), vec![g.id], graph.shape_of(inputs[0]), out)
        }
        Op::Softmax { cols } => {
            let rows = output.len() / cols;
            let shape = output.shape();
            let weighted = g.mul(output)?.sum_keep(1, rows, *cols)?;
            let centered = g.sub(weighted.broadcast_keep(1, rows, *cols, &shape)?)?;
            output.mul(centered)
        }
        Op::SoftmaxCrossEntropy { cols, labels } => {
            let x = input(0);
            let shape = x.shape();
            let rows = shape[0];
            let target = graph.constant(one_hot(rows, *cols, labels));
            let residual = x.softmax()?.sub(target)?.scale(1.0 / rows as f64)?;
            residual.mul_scalar(g)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf<'g>(g: &'g Graph, shape: &[usize], data: &[f64]) -> Var<'g> {
        g.leaf(Tensor::new(shape.to_vec(), data.to_vec()).unwrap())
    }

    #[test]
    fn relu_forward() {
        let g = Graph::new();
        let x = leaf(&g, &[2], &[-1.0, 2.0]);
        assert_eq!(x.relu().unwrap().value().data(), &[0.0, 2.0]);
    }

    #[test]
    fn identity_convolution() {
        let g = Graph::new();
        let img: Vec<f64> = (0..2 * 3 * 3).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = leaf(&g, &[1, 2, 3, 3], &img);
        let w = leaf(&g, &[2, 2, 1, 1], &[1.0, 0.0, 0.0, 1.0]);
        let b = leaf(&g, &[2], &[0.0, 0.0]);
        let y = x.conv2d(w, 1, 0, Padding::Zero).unwrap().add_channel_bias(b).unwrap();
        assert_eq!(y.value().data(), img.as_slice());
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let g = Graph::new();
        let x = leaf(&g, &[1, 10], &[0.3; 10]);
        let loss = x.softmax_cross_entropy(&[4]).unwrap().item().unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn square_derivative() {
        let g = Graph::new();
        let x = leaf(&g, &[1], &[3.0]);
        let y = x.mul(x).unwrap();
        let dx = g.gradient(y, &[x]).unwrap()[0];
        assert_eq!(dx.item().unwrap(), 6.0);
    }

    #[test]
    fn second_derivative_of_cube() {
        let g = Graph::new();
        let x = leaf(&g, &[1], &[2.0]);
        let cube = x.mul(x).unwrap().mul(x).unwrap();
        let first = g.gradient(cube, &[x]).unwrap()[0];
        assert_eq!(first.item().unwrap(), 12.0);
        let second = g.gradient(first, &[x]).unwrap()[0];
        assert_eq!(second.item().unwrap(), 12.0);
    }

    #[test]
    fn non_scalar_output_rejected() {
        let g = Graph::new();
        let x = leaf(&g, &[2], &[1.0, 2.0]);
        let y = x.mul(x).unwrap();
        assert!(matches!(g.gradient(y, &[x]), Err(Error::NotScalar(_))));
    }

    #[test]
    fn foreign_tensor_rejected() {
        let g = Graph::new();
        let other = Graph::new();
        let x = leaf(&g, &[1], &[1.0]);
        let z = leaf(&other, &[1], &[1.0]);
        let y = x.mul(x).unwrap();
        assert!(matches!(g.gradient(y, &[z]), Err(Error::NotInGraph)));
        // a later node never feeds an earlier output
        let later = leaf(&g, &[1], &[5.0]);
        assert!(matches!(g.gradient(y, &[later]), Err(Error::NotInGraph)));
    }

    #[test]
    fn shape_mismatch_and_non_finite_are_errors() {
        let g = Graph::new();
        let a = leaf(&g, &[2], &[1.0, 0.0]);
        let b = leaf(&g, &[3], &[1.0, 2.0, 3.0]);
        assert!(matches!(a.add(b), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(a.recip(), Err(Error::NonFinite { op: "recip" })));
    }

    #[test]
    fn abs_has_zero_derivative_at_zero() {
        let g = Graph::new();
        let x = leaf(&g, &[3], &[-2.0, 0.0, 1.5]);
        let y = x.abs().unwrap().sum().unwrap();
        let dx = g.gradient(y, &[x]).unwrap()[0].value();
        assert_eq!(dx.data(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn clamp_values_and_derivative() {
        let g = Graph::new();
        let x = leaf(&g, &[3], &[-0.5, 0.5, 1.5]);
        let y = x.clamp(0.0, 1.0).unwrap();
        assert_eq!(y.value().data(), &[0.0, 0.5, 1.0]);
        let dx = g.gradient(y.sum().unwrap(), &[x]).unwrap()[0].value();
        assert_eq!(dx.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn batch_norm_normalizes_channels() {
        let g = Graph::new();
        let data: Vec<f64> = (0..2 * 3 * 2 * 2).map(|i| (i as f64 * 0.9).cos() * 3.0 + 1.0).collect();
        let x = leaf(&g, &[2, 3, 2, 2], &data);
        let gamma = leaf(&g, &[3], &[1.0; 3]);
        let beta = leaf(&g, &[3], &[0.0; 3]);
        let y = x.batch_norm(gamma, beta, 1e-5).unwrap().value();
        for c in 0..3 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|n| (0..4).map(move |p| (n, p)))
                .map(|(n, p)| y.data()[(n * 3 + c) * 4 + p])
                .collect();
            let mean = vals.iter().sum::<f64>() / 8.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}
