//! Tape-based reverse-mode automatic differentiation over dense tensors.
//!
//! Operations are recorded in creation order into a flat arena; values are
//! computed eagerly on the forward pass and `backward` replays the tape in
//! reverse, accumulating gradients over all paths. The op catalog is exactly
//! what the separation model and its loss need — no general broadcasting,
//! no dynamic dispatch, shape errors are loud and name the op.

use super::tensor::{strides_of, zip_indices, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul,
    Conv1d { stride: usize },
    ConvT1d { stride: usize },
    Add,
    Sub,
    Mul,
    /// Multiply by a vector laid along `axis`, broadcast over the rest.
    VecMul { axis: usize },
    /// Add a vector laid along `axis`, broadcast over the rest.
    VecAdd { axis: usize },
    /// Multiply every element by a scalar node.
    ScaleBy,
    /// Add a scalar node to every element.
    ShiftBy,
    /// a*x + b with compile-time constants (stored as f64).
    Affine { a: f64 },
    Relu,
    Sigmoid,
    Tanh,
    Ln,
    Sqrt,
    Recip,
    /// (x, slope): x where x > 0, slope*x elsewhere. Slope is a learned scalar.
    Prelu,
    MeanPool { axes: Vec<usize> },
    MaxPool { argmax: Vec<usize> },
    Sum,
    Mean,
    /// Replicate a reduced tensor back over `axes` to `out_shape`.
    Expand { axes: Vec<usize> },
    Concat { axis: usize },
    /// Stack n same-shape inputs along a new leading axis.
    Stack,
    Narrow { axis: usize, start: usize, len: usize },
    Transpose { perm: Vec<usize> },
    Reshape,
    /// Append zeros at the end of an axis.
    PadEnd { axis: usize },
    /// [c, l] -> [c, k, s]: 50%-style chunking with hop `hop`, implicit
    /// zero padding past the end of the frame axis.
    Segment { hop: usize },
    /// [c, k, s] -> [c, out_l]: sum chunks at their offsets, divide each
    /// frame by its coverage count, trim to `out_l`. Exact inverse of
    /// `Segment` for matching hop.
    OverlapAdd { hop: usize },
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Matmul => "matmul",
        Op::Conv1d { .. } => "conv1d",
        Op::ConvT1d { .. } => "conv1d_transpose",
        Op::Add => "add",
        Op::Sub => "sub",
        Op::Mul => "mul",
        Op::VecMul { .. } => "vec_mul",
        Op::VecAdd { .. } => "vec_add",
        Op::ScaleBy => "scale_by",
        Op::ShiftBy => "shift_by",
        Op::Affine { .. } => "affine",
        Op::Relu => "relu",
        Op::Sigmoid => "sigmoid",
        Op::Tanh => "tanh",
        Op::Ln => "ln",
        Op::Sqrt => "sqrt",
        Op::Recip => "recip",
        Op::Prelu => "prelu",
        Op::MeanPool { .. } => "mean_pool",
        Op::MaxPool { .. } => "max_pool",
        Op::Sum => "sum",
        Op::Mean => "mean",
        Op::Expand { .. } => "expand",
        Op::Concat { .. } => "concat",
        Op::Stack => "stack",
        Op::Narrow { .. } => "narrow",
        Op::Transpose { .. } => "transpose",
        Op::Reshape => "reshape",
        Op::PadEnd { .. } => "pad_end",
        Op::Segment { .. } => "segment",
        Op::OverlapAdd { .. } => "overlap_add",
    }
}

struct Node<T> {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor<T>,
    needs_grad: bool,
}

/// Gradients of a scalar loss with respect to graph nodes.
///
/// Only leaves created with `requires_grad` keep their gradient; a leaf on
/// no path to the loss simply has no entry (a detached graph is not an
/// error).
pub struct GradientMap<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> GradientMap<T> {
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }

    /// Gradient of the given node, materializing zeros for detached nodes.
    pub fn grad_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor<T> {
        match self.grad(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }

    /// Sums another map into this one, elementwise per node.
    pub fn add_assign(&mut self, other: &GradientMap<T>) {
        for (slot, o) in self.grads.iter_mut().zip(&other.grads) {
            match (slot.as_mut(), o) {
                (Some(a), Some(b)) => {
                    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                        *x = *x + *y;
                    }
                }
                (None, Some(b)) => *slot = Some(b.clone()),
                _ => {}
            }
        }
    }
}

/// The computation tape. One graph per training step.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    check_finite: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            check_finite: true,
        }
    }

    /// Disables the per-op finiteness check (the caller takes over the
    /// responsibility of surfacing NaN/Inf, e.g. by checking the loss).
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a differentiable leaf (a parameter) when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value,
            needs_grad: requires_grad,
        });
        id
    }

    /// Inserts a non-differentiable constant (input data, targets).
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor<T>) -> Result<NodeId> {
        if self.check_finite && !value.is_finite() {
            return Err(Error::NonFinite { op: op_name(&op) });
        }
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            inputs,
            value,
            needs_grad,
        });
        Ok(id)
    }

    fn shape_err(op: &'static str, detail: String) -> Error {
        Error::Shape { op, detail }
    }

    // ── Linear algebra ───────────────────────────────────────────────

    /// a[m,k] @ b[k,n] -> [m,n]
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Self::shape_err(
                "matmul",
                format!("incompatible shapes {:?} x {:?}", sa, sb),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(&[m, n]);
        gemm_nn(
            self.value(a).data(),
            self.value(b).data(),
            out.data_mut(),
            m,
            k,
            n,
        );
        self.push(Op::Matmul, vec![a, b], out)
    }

    /// x[cin,t] * w[cout,cin,kw] with stride -> [cout, l], l = (t-kw)/stride + 1
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, stride: usize) -> Result<NodeId> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sw.len() != 3 || sx[0] != sw[1] {
            return Err(Self::shape_err(
                "conv1d",
                format!("input {:?} vs kernel {:?} (want [cin,t] and [cout,cin,kw])", sx, sw),
            ));
        }
        let (cin, t) = (sx[0], sx[1]);
        let (cout, kw) = (sw[0], sw[2]);
        if t < kw || stride == 0 {
            return Err(Self::shape_err(
                "conv1d",
                format!("input length {} shorter than kernel {} (stride {})", t, kw, stride),
            ));
        }
        let l = (t - kw) / stride + 1;
        let mut out = Tensor::zeros(&[cout, l]);
        {
            let xd = self.value(x).data();
            let wd = self.value(w).data();
            let od = out.data_mut();
            for co in 0..cout {
                for ci in 0..cin {
                    let xrow = &xd[ci * t..(ci + 1) * t];
                    let wrow = &wd[(co * cin + ci) * kw..(co * cin + ci + 1) * kw];
                    let orow = &mut od[co * l..(co + 1) * l];
                    for (li, ov) in orow.iter_mut().enumerate() {
                        let base = li * stride;
                        let mut s = T::zero();
                        for (j, &wv) in wrow.iter().enumerate() {
                            s = s + xrow[base + j] * wv;
                        }
                        *ov = *ov + s;
                    }
                }
            }
        }
        self.push(Op::Conv1d { stride }, vec![x, w], out)
    }

    /// x[cin,l] * w[cin,cout,kw] with stride -> [cout, t], t = (l-1)*stride + kw
    pub fn conv1d_transpose(&mut self, x: NodeId, w: NodeId, stride: usize) -> Result<NodeId> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 2 || sw.len() != 3 || sx[0] != sw[0] {
            return Err(Self::shape_err(
                "conv1d_transpose",
                format!("input {:?} vs kernel {:?} (want [cin,l] and [cin,cout,kw])", sx, sw),
            ));
        }
        let (cin, l) = (sx[0], sx[1]);
        let (cout, kw) = (sw[1], sw[2]);
        if l == 0 || stride == 0 {
            return Err(Self::shape_err(
                "conv1d_transpose",
                format!("degenerate input {:?} (stride {})", sx, stride),
            ));
        }
        let t = (l - 1) * stride + kw;
        let mut out = Tensor::zeros(&[cout, t]);
        {
            let xd = self.value(x).data();
            let wd = self.value(w).data();
            let od = out.data_mut();
            for ci in 0..cin {
                let xrow = &xd[ci * l..(ci + 1) * l];
                for co in 0..cout {
                    let wrow = &wd[(ci * cout + co) * kw..(ci * cout + co + 1) * kw];
                    let orow = &mut od[co * t..(co + 1) * t];
                    for (li, &xv) in xrow.iter().enumerate() {
                        let base = li * stride;
                        for (j, &wv) in wrow.iter().enumerate() {
                            orow[base + j] = orow[base + j] + xv * wv;
                        }
                    }
                }
            }
        }
        self.push(Op::ConvT1d { stride }, vec![x, w], out)
    }

    // ── Elementwise ──────────────────────────────────────────────────

    fn binary_check(&self, name: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Self::shape_err(
                name,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_check("add", a, b)?;
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::from_vec(self.shape(a).to_vec(), out)?;
        self.push(Op::Add, vec![a, b], t)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_check("sub", a, b)?;
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let t = Tensor::from_vec(self.shape(a).to_vec(), out)?;
        self.push(Op::Sub, vec![a, b], t)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_check("mul", a, b)?;
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::from_vec(self.shape(a).to_vec(), out)?;
        self.push(Op::Mul, vec![a, b], t)
    }

    fn vec_axis_op(&mut self, op: Op, x: NodeId, v: NodeId, axis: usize) -> Result<NodeId> {
        let name = op_name(&op);
        let is_mul = matches!(op, Op::VecMul { .. });
        let sx = self.shape(x).to_vec();
        let sv = self.shape(v).to_vec();
        if axis >= sx.len() || sv.len() != 1 || sv[0] != sx[axis] {
            return Err(Self::shape_err(
                name,
                format!("vector {:?} along axis {} of {:?}", sv, axis, sx),
            ));
        }
        let (outer, mid, inner) = split_at_axis(&sx, axis);
        let xd = self.value(x).data();
        let vd = self.value(v).data();
        let mut out = Vec::with_capacity(xd.len());
        if inner == 1 {
            // vector laid along the last axis: rows zip directly
            for o in 0..outer {
                let row = &xd[o * mid..(o + 1) * mid];
                if is_mul {
                    out.extend(row.iter().zip(vd).map(|(&s, &vv)| s * vv));
                } else {
                    out.extend(row.iter().zip(vd).map(|(&s, &vv)| s + vv));
                }
            }
        } else {
            for o in 0..outer {
                for a in 0..mid {
                    let vv = vd[a];
                    let src = &xd[(o * mid + a) * inner..(o * mid + a + 1) * inner];
                    if is_mul {
                        out.extend(src.iter().map(|&s| s * vv));
                    } else {
                        out.extend(src.iter().map(|&s| s + vv));
                    }
                }
            }
        }
        let t = Tensor::from_vec(sx, out)?;
        self.push(op, vec![x, v], t)
    }

    /// Per-channel broadcast multiply: `v` has length `shape[axis]`.
    pub fn vec_mul(&mut self, x: NodeId, v: NodeId, axis: usize) -> Result<NodeId> {
        self.vec_axis_op(Op::VecMul { axis }, x, v, axis)
    }

    /// Per-channel broadcast add.
    pub fn vec_add(&mut self, x: NodeId, v: NodeId, axis: usize) -> Result<NodeId> {
        self.vec_axis_op(Op::VecAdd { axis }, x, v, axis)
    }

    fn scalar_node_op(&mut self, op: Op, x: NodeId, s: NodeId) -> Result<NodeId> {
        let name = op_name(&op);
        let is_mul = matches!(op, Op::ScaleBy);
        if self.value(s).numel() != 1 {
            return Err(Self::shape_err(
                name,
                format!("scalar operand must have 1 element, got {:?}", self.shape(s)),
            ));
        }
        let sv = self.value(s).data()[0];
        let xd = self.value(x).data();
        let out: Vec<T> = if is_mul {
            xd.iter().map(|&v| v * sv).collect()
        } else {
            xd.iter().map(|&v| v + sv).collect()
        };
        let t = Tensor::from_vec(self.shape(x).to_vec(), out)?;
        self.push(op, vec![x, s], t)
    }

    /// x * s where s is a scalar node (participates in gradients).
    pub fn scale_by(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        self.scalar_node_op(Op::ScaleBy, x, s)
    }

    /// x + s where s is a scalar node.
    pub fn shift_by(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        self.scalar_node_op(Op::ShiftBy, x, s)
    }

    /// a*x + b with plain constants.
    pub fn affine(&mut self, x: NodeId, a: f64, b: f64) -> Result<NodeId> {
        let (ta, tb) = (T::from_f64(a), T::from_f64(b));
        let out: Vec<T> = self.value(x).data().iter().map(|&v| ta * v + tb).collect();
        let t = Tensor::from_vec(self.shape(x).to_vec(), out)?;
        self.push(Op::Affine { a }, vec![x], t)
    }

    pub fn neg(&mut self, x: NodeId) -> Result<NodeId> {
        self.affine(x, -1.0, 0.0)
    }

    pub fn add_scalar(&mut self, x: NodeId, b: f64) -> Result<NodeId> {
        self.affine(x, 1.0, b)
    }

    pub fn scale(&mut self, x: NodeId, a: f64) -> Result<NodeId> {
        self.affine(x, a, 0.0)
    }

    fn unary(&mut self, op: Op, x: NodeId, f: impl Fn(T) -> T) -> Result<NodeId> {
        let out: Vec<T> = self.value(x).data().iter().map(|&v| f(v)).collect();
        let t = Tensor::from_vec(self.shape(x).to_vec(), out)?;
        self.push(op, vec![x], t)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Relu, x, |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Sigmoid, x, |v| T::one() / (T::one() + (-v).exp()))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Tanh, x, |v| v.tanh())
    }

    pub fn ln(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Ln, x, |v| v.ln())
    }

    pub fn log10(&mut self, x: NodeId) -> Result<NodeId> {
        let l = self.ln(x)?;
        self.affine(l, 1.0 / std::f64::consts::LN_10, 0.0)
    }

    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Sqrt, x, |v| v.sqrt())
    }

    pub fn recip(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Recip, x, |v| T::one() / v)
    }

    /// Parametric ReLU with a learned scalar slope node.
    pub fn prelu(&mut self, x: NodeId, slope: NodeId) -> Result<NodeId> {
        if self.value(slope).numel() != 1 {
            return Err(Self::shape_err(
                "prelu",
                format!("slope must be scalar, got {:?}", self.shape(slope)),
            ));
        }
        let s = self.value(slope).data()[0];
        let out: Vec<T> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { s * v })
            .collect();
        let t = Tensor::from_vec(self.shape(x).to_vec(), out)?;
        self.push(Op::Prelu, vec![x, slope], t)
    }

    // ── Reductions and broadcasts ────────────────────────────────────

    fn pool_validate(&self, name: &'static str, x: NodeId, axes: &[usize]) -> Result<Vec<usize>> {
        let sx = self.shape(x);
        let mut seen = vec![false; sx.len()];
        for &a in axes {
            if a >= sx.len() || seen[a] {
                return Err(Self::shape_err(
                    name,
                    format!("bad axes {:?} for shape {:?}", axes, sx),
                ));
            }
            seen[a] = true;
        }
        if axes.len() == sx.len() {
            return Err(Self::shape_err(
                name,
                format!("pooling over all axes of {:?}; use sum/mean instead", sx),
            ));
        }
        Ok(sx
            .iter()
            .enumerate()
            .filter(|(i, _)| !seen[*i])
            .map(|(_, &d)| d)
            .collect())
    }

    /// Strides mapping every input position of `x` to its reduced position
    /// when `axes` are removed.
    fn reduced_strides(shape: &[usize], axes: &[usize], out_shape: &[usize]) -> Vec<usize> {
        let ost = strides_of(out_shape);
        let mut map = vec![0usize; shape.len()];
        let mut oi = 0;
        for (i, stride_slot) in map.iter_mut().enumerate() {
            if axes.contains(&i) {
                *stride_slot = 0;
            } else {
                *stride_slot = ost[oi];
                oi += 1;
            }
        }
        map
    }

    /// Mean over the given axes; the axes are removed from the shape.
    pub fn mean_pool(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        let out_shape = self.pool_validate("mean_pool", x, axes)?;
        let sx = self.shape(x).to_vec();
        let count: usize = axes.iter().map(|&a| sx[a]).product();
        let map = Self::reduced_strides(&sx, axes, &out_shape);
        let mut out = Tensor::zeros(&out_shape);
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            zip_indices(&sx, &map, |ix, io| od[io] = od[io] + xd[ix]);
            let cnt = T::from_f64(count as f64);
            for v in od.iter_mut() {
                *v = *v / cnt;
            }
        }
        self.push(Op::MeanPool { axes: axes.to_vec() }, vec![x], out)
    }

    /// Max over the given axes; ties resolve to the first element in
    /// row-major order.
    pub fn max_pool(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        let out_shape = self.pool_validate("max_pool", x, axes)?;
        let sx = self.shape(x).to_vec();
        let map = Self::reduced_strides(&sx, axes, &out_shape);
        let numel_out: usize = out_shape.iter().product();
        let mut out = Tensor::filled(&out_shape, T::neg_infinity());
        let mut argmax = vec![usize::MAX; numel_out];
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            zip_indices(&sx, &map, |ix, io| {
                if xd[ix] > od[io] {
                    od[io] = xd[ix];
                    argmax[io] = ix;
                }
            });
        }
        self.push(Op::MaxPool { argmax }, vec![x], out)
    }

    /// Sum of all elements -> shape [1].
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Op::Sum, vec![x], Tensor::scalar(s))
    }

    /// Mean of all elements -> shape [1].
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x).numel();
        let s: T = self.value(x).data().iter().copied().sum();
        let m = s / T::from_f64(n as f64);
        self.push(Op::Mean, vec![x], Tensor::scalar(m))
    }

    /// Inverse of a reduction: replicate `x` over the given axes so the
    /// result has `out_shape`. `x.shape` must equal `out_shape` minus `axes`.
    pub fn expand(&mut self, x: NodeId, out_shape: &[usize], axes: &[usize]) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let expect: Vec<usize> = out_shape
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &d)| d)
            .collect();
        if expect != sx {
            return Err(Self::shape_err(
                "expand",
                format!(
                    "input {:?} cannot expand to {:?} over axes {:?}",
                    sx, out_shape, axes
                ),
            ));
        }
        let map = Self::reduced_strides(out_shape, axes, &sx);
        let mut out = Tensor::zeros(out_shape);
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            zip_indices(out_shape, &map, |io, ix| od[io] = xd[ix]);
        }
        self.push(Op::Expand { axes: axes.to_vec() }, vec![x], out)
    }

    // ── Shape manipulation ───────────────────────────────────────────

    /// Concatenate along an existing axis.
    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Self::shape_err("concat", "no inputs".into()));
        }
        let first = self.shape(inputs[0]).to_vec();
        if axis >= first.len() {
            return Err(Self::shape_err(
                "concat",
                format!("axis {} out of range for {:?}", axis, first),
            ));
        }
        let mut total = 0usize;
        for &i in inputs {
            let s = self.shape(i);
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(ax, (a, b))| ax != axis && a != b)
            {
                return Err(Self::shape_err(
                    "concat",
                    format!("mismatched input shapes {:?} vs {:?} along axis {}", s, first, axis),
                ));
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split_at_axis(&out_shape, axis);
        let mut out = Tensor::zeros(&out_shape);
        {
            let od = out.data_mut();
            let mut offset = 0usize;
            for &i in inputs {
                let len_i = self.nodes[i.0].value.shape()[axis];
                let xd = self.nodes[i.0].value.data();
                for o in 0..outer {
                    let src = &xd[o * len_i * inner..(o + 1) * len_i * inner];
                    let dst_base = (o * total + offset) * inner;
                    od[dst_base..dst_base + len_i * inner].copy_from_slice(src);
                }
                offset += len_i;
            }
        }
        self.push(Op::Concat { axis }, inputs.to_vec(), out)
    }

    /// Stack n same-shape tensors along a new leading axis.
    pub fn stack(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Self::shape_err("stack", "no inputs".into()));
        }
        let base = self.shape(inputs[0]).to_vec();
        for &i in inputs {
            if self.shape(i) != base.as_slice() {
                return Err(Self::shape_err(
                    "stack",
                    format!("mismatched shapes {:?} vs {:?}", self.shape(i), base),
                ));
            }
        }
        let mut out_shape = vec![inputs.len()];
        out_shape.extend_from_slice(&base);
        let chunk: usize = base.iter().product();
        let mut out = Tensor::zeros(&out_shape);
        {
            let od = out.data_mut();
            for (idx, &i) in inputs.iter().enumerate() {
                od[idx * chunk..(idx + 1) * chunk].copy_from_slice(self.nodes[i.0].value.data());
            }
        }
        self.push(Op::Stack, inputs.to_vec(), out)
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() || start + len > sx[axis] || len == 0 {
            return Err(Self::shape_err(
                "narrow",
                format!("range {}..{} on axis {} of {:?}", start, start + len, axis, sx),
            ));
        }
        let (outer, mid, inner) = split_at_axis(&sx, axis);
        let mut out_shape = sx.clone();
        out_shape[axis] = len;
        let mut out = Tensor::zeros(&out_shape);
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            for o in 0..outer {
                let src = &xd[(o * mid + start) * inner..(o * mid + start + len) * inner];
                od[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
            }
        }
        self.push(Op::Narrow { axis, start, len }, vec![x], out)
    }

    /// Split into equal parts along the axis.
    pub fn split(&mut self, x: NodeId, axis: usize, parts: usize) -> Result<Vec<NodeId>> {
        let dim = self.shape(x)[axis];
        if parts == 0 || dim % parts != 0 {
            return Err(Self::shape_err(
                "split",
                format!("cannot split axis of size {} into {} parts", dim, parts),
            ));
        }
        let each = dim / parts;
        (0..parts)
            .map(|p| self.narrow(x, axis, p * each, each))
            .collect()
    }

    /// Permute axes: `out.shape[i] = x.shape[perm[i]]`.
    pub fn transpose(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let mut seen = vec![false; sx.len()];
        if perm.len() != sx.len() || perm.iter().any(|&p| p >= sx.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Self::shape_err(
                "transpose",
                format!("invalid permutation {:?} for {:?}", perm, sx),
            ));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| sx[p]).collect();
        let in_strides = strides_of(&sx);
        let perm_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut out = Tensor::zeros(&out_shape);
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            zip_indices(&out_shape, &perm_strides, |io, ix| od[io] = xd[ix]);
        }
        self.push(Op::Transpose { perm: perm.to_vec() }, vec![x], out)
    }

    pub fn reshape(&mut self, x: NodeId, new_shape: &[usize]) -> Result<NodeId> {
        let n: usize = new_shape.iter().product();
        if n != self.value(x).numel() {
            return Err(Self::shape_err(
                "reshape",
                format!("{:?} -> {:?} changes element count", self.shape(x), new_shape),
            ));
        }
        let t = Tensor::from_vec(new_shape.to_vec(), self.value(x).data().to_vec())?;
        self.push(Op::Reshape, vec![x], t)
    }

    /// Append `amount` zeros at the end of `axis`.
    pub fn pad_end(&mut self, x: NodeId, axis: usize, amount: usize) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        if axis >= sx.len() {
            return Err(Self::shape_err(
                "pad_end",
                format!("axis {} out of range for {:?}", axis, sx),
            ));
        }
        if amount == 0 {
            // still record a node so callers get uniform graph structure
        }
        let (outer, mid, inner) = split_at_axis(&sx, axis);
        let mut out_shape = sx.clone();
        out_shape[axis] = mid + amount;
        let mut out = Tensor::zeros(&out_shape);
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            for o in 0..outer {
                od[o * (mid + amount) * inner..(o * (mid + amount) + mid) * inner]
                    .copy_from_slice(&xd[o * mid * inner..(o + 1) * mid * inner]);
            }
        }
        self.push(Op::PadEnd { axis }, vec![x], out)
    }

    /// Number of chunks covering `frames` with chunk length `k` and hop
    /// `hop` after implicit zero padding.
    pub fn chunk_count(frames: usize, k: usize, hop: usize) -> usize {
        if frames <= k {
            1
        } else {
            (frames - k).div_ceil(hop) + 1
        }
    }

    /// Chunk a [c, l] frame sequence into [c, k, s] with the given hop;
    /// frames past the end read as zero.
    pub fn segment_chunks(&mut self, x: NodeId, k: usize, hop: usize) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 || k == 0 || hop == 0 || hop > k {
            return Err(Self::shape_err(
                "segment",
                format!("input {:?} with chunk {} hop {}", sx, k, hop),
            ));
        }
        let (c, l) = (sx[0], sx[1]);
        let s = Self::chunk_count(l, k, hop);
        let mut out = Tensor::zeros(&[c, k, s]);
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            for ci in 0..c {
                let xrow = &xd[ci * l..(ci + 1) * l];
                for si in 0..s {
                    for kk in 0..k {
                        let li = si * hop + kk;
                        if li < l {
                            od[(ci * k + kk) * s + si] = xrow[li];
                        }
                    }
                }
            }
        }
        self.push(Op::Segment { hop }, vec![x], out)
    }

    /// Inverse of `segment_chunks`: sum chunks at their offsets, divide by
    /// per-frame coverage, trim to `out_l`.
    pub fn overlap_add(&mut self, x: NodeId, hop: usize, out_l: usize) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 || hop == 0 {
            return Err(Self::shape_err(
                "overlap_add",
                format!("input {:?} with hop {}", sx, hop),
            ));
        }
        let (c, k, s) = (sx[0], sx[1], sx[2]);
        let l_pad = (s - 1) * hop + k;
        if out_l > l_pad {
            return Err(Self::shape_err(
                "overlap_add",
                format!("cannot trim to {} frames, chunks only cover {}", out_l, l_pad),
            ));
        }
        let coverage = coverage_counts(k, s, hop);
        let mut out = Tensor::zeros(&[c, out_l]);
        {
            let xd = self.value(x).data();
            let od = out.data_mut();
            for ci in 0..c {
                let orow = &mut od[ci * out_l..(ci + 1) * out_l];
                for kk in 0..k {
                    for si in 0..s {
                        let li = si * hop + kk;
                        if li < out_l {
                            orow[li] = orow[li] + xd[(ci * k + kk) * s + si];
                        }
                    }
                }
                for (li, ov) in orow.iter_mut().enumerate() {
                    *ov = *ov / T::from_f64(coverage[li] as f64);
                }
            }
        }
        self.push(Op::OverlapAdd { hop }, vec![x], out)
    }

    // ── Composites ───────────────────────────────────────────────────

    /// Layer normalization over `axes` followed by a learned per-channel
    /// affine along `channel_axis`.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        axes: &[usize],
        gamma: NodeId,
        beta: NodeId,
        channel_axis: usize,
        eps: f64,
    ) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        let mu = self.mean_pool(x, axes)?;
        let mu_full = self.expand(mu, &shape, axes)?;
        let centered = self.sub(x, mu_full)?;
        let sq = self.mul(centered, centered)?;
        let var = self.mean_pool(sq, axes)?;
        let var_eps = self.add_scalar(var, eps)?;
        let std = self.sqrt(var_eps)?;
        let inv_std = self.recip(std)?;
        let inv_full = self.expand(inv_std, &shape, axes)?;
        let normed = self.mul(centered, inv_full)?;
        let scaled = self.vec_mul(normed, gamma, channel_axis)?;
        self.vec_add(scaled, beta, channel_axis)
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse-mode gradient of a scalar `loss` w.r.t. every
    /// `requires_grad` leaf on a path to it.
    pub fn backward(&mut self, loss: NodeId) -> Result<GradientMap<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for id in (0..=loss.0).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                if !matches!(self.nodes[id].op, Op::Leaf) {
                    grads[id] = None;
                }
                continue;
            }
            let go = grads[id].take().unwrap();
            self.propagate(id, &go, &mut grads);
            if matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = Some(go);
            }
        }
        Ok(GradientMap { grads })
    }

    fn propagate(&self, id: usize, go: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[id];
        let inputs = &node.inputs;
        let needs = |i: usize| self.nodes[inputs[i].0].needs_grad;
        let in_val = |i: usize| &self.nodes[inputs[i].0].value;
        macro_rules! slot {
            ($i:expr) => {
                grads[inputs[$i].0].get_or_insert_with(|| Tensor::zeros(in_val($i).shape()))
            };
        }

        match &node.op {
            Op::Leaf => {}
            Op::Matmul => {
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                let k = in_val(0).shape()[1];
                if needs(0) {
                    // dA += GO @ B^T
                    let bt = transpose_2d(in_val(1).data(), k, n);
                    gemm_nn(go.data(), &bt, slot!(0).data_mut(), m, n, k);
                }
                if needs(1) {
                    // dB += A^T @ GO
                    gemm_tn(in_val(0).data(), go.data(), slot!(1).data_mut(), m, k, n);
                }
            }
            Op::Conv1d { stride } => {
                let (cin, t) = (in_val(0).shape()[0], in_val(0).shape()[1]);
                let (cout, kw) = (in_val(1).shape()[0], in_val(1).shape()[2]);
                let l = node.value.shape()[1];
                let god = go.data();
                if needs(0) {
                    let wd = in_val(1).data();
                    let dx = slot!(0).data_mut();
                    for co in 0..cout {
                        let gorow = &god[co * l..(co + 1) * l];
                        for ci in 0..cin {
                            let wrow = &wd[(co * cin + ci) * kw..(co * cin + ci + 1) * kw];
                            let dxrow = &mut dx[ci * t..(ci + 1) * t];
                            for (li, &g) in gorow.iter().enumerate() {
                                let base = li * stride;
                                for (j, &wv) in wrow.iter().enumerate() {
                                    dxrow[base + j] = dxrow[base + j] + g * wv;
                                }
                            }
                        }
                    }
                }
                if needs(1) {
                    let xd = in_val(0).data();
                    let dw = slot!(1).data_mut();
                    for co in 0..cout {
                        let gorow = &god[co * l..(co + 1) * l];
                        for ci in 0..cin {
                            let xrow = &xd[ci * t..(ci + 1) * t];
                            let dwrow = &mut dw[(co * cin + ci) * kw..(co * cin + ci + 1) * kw];
                            for (li, &g) in gorow.iter().enumerate() {
                                let base = li * stride;
                                for (j, dv) in dwrow.iter_mut().enumerate() {
                                    *dv = *dv + g * xrow[base + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::ConvT1d { stride } => {
                let (cin, l) = (in_val(0).shape()[0], in_val(0).shape()[1]);
                let (cout, kw) = (in_val(1).shape()[1], in_val(1).shape()[2]);
                let t = node.value.shape()[1];
                let god = go.data();
                if needs(0) {
                    let wd = in_val(1).data();
                    let dx = slot!(0).data_mut();
                    for ci in 0..cin {
                        let dxrow = &mut dx[ci * l..(ci + 1) * l];
                        for co in 0..cout {
                            let wrow = &wd[(ci * cout + co) * kw..(ci * cout + co + 1) * kw];
                            let gorow = &god[co * t..(co + 1) * t];
                            for (li, dv) in dxrow.iter_mut().enumerate() {
                                let base = li * stride;
                                let mut s = T::zero();
                                for (j, &wv) in wrow.iter().enumerate() {
                                    s = s + gorow[base + j] * wv;
                                }
                                *dv = *dv + s;
                            }
                        }
                    }
                }
                if needs(1) {
                    let xd = in_val(0).data();
                    let dw = slot!(1).data_mut();
                    for ci in 0..cin {
                        let xrow = &xd[ci * l..(ci + 1) * l];
                        for co in 0..cout {
                            let gorow = &god[co * t..(co + 1) * t];
                            let dwrow = &mut dw[(ci * cout + co) * kw..(ci * cout + co + 1) * kw];
                            for (li, &xv) in xrow.iter().enumerate() {
                                let base = li * stride;
                                for (j, dv) in dwrow.iter_mut().enumerate() {
                                    *dv = *dv + xv * gorow[base + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::Add => {
                for i in 0..2 {
                    if needs(i) {
                        for (d, &g) in slot!(i).data_mut().iter_mut().zip(go.data()) {
                            *d = *d + g;
                        }
                    }
                }
            }
            Op::Sub => {
                if needs(0) {
                    for (d, &g) in slot!(0).data_mut().iter_mut().zip(go.data()) {
                        *d = *d + g;
                    }
                }
                if needs(1) {
                    for (d, &g) in slot!(1).data_mut().iter_mut().zip(go.data()) {
                        *d = *d - g;
                    }
                }
            }
            Op::Mul => {
                if needs(0) {
                    let other = in_val(1).data();
                    for ((d, &g), &o) in slot!(0).data_mut().iter_mut().zip(go.data()).zip(other) {
                        *d = *d + g * o;
                    }
                }
                if needs(1) {
                    let other = in_val(0).data();
                    for ((d, &g), &o) in slot!(1).data_mut().iter_mut().zip(go.data()).zip(other) {
                        *d = *d + g * o;
                    }
                }
            }
            Op::VecMul { axis } => {
                let sx = in_val(0).shape().to_vec();
                let (outer, mid, inner) = split_at_axis(&sx, *axis);
                let god = go.data();
                if needs(0) {
                    let vd = in_val(1).data();
                    let dx = slot!(0).data_mut();
                    if inner == 1 {
                        for o in 0..outer {
                            let base = o * mid;
                            for ((d, &g), &vv) in dx[base..base + mid].iter_mut().zip(&god[base..base + mid]).zip(vd) {
                                *d = *d + g * vv;
                            }
                        }
                    } else {
                        for o in 0..outer {
                            for (a, &vv) in vd.iter().enumerate() {
                                let base = (o * mid + a) * inner;
                                for (d, &g) in dx[base..base + inner].iter_mut().zip(&god[base..base + inner]) {
                                    *d = *d + g * vv;
                                }
                            }
                        }
                    }
                }
                if needs(1) {
                    let xd = in_val(0).data();
                    let dv = slot!(1).data_mut();
                    if inner == 1 {
                        for o in 0..outer {
                            let base = o * mid;
                            for (dva, (&g, &xv)) in dv.iter_mut().zip(god[base..base + mid].iter().zip(&xd[base..base + mid])) {
                                *dva = *dva + g * xv;
                            }
                        }
                    } else {
                        for o in 0..outer {
                            for (a, dva) in dv.iter_mut().enumerate() {
                                let base = (o * mid + a) * inner;
                                let mut s = T::zero();
                                for (&g, &xv) in god[base..base + inner].iter().zip(&xd[base..base + inner]) {
                                    s = s + g * xv;
                                }
                                *dva = *dva + s;
                            }
                        }
                    }
                }
            }
            Op::VecAdd { axis } => {
                let sx = in_val(0).shape().to_vec();
                let (outer, mid, inner) = split_at_axis(&sx, *axis);
                let god = go.data();
                if needs(0) {
                    for (d, &g) in slot!(0).data_mut().iter_mut().zip(god) {
                        *d = *d + g;
                    }
                }
                if needs(1) {
                    let dv = slot!(1).data_mut();
                    if inner == 1 {
                        for o in 0..outer {
                            let base = o * mid;
                            for (dva, &g) in dv.iter_mut().zip(&god[base..base + mid]) {
                                *dva = *dva + g;
                            }
                        }
                    } else {
                        for o in 0..outer {
                            for (a, dva) in dv.iter_mut().enumerate() {
                                let base = (o * mid + a) * inner;
                                let mut s = T::zero();
                                for &g in &god[base..base + inner] {
                                    s = s + g;
                                }
                                *dva = *dva + s;
                            }
                        }
                    }
                }
            }
            Op::ScaleBy => {
                let sv = in_val(1).data()[0];
                if needs(0) {
                    for (d, &g) in slot!(0).data_mut().iter_mut().zip(go.data()) {
                        *d = *d + g * sv;
                    }
                }
                if needs(1) {
                    let xd = in_val(0).data();
                    let mut s = T::zero();
                    for (&g, &xv) in go.data().iter().zip(xd) {
                        s = s + g * xv;
                    }
                    slot!(1).data_mut()[0] = slot!(1).data()[0] + s;
                }
            }
            Op::ShiftBy => {
                if needs(0) {
                    for (d, &g) in slot!(0).data_mut().iter_mut().zip(go.data()) {
                        *d = *d + g;
                    }
                }
                if needs(1) {
                    let s: T = go.data().iter().copied().sum();
                    slot!(1).data_mut()[0] = slot!(1).data()[0] + s;
                }
            }
            Op::Affine { a, .. } => {
                if needs(0) {
                    let ta = T::from_f64(*a);
                    for (d, &g) in slot!(0).data_mut().iter_mut().zip(go.data()) {
                        *d = *d + g * ta;
                    }
                }
            }
            Op::Relu => {
                if needs(0) {
                    let xd = in_val(0).data();
                    for ((d, &g), &xv) in slot!(0).data_mut().iter_mut().zip(go.data()).zip(xd) {
                        if xv > T::zero() {
                            *d = *d + g;
                        }
                    }
                }
            }
            Op::Sigmoid => {
                if needs(0) {
                    let yd = node.value.data();
                    for ((d, &g), &y) in slot!(0).data_mut().iter_mut().zip(go.data()).zip(yd) {
                        *d = *d + g * y * (T::one() - y);
                    }
                }
            }
            Op::Tanh => {
                if needs(0) {
                    let yd = node.value.data();
                    for ((d, &g), &y) in slot!(0).data_mut().iter_mut().zip(go.data()).zip(yd) {
                        *d = *d + g * (T::one() - y * y);
                    }
                }
            }
            Op::Ln => {
                if needs(0) {
                    let xd = in_val(0).data();
                    for ((d, &g), &xv) in slot!(0).data_mut().iter_mut().zip(go.data()).zip(xd) {
                        *d = *d + g / xv;
                    }
                }
            }
            Op::Sqrt => {
                if needs(0) {
                    let yd = node.value.data();
                    let half = T::from_f64(0.5);
                    for ((d, &g), &y) in slot!(0).data_mut().iter_mut().zip(go.data()).zip(yd) {
                        *d = *d + g * half / y;
                    }
                }
            }
            Op::Recip => {
                if needs(0) {
                    let yd = node.value.data();
                    for ((d, &g), &y) in slot!(0).data_mut().iter_mut().zip(go.data()).zip(yd) {
                        *d = *d - g * y * y;
                    }
                }
            }
            Op::Prelu => {
                let s = in_val(1).data()[0];
                let xd = in_val(0).data();
                if needs(0) {
                    for ((d, &g), &xv) in slot!(0).data_mut().iter_mut().zip(go.data()).zip(xd) {
                        *d = *d + if xv > T::zero() { g } else { g * s };
                    }
                }
                if needs(1) {
                    let mut acc = T::zero();
                    for (&g, &xv) in go.data().iter().zip(xd) {
                        if xv <= T::zero() {
                            acc = acc + g * xv;
                        }
                    }
                    slot!(1).data_mut()[0] = slot!(1).data()[0] + acc;
                }
            }
            Op::MeanPool { axes } => {
                if needs(0) {
                    let sx = in_val(0).shape().to_vec();
                    let count: usize = axes.iter().map(|&a| sx[a]).product();
                    let map = Self::reduced_strides(&sx, axes, node.value.shape());
                    let inv = T::one() / T::from_f64(count as f64);
                    let god = go.data();
                    let dx = slot!(0).data_mut();
                    zip_indices(&sx, &map, |ix, io| dx[ix] = dx[ix] + god[io] * inv);
                }
            }
            Op::MaxPool { argmax, .. } => {
                if needs(0) {
                    let god = go.data();
                    let dx = slot!(0).data_mut();
                    for (io, &ix) in argmax.iter().enumerate() {
                        dx[ix] = dx[ix] + god[io];
                    }
                }
            }
            Op::Sum => {
                if needs(0) {
                    let g = go.data()[0];
                    for d in slot!(0).data_mut() {
                        *d = *d + g;
                    }
                }
            }
            Op::Mean => {
                if needs(0) {
                    let n = in_val(0).numel();
                    let g = go.data()[0] / T::from_f64(n as f64);
                    for d in slot!(0).data_mut() {
                        *d = *d + g;
                    }
                }
            }
            Op::Expand { axes } => {
                if needs(0) {
                    let out_shape = node.value.shape().to_vec();
                    let sx = in_val(0).shape();
                    let map = Self::reduced_strides(&out_shape, axes, sx);
                    let god = go.data();
                    let dx = slot!(0).data_mut();
                    zip_indices(&out_shape, &map, |io, ix| dx[ix] = dx[ix] + god[io]);
                }
            }
            Op::Concat { axis } => {
                let out_shape = node.value.shape().to_vec();
                let (outer, total, inner) = split_at_axis(&out_shape, *axis);
                let god = go.data();
                let mut offset = 0usize;
                for i in 0..inputs.len() {
                    let len_i = in_val(i).shape()[*axis];
                    if needs(i) {
                        let dx = slot!(i).data_mut();
                        for o in 0..outer {
                            let src = &god[(o * total + offset) * inner..(o * total + offset + len_i) * inner];
                            for (d, &g) in dx[o * len_i * inner..(o + 1) * len_i * inner]
                                .iter_mut()
                                .zip(src)
                            {
                                *d = *d + g;
                            }
                        }
                    }
                    offset += len_i;
                }
            }
            Op::Stack => {
                let chunk: usize = in_val(0).numel();
                let god = go.data();
                for i in 0..inputs.len() {
                    if needs(i) {
                        let src = &god[i * chunk..(i + 1) * chunk];
                        for (d, &g) in slot!(i).data_mut().iter_mut().zip(src) {
                            *d = *d + g;
                        }
                    }
                }
            }
            Op::Narrow { axis, start, len } => {
                if needs(0) {
                    let sx = in_val(0).shape().to_vec();
                    let (outer, mid, inner) = split_at_axis(&sx, *axis);
                    let god = go.data();
                    let dx = slot!(0).data_mut();
                    for o in 0..outer {
                        let dst = &mut dx[(o * mid + start) * inner..(o * mid + start + len) * inner];
                        let src = &god[o * len * inner..(o + 1) * len * inner];
                        for (d, &g) in dst.iter_mut().zip(src) {
                            *d = *d + g;
                        }
                    }
                }
            }
            Op::Transpose { perm } => {
                if needs(0) {
                    let sx = in_val(0).shape().to_vec();
                    let out_shape = node.value.shape().to_vec();
                    let in_strides = strides_of(&sx);
                    let perm_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
                    let god = go.data();
                    let dx = slot!(0).data_mut();
                    zip_indices(&out_shape, &perm_strides, |io, ix| dx[ix] = dx[ix] + god[io]);
                }
            }
            Op::Reshape => {
                if needs(0) {
                    for (d, &g) in slot!(0).data_mut().iter_mut().zip(go.data()) {
                        *d = *d + g;
                    }
                }
            }
            Op::PadEnd { axis } => {
                if needs(0) {
                    let sx = in_val(0).shape().to_vec();
                    let padded = node.value.shape()[*axis];
                    let (outer, mid, inner) = split_at_axis(&sx, *axis);
                    let god = go.data();
                    let dx = slot!(0).data_mut();
                    for o in 0..outer {
                        let src = &god[o * padded * inner..(o * padded + mid) * inner];
                        for (d, &g) in dx[o * mid * inner..(o + 1) * mid * inner].iter_mut().zip(src) {
                            *d = *d + g;
                        }
                    }
                }
            }
            Op::Segment { hop } => {
                if needs(0) {
                    let l = in_val(0).shape()[1];
                    let (c, k, s) = {
                        let os = node.value.shape();
                        (os[0], os[1], os[2])
                    };
                    let god = go.data();
                    let dx = slot!(0).data_mut();
                    for ci in 0..c {
                        let dxrow = &mut dx[ci * l..(ci + 1) * l];
                        for kk in 0..k {
                            for si in 0..s {
                                let li = si * hop + kk;
                                if li < l {
                                    dxrow[li] = dxrow[li] + god[(ci * k + kk) * s + si];
                                }
                            }
                        }
                    }
                }
            }
            Op::OverlapAdd { hop } => {
                if needs(0) {
                    let (c, k, s) = {
                        let is = in_val(0).shape();
                        (is[0], is[1], is[2])
                    };
                    let out_l = node.value.shape()[1];
                    let coverage = coverage_counts(k, s, *hop);
                    let god = go.data();
                    let dx = slot!(0).data_mut();
                    for ci in 0..c {
                        let gorow = &god[ci * out_l..(ci + 1) * out_l];
                        for kk in 0..k {
                            for si in 0..s {
                                let li = si * hop + kk;
                                if li < out_l {
                                    let idx = (ci * k + kk) * s + si;
                                    dx[idx] = dx[idx] + gorow[li] / T::from_f64(coverage[li] as f64);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// How many chunks cover each frame position of the padded sequence.
fn coverage_counts(k: usize, s: usize, hop: usize) -> Vec<usize> {
    let l_pad = (s - 1) * hop + k;
    let mut cov = vec![0usize; l_pad];
    for si in 0..s {
        for kk in 0..k {
            cov[si * hop + kk] += 1;
        }
    }
    cov
}

/// Splits a shape at `axis` into (product before, dim at, product after).
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// c[m,n] += a[m,k] @ b[k,n]
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// c[k,n] += a[m,k]^T @ b[m,n]
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

pub(crate) fn transpose_2d<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}
