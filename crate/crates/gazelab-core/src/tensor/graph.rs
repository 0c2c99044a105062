//! Define-by-run computation graph. Rebuilt every step; confined to one
//! thread; backward walks the tape in reverse insertion order, which is
//! already a topological order.

use super::{Tensor, TensorError};

/// Handle into a [`Graph`]. Only valid for the graph that produced it.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct NodeId(u32);

impl NodeId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

/// Gradient of acos is clamped as if its input were inside
/// [-1 + e, 1 - e]; keeps updates finite at the arccos boundaries.
pub const ACOS_GRAD_CLAMP: f64 = 1e-7;

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    AddScalar(NodeId),
    MulScalar(NodeId, f64),
    MatMul(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        pad: usize,
    },
    BiasChannels(NodeId, NodeId),
    WindowMean {
        input: NodeId,
        weights: Vec<f64>,
    },
    Abs(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Acos(NodeId),
    Sigmoid(NodeId),
    LeakyRelu(NodeId, f64),
    Clamp(NodeId, f64, f64),
    Sum(NodeId),
    Mean(NodeId),
    Concat0(NodeId, NodeId),
    Slice0 {
        input: NodeId,
        start: usize,
    },
    Reshape(NodeId),
    ResizeBilinear(NodeId),
}

struct Node {
    value: Tensor,
    needs_grad: bool,
    op: Op,
}

/// Per-node gradient buffers produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient w.r.t. a node, if any gradient reached it.
    pub fn wrt(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.idx()].as_deref()
    }

    /// Gradient w.r.t. a node; unreachable nodes get zeros.
    pub fn wrt_or_zeros(&self, id: NodeId, numel: usize) -> Vec<f64> {
        match &self.grads[id.idx()] {
            Some(g) => g.clone(),
            None => vec![0.0; numel],
        }
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.idx()].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, needs_grad: bool, op: Op) -> NodeId {
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node {
            value,
            needs_grad,
            op,
        });
        id
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.idx()].needs_grad
    }

    /// Constant input; gradients are not tracked through it.
    pub fn input(&mut self, t: &Tensor) -> NodeId {
        self.push(t.clone(), false, Op::Leaf)
    }

    /// Leaf that accumulates a gradient (for gradient checks and
    /// expert-input probes) without being a named parameter.
    pub fn variable(&mut self, t: &Tensor) -> NodeId {
        self.push(t.clone(), true, Op::Leaf)
    }

    /// Named trainable parameter leaf.
    pub fn param(&mut self, name: &str, t: &Tensor) -> NodeId {
        let id = self.push(t.clone(), true, Op::Leaf);
        self.params.push((name.to_string(), id));
        id
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.push(Tensor::scalar(v), false, Op::Leaf)
    }

    /// Value passes through, gradient does not.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).clone();
        self.push(v, false, Op::Leaf)
    }

    fn binary_same_shape(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: op_name,
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data: Vec<f64> = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, ng, op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary_same_shape("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary_same_shape("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary_same_shape("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.binary_same_shape("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(
        &mut self,
        x: NodeId,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> NodeId {
        let v = self.value(x);
        let data: Vec<f64> = v.data().iter().map(|&a| f(a)).collect();
        let out = Tensor::new(v.shape().to_vec(), data);
        let ng = self.needs(x);
        self.push(out, ng, op)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, |a| a + c, Op::AddScalar(x))
    }

    pub fn mul_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        self.unary(x, |a| a * c, Op::MulScalar(x, c))
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.mul_scalar(x, -1.0)
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |a| a * a, Op::Square(x))
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn sin(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::sin, Op::Sin(x))
    }

    pub fn cos(&mut self, x: NodeId) -> NodeId {
        self.unary(x, f64::cos, Op::Cos(x))
    }

    /// acos with the input clamped into [-1, 1] for the value and into
    /// the tighter [`ACOS_GRAD_CLAMP`] band for the derivative.
    pub fn acos(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |a| a.clamp(-1.0, 1.0).acos(), Op::Acos(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(x, |a| 1.0 / (1.0 + (-a).exp()), Op::Sigmoid(x))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        self.unary(
            x,
            |a| if a > 0.0 { a } else { slope * a },
            Op::LeakyRelu(x, slope),
        )
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(x, |a| a.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), ng, Op::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let m = v.data().iter().sum::<f64>() / v.numel() as f64;
        let ng = self.needs(x);
        self.push(Tensor::scalar(m), ng, Op::Mean(x))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        let (&[m, k], &[k2, n]) = match (va.shape(), vb.shape()) {
            (s @ &[_, _], t @ &[_, _]) => (
                <&[usize; 2]>::try_from(s).unwrap(),
                <&[usize; 2]>::try_from(t).unwrap(),
            ),
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "matmul",
                    lhs: va.shape().to_vec(),
                    rhs: vb.shape().to_vec(),
                })
            }
        };
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_into(va.data(), vb.data(), m, k, n, &mut out);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out), ng, Op::MatMul(a, b)))
    }

    /// Dense layer convenience: W [m,n] applied to a vector [n] -> [m].
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId, TensorError> {
        let n = match self.value(x).shape() {
            &[n] => n,
            other => {
                return Err(TensorError::InvalidArg {
                    op: "matvec",
                    msg: format!("expected rank-1 input, got {:?}", other),
                })
            }
        };
        let xc = self.reshape(x, vec![n, 1])?;
        let y = self.matmul(w, xc)?;
        let m = self.value(y).shape()[0];
        self.reshape(y, vec![m])
    }

    /// 2-D convolution, valid or zero-padded, NCHW layouts:
    /// input [Ci,H,W], kernel [Co,Ci,kh,kw] -> [Co,Ho,Wo].
    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId, TensorError> {
        let (vx, vk) = (self.value(input), self.value(kernel));
        let (&[ci, h, w], &[co, ci2, kh, kw]) = match (vx.shape(), vk.shape()) {
            (s @ &[_, _, _], t @ &[_, _, _, _]) => (
                <&[usize; 3]>::try_from(s).unwrap(),
                <&[usize; 4]>::try_from(t).unwrap(),
            ),
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d",
                    lhs: vx.shape().to_vec(),
                    rhs: vk.shape().to_vec(),
                })
            }
        };
        if ci != ci2 {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: vx.shape().to_vec(),
                rhs: vk.shape().to_vec(),
            });
        }
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(TensorError::InvalidArg {
                op: "conv2d",
                msg: format!(
                    "input {}x{} (pad {}) too small for kernel {}x{} stride {}",
                    h, w, pad, kh, kw, stride
                ),
            });
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; co * ho * wo];
        conv2d_forward(
            vx.data(),
            (ci, h, w),
            vk.data(),
            (co, kh, kw),
            stride,
            pad,
            &mut out,
            (ho, wo),
        );
        let ng = self.needs(input) || self.needs(kernel);
        Ok(self.push(
            Tensor::new(vec![co, ho, wo], out),
            ng,
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
            },
        ))
    }

    /// Per-channel bias: x [C,H,W] + b [C].
    pub fn bias_channels(&mut self, x: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (vx, vb) = (self.value(x), self.value(b));
        match (vx.shape(), vb.shape()) {
            (&[c, h, w], &[cb]) if c == cb => {
                let plane = h * w;
                let mut data = vx.data().to_vec();
                for ch in 0..c {
                    let bias = vb.data()[ch];
                    for v in &mut data[ch * plane..(ch + 1) * plane] {
                        *v += bias;
                    }
                }
                let ng = self.needs(x) || self.needs(b);
                Ok(self.push(
                    Tensor::new(vec![c, h, w], data),
                    ng,
                    Op::BiasChannels(x, b),
                ))
            }
            _ => Err(TensorError::ShapeMismatch {
                op: "bias_channels",
                lhs: vx.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            }),
        }
    }

    /// Weighted sliding-window mean over all valid NxN windows,
    /// per channel: [C,H,W] -> [C,H-N+1,W-N+1]. `weights` is the 1-D
    /// separable window profile (length N, summing to 1).
    pub fn window_mean(&mut self, x: NodeId, weights: &[f64]) -> Result<NodeId, TensorError> {
        let v = self.value(x);
        let n = weights.len();
        let (&[c, h, w],) = match v.shape() {
            s @ [_, _, _] => (<&[usize; 3]>::try_from(s).unwrap(),),
            other => {
                return Err(TensorError::InvalidArg {
                    op: "window_mean",
                    msg: format!("expected [C,H,W], got {:?}", other),
                })
            }
        };
        if n == 0 || h < n || w < n {
            return Err(TensorError::InvalidArg {
                op: "window_mean",
                msg: format!("image {}x{} smaller than window {}", h, w, n),
            });
        }
        let (ho, wo) = (h - n + 1, w - n + 1);
        let mut out = vec![0.0; c * ho * wo];
        window_mean_forward(v.data(), (c, h, w), weights, &mut out, (ho, wo));
        let ng = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![c, ho, wo], out),
            ng,
            Op::WindowMean {
                input: x,
                weights: weights.to_vec(),
            },
        ))
    }

    /// Concatenate along the leading axis; trailing dims must agree.
    pub fn concat0(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != vb.shape().len()
            || va.shape().is_empty()
            || va.shape()[1..] != vb.shape()[1..]
        {
            return Err(TensorError::ShapeMismatch {
                op: "concat0",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut shape = va.shape().to_vec();
        shape[0] += vb.shape()[0];
        let mut data = Vec::with_capacity(va.numel() + vb.numel());
        data.extend_from_slice(va.data());
        data.extend_from_slice(vb.data());
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data), ng, Op::Concat0(a, b)))
    }

    /// Slice `len` entries of the leading axis starting at `start`.
    pub fn slice0(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, TensorError> {
        let v = self.value(x);
        if v.shape().is_empty() || start + len > v.shape()[0] {
            return Err(TensorError::InvalidArg {
                op: "slice0",
                msg: format!(
                    "slice [{}, {}) out of bounds for shape {:?}",
                    start,
                    start + len,
                    v.shape()
                ),
            });
        }
        let inner: usize = v.shape()[1..].iter().product();
        let mut shape = v.shape().to_vec();
        shape[0] = len;
        let data = v.data()[start * inner..(start + len) * inner].to_vec();
        let ng = self.needs(x);
        Ok(self.push(Tensor::new(shape, data), ng, Op::Slice0 { input: x, start }))
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId, TensorError> {
        let v = self.value(x);
        if shape.iter().product::<usize>() != v.numel() {
            return Err(TensorError::InvalidArg {
                op: "reshape",
                msg: format!("cannot reshape {:?} into {:?}", v.shape(), shape),
            });
        }
        let out = Tensor::new(shape, v.data().to_vec());
        let ng = self.needs(x);
        Ok(self.push(out, ng, Op::Reshape(x)))
    }

    /// Bilinear resize with half-pixel centers: [C,H,W] -> [C,oh,ow].
    pub fn resize_bilinear(
        &mut self,
        x: NodeId,
        oh: usize,
        ow: usize,
    ) -> Result<NodeId, TensorError> {
        let v = self.value(x);
        let (&[c, h, w],) = match v.shape() {
            s @ [_, _, _] => (<&[usize; 3]>::try_from(s).unwrap(),),
            other => {
                return Err(TensorError::InvalidArg {
                    op: "resize_bilinear",
                    msg: format!("expected [C,H,W], got {:?}", other),
                })
            }
        };
        if oh == 0 || ow == 0 {
            return Err(TensorError::InvalidArg {
                op: "resize_bilinear",
                msg: "zero output size".into(),
            });
        }
        let taps_y = bilinear_taps(h, oh);
        let taps_x = bilinear_taps(w, ow);
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            let src = &v.data()[ch * h * w..(ch + 1) * h * w];
            let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
            for (oy, &(y0, y1, fy)) in taps_y.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in taps_x.iter().enumerate() {
                    let a = src[y0 * w + x0];
                    let b = src[y0 * w + x1];
                    let cc = src[y1 * w + x0];
                    let d = src[y1 * w + x1];
                    dst[oy * ow + ox] = (1.0 - fy) * ((1.0 - fx) * a + fx * b)
                        + fy * ((1.0 - fx) * cc + fx * d);
                }
            }
        }
        let ng = self.needs(x);
        Ok(self.push(
            Tensor::new(vec![c, oh, ow], out),
            ng,
            Op::ResizeBilinear(x),
        ))
    }

    /// Named parameters registered so far, in registration order.
    pub fn registered_params(&self) -> &[(String, NodeId)] {
        &self.params
    }

    /// Reverse-mode pass from a scalar loss. Gradients accumulate
    /// additively across every use of a tensor; nodes never reached
    /// keep `None` (query with [`Gradients::wrt_or_zeros`]).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.idx()] = Some(vec![1.0]);
        for i in (0..=loss.idx()).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = grads[i].take().expect("checked above");
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Gradients of all registered parameters as name -> tensor,
    /// zeros for parameters the loss never reached.
    pub fn param_grads(&self, grads: &Gradients) -> std::collections::BTreeMap<String, Tensor> {
        let mut out = std::collections::BTreeMap::new();
        for (name, id) in &self.params {
            let v = self.value(*id);
            let g = grads.wrt_or_zeros(*id, v.numel());
            out.insert(name.clone(), Tensor::new(v.shape().to_vec(), g));
        }
        out
    }

    fn accum(grads: &mut [Option<Vec<f64>>], id: NodeId, numel: usize) -> &mut [f64] {
        grads[id.idx()].get_or_insert_with(|| vec![0.0; numel])
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut Vec<Option<Vec<f64>>>) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if self.needs(id) {
                        let n = self.value(id).numel();
                        let dst = Self::accum(grads, id, n);
                        for (d, &gv) in dst.iter_mut().zip(g) {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    let n = self.value(*a).numel();
                    let dst = Self::accum(grads, *a, n);
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if self.needs(*b) {
                    let n = self.value(*b).numel();
                    let dst = Self::accum(grads, *b, n);
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d -= gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let vb = self.value(*b).data().to_vec();
                    let dst = Self::accum(grads, *a, vb.len());
                    for ((d, &gv), &bv) in dst.iter_mut().zip(g).zip(&vb) {
                        *d += gv * bv;
                    }
                }
                if self.needs(*b) {
                    let va = self.value(*a).data().to_vec();
                    let dst = Self::accum(grads, *b, va.len());
                    for ((d, &gv), &av) in dst.iter_mut().zip(g).zip(&va) {
                        *d += gv * av;
                    }
                }
            }
            Op::Div(a, b) => {
                let vb = self.value(*b).data();
                if self.needs(*a) {
                    let vb = vb.to_vec();
                    let dst = Self::accum(grads, *a, vb.len());
                    for ((d, &gv), &bv) in dst.iter_mut().zip(g).zip(&vb) {
                        *d += gv / bv;
                    }
                }
                if self.needs(*b) {
                    let va = self.value(*a).data().to_vec();
                    let vb = self.value(*b).data().to_vec();
                    let dst = Self::accum(grads, *b, vb.len());
                    for i in 0..vb.len() {
                        dst[i] -= g[i] * va[i] / (vb[i] * vb[i]);
                    }
                }
            }
            Op::AddScalar(x) => {
                if self.needs(*x) {
                    let n = self.value(*x).numel();
                    let dst = Self::accum(grads, *x, n);
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
            Op::MulScalar(x, c) => {
                if self.needs(*x) {
                    let n = self.value(*x).numel();
                    let c = *c;
                    let dst = Self::accum(grads, *x, n);
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += gv * c;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = {
                    let s = self.value(*a).shape();
                    (s[0], s[1])
                };
                let n = self.value(*b).shape()[1];
                if self.needs(*a) {
                    // dA = g . B^T
                    let vb = self.value(*b).data().to_vec();
                    let dst = Self::accum(grads, *a, m * k);
                    for i in 0..m {
                        for kk in 0..k {
                            let mut s = 0.0;
                            let grow = &g[i * n..(i + 1) * n];
                            let brow = &vb[kk * n..(kk + 1) * n];
                            for j in 0..n {
                                s += grow[j] * brow[j];
                            }
                            dst[i * k + kk] += s;
                        }
                    }
                }
                if self.needs(*b) {
                    // dB = A^T . g
                    let va = self.value(*a).data().to_vec();
                    let dst = Self::accum(grads, *b, k * n);
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let aik = va[i * k + kk];
                            if aik == 0.0 {
                                continue;
                            }
                            let drow = &mut dst[kk * n..(kk + 1) * n];
                            for j in 0..n {
                                drow[j] += aik * grow[j];
                            }
                        }
                    }
                }
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                pad,
            } => {
                let (ci, h, w) = {
                    let s = self.value(*input).shape();
                    (s[0], s[1], s[2])
                };
                let (co, kh, kw) = {
                    let s = self.value(*kernel).shape();
                    (s[0], s[2], s[3])
                };
                let (ho, wo) = {
                    let s = self.nodes[i].value.shape();
                    (s[1], s[2])
                };
                if self.needs(*input) {
                    let vk = self.value(*kernel).data().to_vec();
                    let dst = Self::accum(grads, *input, ci * h * w);
                    conv2d_backward_input(
                        dst,
                        (ci, h, w),
                        &vk,
                        (co, kh, kw),
                        *stride,
                        *pad,
                        g,
                        (ho, wo),
                    );
                }
                if self.needs(*kernel) {
                    let vx = self.value(*input).data().to_vec();
                    let dst = Self::accum(grads, *kernel, co * ci * kh * kw);
                    conv2d_backward_kernel(
                        &vx,
                        (ci, h, w),
                        dst,
                        (co, kh, kw),
                        *stride,
                        *pad,
                        g,
                        (ho, wo),
                    );
                }
            }
            Op::BiasChannels(x, b) => {
                if self.needs(*x) {
                    let n = self.value(*x).numel();
                    let dst = Self::accum(grads, *x, n);
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
                if self.needs(*b) {
                    let (c, h, w) = {
                        let s = self.value(*x).shape();
                        (s[0], s[1], s[2])
                    };
                    let plane = h * w;
                    let dst = Self::accum(grads, *b, c);
                    for ch in 0..c {
                        dst[ch] += g[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
                    }
                }
            }
            Op::WindowMean { input, weights } => {
                if self.needs(*input) {
                    let (c, h, w) = {
                        let s = self.value(*input).shape();
                        (s[0], s[1], s[2])
                    };
                    let (ho, wo) = {
                        let s = self.nodes[i].value.shape();
                        (s[1], s[2])
                    };
                    let dst = Self::accum(grads, *input, c * h * w);
                    window_mean_backward(dst, (c, h, w), weights, g, (ho, wo));
                }
            }
            Op::Abs(x) => {
                if self.needs(*x) {
                    let vx = self.value(*x).data().to_vec();
                    let dst = Self::accum(grads, *x, vx.len());
                    for i in 0..vx.len() {
                        dst[i] += g[i] * if vx[i] >= 0.0 { 1.0 } else { -1.0 };
                    }
                }
            }
            Op::Square(x) => {
                if self.needs(*x) {
                    let vx = self.value(*x).data().to_vec();
                    let dst = Self::accum(grads, *x, vx.len());
                    for i in 0..vx.len() {
                        dst[i] += g[i] * 2.0 * vx[i];
                    }
                }
            }
            Op::Sqrt(x) => {
                if self.needs(*x) {
                    let out = self.nodes[i].value.data().to_vec();
                    let dst = Self::accum(grads, *x, out.len());
                    for i in 0..out.len() {
                        dst[i] += g[i] * 0.5 / out[i];
                    }
                }
            }
            Op::Sin(x) => {
                if self.needs(*x) {
                    let vx = self.value(*x).data().to_vec();
                    let dst = Self::accum(grads, *x, vx.len());
                    for i in 0..vx.len() {
                        dst[i] += g[i] * vx[i].cos();
                    }
                }
            }
            Op::Cos(x) => {
                if self.needs(*x) {
                    let vx = self.value(*x).data().to_vec();
                    let dst = Self::accum(grads, *x, vx.len());
                    for i in 0..vx.len() {
                        dst[i] -= g[i] * vx[i].sin();
                    }
                }
            }
            Op::Acos(x) => {
                if self.needs(*x) {
                    let vx = self.value(*x).data().to_vec();
                    let dst = Self::accum(grads, *x, vx.len());
                    let lim = 1.0 - ACOS_GRAD_CLAMP;
                    for i in 0..vx.len() {
                        let xc = vx[i].clamp(-lim, lim);
                        dst[i] -= g[i] / (1.0 - xc * xc).sqrt();
                    }
                }
            }
            Op::Sigmoid(x) => {
                if self.needs(*x) {
                    let out = self.nodes[i].value.data().to_vec();
                    let dst = Self::accum(grads, *x, out.len());
                    for i in 0..out.len() {
                        dst[i] += g[i] * out[i] * (1.0 - out[i]);
                    }
                }
            }
            Op::LeakyRelu(x, slope) => {
                if self.needs(*x) {
                    let vx = self.value(*x).data().to_vec();
                    let slope = *slope;
                    let dst = Self::accum(grads, *x, vx.len());
                    for i in 0..vx.len() {
                        dst[i] += g[i] * if vx[i] > 0.0 { 1.0 } else { slope };
                    }
                }
            }
            Op::Clamp(x, lo, hi) => {
                if self.needs(*x) {
                    let vx = self.value(*x).data().to_vec();
                    let (lo, hi) = (*lo, *hi);
                    let dst = Self::accum(grads, *x, vx.len());
                    for i in 0..vx.len() {
                        if vx[i] > lo && vx[i] < hi {
                            dst[i] += g[i];
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if self.needs(*x) {
                    let n = self.value(*x).numel();
                    let gv = g[0];
                    let dst = Self::accum(grads, *x, n);
                    for d in dst.iter_mut() {
                        *d += gv;
                    }
                }
            }
            Op::Mean(x) => {
                if self.needs(*x) {
                    let n = self.value(*x).numel();
                    let gv = g[0] / n as f64;
                    let dst = Self::accum(grads, *x, n);
                    for d in dst.iter_mut() {
                        *d += gv;
                    }
                }
            }
            Op::Concat0(a, b) => {
                let na = self.value(*a).numel();
                if self.needs(*a) {
                    let dst = Self::accum(grads, *a, na);
                    for (d, &gv) in dst.iter_mut().zip(&g[..na]) {
                        *d += gv;
                    }
                }
                if self.needs(*b) {
                    let nb = self.value(*b).numel();
                    let dst = Self::accum(grads, *b, nb);
                    for (d, &gv) in dst.iter_mut().zip(&g[na..]) {
                        *d += gv;
                    }
                }
            }
            Op::Slice0 { input, start } => {
                if self.needs(*input) {
                    let v = self.value(*input);
                    let inner: usize = v.shape()[1..].iter().product();
                    let n = v.numel();
                    let off = start * inner;
                    let dst = Self::accum(grads, *input, n);
                    for (d, &gv) in dst[off..off + g.len()].iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
            Op::Reshape(x) => {
                if self.needs(*x) {
                    let n = self.value(*x).numel();
                    let dst = Self::accum(grads, *x, n);
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += gv;
                    }
                }
            }
            Op::ResizeBilinear(x) => {
                if self.needs(*x) {
                    let (c, h, w) = {
                        let s = self.value(*x).shape();
                        (s[0], s[1], s[2])
                    };
                    let (oh, ow) = {
                        let s = self.nodes[i].value.shape();
                        (s[1], s[2])
                    };
                    let taps_y = bilinear_taps(h, oh);
                    let taps_x = bilinear_taps(w, ow);
                    let dst = Self::accum(grads, *x, c * h * w);
                    for ch in 0..c {
                        let gsrc = &g[ch * oh * ow..(ch + 1) * oh * ow];
                        let dplane = &mut dst[ch * h * w..(ch + 1) * h * w];
                        for (oy, &(y0, y1, fy)) in taps_y.iter().enumerate() {
                            for (ox, &(x0, x1, fx)) in taps_x.iter().enumerate() {
                                let gv = gsrc[oy * ow + ox];
                                dplane[y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                                dplane[y0 * w + x1] += gv * (1.0 - fy) * fx;
                                dplane[y1 * w + x0] += gv * fy * (1.0 - fx);
                                dplane[y1 * w + x1] += gv * fy * fx;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_forward(
    x: &[f64],
    (ci_n, h, w): (usize, usize, usize),
    k: &[f64],
    (co_n, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
    out: &mut [f64],
    (ho, wo): (usize, usize),
) {
    for co in 0..co_n {
        let out_plane = &mut out[co * ho * wo..(co + 1) * ho * wo];
        for ci in 0..ci_n {
            let in_plane = &x[ci * h * w..(ci + 1) * h * w];
            let kbase = (co * ci_n + ci) * kh * kw;
            for ky in 0..kh {
                for kx in 0..kw {
                    let wgt = k[kbase + ky * kw + kx];
                    if wgt == 0.0 {
                        continue;
                    }
                    if stride == 1 {
                        let oy_lo = pad.saturating_sub(ky);
                        let oy_hi = (h + pad - ky).min(ho);
                        let ox_lo = pad.saturating_sub(kx);
                        let ox_hi = (w + pad - kx).min(wo);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy + ky - pad;
                            let orow = &mut out_plane[oy * wo + ox_lo..oy * wo + ox_hi];
                            let irow =
                                &in_plane[iy * w + ox_lo + kx - pad..iy * w + ox_hi + kx - pad];
                            for (o, &iv) in orow.iter_mut().zip(irow) {
                                *o += wgt * iv;
                            }
                        }
                    } else {
                        for oy in 0..ho {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy as usize >= h {
                                continue;
                            }
                            let irow = &in_plane[iy as usize * w..(iy as usize + 1) * w];
                            let orow = &mut out_plane[oy * wo..(oy + 1) * wo];
                            for ox in 0..wo {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix as usize >= w {
                                    continue;
                                }
                                orow[ox] += wgt * irow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_input(
    dx: &mut [f64],
    (ci_n, h, w): (usize, usize, usize),
    k: &[f64],
    (co_n, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
    dy: &[f64],
    (ho, wo): (usize, usize),
) {
    for co in 0..co_n {
        let dy_plane = &dy[co * ho * wo..(co + 1) * ho * wo];
        for ci in 0..ci_n {
            let dx_plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            let kbase = (co * ci_n + ci) * kh * kw;
            for ky in 0..kh {
                for kx in 0..kw {
                    let wgt = k[kbase + ky * kw + kx];
                    if wgt == 0.0 {
                        continue;
                    }
                    if stride == 1 {
                        let oy_lo = pad.saturating_sub(ky);
                        let oy_hi = (h + pad - ky).min(ho);
                        let ox_lo = pad.saturating_sub(kx);
                        let ox_hi = (w + pad - kx).min(wo);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy + ky - pad;
                            let grow = &dy_plane[oy * wo + ox_lo..oy * wo + ox_hi];
                            let drow = &mut dx_plane
                                [iy * w + ox_lo + kx - pad..iy * w + ox_hi + kx - pad];
                            for (d, &gv) in drow.iter_mut().zip(grow) {
                                *d += wgt * gv;
                            }
                        }
                    } else {
                        for oy in 0..ho {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy as usize >= h {
                                continue;
                            }
                            for ox in 0..wo {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix as usize >= w {
                                    continue;
                                }
                                dx_plane[iy as usize * w + ix as usize] +=
                                    wgt * dy_plane[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv2d_backward_kernel(
    x: &[f64],
    (ci_n, h, w): (usize, usize, usize),
    dk: &mut [f64],
    (co_n, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
    dy: &[f64],
    (ho, wo): (usize, usize),
) {
    for co in 0..co_n {
        let dy_plane = &dy[co * ho * wo..(co + 1) * ho * wo];
        for ci in 0..ci_n {
            let in_plane = &x[ci * h * w..(ci + 1) * h * w];
            let kbase = (co * ci_n + ci) * kh * kw;
            for ky in 0..kh {
                for kx in 0..kw {
                    let mut s = 0.0;
                    if stride == 1 {
                        let oy_lo = pad.saturating_sub(ky);
                        let oy_hi = (h + pad - ky).min(ho);
                        let ox_lo = pad.saturating_sub(kx);
                        let ox_hi = (w + pad - kx).min(wo);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy + ky - pad;
                            let grow = &dy_plane[oy * wo + ox_lo..oy * wo + ox_hi];
                            let irow =
                                &in_plane[iy * w + ox_lo + kx - pad..iy * w + ox_hi + kx - pad];
                            for (&gv, &iv) in grow.iter().zip(irow) {
                                s += gv * iv;
                            }
                        }
                    } else {
                        for oy in 0..ho {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy as usize >= h {
                                continue;
                            }
                            for ox in 0..wo {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix < 0 || ix as usize >= w {
                                    continue;
                                }
                                s += dy_plane[oy * wo + ox]
                                    * in_plane[iy as usize * w + ix as usize];
                            }
                        }
                    }
                    dk[kbase + ky * kw + kx] += s;
                }
            }
        }
    }
}

/// Separable two-pass weighted window mean (valid windows only).
fn window_mean_forward(
    x: &[f64],
    (c, h, w): (usize, usize, usize),
    wts: &[f64],
    out: &mut [f64],
    (ho, wo): (usize, usize),
) {
    let _n = wts.len();
    let mut tmp = vec![0.0; h * wo];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        tmp.iter_mut().for_each(|v| *v = 0.0);
        // horizontal pass
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            let trow = &mut tmp[y * wo..(y + 1) * wo];
            for (t, &wt) in wts.iter().enumerate() {
                let src = &row[t..t + wo];
                for (o, &v) in trow.iter_mut().zip(src) {
                    *o += wt * v;
                }
            }
        }
        // vertical pass
        let oplane = &mut out[ch * ho * wo..(ch + 1) * ho * wo];
        for oy in 0..ho {
            let orow = &mut oplane[oy * wo..(oy + 1) * wo];
            for (t, &wt) in wts.iter().enumerate() {
                let trow = &tmp[(oy + t) * wo..(oy + t + 1) * wo];
                for (o, &v) in orow.iter_mut().zip(trow) {
                    *o += wt * v;
                }
            }
        }
    }
}

fn window_mean_backward(
    dx: &mut [f64],
    (c, h, w): (usize, usize, usize),
    wts: &[f64],
    dy: &[f64],
    (ho, wo): (usize, usize),
) {
    let mut dtmp = vec![0.0; h * wo];
    for ch in 0..c {
        dtmp.iter_mut().for_each(|v| *v = 0.0);
        let gplane = &dy[ch * ho * wo..(ch + 1) * ho * wo];
        // transpose of vertical pass
        for oy in 0..ho {
            let grow = &gplane[oy * wo..(oy + 1) * wo];
            for (t, &wt) in wts.iter().enumerate() {
                let trow = &mut dtmp[(oy + t) * wo..(oy + t + 1) * wo];
                for (d, &gv) in trow.iter_mut().zip(grow) {
                    *d += wt * gv;
                }
            }
        }
        // transpose of horizontal pass
        let dplane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            let trow = &dtmp[y * wo..(y + 1) * wo];
            let drow = &mut dplane[y * w..(y + 1) * w];
            for (t, &wt) in wts.iter().enumerate() {
                let dst = &mut drow[t..t + wo];
                for (d, &gv) in dst.iter_mut().zip(trow) {
                    *d += wt * gv;
                }
            }
        }
    }
}

/// (low index, high index, fraction) taps per output coordinate, using
/// half-pixel centers clamped at the borders.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (s.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            let f = if hi > lo { s - lo as f64 } else { 0.0 };
            (lo, hi, f)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec())
    }

    #[test]
    fn add_elementwise() {
        let mut g = Graph::new();
        let a = g.input(&t(&[2], &[1.0, 2.0]));
        let b = g.input(&t(&[2], &[3.0, 4.0]));
        let c = g.add(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn shape_mismatch_is_descriptive() {
        let mut g = Graph::new();
        let a = g.input(&Tensor::zeros(vec![2, 3]));
        let b = g.input(&Tensor::zeros(vec![3, 2]));
        let err = g.add(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("add") && msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let eye = g.input(&t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        let a_data: Vec<f64> = (0..9).map(|i| (i as f64) * 0.7 - 2.0).collect();
        let a = g.input(&t(&[3, 3], &a_data));
        let c = g.matmul(eye, a).unwrap();
        assert_eq!(g.value(c).data(), a_data.as_slice());
    }

    #[test]
    fn conv2d_matches_nested_loop_oracle() {
        let mut rng = crate::rng::Rng64::new(11);
        let (h, w, kh, kw) = (8, 8, 3, 3);
        let x: Vec<f64> = (0..h * w).map(|_| rng.next_f64()).collect();
        let k: Vec<f64> = (0..kh * kw).map(|_| rng.next_f64() - 0.5).collect();
        let mut g = Graph::new();
        let xn = g.input(&t(&[1, h, w], &x));
        let kn = g.input(&t(&[1, 1, kh, kw], &k));
        let y = g.conv2d(xn, kn, 1, 0).unwrap();
        // direct quadruple loop
        let (ho, wo) = (h - kh + 1, w - kw + 1);
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = 0.0;
                for ky in 0..kh {
                    for kx in 0..kw {
                        s += k[ky * kw + kx] * x[(oy + ky) * w + ox + kx];
                    }
                }
                let got = g.value(y).data()[oy * wo + ox];
                assert!((got - s).abs() < 1e-12, "({oy},{ox}): {got} vs {s}");
            }
        }
    }

    #[test]
    fn conv2d_padding_and_stride_shapes() {
        let mut g = Graph::new();
        let x = g.input(&Tensor::zeros(vec![3, 16, 16]));
        let k = g.input(&Tensor::zeros(vec![8, 3, 3, 3]));
        let same = g.conv2d(x, k, 1, 1).unwrap();
        assert_eq!(g.value(same).shape(), &[8, 16, 16]);
        let down = g.conv2d(x, k, 2, 1).unwrap();
        assert_eq!(g.value(down).shape(), &[8, 8, 8]);
    }

    #[test]
    fn backward_sum_of_squares() {
        let mut g = Graph::new();
        let x = g.variable(&t(&[3], &[1.0, 2.0, 3.0]));
        let sq = g.square(x);
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_mean_is_uniform() {
        let mut g = Graph::new();
        let x = g.variable(&Tensor::full(vec![5], 2.0));
        let loss = g.mean(x);
        let grads = g.backward(loss).unwrap();
        for &gv in grads.wrt(x).unwrap() {
            assert!((gv - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.variable(&Tensor::zeros(vec![4]));
        let y = g.square(x);
        assert!(matches!(
            g.backward(y),
            Err(TensorError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn gradient_accumulates_over_reuse() {
        // loss = sum(x + x) -> grad 2 everywhere
        let mut g = Graph::new();
        let x = g.variable(&Tensor::full(vec![3], 1.5));
        let two_x = g.add(x, x).unwrap();
        let loss = g.sum(two_x);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn unreachable_param_gets_zeros() {
        let mut g = Graph::new();
        let x = g.variable(&Tensor::full(vec![2], 1.0));
        let orphan = g.param("unused", &Tensor::full(vec![2], 1.0));
        let loss = g.sum(x);
        let grads = g.backward(loss).unwrap();
        assert!(grads.wrt(orphan).is_none());
        assert_eq!(grads.wrt_or_zeros(orphan, 2), vec![0.0, 0.0]);
        let by_name = g.param_grads(&grads);
        assert_eq!(by_name["unused"].data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_linearity_over_two_paths() {
        // loss = sum(a*x) + sum(b*x) vs separate backwards summed
        let mut rng = crate::rng::Rng64::new(5);
        let xv = t(&[4], &(0..4).map(|_| rng.next_f64()).collect::<Vec<_>>());
        let av = t(&[4], &(0..4).map(|_| rng.next_f64()).collect::<Vec<_>>());
        let bv = t(&[4], &(0..4).map(|_| rng.next_f64()).collect::<Vec<_>>());

        let combined = {
            let mut g = Graph::new();
            let x = g.variable(&xv);
            let a = g.input(&av);
            let b = g.input(&bv);
            let ax = g.mul(a, x).unwrap();
            let bx = g.mul(b, x).unwrap();
            let sa = g.sum(ax);
            let sb = g.sum(bx);
            let loss = g.add(sa, sb).unwrap();
            let grads = g.backward(loss).unwrap();
            grads.wrt(x).unwrap().to_vec()
        };
        let path = |coef: &Tensor| {
            let mut g = Graph::new();
            let x = g.variable(&xv);
            let a = g.input(coef);
            let ax = g.mul(a, x).unwrap();
            let loss = g.sum(ax);
            let grads = g.backward(loss).unwrap();
            grads.wrt(x).unwrap().to_vec()
        };
        let (ga, gb) = (path(&av), path(&bv));
        for i in 0..4 {
            assert!((combined[i] - (ga[i] + gb[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn concat_slice_roundtrip() {
        let mut g = Graph::new();
        let a = g.input(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = g.input(&t(&[1, 2], &[5.0, 6.0]));
        let c = g.concat0(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[3, 2]);
        let back = g.slice0(c, 2, 1).unwrap();
        assert_eq!(g.value(back).data(), &[5.0, 6.0]);
    }

    #[test]
    fn resize_same_size_is_identity() {
        let mut rng = crate::rng::Rng64::new(2);
        let data: Vec<f64> = (0..3 * 4 * 4).map(|_| rng.next_f64()).collect();
        let mut g = Graph::new();
        let x = g.input(&t(&[3, 4, 4], &data));
        let y = g.resize_bilinear(x, 4, 4).unwrap();
        for (a, b) in g.value(y).data().iter().zip(&data) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn resize_doubles_constant_plane_exactly() {
        let mut g = Graph::new();
        let x = g.input(&Tensor::full(vec![1, 3, 3], 0.7));
        let y = g.resize_bilinear(x, 6, 6).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn detach_stops_gradient() {
        let mut g = Graph::new();
        let x = g.variable(&t(&[2], &[1.0, 2.0]));
        let d = g.detach(x);
        let sq = g.square(d);
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert!(grads.wrt(x).is_none());
    }

    #[test]
    fn window_mean_uniform_matches_loop() {
        let mut rng = crate::rng::Rng64::new(3);
        let (h, w, n) = (6, 7, 3);
        let data: Vec<f64> = (0..h * w).map(|_| rng.next_f64()).collect();
        let wts = vec![1.0 / n as f64; n];
        let mut g = Graph::new();
        let x = g.input(&t(&[1, h, w], &data));
        let y = g.window_mean(x, &wts).unwrap();
        let (ho, wo) = (h - n + 1, w - n + 1);
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = 0.0;
                for dy in 0..n {
                    for dx in 0..n {
                        s += data[(oy + dy) * w + ox + dx];
                    }
                }
                s /= (n * n) as f64;
                let got = g.value(y).data()[oy * wo + ox];
                assert!((got - s).abs() < 1e-12);
            }
        }
    }
}
