//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every op applied to its variables. Parameters are
//! borrowed from the networks that own them, so building a graph never
//! copies weights. [`Graph::backward`] returns gradients for parameters and
//! for leaves created with [`Graph::variable`]; everything else is freed as
//! soon as it has been propagated.
//!
//! Objectives are not built from primitive ops. They are evaluated in `f64`
//! by [`crate::losses`] together with their analytic gradient and attached
//! with [`Graph::loss`].

use alloc::borrow::Cow;
use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::kernels::{self, ConvGeom};
use crate::{Error, Result, Tensor};

/// Identifies one parameter tensor: owning network and index within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamKey {
    pub owner: u32,
    pub index: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Clamp applied before every logarithm inside the graph.
pub const LOG_EPS: f32 = 1e-12;

enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, co: usize, cols: Option<Vec<f32>> },
    Add(Var, Var),
    Scale(Var, f32),
    MulMap { x: Var, gate: Var },
    Relu(Var),
    LeakyRelu(Var, f32),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Resize { x: Var, from: (usize, usize) },
    InstanceNorm { x: Var, inv_std: Vec<f32> },
    Softmax(Var),
    SelfInfo(Var),
    Loss(Vec<(Var, Tensor)>),
    WeightedSum(Vec<(Var, f32)>),
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    needs_grad: bool,
    param: Option<ParamKey>,
}

#[derive(Default)]
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    params: BTreeMap<ParamKey, Tensor>,
    leaves: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn param(&self, key: ParamKey) -> Option<&Tensor> {
        self.params.get(&key)
    }

    pub fn take_param(&mut self, key: ParamKey) -> Option<Tensor> {
        self.params.remove(&key)
    }

    pub fn params(&self) -> impl Iterator<Item = (&ParamKey, &Tensor)> {
        self.params.iter()
    }

    /// Gradient of a leaf created with [`Graph::variable`] or [`Graph::param`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v.0)
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value: Cow::Owned(value), op, needs_grad, param: None });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: Cow::Owned(t), op: Op::Leaf, needs_grad: false, param: None });
        Var(self.nodes.len() - 1)
    }

    pub fn input_ref(&mut self, t: &'p Tensor) -> Var {
        self.nodes.push(Node { value: Cow::Borrowed(t), op: Op::Leaf, needs_grad: false, param: None });
        Var(self.nodes.len() - 1)
    }

    /// Input leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: Cow::Owned(t), op: Op::Leaf, needs_grad: true, param: None });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, key: ParamKey, t: &'p Tensor) -> Var {
        self.nodes.push(Node { value: Cow::Borrowed(t), op: Op::Leaf, needs_grad: true, param: Some(key) });
        Var(self.nodes.len() - 1)
    }

    /// Parameter that takes part in the forward pass but receives no gradient.
    pub fn frozen_param(&mut self, t: &'p Tensor) -> Var {
        self.input_ref(t)
    }

    /// Copy of `v` cut off from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.input(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (ci, h, wd) = self.value(x).chw();
        let wdims = self.value(w).dims();
        if wdims.len() != 4 || wdims[1] != ci || wdims[2] != wdims[3] {
            return Err(Error::shape(
                "conv2d",
                alloc::format!("weight {:?} against input with {} channels", wdims, ci),
            ));
        }
        let (co, k) = (wdims[0], wdims[2]);
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::shape("conv2d", alloc::format!("{h}x{wd} input smaller than kernel {k}")));
        }
        let geom = ConvGeom { ci, h, w: wd, k, stride, pad };
        let (ho, wo) = geom.out_hw();
        let n = ho * wo;
        let cols = if geom.is_pointwise() { None } else { Some(kernels::im2col(self.value(x).data(), geom)) };
        let mut out = vec![0.0f32; co * n];
        {
            let colref = cols.as_deref().unwrap_or(self.value(x).data());
            kernels::gemm(co, ci * k * k, n, self.value(w).data(), false, colref, false, 0.0, &mut out);
        }
        if let Some(b) = b {
            let bias = self.value(b).data();
            if bias.len() != co {
                return Err(Error::shape("conv2d", "bias length differs from output channels"));
            }
            for (o, row) in out.chunks_mut(n).enumerate() {
                for v in row {
                    *v += bias[o];
                }
            }
        }
        let t = Tensor::from_vec(&[co, ho, wo], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(t, Op::Conv2d { x, w, b, geom, co, cols }, &inputs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).dims() != self.value(b).dims() {
            return Err(Error::shape(
                "add",
                alloc::format!("{:?} vs {:?}", self.value(a).dims(), self.value(b).dims()),
            ));
        }
        let mut t = self.value(a).clone();
        t.add_assign(self.value(b));
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, k: f32) -> Var {
        let mut t = self.value(x).clone();
        t.scale(k);
        self.push(t, Op::Scale(x, k), &[x])
    }

    /// `x ⊙ gate` where `gate` is a single-channel map broadcast over channels.
    pub fn mul_map(&mut self, x: Var, gate: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw();
        let (gc, gh, gw) = self.value(gate).chw();
        if gc != 1 || gh != h || gw != w {
            return Err(Error::shape("mul_map", alloc::format!("gate {gc}x{gh}x{gw} against {c}x{h}x{w}")));
        }
        let g = self.value(gate).data();
        let mut out = self.value(x).data().to_vec();
        for plane in out.chunks_mut(h * w) {
            for (v, a) in plane.iter_mut().zip(g) {
                *v *= *a;
            }
        }
        let t = Tensor::from_vec(&[c, h, w], out)?;
        Ok(self.push(t, Op::MulMap { x, gate }, &[x, gate]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        for v in t.data_mut() {
            *v = v.max(0.0);
        }
        self.push(t, Op::Relu(x), &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        let mut t = self.value(x).clone();
        for v in t.data_mut() {
            if *v < 0.0 {
                *v *= slope;
            }
        }
        self.push(t, Op::LeakyRelu(x, slope), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        for v in t.data_mut() {
            *v = sigmoid(*v);
        }
        self.push(t, Op::Sigmoid(x), &[x])
    }

    /// Channel concatenation of CHW tensors with equal spatial size.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let (_, h, w) = self.value(xs[0]).chw();
        let mut data = Vec::new();
        let mut c = 0;
        for &x in xs {
            let (cx, hx, wx) = self.value(x).chw();
            if (hx, wx) != (h, w) {
                return Err(Error::shape("concat", alloc::format!("{hx}x{wx} vs {h}x{w}")));
            }
            c += cx;
            data.extend_from_slice(self.value(x).data());
        }
        let t = Tensor::from_vec(&[c, h, w], data)?;
        Ok(self.push(t, Op::Concat(xs.to_vec()), xs))
    }

    /// Bilinear resampling (half-pixel centres) to `h × w`.
    pub fn resize(&mut self, x: Var, h: usize, w: usize) -> Var {
        let (c, xh, xw) = self.value(x).chw();
        if (xh, xw) == (h, w) {
            return x;
        }
        let out = kernels::resize_bilinear(self.value(x).data(), c, xh, xw, h, w);
        let t = Tensor::from_vec(&[c, h, w], out).expect("resize output shape");
        self.push(t, Op::Resize { x, from: (xh, xw) }, &[x])
    }

    /// Per-channel standardisation over the spatial dimensions.
    pub fn instance_norm(&mut self, x: Var) -> Var {
        const EPS: f32 = 1e-5;
        let (c, h, w) = self.value(x).chw();
        let n = (h * w) as f32;
        let mut t = self.value(x).clone();
        let mut inv_std = Vec::with_capacity(c);
        for plane in t.data_mut().chunks_mut(h * w) {
            let mean = plane.iter().sum::<f32>() / n;
            let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
            let is = 1.0 / libm::sqrtf(var + EPS);
            for v in plane.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(t, Op::InstanceNorm { x, inv_std }, &[x])
    }

    /// Softmax over the channel axis of a CHW tensor.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = softmax_channels(self.value(x));
        self.push(t, Op::Softmax(x), &[x])
    }

    /// Elementwise `-p · ln p` with `0 · ln 0 = 0`.
    pub fn self_information(&mut self, p: Var) -> Var {
        let mut t = self.value(p).clone();
        for v in t.data_mut() {
            *v = -*v * libm::logf(v.clamp(LOG_EPS, 1.0));
        }
        self.push(t, Op::SelfInfo(p), &[p])
    }

    /// Attaches an externally evaluated scalar objective. `parts` pairs each
    /// input with d(value)/d(input).
    pub fn loss(&mut self, value: f64, parts: Vec<(Var, Tensor)>) -> Result<Var> {
        for (v, g) in &parts {
            if self.value(*v).dims() != g.dims() {
                return Err(Error::shape("loss", "gradient shape differs from its input"));
            }
        }
        let inputs: Vec<Var> = parts.iter().map(|(v, _)| *v).collect();
        Ok(self.push(Tensor::scalar(value as f32), Op::Loss(parts), &inputs))
    }

    /// `Σ kᵢ · xᵢ` over scalar variables.
    pub fn weighted_sum(&mut self, terms: &[(Var, f32)]) -> Result<Var> {
        if let Some((x, _)) = terms.iter().find(|(x, _)| self.value(*x).len() != 1) {
            return Err(Error::shape(
                "weighted_sum",
                alloc::format!("term of shape {:?} is not a scalar", self.value(*x).dims()),
            ));
        }
        let v: f32 = terms.iter().map(|(x, k)| self.value(*x).item() * k).sum();
        let inputs: Vec<Var> = terms.iter().map(|(x, _)| *x).collect();
        Ok(self.push(Tensor::scalar(v), Op::WeightedSum(terms.to_vec()), &inputs))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut out = Gradients::default();
        if !self.nodes[root.0].needs_grad {
            return out;
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Tensor::full(self.value(root).dims(), 1.0));

        for i in (0..=root.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match node.param {
                    Some(key) => match out.params.get_mut(&key) {
                        // the same tensor may be bound more than once
                        Some(acc) => acc.add_assign(&dy),
                        None => {
                            out.params.insert(key, dy);
                        }
                    },
                    None => {
                        out.leaves.insert(i, dy);
                    }
                }
                continue;
            }
            self.propagate(i, &dy, &mut grads);
        }
        out
    }

    fn propagate(&self, i: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let mut emit = |v: Var, g: Tensor, nodes: &[Node<'p>]| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom, co, cols } => {
                let n = y.len() / co;
                let kk = geom.ci * geom.k * geom.k;
                let xval = nodes[x.0].value.data();
                let colref = cols.as_deref().unwrap_or(xval);
                if nodes[w.0].needs_grad {
                    let mut dw = vec![0.0f32; co * kk];
                    kernels::gemm(*co, n, kk, dy.data(), false, colref, true, 0.0, &mut dw);
                    emit(*w, Tensor::from_vec(nodes[w.0].value.dims(), dw).unwrap(), nodes);
                }
                if let Some(b) = b {
                    if nodes[b.0].needs_grad {
                        let db: Vec<f32> = dy.data().chunks(n).map(|r| r.iter().sum()).collect();
                        emit(*b, Tensor::from_vec(&[*co], db).unwrap(), nodes);
                    }
                }
                if nodes[x.0].needs_grad {
                    let wv = nodes[w.0].value.data();
                    let mut dcols = vec![0.0f32; kk * n];
                    kernels::gemm(kk, *co, n, wv, true, dy.data(), false, 0.0, &mut dcols);
                    let dx = if geom.is_pointwise() {
                        dcols
                    } else {
                        let mut dx = vec![0.0f32; geom.ci * geom.h * geom.w];
                        kernels::col2im_add(&dcols, *geom, &mut dx);
                        dx
                    };
                    emit(*x, Tensor::from_vec(&[geom.ci, geom.h, geom.w], dx).unwrap(), nodes);
                }
            }
            Op::Add(a, b) => {
                emit(*a, dy.clone(), nodes);
                emit(*b, dy.clone(), nodes);
            }
            Op::Scale(x, k) => {
                let mut g = dy.clone();
                g.scale(*k);
                emit(*x, g, nodes);
            }
            Op::MulMap { x, gate } => {
                let xv = &nodes[x.0].value;
                let gv = nodes[gate.0].value.data();
                let (c, h, w) = xv.chw();
                let hw = h * w;
                if nodes[x.0].needs_grad {
                    let mut dx = dy.clone();
                    for plane in dx.data_mut().chunks_mut(hw) {
                        for (v, a) in plane.iter_mut().zip(gv) {
                            *v *= *a;
                        }
                    }
                    emit(*x, dx, nodes);
                }
                if nodes[gate.0].needs_grad {
                    let mut dg = vec![0.0f32; hw];
                    for ch in 0..c {
                        let xs = &xv.data()[ch * hw..(ch + 1) * hw];
                        let ds = &dy.data()[ch * hw..(ch + 1) * hw];
                        for p in 0..hw {
                            dg[p] += xs[p] * ds[p];
                        }
                    }
                    emit(*gate, Tensor::from_vec(&[1, h, w], dg).unwrap(), nodes);
                }
            }
            Op::Relu(x) => {
                let mut g = dy.clone();
                for (d, v) in g.data_mut().iter_mut().zip(y.data()) {
                    if *v <= 0.0 {
                        *d = 0.0;
                    }
                }
                emit(*x, g, nodes);
            }
            Op::LeakyRelu(x, slope) => {
                let mut g = dy.clone();
                for (d, v) in g.data_mut().iter_mut().zip(nodes[x.0].value.data()) {
                    if *v < 0.0 {
                        *d *= slope;
                    }
                }
                emit(*x, g, nodes);
            }
            Op::Sigmoid(x) => {
                let mut g = dy.clone();
                for (d, s) in g.data_mut().iter_mut().zip(y.data()) {
                    *d *= s * (1.0 - s);
                }
                emit(*x, g, nodes);
            }
            Op::Concat(xs) => {
                let mut off = 0;
                for x in xs {
                    let len = nodes[x.0].value.len();
                    let part = dy.data()[off..off + len].to_vec();
                    off += len;
                    emit(*x, Tensor::from_vec(nodes[x.0].value.dims(), part).unwrap(), nodes);
                }
            }
            Op::Resize { x, from } => {
                let (c, h, w) = y.chw();
                let dx = kernels::resize_bilinear_backward(dy.data(), c, from.0, from.1, h, w);
                emit(*x, Tensor::from_vec(&[c, from.0, from.1], dx).unwrap(), nodes);
            }
            Op::InstanceNorm { x, inv_std } => {
                let (_, h, w) = y.chw();
                let hw = h * w;
                let n = hw as f32;
                let mut dx = dy.clone();
                for (ch, plane) in dx.data_mut().chunks_mut(hw).enumerate() {
                    let ys = &y.data()[ch * hw..(ch + 1) * hw];
                    let mean_d = plane.iter().sum::<f32>() / n;
                    let mean_dy: f32 = plane.iter().zip(ys).map(|(d, v)| d * v).sum::<f32>() / n;
                    for (d, v) in plane.iter_mut().zip(ys) {
                        *d = inv_std[ch] * (*d - mean_d - v * mean_dy);
                    }
                }
                emit(*x, dx, nodes);
            }
            Op::Softmax(x) => {
                let (c, h, w) = y.chw();
                let hw = h * w;
                let mut dx = dy.clone();
                for p in 0..hw {
                    let dot: f32 = (0..c).map(|k| y.data()[k * hw + p] * dy.data()[k * hw + p]).sum();
                    for k in 0..c {
                        let idx = k * hw + p;
                        dx.data_mut()[idx] = y.data()[idx] * (dy.data()[idx] - dot);
                    }
                }
                emit(*x, dx, nodes);
            }
            Op::SelfInfo(p) => {
                let mut dx = dy.clone();
                for (d, v) in dx.data_mut().iter_mut().zip(nodes[p.0].value.data()) {
                    let inner = if *v > LOG_EPS { 1.0 } else { 0.0 };
                    *d *= -(libm::logf(v.clamp(LOG_EPS, 1.0)) + inner);
                }
                emit(*p, dx, nodes);
            }
            Op::Loss(parts) => {
                let up = dy.item();
                for (v, g) in parts {
                    let mut g = g.clone();
                    g.scale(up);
                    emit(*v, g, nodes);
                }
            }
            Op::WeightedSum(terms) => {
                let up = dy.item();
                for (v, k) in terms {
                    emit(*v, Tensor::scalar(up * k), nodes);
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::expf(-x))
    } else {
        let e = libm::expf(x);
        e / (1.0 + e)
    }
}

/// Max-shifted softmax over the channels of a CHW tensor.
pub fn softmax_channels(x: &Tensor) -> Tensor {
    let (c, h, w) = x.chw();
    let hw = h * w;
    let src = x.data();
    let mut out = vec![0.0f32; c * hw];
    for p in 0..hw {
        let mut m = f32::NEG_INFINITY;
        for k in 0..c {
            m = m.max(src[k * hw + p]);
        }
        let mut z = 0.0;
        for k in 0..c {
            let e = libm::expf(src[k * hw + p] - m);
            out[k * hw + p] = e;
            z += e;
        }
        for k in 0..c {
            out[k * hw + p] /= z;
        }
    }
    Tensor::from_vec(&[c, h, w], out).unwrap()
}
