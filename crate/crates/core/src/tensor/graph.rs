//! Tape of recorded operations and the reverse sweep.
//!
//! Nodes are appended in execution order, so walking the tape backwards is a
//! valid reverse topological order. Gradients are always accumulated.

use super::conv::{self, Conv2dParams, ConvGeom};
use super::kernels::{self, GroupNormSaved, Padding};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, f32),
    Clamp01(Var),
    Gelu(Var),
    Conv2d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    GroupNorm {
        x: Var,
        gain: Var,
        bias: Var,
        groups: usize,
        saved: GroupNormSaved,
    },
    Upsample2(Var),
    Concat(Vec<Var>),
    SliceChannels {
        x: Var,
        start: usize,
    },
    Crop {
        x: Var,
        top: usize,
        left: usize,
    },
    PadReflect {
        x: Var,
        index: Vec<usize>,
    },
    Mean(Var),
    L1 {
        pred: Var,
        target: Var,
    },
}

struct Node {
    value: Tensor,
    /// `None` for constants and for everything recorded in no-grad mode.
    op: Option<Op>,
}

impl Node {
    fn tracks_grad(&self) -> bool {
        self.op.is_some()
    }
}

pub struct Graph {
    nodes: Vec<Node>,
    recording: bool,
    consumed: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
            consumed: false,
        }
    }

    /// A graph that only evaluates: no op records, no saved inputs, no gradients.
    pub fn no_grad() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of nodes holding an op record.
    pub fn recorded_ops(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Some(ref op) if !matches!(op, Op::Leaf)))
            .count()
    }

    /// Adds a tensor; it becomes a trainable leaf when `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let op = (self.recording && tensor.requires_grad()).then_some(Op::Leaf);
        let mut value = tensor;
        value.grad = None;
        self.push(value, op)
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let mut value = tensor;
        value.requires_grad = false;
        value.grad = None;
        self.push(value, None)
    }

    /// Records `tensor` as a trainable leaf regardless of its own flag.
    pub fn param(&mut self, tensor: &Tensor) -> Var {
        let mut value = tensor.detached();
        value.requires_grad = true;
        self.leaf(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    /// Gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f32>> {
        self.nodes[v.0].value.take_grad()
    }

    pub fn into_value(mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(0.0))
    }

    fn push(&mut self, value: Tensor, op: Option<Op>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn tracks(&self, v: Var) -> bool {
        self.nodes[v.0].tracks_grad()
    }

    fn record(&mut self, dims: Vec<usize>, data: Vec<f32>, inputs: &[Var], op: impl FnOnce() -> Op) -> Var {
        let value = Tensor {
            dims,
            data,
            grad: None,
            requires_grad: false,
        };
        let op = (self.recording && inputs.iter().any(|&v| self.tracks(v))).then(op);
        let mut value = value;
        value.requires_grad = op.is_some();
        self.push(value, op)
    }

    fn check_live(&self) -> Result<()> {
        if self.consumed {
            return Err(Error::Graph(
                "graph was consumed by backward(); record a new graph".into(),
            ));
        }
        Ok(())
    }

    fn same_dims(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(Error::Shape(format!(
                "{what}: shape mismatch {:?} vs {:?}",
                self.dims(a),
                self.dims(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_live()?;
        self.same_dims(a, b, "add")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        Ok(self.record(self.dims(a).to_vec(), data, &[a, b], || Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_live()?;
        self.same_dims(a, b, "mul")?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        Ok(self.record(self.dims(a).to_vec(), data, &[a, b], || Op::Mul(a, b)))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f32) -> Result<Var> {
        self.check_live()?;
        let data = self.value(a).data().iter().map(|x| x * s).collect();
        Ok(self.record(self.dims(a).to_vec(), data, &[a], || Op::MulScalar(a, s)))
    }

    pub fn clamp01(&mut self, a: Var) -> Result<Var> {
        self.check_live()?;
        let data = self.value(a).data().iter().map(|x| x.clamp(0.0, 1.0)).collect();
        Ok(self.record(self.dims(a).to_vec(), data, &[a], || Op::Clamp01(a)))
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.check_live()?;
        let data = self.value(a).data().iter().map(|&x| kernels::gelu(x)).collect();
        Ok(self.record(self.dims(a).to_vec(), data, &[a], || Op::Gelu(a)))
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, params: Conv2dParams) -> Result<Var> {
        self.check_live()?;
        let geom = ConvGeom::new(self.dims(x), self.dims(weight), bias.map(|b| self.dims(b)), params)?;
        let data = conv::forward(
            self.value(x).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.record(geom.out_dims(), data, &inputs, || Op::Conv2d { x, weight, bias, geom }))
    }

    pub fn group_norm(&mut self, x: Var, groups: usize, gain: Var, bias: Var, eps: f32) -> Result<Var> {
        self.check_live()?;
        let dims = self.value(x).dims4("group_norm")?;
        let c = dims[1];
        if groups == 0 || c % groups != 0 {
            return Err(Error::Config(format!(
                "group_norm: {c} channels not divisible into {groups} groups"
            )));
        }
        if self.dims(gain) != [c] || self.dims(bias) != [c] {
            return Err(Error::Shape(format!(
                "group_norm: gain {:?} and bias {:?} must be [{c}]",
                self.dims(gain),
                self.dims(bias)
            )));
        }
        let (data, saved) = kernels::group_norm_forward(
            self.value(x).data(),
            dims,
            groups,
            self.value(gain).data(),
            self.value(bias).data(),
            eps,
        );
        Ok(self.record(dims.to_vec(), data, &[x, gain, bias], || Op::GroupNorm {
            x,
            gain,
            bias,
            groups,
            saved,
        }))
    }

    pub fn upsample_bilinear2(&mut self, x: Var) -> Result<Var> {
        self.check_live()?;
        let dims = self.value(x).dims4("upsample_bilinear2")?;
        let data = kernels::upsample2_forward(self.value(x).data(), dims);
        let [n, c, h, w] = dims;
        Ok(self.record(vec![n, c, 2 * h, 2 * w], data, &[x], || Op::Upsample2(x)))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        self.check_live()?;
        let first = *parts
            .first()
            .ok_or_else(|| Error::Shape("concat_channels needs at least one input".into()))?;
        let [n, _, h, w] = self.value(first).dims4("concat_channels")?;
        let mut channels = 0;
        for &p in parts {
            let [pn, pc, ph, pw] = self.value(p).dims4("concat_channels")?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::Shape(format!(
                    "concat_channels: {:?} does not match {:?} outside the channel axis",
                    self.dims(p),
                    self.dims(first)
                )));
            }
            channels += pc;
        }
        let mut data = Vec::with_capacity(n * channels * h * w);
        for s in 0..n {
            for &p in parts {
                let pc = self.dims(p)[1];
                data.extend_from_slice(&self.value(p).data()[s * pc * h * w..][..pc * h * w]);
            }
        }
        let parts = parts.to_vec();
        let inputs = parts.clone();
        Ok(self.record(vec![n, channels, h, w], data, &inputs, || Op::Concat(parts)))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.check_live()?;
        let [n, c, h, w] = self.value(x).dims4("slice_channels")?;
        if start + len > c || len == 0 {
            return Err(Error::Shape(format!(
                "slice_channels: {start}..{} out of range for {c} channels",
                start + len
            )));
        }
        let hw = h * w;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * len * hw);
        for s in 0..n {
            data.extend_from_slice(&src[(s * c + start) * hw..][..len * hw]);
        }
        Ok(self.record(vec![n, len, h, w], data, &[x], || Op::SliceChannels { x, start }))
    }

    /// Spatial window `[top, top + height) × [left, left + width)`.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, height: usize, width: usize) -> Result<Var> {
        self.check_live()?;
        let [n, c, h, w] = self.value(x).dims4("crop")?;
        if top + height > h || left + width > w {
            return Err(Error::Shape(format!(
                "crop {height}x{width} at ({top},{left}) exceeds {h}x{w}"
            )));
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * c * height * width);
        for plane in 0..n * c {
            for y in top..top + height {
                data.extend_from_slice(&src[(plane * h + y) * w + left..][..width]);
            }
        }
        Ok(self.record(vec![n, c, height, width], data, &[x], || Op::Crop { x, top, left }))
    }

    /// Reflect-101 spatial padding.
    pub fn pad_reflect(&mut self, x: Var, top: usize, bottom: usize, left: usize, right: usize) -> Result<Var> {
        self.check_live()?;
        let dims = self.value(x).dims4("pad_reflect")?;
        let [n, c, h, w] = dims;
        if (top.max(bottom) >= h && h > 1) || (left.max(right) >= w && w > 1) {
            return Err(Error::Shape(format!(
                "pad_reflect: padding ({top},{bottom},{left},{right}) too large for {h}x{w}"
            )));
        }
        let index = kernels::pad_reflect_index(dims, Padding { top, bottom, left, right });
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * c * index.len());
        for plane in 0..n * c {
            let p = &src[plane * h * w..][..h * w];
            data.extend(index.iter().map(|&i| p[i]));
        }
        let dims = vec![n, c, h + top + bottom, w + left + right];
        Ok(self.record(dims, data, &[x], || Op::PadReflect { x, index }))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check_live()?;
        let v = self.value(x);
        let mean = (v.data().iter().map(|&a| a as f64).sum::<f64>() / v.numel() as f64) as f32;
        Ok(self.record(Vec::new(), vec![mean], &[x], || Op::Mean(x)))
    }

    /// `mean(|pred - target|)`.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.check_live()?;
        self.same_dims(pred, target, "l1_loss")?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let sum: f64 = p.iter().zip(t).map(|(a, b)| (a - b).abs() as f64).sum();
        let loss = (sum / p.len() as f64) as f32;
        Ok(self.record(Vec::new(), vec![loss], &[pred, target], || Op::L1 { pred, target }))
    }

    /// Reverse sweep from a scalar. Leaf gradients land on the leaf tensors;
    /// op records and intermediate values are then released.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check_live()?;
        if self.value(loss).numel() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got dims {:?}",
                self.dims(loss)
            )));
        }
        if !self.tracks(loss) {
            return Err(Error::Graph("loss does not depend on any tensor requiring grad".into()));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Some(Op::Leaf)) {
                self.nodes[i].value.accumulate_grad(&g);
                continue;
            }
            let node = &self.nodes[i];
            let Some(op) = &node.op else { continue };
            let mut acc = Accumulator {
                nodes: &self.nodes,
                grads: &mut grads,
            };
            match op {
                Op::Leaf => unreachable!("leaves handled above"),
                Op::Add(a, b) => {
                    acc.add(*a, || g.clone());
                    acc.add(*b, || g.clone());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.nodes[a.0].value.data(), self.nodes[b.0].value.data());
                    acc.add(*a, || g.iter().zip(bv).map(|(d, y)| d * y).collect());
                    acc.add(*b, || g.iter().zip(av).map(|(d, x)| d * x).collect());
                }
                Op::MulScalar(a, s) => acc.add(*a, || g.iter().map(|d| d * s).collect()),
                Op::Clamp01(a) => {
                    let xv = self.nodes[a.0].value.data();
                    acc.add(*a, || {
                        g.iter()
                            .zip(xv)
                            .map(|(&d, &x)| if x > 0.0 && x < 1.0 { d } else { 0.0 })
                            .collect()
                    });
                }
                Op::Gelu(a) => {
                    let xv = self.nodes[a.0].value.data();
                    acc.add(*a, || g.iter().zip(xv).map(|(&d, &x)| d * kernels::gelu_grad(x)).collect());
                }
                Op::Conv2d { x, weight, bias, geom } => {
                    let need = (
                        acc.tracks(*x),
                        acc.tracks(*weight),
                        bias.is_some_and(|b| acc.tracks(b)),
                    );
                    let grads = conv::backward(
                        self.nodes[x.0].value.data(),
                        self.nodes[weight.0].value.data(),
                        &g,
                        geom,
                        need,
                    );
                    acc.add_owned(*x, grads.dx);
                    acc.add_owned(*weight, grads.dw);
                    if let Some(b) = bias {
                        acc.add_owned(*b, grads.db);
                    }
                }
                Op::GroupNorm { x, gain, bias, groups, saved } => {
                    let xt = &self.nodes[x.0].value;
                    let dims = xt.dims4("group_norm")?;
                    let grads = kernels::group_norm_backward(
                        xt.data(),
                        &g,
                        dims,
                        *groups,
                        self.nodes[gain.0].value.data(),
                        saved,
                    );
                    acc.add_owned(*x, Some(grads.dx));
                    acc.add_owned(*gain, Some(grads.dgain));
                    acc.add_owned(*bias, Some(grads.dbias));
                }
                Op::Upsample2(x) => {
                    let dims = self.nodes[x.0].value.dims4("upsample")?;
                    acc.add(*x, || kernels::upsample2_backward(&g, dims));
                }
                Op::Concat(parts) => {
                    let [n, _, h, w] = node.value.dims4("concat")?;
                    let hw = h * w;
                    let total_c = node.value.dims()[1];
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.nodes[p.0].value.dims()[1];
                        acc.add(p, || {
                            let mut out = Vec::with_capacity(n * pc * hw);
                            for s in 0..n {
                                out.extend_from_slice(&g[(s * total_c + offset) * hw..][..pc * hw]);
                            }
                            out
                        });
                        offset += pc;
                    }
                }
                Op::SliceChannels { x, start } => {
                    let [n, c, h, w] = self.nodes[x.0].value.dims4("slice")?;
                    let len = node.value.dims()[1];
                    let hw = h * w;
                    acc.add(*x, || {
                        let mut out = vec![0.0; n * c * hw];
                        for s in 0..n {
                            out[(s * c + start) * hw..][..len * hw]
                                .copy_from_slice(&g[s * len * hw..][..len * hw]);
                        }
                        out
                    });
                }
                Op::Crop { x, top, left } => {
                    let [n, c, h, w] = self.nodes[x.0].value.dims4("crop")?;
                    let [_, _, ch, cw] = node.value.dims4("crop")?;
                    acc.add(*x, || {
                        let mut out = vec![0.0; n * c * h * w];
                        for plane in 0..n * c {
                            for y in 0..ch {
                                out[(plane * h + top + y) * w + left..][..cw]
                                    .copy_from_slice(&g[(plane * ch + y) * cw..][..cw]);
                            }
                        }
                        out
                    });
                }
                Op::PadReflect { x, index } => {
                    let [n, c, h, w] = self.nodes[x.0].value.dims4("pad_reflect")?;
                    acc.add(*x, || {
                        let mut out = vec![0.0; n * c * h * w];
                        let out_plane = index.len();
                        for plane in 0..n * c {
                            let dst = &mut out[plane * h * w..][..h * w];
                            for (k, &src) in index.iter().enumerate() {
                                dst[src] += g[plane * out_plane + k];
                            }
                        }
                        out
                    });
                }
                Op::Mean(x) => {
                    let numel = self.nodes[x.0].value.numel();
                    acc.add(*x, || vec![g[0] / numel as f32; numel]);
                }
                Op::L1 { pred, target } => {
                    let (p, t) = (self.nodes[pred.0].value.data(), self.nodes[target.0].value.data());
                    let scale = g[0] / p.len() as f32;
                    let sign: Vec<f32> = p
                        .iter()
                        .zip(t)
                        .map(|(a, b)| {
                            let d = a - b;
                            if d > 0.0 {
                                scale
                            } else if d < 0.0 {
                                -scale
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    if acc.tracks(*target) {
                        acc.add(*target, || sign.iter().map(|s| -s).collect());
                    }
                    acc.add_owned(*pred, Some(sign));
                }
            }
        }
        self.release();
        Ok(())
    }

    /// Drops op records and non-leaf values, keeping leaves and their grads.
    fn release(&mut self) {
        for node in &mut self.nodes {
            match node.op {
                Some(Op::Leaf) => {}
                _ => {
                    node.op = None;
                    node.value.data = Vec::new();
                }
            }
        }
        self.consumed = true;
    }
}

struct Accumulator<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Vec<f32>>],
}

impl Accumulator<'_> {
    fn tracks(&self, v: Var) -> bool {
        self.nodes[v.0].tracks_grad()
    }

    fn add(&mut self, v: Var, make: impl FnOnce() -> Vec<f32>) {
        if self.tracks(v) {
            self.add_owned(v, Some(make()));
        }
    }

    fn add_owned(&mut self, v: Var, g: Option<Vec<f32>>) {
        let Some(g) = g else { return };
        if !self.tracks(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot => *slot = Some(g),
        }
    }
}
