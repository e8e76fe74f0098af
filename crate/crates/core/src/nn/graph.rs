//! Reverse-mode autodiff over an eager tape.
//!
//! A `Graph` records every forward operation as a node holding its output
//! value. `backward` walks the tape in reverse and fills per-node gradients;
//! `grads_into` then adds the gradients of parameter leaves into the owning
//! `ParamStore`, so gradients accumulate additively across graphs until the
//! optimizer clears them.
//!
//! The op set is exactly the layer set the networks use; this is not a
//! general-purpose autodiff engine.

use crate::error::{Error, Result};
use crate::nn::optim::{ParamId, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

/// Clamp bound applied to probabilities before logarithms.
pub const PROB_EPS: f64 = 1e-7;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    /// 3x3 convolution, stride 1, zero padding 1. Inputs: [x, w, b] with
    /// x: [C,H,W], w: [O,C,3,3], b: [O].
    Conv3x3,
    Relu,
    /// 2x2 mean pooling, stride 2.
    MeanPool2,
    /// [C,H,W] -> [C], mean over the spatial plane.
    GlobalAvgPool,
    /// Inputs: [x, w, b] with w: [out,in], b: [out].
    Dense,
    Concat2,
    /// ||a - b||_2 of two equal-length vectors; scalar output.
    EuclideanDist,
    Sigmoid,
    /// Binary cross entropy against a constant soft label: the label enters
    /// as `1 - p` on the "normal" side, `p` on the "abnormal" side.
    SoftBce {
        p: f64,
    },
    Sum,
    Square,
    Scale {
        c: f64,
    },
    AddConst,
    Add2,
    Sub2,
    /// Mean of an arbitrary number of scalar inputs.
    MeanMany,
    L2Normalize,
    /// Mean squared error between two equal-length vectors.
    Mse,
    /// Softmax cross entropy of a logit vector against a hard class index.
    SoftmaxCe {
        class: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param => "param",
            Op::Conv3x3 => "conv3x3",
            Op::Relu => "relu",
            Op::MeanPool2 => "mean_pool2",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::Dense => "dense",
            Op::Concat2 => "concat",
            Op::EuclideanDist => "euclidean_distance",
            Op::Sigmoid => "sigmoid",
            Op::SoftBce { .. } => "soft_bce",
            Op::Sum => "sum",
            Op::Square => "square",
            Op::Scale { .. } => "scale",
            Op::AddConst => "add_const",
            Op::Add2 => "add",
            Op::Sub2 => "sub",
            Op::MeanMany => "mean",
            Op::L2Normalize => "l2_normalize",
            Op::Mse => "mse",
            Op::SoftmaxCe { .. } => "softmax_ce",
        }
    }
}

#[derive(Debug)]
struct Node<F: Real> {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor<F>,
    grad: Option<Vec<F>>,
    param: Option<ParamId>,
}

#[derive(Debug, Default)]
pub struct Graph<F: Real = f32> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> F {
        self.nodes[id].value.scalar_value()
    }

    fn push(
        &mut self,
        op: Op,
        inputs: Vec<NodeId>,
        value: Tensor<F>,
        param: Option<ParamId>,
    ) -> Result<NodeId> {
        value.validate_finite(op.name())?;
        self.nodes.push(Node {
            op,
            inputs,
            value,
            grad: None,
            param,
        });
        Ok(self.nodes.len() - 1)
    }

    fn check_input(&self, id: NodeId, op: &str) -> Result<()> {
        if id >= self.nodes.len() {
            return Err(Error::state(format!("{op}: input node {id} not recorded")));
        }
        Ok(())
    }

    // ----- leaves ---------------------------------------------------------

    pub fn input(&mut self, value: Tensor<F>) -> Result<NodeId> {
        self.push(Op::Input, vec![], value, None)
    }

    /// Leaf bound to a persistent parameter; the value is copied from the
    /// store at recording time.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Result<NodeId> {
        let value = store.get(id).tensor.clone();
        self.push(Op::Param, vec![], value, Some(id))
    }

    // ----- layers ---------------------------------------------------------

    pub fn conv3x3(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_input(x, "conv3x3")?;
        let (xs, ws, bs) = (
            self.nodes[x].value.shape().to_vec(),
            self.nodes[w].value.shape().to_vec(),
            self.nodes[b].value.shape().to_vec(),
        );
        if xs.len() != 3 || ws.len() != 4 || ws[2] != 3 || ws[3] != 3 {
            return Err(Error::config(format!(
                "conv3x3: expected x [C,H,W] and w [O,C,3,3], got {xs:?} and {ws:?}"
            )));
        }
        let (c, h, wd) = (xs[0], xs[1], xs[2]);
        let o = ws[0];
        if ws[1] != c || bs != [o] {
            return Err(Error::config(format!(
                "conv3x3: channel mismatch x {xs:?}, w {ws:?}, b {bs:?}"
            )));
        }
        let xv = self.nodes[x].value.data();
        let wv = self.nodes[w].value.data();
        let bv = self.nodes[b].value.data();
        let mut y = vec![F::ZERO; o * h * wd];
        for oc in 0..o {
            let ybase = oc * h * wd;
            y[ybase..ybase + h * wd].fill(bv[oc]);
            for ic in 0..c {
                let xbase = ic * h * wd;
                for ky in 0..3usize {
                    let dy = ky as isize - 1;
                    let (r0, r1) = row_range(h, dy);
                    for kx in 0..3usize {
                        let dx = kx as isize - 1;
                        let (c0, c1) = row_range(wd, dx);
                        let wk = wv[((oc * c + ic) * 3 + ky) * 3 + kx];
                        for yy in r0..r1 {
                            let iy = (yy as isize + dy) as usize;
                            let src = &xv[xbase + iy * wd + (c0 as isize + dx) as usize
                                ..xbase + iy * wd + (c1 as isize + dx) as usize];
                            let dst = &mut y[ybase + yy * wd + c0..ybase + yy * wd + c1];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wk * *s;
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![o, h, wd], y)?;
        self.push(Op::Conv3x3, vec![x, w, b], value, None)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_input(x, "relu")?;
        let v = &self.nodes[x].value;
        let data = v.data().iter().map(|&a| a.maximum(F::ZERO)).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        self.push(Op::Relu, vec![x], value, None)
    }

    pub fn mean_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_input(x, "mean_pool2")?;
        let xs = self.nodes[x].value.shape().to_vec();
        if xs.len() != 3 || xs[1] % 2 != 0 || xs[2] % 2 != 0 {
            return Err(Error::config(format!(
                "mean_pool2: expected [C,H,W] with even H and W, got {xs:?}"
            )));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (oh, ow) = (h / 2, w / 2);
        let xv = self.nodes[x].value.data();
        let quarter = F::from_f64(0.25);
        let mut y = vec![F::ZERO; c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = ch * h * w + 2 * oy * w + 2 * ox;
                    let s = xv[base] + xv[base + 1] + xv[base + w] + xv[base + w + 1];
                    y[ch * oh * ow + oy * ow + ox] = s * quarter;
                }
            }
        }
        let value = Tensor::new(vec![c, oh, ow], y)?;
        self.push(Op::MeanPool2, vec![x], value, None)
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_input(x, "global_avg_pool")?;
        let xs = self.nodes[x].value.shape().to_vec();
        if xs.len() != 3 {
            return Err(Error::config(format!(
                "global_avg_pool: expected [C,H,W], got {xs:?}"
            )));
        }
        let (c, hw) = (xs[0], xs[1] * xs[2]);
        let inv = F::from_f64(1.0 / hw as f64);
        let xv = self.nodes[x].value.data();
        let y: Vec<F> = (0..c)
            .map(|ch| {
                let mut s = F::ZERO;
                for &v in &xv[ch * hw..(ch + 1) * hw] {
                    s += v;
                }
                s * inv
            })
            .collect();
        let value = Tensor::new(vec![c], y)?;
        self.push(Op::GlobalAvgPool, vec![x], value, None)
    }

    pub fn dense(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_input(x, "dense")?;
        let xs = self.nodes[x].value.shape().to_vec();
        let ws = self.nodes[w].value.shape().to_vec();
        let bs = self.nodes[b].value.shape().to_vec();
        if xs.len() != 1 || ws.len() != 2 || ws[1] != xs[0] || bs != [ws[0]] {
            return Err(Error::config(format!(
                "dense: expected x [n], w [m,n], b [m]; got {xs:?}, {ws:?}, {bs:?}"
            )));
        }
        let (m, n) = (ws[0], ws[1]);
        let xv = self.nodes[x].value.data();
        let wv = self.nodes[w].value.data();
        let bv = self.nodes[b].value.data();
        let y: Vec<F> = (0..m)
            .map(|i| {
                let mut s = bv[i];
                let row = &wv[i * n..(i + 1) * n];
                for (wj, xj) in row.iter().zip(xv) {
                    s += *wj * *xj;
                }
                s
            })
            .collect();
        let value = Tensor::new(vec![m], y)?;
        self.push(Op::Dense, vec![x, w, b], value, None)
    }

    pub fn concat2(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_input(a, "concat")?;
        self.check_input(b, "concat")?;
        let mut data = self.nodes[a].value.data().to_vec();
        data.extend_from_slice(self.nodes[b].value.data());
        let n = data.len();
        let value = Tensor::new(vec![n], data)?;
        self.push(Op::Concat2, vec![a, b], value, None)
    }

    pub fn euclidean_distance(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_input(a, "euclidean_distance")?;
        let av = self.nodes[a].value.data();
        let bv = self.nodes[b].value.data();
        if av.len() != bv.len() {
            return Err(Error::config(format!(
                "euclidean_distance: length mismatch {} vs {}",
                av.len(),
                bv.len()
            )));
        }
        let mut s = F::ZERO;
        for (x, y) in av.iter().zip(bv) {
            let d = *x - *y;
            s += d * d;
        }
        let value = Tensor::scalar(s.sqrt());
        self.push(Op::EuclideanDist, vec![a, b], value, None)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_input(x, "sigmoid")?;
        let v = &self.nodes[x].value;
        let data = v
            .data()
            .iter()
            .map(|&z| F::ONE / (F::ONE + (-z).exp()))
            .collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        self.push(Op::Sigmoid, vec![x], value, None)
    }

    /// Soft-label binary cross entropy on a scalar probability `q`:
    /// `-[(1-p)*ln(q) + p*ln(1-q)]`, with `q` clamped away from {0,1}.
    pub fn soft_bce(&mut self, q: NodeId, p: f64) -> Result<NodeId> {
        self.check_input(q, "soft_bce")?;
        if self.nodes[q].value.numel() != 1 {
            return Err(Error::config("soft_bce: q must be a scalar"));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::config(format!("soft_bce: label {p} outside [0,1]")));
        }
        let qv = self.nodes[q].value.data()[0].to_f64();
        let qc = qv.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let l = -((1.0 - p) * qc.ln() + p * (1.0 - qc).ln());
        let value = Tensor::scalar(F::from_f64(l));
        self.push(Op::SoftBce { p }, vec![q], value, None)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_input(x, "sum")?;
        let mut s = F::ZERO;
        for &v in self.nodes[x].value.data() {
            s += v;
        }
        self.push(Op::Sum, vec![x], Tensor::scalar(s), None)
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_input(x, "square")?;
        let v = &self.nodes[x].value;
        let data = v.data().iter().map(|&a| a * a).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        self.push(Op::Square, vec![x], value, None)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.check_input(x, "scale")?;
        let v = &self.nodes[x].value;
        let k = F::from_f64(c);
        let data = v.data().iter().map(|&a| a * k).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        self.push(Op::Scale { c }, vec![x], value, None)
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.check_input(x, "add_const")?;
        let v = &self.nodes[x].value;
        let k = F::from_f64(c);
        let data = v.data().iter().map(|&a| a + k).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        self.push(Op::AddConst, vec![x], value, None)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, Op::Add2)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_elementwise(a, b, Op::Sub2)
    }

    fn binary_elementwise(&mut self, a: NodeId, b: NodeId, op: Op) -> Result<NodeId> {
        self.check_input(a, op.name())?;
        self.check_input(b, op.name())?;
        let av = &self.nodes[a].value;
        let bv = &self.nodes[b].value;
        if av.shape() != bv.shape() {
            return Err(Error::config(format!(
                "{}: shape mismatch {:?} vs {:?}",
                op.name(),
                av.shape(),
                bv.shape()
            )));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| match op {
                Op::Add2 => x + y,
                Op::Sub2 => x - y,
                _ => unreachable!(),
            })
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        self.push(op, vec![a, b], value, None)
    }

    /// Mean of scalar nodes (batch reduction).
    pub fn mean_of(&mut self, ids: &[NodeId]) -> Result<NodeId> {
        if ids.is_empty() {
            return Err(Error::config("mean: empty input list"));
        }
        let mut s = F::ZERO;
        for &id in ids {
            self.check_input(id, "mean")?;
            if self.nodes[id].value.numel() != 1 {
                return Err(Error::config("mean: all inputs must be scalars"));
            }
            s += self.nodes[id].value.data()[0];
        }
        let value = Tensor::scalar(s * F::from_f64(1.0 / ids.len() as f64));
        self.push(Op::MeanMany, ids.to_vec(), value, None)
    }

    pub fn l2_normalize(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_input(x, "l2_normalize")?;
        let v = &self.nodes[x].value;
        let mut s = F::ZERO;
        for &a in v.data() {
            s += a * a;
        }
        let r = s.sqrt().maximum(F::from_f64(1e-12));
        let data = v.data().iter().map(|&a| a / r).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        self.push(Op::L2Normalize, vec![x], value, None)
    }

    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_input(a, "mse")?;
        self.check_input(b, "mse")?;
        let av = self.nodes[a].value.data();
        let bv = self.nodes[b].value.data();
        if av.len() != bv.len() {
            return Err(Error::config("mse: length mismatch"));
        }
        let mut s = F::ZERO;
        for (&x, &y) in av.iter().zip(bv) {
            let d = x - y;
            s += d * d;
        }
        let value = Tensor::scalar(s * F::from_f64(1.0 / av.len() as f64));
        self.push(Op::Mse, vec![a, b], value, None)
    }

    pub fn softmax_ce(&mut self, logits: NodeId, class: usize) -> Result<NodeId> {
        self.check_input(logits, "softmax_ce")?;
        let z = self.nodes[logits].value.data();
        if class >= z.len() {
            return Err(Error::config(format!(
                "softmax_ce: class {class} out of range for {} logits",
                z.len()
            )));
        }
        let m = z.iter().fold(F::from_f64(f64::NEG_INFINITY), |a, &b| a.maximum(b));
        let mut s = F::ZERO;
        for &v in z {
            s += (v - m).exp();
        }
        let lse = s.ln() + m;
        let value = Tensor::scalar(lse - z[class]);
        self.push(Op::SoftmaxCe { class }, vec![logits], value, None)
    }

    // ----- reverse pass ---------------------------------------------------

    /// Fill node gradients by reverse traversal from a scalar root.
    /// Existing node gradients from a previous call are discarded.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::state("backward called before any forward pass"));
        }
        if root >= self.nodes.len() {
            return Err(Error::state(format!("backward: unknown node {root}")));
        }
        if self.nodes[root].value.numel() != 1 {
            return Err(Error::state(format!(
                "backward: root must be scalar, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[root].grad = Some(vec![F::ONE]);

        for id in (0..=root).rev() {
            let grad = match self.nodes[id].grad.take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(id, &grad)?;
            self.nodes[id].grad = Some(grad);
        }
        Ok(())
    }

    fn input_grad_buf(&mut self, id: NodeId) -> &mut Vec<F> {
        let n = self.nodes[id].value.numel();
        self.nodes[id]
            .grad
            .get_or_insert_with(|| vec![F::ZERO; n])
    }

    #[allow(clippy::too_many_lines)]
    fn propagate(&mut self, id: NodeId, gout: &[F]) -> Result<()> {
        let op = self.nodes[id].op.clone();
        let inputs = self.nodes[id].inputs.clone();
        match op {
            Op::Input | Op::Param => {}
            Op::Conv3x3 => {
                let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
                let xs = self.nodes[x].value.shape().to_vec();
                let ws = self.nodes[w].value.shape().to_vec();
                let (c, h, wd) = (xs[0], xs[1], xs[2]);
                let o = ws[0];
                let xv = self.nodes[x].value.data().to_vec();
                let wv = self.nodes[w].value.data().to_vec();
                {
                    let gb = self.input_grad_buf(b);
                    for oc in 0..o {
                        let mut s = F::ZERO;
                        for &g in &gout[oc * h * wd..(oc + 1) * h * wd] {
                            s += g;
                        }
                        gb[oc] += s;
                    }
                }
                let mut gw = vec![F::ZERO; wv.len()];
                let mut gx = vec![F::ZERO; xv.len()];
                for oc in 0..o {
                    let ybase = oc * h * wd;
                    for ic in 0..c {
                        let xbase = ic * h * wd;
                        for ky in 0..3usize {
                            let dy = ky as isize - 1;
                            let (r0, r1) = row_range(h, dy);
                            for kx in 0..3usize {
                                let dx = kx as isize - 1;
                                let (c0, c1) = row_range(wd, dx);
                                let widx = ((oc * c + ic) * 3 + ky) * 3 + kx;
                                let wk = wv[widx];
                                let mut acc = F::ZERO;
                                for yy in r0..r1 {
                                    let iy = (yy as isize + dy) as usize;
                                    let xoff = xbase + iy * wd;
                                    let grow = &gout[ybase + yy * wd + c0..ybase + yy * wd + c1];
                                    let xrow = &xv[(xoff as isize + c0 as isize + dx) as usize
                                        ..(xoff as isize + c1 as isize + dx) as usize];
                                    let gxrow = &mut gx[(xoff as isize + c0 as isize + dx) as usize
                                        ..(xoff as isize + c1 as isize + dx) as usize];
                                    for i in 0..grow.len() {
                                        acc += grow[i] * xrow[i];
                                        gxrow[i] += wk * grow[i];
                                    }
                                }
                                gw[widx] += acc;
                            }
                        }
                    }
                }
                add_into(self.input_grad_buf(w), &gw);
                add_into(self.input_grad_buf(x), &gx);
            }
            Op::Relu => {
                let x = inputs[0];
                let xv = self.nodes[x].value.data().to_vec();
                let gx = self.input_grad_buf(x);
                for (i, &g) in gout.iter().enumerate() {
                    if xv[i] > F::ZERO {
                        gx[i] += g;
                    }
                }
            }
            Op::MeanPool2 => {
                let x = inputs[0];
                let xs = self.nodes[x].value.shape().to_vec();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let (oh, ow) = (h / 2, w / 2);
                let quarter = F::from_f64(0.25);
                let gx = self.input_grad_buf(x);
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let g = gout[ch * oh * ow + oy * ow + ox] * quarter;
                            let base = ch * h * w + 2 * oy * w + 2 * ox;
                            gx[base] += g;
                            gx[base + 1] += g;
                            gx[base + w] += g;
                            gx[base + w + 1] += g;
                        }
                    }
                }
            }
            Op::GlobalAvgPool => {
                let x = inputs[0];
                let xs = self.nodes[x].value.shape().to_vec();
                let (c, hw) = (xs[0], xs[1] * xs[2]);
                let inv = F::from_f64(1.0 / hw as f64);
                let gx = self.input_grad_buf(x);
                for ch in 0..c {
                    let g = gout[ch] * inv;
                    for v in &mut gx[ch * hw..(ch + 1) * hw] {
                        *v += g;
                    }
                }
            }
            Op::Dense => {
                let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
                let xv = self.nodes[x].value.data().to_vec();
                let wv = self.nodes[w].value.data().to_vec();
                let n = xv.len();
                let m = gout.len();
                add_into(self.input_grad_buf(b), gout);
                {
                    let gw = self.input_grad_buf(w);
                    for i in 0..m {
                        let g = gout[i];
                        let row = &mut gw[i * n..(i + 1) * n];
                        for (gj, xj) in row.iter_mut().zip(&xv) {
                            *gj += g * *xj;
                        }
                    }
                }
                {
                    let gx = self.input_grad_buf(x);
                    for i in 0..m {
                        let g = gout[i];
                        let row = &wv[i * n..(i + 1) * n];
                        for (gj, wj) in gx.iter_mut().zip(row) {
                            *gj += g * *wj;
                        }
                    }
                }
            }
            Op::Concat2 => {
                let (a, b) = (inputs[0], inputs[1]);
                let na = self.nodes[a].value.numel();
                add_into(self.input_grad_buf(a), &gout[..na]);
                add_into(self.input_grad_buf(b), &gout[na..]);
            }
            Op::EuclideanDist => {
                let (a, b) = (inputs[0], inputs[1]);
                let d = self.nodes[id].value.scalar_value();
                // Subgradient 0 at coincident inputs.
                if d > F::ZERO {
                    let av = self.nodes[a].value.data().to_vec();
                    let bv = self.nodes[b].value.data().to_vec();
                    let g = gout[0] / d;
                    {
                        let ga = self.input_grad_buf(a);
                        for i in 0..av.len() {
                            ga[i] += g * (av[i] - bv[i]);
                        }
                    }
                    let gb = self.input_grad_buf(b);
                    for i in 0..av.len() {
                        gb[i] -= g * (av[i] - bv[i]);
                    }
                }
            }
            Op::Sigmoid => {
                let x = inputs[0];
                let yv = self.nodes[id].value.data().to_vec();
                let gx = self.input_grad_buf(x);
                for (i, &g) in gout.iter().enumerate() {
                    gx[i] += g * yv[i] * (F::ONE - yv[i]);
                }
            }
            Op::SoftBce { p } => {
                let q = inputs[0];
                let qv = self.nodes[q].value.data()[0].to_f64();
                // Zero gradient where the clamp is active.
                if qv > PROB_EPS && qv < 1.0 - PROB_EPS {
                    let d = -(1.0 - p) / qv + p / (1.0 - qv);
                    let gq = self.input_grad_buf(q);
                    gq[0] += gout[0] * F::from_f64(d);
                }
            }
            Op::Sum => {
                let x = inputs[0];
                let g = gout[0];
                let gx = self.input_grad_buf(x);
                for v in gx.iter_mut() {
                    *v += g;
                }
            }
            Op::Square => {
                let x = inputs[0];
                let xv = self.nodes[x].value.data().to_vec();
                let two = F::from_f64(2.0);
                let gx = self.input_grad_buf(x);
                for (i, &g) in gout.iter().enumerate() {
                    gx[i] += g * two * xv[i];
                }
            }
            Op::Scale { c } => {
                let x = inputs[0];
                let k = F::from_f64(c);
                let gx = self.input_grad_buf(x);
                for (i, &g) in gout.iter().enumerate() {
                    gx[i] += g * k;
                }
            }
            Op::AddConst => {
                let x = inputs[0];
                add_into(self.input_grad_buf(x), gout);
            }
            Op::Add2 => {
                add_into(self.input_grad_buf(inputs[0]), gout);
                add_into(self.input_grad_buf(inputs[1]), gout);
            }
            Op::Sub2 => {
                add_into(self.input_grad_buf(inputs[0]), gout);
                let gb = self.input_grad_buf(inputs[1]);
                for (g, &go) in gb.iter_mut().zip(gout) {
                    *g -= go;
                }
            }
            Op::MeanMany => {
                let g = gout[0] * F::from_f64(1.0 / inputs.len() as f64);
                for &inp in &inputs {
                    self.input_grad_buf(inp)[0] += g;
                }
            }
            Op::L2Normalize => {
                let x = inputs[0];
                let xv = self.nodes[x].value.data().to_vec();
                let yv = self.nodes[id].value.data().to_vec();
                let mut s = F::ZERO;
                for &a in &xv {
                    s += a * a;
                }
                let r = s.sqrt().maximum(F::from_f64(1e-12));
                let mut ydotg = F::ZERO;
                for (y, &g) in yv.iter().zip(gout) {
                    ydotg += *y * g;
                }
                let gx = self.input_grad_buf(x);
                for i in 0..xv.len() {
                    gx[i] += (gout[i] - yv[i] * ydotg) / r;
                }
            }
            Op::Mse => {
                let (a, b) = (inputs[0], inputs[1]);
                let av = self.nodes[a].value.data().to_vec();
                let bv = self.nodes[b].value.data().to_vec();
                let k = F::from_f64(2.0 / av.len() as f64);
                let g = gout[0];
                {
                    let ga = self.input_grad_buf(a);
                    for i in 0..av.len() {
                        ga[i] += g * k * (av[i] - bv[i]);
                    }
                }
                let gb = self.input_grad_buf(b);
                for i in 0..av.len() {
                    gb[i] -= g * k * (av[i] - bv[i]);
                }
            }
            Op::SoftmaxCe { class } => {
                let x = inputs[0];
                let z = self.nodes[x].value.data().to_vec();
                let m = z.iter().fold(F::from_f64(f64::NEG_INFINITY), |a, &b| a.maximum(b));
                let mut s = F::ZERO;
                for &v in &z {
                    s += (v - m).exp();
                }
                let g = gout[0];
                let gx = self.input_grad_buf(x);
                for i in 0..z.len() {
                    let soft = (z[i] - m).exp() / s;
                    let t = if i == class { F::ONE } else { F::ZERO };
                    gx[i] += g * (soft - t);
                }
            }
        }
        Ok(())
    }

    /// Gradient of a node from the last backward pass, if it received one.
    pub fn node_grad(&self, id: NodeId) -> Option<&[F]> {
        self.nodes[id].grad.as_deref()
    }

    /// Add the gradients of every parameter leaf into the store.
    pub fn grads_into(&self, store: &mut ParamStore<F>) {
        for node in &self.nodes {
            if let (Some(pid), Some(grad)) = (node.param, node.grad.as_ref()) {
                store.get_mut(pid).tensor.accumulate_grad(grad);
            }
        }
    }
}

#[inline]
fn row_range(len: usize, delta: isize) -> (usize, usize) {
    // output indices i such that i + delta lies in [0, len)
    let lo = if delta < 0 { (-delta) as usize } else { 0 };
    let hi = if delta > 0 { len - delta as usize } else { len };
    (lo, hi)
}

#[inline]
fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}
