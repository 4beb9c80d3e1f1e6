//! Reverse-mode automatic differentiation over a linear operation tape.
//!
//! Every primitive pushes one node holding its forward value and enough
//! saved state to run its backward rule. Nodes are appended in evaluation
//! order, so the tape is topologically sorted by construction and a single
//! reverse sweep propagates adjoints.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `scale * x + shift`, elementwise.
    Affine(Var, f64),
    /// Adds a vector along the trailing axis.
    AddBias(Var, Var),
    /// `x · Wᵀ + b` on the trailing axis.
    Linear {
        x: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Conv1d {
        input: Var,
        kernels: Var,
        bias: Var,
        padding: usize,
    },
    Act(Var, Activation),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        offset: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    /// Elementwise product with a constant mask.
    Mask(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The computation record for one forward pass.
///
/// Gradient buffers for leaves created with `requires_grad` persist across
/// [`Tape::backward`] calls and accumulate until [`Tape::zero_grad`].
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

/// Splits `shape` around `axis` into `(outer, extent, inner)`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf; `None` if it does not require one.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Drops every node recorded after the first `len`, invalidating their
    /// handles. Lets a forward pass reuse already-bound leaves.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
        self.grads.truncate(len);
    }

    pub fn zero_grad(&mut self) {
        for g in self.grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Registers an input. Leaves with `requires_grad` get a gradient buffer.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        let grad = requires_grad.then(|| Tensor::zeros(value.shape()));
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.grads.push(grad);
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        #[cfg(debug_assertions)]
        {
            let inputs_finite = inputs.iter().all(|v| self.nodes[v.0].value.is_finite());
            debug_assert!(
                !inputs_finite || value.is_finite(),
                "non-finite output from finite inputs in {op:?}"
            );
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 2 {
            return Err(Error::dim("transpose", self.shape(x), &[2]));
        }
        let value = self.value(x).transpose2();
        Ok(self.push(value, Op::Transpose(x), &[x]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&e| scale * e + shift).collect();
        let value = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Affine(x, scale), &[x])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.affine(x, factor, 0.0)
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = *self.shape(x).last().unwrap_or(&1);
        if self.shape(bias) != [d] {
            return Err(Error::dim("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias).data().to_vec();
        let v = self.value(x);
        let data = v
            .data()
            .iter()
            .enumerate()
            .map(|(i, &e)| e + b[i % d])
            .collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddBias(x, bias), &[x, bias]))
    }

    /// Affine map `y = x · Wᵀ + b` over the trailing axis of `x`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(weight).to_vec();
        let d_in = *sx.last().unwrap_or(&1);
        if sw.len() != 2 || sw[1] != d_in || sx.is_empty() {
            return Err(Error::dim("linear", &sx, &sw));
        }
        let d_out = sw[0];
        if let Some(b) = bias {
            if self.shape(b) != [d_out] {
                return Err(Error::dim("linear bias", &sw, self.shape(b)));
            }
        }
        let rows = self.value(x).len() / d_in;
        let mut out = matmul_nt(
            self.value(x).data(),
            self.value(weight).data(),
            rows,
            d_in,
            d_out,
        );
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for row in out.chunks_mut(d_out) {
                add_into(row, bv);
            }
        }
        let mut shape = sx;
        *shape.last_mut().unwrap() = d_out;
        let value = Tensor::new(shape, out)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.push(value, Op::Linear { x, weight, bias }, &inputs))
    }

    /// Cross-correlation of `input[C_in×T]` with `kernels[C_out×C_in×K]`,
    /// zero-padded by `padding` on both ends. Output is `C_out × (T + 2p − K + 1)`.
    pub fn conv1d(&mut self, input: Var, kernels: Var, bias: Var, padding: usize) -> Result<Var> {
        let si = self.shape(input).to_vec();
        let sk = self.shape(kernels).to_vec();
        if si.len() != 2 || sk.len() != 3 || sk[1] != si[0] {
            return Err(Error::dim("conv1d", &si, &sk));
        }
        let (c_in, t_in) = (si[0], si[1]);
        let (c_out, size) = (sk[0], sk[2]);
        if self.shape(bias) != [c_out] {
            return Err(Error::dim("conv1d bias", &sk, self.shape(bias)));
        }
        if t_in + 2 * padding < size {
            return Err(Error::dim(
                "conv1d (kernel wider than padded input)",
                &si,
                &sk,
            ));
        }
        let t_out = t_in + 2 * padding - size + 1;
        let (xin, w, b) = (
            self.value(input).data(),
            self.value(kernels).data(),
            self.value(bias).data(),
        );
        let mut out = vec![0.0; c_out * t_out];
        for o in 0..c_out {
            for t in 0..t_out {
                let mut acc = b[o];
                for c in 0..c_in {
                    for k in 0..size {
                        let src = t + k;
                        if src < padding || src - padding >= t_in {
                            continue;
                        }
                        acc += w[(o * c_in + c) * size + k] * xin[c * t_in + src - padding];
                    }
                }
                out[o * t_out + t] = acc;
            }
        }
        let value = Tensor::new(vec![c_out, t_out], out)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                kernels,
                bias,
                padding,
            },
            &[input, kernels, bias],
        ))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let v = self.value(x);
        let f: fn(f64) -> f64 = match kind {
            Activation::Relu => |e| e.max(0.0),
            Activation::Sigmoid => sigmoid,
            Activation::Tanh => f64::tanh,
        };
        let value = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&e| f(e)).collect())
            .expect("same shape");
        self.push(value, Op::Act(x, kind), &[x])
    }

    /// Smallest `|x|` fed to any ReLU recorded on the tape, or `None` when
    /// there is no ReLU.
    pub fn relu_margin(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Act(x, Activation::Relu) => Some(x),
                _ => None,
            })
            .flat_map(|x| self.value(x).data().iter().map(|v| v.abs()))
            .reduce(f64::min)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("softmax axis", &shape, &[axis]));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n)
                    .map(|j| src[idx(j)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..n {
                    let e = (src[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    out[idx(j)] /= total;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Softmax { x, axis }, &[x]))
    }

    /// Per-row standardization over the trailing axis with population
    /// variance, followed by `gain ⊙ x̂ + offset`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, offset: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| Error::dim("layer_norm", &shape, &[1]))?;
        if self.shape(gain) != [d] || self.shape(offset) != [d] {
            return Err(Error::dim("layer_norm affine", &shape, self.shape(gain)));
        }
        let src = self.value(x).data();
        let (g, b) = (self.value(gain).data(), self.value(offset).data());
        let rows = src.len() / d;
        let mut normalized = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            inv_std[r] = rstd;
            for j in 0..d {
                let xh = (row[j] - mean) * rstd;
                normalized[r * d + j] = xh;
                out[r * d + j] = g[j] * xh + b[j];
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                offset,
                normalized,
                inv_std,
            },
            &[x, gain, offset],
        ))
    }

    /// Inverted dropout. Training mode zeroes each element with probability
    /// `p` and scales survivors by `1/(1−p)`; `p = 1` zeroes everything.
    /// Eval mode (or `p = 0`) is the identity and records nothing.
    pub fn dropout(
        &mut self,
        x: Var,
        p: f64,
        training: bool,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!(
                "dropout probability {p} outside [0, 1]"
            )));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let n = self.value(x).len();
        let mask: Vec<f64> = if p == 1.0 {
            vec![0.0; n]
        } else {
            let rng = rng.ok_or_else(|| {
                Error::Contract("training-mode dropout needs a random stream".into())
            })?;
            let keep = 1.0 / (1.0 - p);
            (0..n)
                .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                .collect()
        };
        Ok(self.mask(x, mask))
    }

    /// Elementwise product with a constant mask of the same length.
    pub fn mask(&mut self, x: Var, mask: Vec<f64>) -> Var {
        let v = self.value(x);
        assert_eq!(mask.len(), v.len(), "mask length");
        let data = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Mask(x, mask), &[x])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat axis", &base, &[axis]));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let n = v.shape()[axis];
                out.extend_from_slice(&v.data()[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::dim("narrow", &shape, &[axis, start, len]));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let value = Tensor::new(new_shape, out)?;
        Ok(self.push(value, Op::Narrow { x, axis, start }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Mean of squared differences over all elements.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse_loss", pred, target)?;
        let (p, t) = (self.value(pred), self.value(target));
        let n = p.len() as f64;
        let s = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / n;
        Ok(self.push(Tensor::scalar(s), Op::Mse(pred, target), &[pred, target]))
    }

    /// Propagates `∂loss/∂·` to every leaf that requires a gradient,
    /// adding into the persistent gradient buffers.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                if let Some(buf) = self.grads[i].as_mut() {
                    add_into(buf.data_mut(), &g);
                }
                continue;
            }
            self.backprop_node(i, &g, &mut adj);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(acc) => add_into(acc, &contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                send(*a, matmul_nt(g, val(*b), m, n, k));
                send(*b, matmul_tn(val(*a), g, m, k, n));
            }
            Op::Transpose(x) => {
                let s = node.value.shape();
                let gt = Tensor::new(s.to_vec(), g.to_vec()).unwrap().transpose2();
                send(*x, gt.into_data());
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                send(*a, g.iter().zip(vb).map(|(g, y)| g * y).collect());
                send(*b, g.iter().zip(va).map(|(g, x)| g * x).collect());
            }
            Op::Affine(x, scale) => send(*x, g.iter().map(|v| v * scale).collect()),
            Op::AddBias(x, b) => {
                let d = self.shape(*b)[0];
                let mut gb = vec![0.0; d];
                for row in g.chunks(d) {
                    add_into(&mut gb, row);
                }
                send(*x, g.to_vec());
                send(*b, gb);
            }
            Op::Linear { x, weight, bias } => {
                let sw = self.shape(*weight);
                let (d_out, d_in) = (sw[0], sw[1]);
                let rows = g.len() / d_out;
                send(*x, matmul_nn(g, val(*weight), rows, d_out, d_in));
                send(*weight, matmul_tn(g, val(*x), rows, d_out, d_in));
                if let Some(b) = bias {
                    let mut gb = vec![0.0; d_out];
                    for row in g.chunks(d_out) {
                        add_into(&mut gb, row);
                    }
                    send(*b, gb);
                }
            }
            Op::Conv1d {
                input,
                kernels,
                bias,
                padding,
            } => {
                let si = self.shape(*input);
                let sk = self.shape(*kernels);
                let (c_in, t_in, c_out, size) = (si[0], si[1], sk[0], sk[2]);
                let t_out = node.value.shape()[1];
                let (xin, w) = (val(*input), val(*kernels));
                let mut gx = vec![0.0; xin.len()];
                let mut gw = vec![0.0; w.len()];
                let mut gb = vec![0.0; c_out];
                for o in 0..c_out {
                    for t in 0..t_out {
                        let go = g[o * t_out + t];
                        gb[o] += go;
                        for c in 0..c_in {
                            for k in 0..size {
                                let src = t + k;
                                if src < *padding || src - padding >= t_in {
                                    continue;
                                }
                                let xi = c * t_in + src - padding;
                                let wi = (o * c_in + c) * size + k;
                                gx[xi] += w[wi] * go;
                                gw[wi] += xin[xi] * go;
                            }
                        }
                    }
                }
                send(*input, gx);
                send(*kernels, gw);
                send(*bias, gb);
            }
            Op::Act(x, kind) => {
                let y = node.value.data();
                let gx = match kind {
                    Activation::Relu => g
                        .iter()
                        .zip(val(*x))
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                    Activation::Sigmoid => {
                        g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect()
                    }
                    Activation::Tanh => g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                };
                send(*x, gx);
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, n, inner) = axis_split(node.value.shape(), *axis);
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let dot: f64 = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..n {
                            gx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
                send(*x, gx);
            }
            Op::LayerNorm {
                x,
                gain,
                offset,
                normalized,
                inv_std,
            } => {
                let gm = val(*gain);
                let d = gm.len();
                let mut gx = vec![0.0; g.len()];
                let mut g_gain = vec![0.0; d];
                let mut g_off = vec![0.0; d];
                for (r, &rstd) in inv_std.iter().enumerate() {
                    let gr = &g[r * d..(r + 1) * d];
                    let xh = &normalized[r * d..(r + 1) * d];
                    let mut mean_dxh = 0.0;
                    let mut mean_dxh_xh = 0.0;
                    for j in 0..d {
                        let dxh = gr[j] * gm[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh[j];
                        g_gain[j] += gr[j] * xh[j];
                        g_off[j] += gr[j];
                    }
                    mean_dxh /= d as f64;
                    mean_dxh_xh /= d as f64;
                    for j in 0..d {
                        let dxh = gr[j] * gm[j];
                        gx[r * d + j] = rstd * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                    }
                }
                send(*x, gx);
                send(*gain, g_gain);
                send(*offset, g_off);
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut cursor = 0;
                for p in parts {
                    let n = self.shape(*p)[*axis];
                    let mut gp = Vec::with_capacity(outer * n * inner);
                    for o in 0..outer {
                        let base = (o * total + cursor) * inner;
                        gp.extend_from_slice(&g[base..base + n * inner]);
                    }
                    cursor += n;
                    send(*p, gp);
                }
            }
            Op::Narrow { x, axis, start } => {
                let (outer, n, inner) = axis_split(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                let mut gx = vec![0.0; outer * n * inner];
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    gx[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                send(*x, gx);
            }
            Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Mask(x, mask) => send(*x, g.iter().zip(mask).map(|(g, m)| g * m).collect()),
            Op::Sum(x) => send(*x, vec![g[0]; self.value(*x).len()]),
            Op::Mean(x) => {
                let n = self.value(*x).len();
                send(*x, vec![g[0] / n as f64; n]);
            }
            Op::Mse(p, t) => {
                let (vp, vt) = (val(*p), val(*t));
                let scale = 2.0 * g[0] / vp.len() as f64;
                let diff: Vec<f64> = vp.iter().zip(vt).map(|(a, b)| scale * (a - b)).collect();
                send(*t, diff.iter().map(|v| -v).collect());
                send(*p, diff);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows)
    }

    #[test]
    fn matmul_identity_and_reference() {
        let mut tape = Tape::new();
        let i2 = tape.constant(m(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let x = tape.constant(m(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let y = tape.constant(m(&[vec![5.0, 6.0], vec![7.0, 8.0]]));
        let id = tape.matmul(i2, x).unwrap();
        assert_eq!(tape.value(id), tape.value(x));
        let p = tape.matmul(x, y).unwrap();
        assert_eq!(tape.value(p).data(), &[19.0, 22.0, 43.0, 50.0]);

        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("[2, 3]"), "{err}");
    }

    #[test]
    fn conv1d_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(m(&[vec![1.0, 2.0, 3.0]]));
        let k = tape.constant(Tensor::new(vec![1, 1, 3], vec![1.0; 3]).unwrap());
        let b = tape.constant(Tensor::vector(vec![0.0]));
        let y = tape.conv1d(x, k, b, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 6.0, 5.0]);

        let k1 = tape.constant(Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap());
        let y = tape.conv1d(x, k1, b, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, 4.0, 6.0]);

        let kz = tape.constant(Tensor::zeros(&[1, 1, 1]));
        let bz = tape.constant(Tensor::vector(vec![0.7]));
        let y = tape.conv1d(x, kz, bz, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[0.7; 3]);

        let wide = tape.constant(Tensor::zeros(&[1, 1, 6]));
        assert!(tape.conv1d(x, wide, b, 1).is_err());
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
        let x = tape.constant(Tensor::vector(vec![0.0, 3f64.ln()]));
        let y = tape.softmax(x, 0).unwrap();
        let d = tape.value(y).data();
        assert!((d[0] - 0.25).abs() < 1e-15 && (d[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_along_leading_axis() {
        let mut tape = Tape::new();
        let x = tape.constant(m(&[vec![1.0, 5.0], vec![1.0, 2.0]]));
        let y = tape.softmax(x, 0).unwrap();
        let v = tape.value(y);
        assert_eq!(v.at2(0, 0), 0.5);
        assert!((v.at2(0, 1) + v.at2(1, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::new();
        let ones = tape.constant(Tensor::filled(&[2], 1.0));
        let zeros = tape.constant(Tensor::zeros(&[2]));
        let x = tape.constant(m(&[vec![4.0, 4.0], vec![1.0, 3.0]]));
        let y = tape.layer_norm(x, ones, zeros, 1e-5).unwrap();
        let v = tape.value(y).data();
        assert_eq!(&v[..2], &[0.0, 0.0]);
        assert!((v[2] + 1.0).abs() < 1e-5 && (v[3] - 1.0).abs() < 1e-5);
        let x2 = tape.constant(m(&[vec![1.0, 3.0]]));
        let y = tape.layer_norm(x2, ones, zeros, 0.0).unwrap();
        assert_eq!(tape.value(y).data(), &[-1.0, 1.0]);

        let beta = tape.constant(Tensor::filled(&[2], 0.3));
        let y = tape.layer_norm(x, zeros, beta, 1e-5).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn activation_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![-2.0, 3.0, 0.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 3.0, 0.0]);
        let s = tape.sigmoid(x);
        assert_eq!(tape.value(s).data()[2], 0.5);
        let t = tape.tanh(x);
        assert_eq!(tape.value(t).data()[2], 0.0);
        assert!("gelu".parse::<Activation>().is_err());
        assert_eq!(tape.relu_margin(), Some(0.0));
        let mut fresh = Tape::new();
        let y = fresh.constant(Tensor::vector(vec![-0.5, 0.25]));
        assert_eq!(fresh.relu_margin(), None);
        fresh.relu(y);
        assert_eq!(fresh.relu_margin(), Some(0.25));
    }

    #[test]
    fn dropout_modes() {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = tape.constant(Tensor::filled(&[100], 2.0));
        assert_eq!(tape.dropout(x, 0.0, true, Some(&mut rng)).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.7, false, None).unwrap(), x);
        let z = tape.dropout(x, 1.0, true, None).unwrap();
        assert!(tape.value(z).data().iter().all(|&v| v == 0.0));
        let d = tape.dropout(x, 0.5, true, Some(&mut rng)).unwrap();
        assert!(tape.value(d).data().iter().all(|&v| v == 0.0 || v == 4.0));
        assert!(tape.dropout(x, 1.5, true, Some(&mut rng)).is_err());
        assert!(tape.dropout(x, -0.1, false, None).is_err());
    }

    #[test]
    fn concat_examples() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![3.0]));
        let c = tape.concat(&[a, b], 0).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);

        let p = tape.constant(Tensor::zeros(&[4, 512]));
        let q = tape.constant(Tensor::zeros(&[4, 512]));
        let pq = tape.concat(&[p, q], 1).unwrap();
        assert_eq!(tape.shape(pq), &[4, 1024]);

        let r = tape.constant(Tensor::zeros(&[3, 5]));
        let s = tape.constant(Tensor::zeros(&[4, 5]));
        assert!(tape.concat(&[r, s], 1).is_err());
    }

    #[test]
    fn linear_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 1.0]));
        let w = tape.constant(m(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = tape.constant(Tensor::zeros(&[2]));
        let y = tape.linear(x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 7.0]);

        let eye = tape.constant(m(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let x2 = tape.constant(m(&[vec![0.5, -2.0], vec![7.0, 1.5]]));
        let y = tape.linear(x2, eye, Some(b)).unwrap();
        assert_eq!(tape.value(y), tape.value(x2));

        let w0 = tape.constant(Tensor::zeros(&[2, 2]));
        let beta = tape.constant(Tensor::filled(&[2], 0.25));
        let y = tape.linear(x2, w0, Some(beta)).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.25));

        let bad = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(tape.linear(x2, bad, None).is_err());
    }

    #[test]
    fn mse_value_and_gradient() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::vector(vec![1.0, 1.0]));
        let t = tape.constant(Tensor::vector(vec![0.0, 2.0]));
        let l = tape.mse_loss(p, t).unwrap();
        assert_eq!(tape.value(l).item(), 1.0);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(p).unwrap().data(), &[1.0, -1.0]);
        assert!(tape.grad(t).is_none());

        let same = tape.mse_loss(t, t).unwrap();
        assert_eq!(tape.value(same).item(), 0.0);
        let other = tape.constant(Tensor::zeros(&[3]));
        assert!(tape.mse_loss(p, other).is_err());
    }

    #[test]
    fn backward_examples() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let sq = tape.mul(x, x).unwrap();
        tape.backward(sq).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 6.0);

        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(5.0));
        let twice = tape.add(x, x).unwrap();
        tape.backward(twice).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 2.0);
        // no reset between calls: accumulates
        tape.backward(twice).unwrap();
        assert_eq!(tape.grad(x).unwrap().item(), 4.0);
        tape.zero_grad();
        assert_eq!(tape.grad(x).unwrap().item(), 0.0);

        let v = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(v), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_through_matvec_is_transpose_product() {
        let mut tape = Tape::new();
        let a = tape.constant(m(&[vec![1.0, 2.0, -1.0], vec![0.5, 3.0, 4.0]]));
        let x = tape.param(Tensor::new(vec![3, 1], vec![1.0, -2.0, 0.25]).unwrap());
        let y = tape.matmul(a, x).unwrap();
        let dy = tape.constant(Tensor::new(vec![2, 1], vec![2.0, -0.5]).unwrap());
        let prod = tape.mul(y, dy).unwrap();
        let loss = tape.sum(prod);
        tape.backward(loss).unwrap();
        // Aᵀ·dy
        let expect = [
            1.0 * 2.0 + 0.5 * -0.5,
            2.0 * 2.0 + 3.0 * -0.5,
            -2.0 + 4.0 * -0.5,
        ];
        assert_eq!(tape.grad(x).unwrap().data(), &expect);
    }
}
