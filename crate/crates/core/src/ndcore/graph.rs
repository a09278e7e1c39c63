use serde::{Deserialize, Serialize};

use super::{shape_err, sigmoid, softplus, NdError, Result, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Local response normalization constants:
/// `v'_i = v_i / (k + alpha * sum_{|j-i| <= radius} v_j^2)^beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrnParams {
    pub k: f64,
    pub alpha: f64,
    pub beta: f64,
    pub radius: usize,
}

impl Default for LrnParams {
    fn default() -> Self {
        Self {
            k: 2.0,
            alpha: 1e-4,
            beta: 0.75,
            radius: 2,
        }
    }
}

/// Smallest probability fed to the logarithm in cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    MatMul(Var, Var),
    Reshape(Var),
    Concat(Vec<Var>),
    Slice {
        input: Var,
        start: usize,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    TemporalConv {
        input: Var,
        kernels: Var,
        bias: Var,
        pre: Vec<f64>,
    },
    MaxOverTime {
        input: Var,
        argmax: Vec<usize>,
    },
    Lrn {
        input: Var,
        params: LrnParams,
        denom: Vec<f64>,
    },
    Softmax(Var),
    CrossEntropy {
        input: Var,
        label: usize,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are appended in evaluation order, so the record is topologically
/// sorted by construction and [`Graph::backward`] is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every trainable leaf of a graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` if it was never reached.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    /// Gradient for `var`; zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        self.grads[var.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

fn rank_is(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return shape_err(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        );
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(
        &mut self,
        op_name: &'static str,
        value: Tensor,
        op: Op,
        inputs: &[Var],
    ) -> Result<Var> {
        if !value.all_finite() {
            return Err(NdError::NonFinite { op: op_name });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        same_shape(name, ta, tb)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(name, out, op, &[a, b])
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let ta = self.val(a);
        let data = ta.data().iter().map(|x| f(*x)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(name, out, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.unary("scale", a, |x| x * factor, Op::Scale(a, factor))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary("softplus", a, softplus, Op::Softplus(a))
    }

    /// `[m x k] . [k x n] -> [m x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        rank_is("matmul", ta, 2)?;
        rank_is("matmul", tb, 2)?;
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let (k2, n) = (tb.shape()[0], tb.shape()[1]);
        if k != k2 {
            return shape_err("matmul", format!("[{m}x{k}] . [{k2}x{n}]"));
        }
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for (o, bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                    *o += aip * bv;
                }
            }
        }
        let out = Tensor::new(vec![m, n], out)?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// `[m x k] . [k] -> [m]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let k = self.val(x).len();
        let col = self.reshape(x, &[k, 1])?;
        let prod = self.matmul(w, col)?;
        let m = self.val(prod).shape()[0];
        self.reshape(prod, &[m])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.val(a).clone().reshaped(shape)?;
        self.push("reshape", out, Op::Reshape(a), &[a])
    }

    /// Concatenation of rank-1 tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(NdError::InvalidArgument {
                op: "concat",
                detail: "nothing to concatenate".into(),
            });
        }
        let mut data = Vec::new();
        for &p in parts {
            let t = self.val(p);
            rank_is("concat", t, 1)?;
            data.extend_from_slice(t.data());
        }
        self.push(
            "concat",
            Tensor::vector(data),
            Op::Concat(parts.to_vec()),
            parts,
        )
    }

    /// Elements `start..start + len` of a rank-1 tensor.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.val(a);
        rank_is("slice", t, 1)?;
        if start + len > t.len() {
            return shape_err(
                "slice",
                format!("range {start}..{} out of {}", start + len, t.len()),
            );
        }
        let out = Tensor::vector(t.data()[start..start + len].to_vec());
        self.push("slice", out, Op::Slice { input: a, start }, &[a])
    }

    /// Rows `ids` of a `[rows x dim]` table, stacked into `[ids.len() x dim]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.val(table);
        rank_is("gather", t, 2)?;
        let (rows, dim) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= rows {
                return Err(NdError::InvalidArgument {
                    op: "gather",
                    detail: format!("row {id} out of {rows}"),
                });
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::new(vec![ids.len(), dim], data)?;
        let op = Op::Gather {
            table,
            ids: ids.to_vec(),
        };
        self.push("gather", out, op, &[table])
    }

    /// Narrow temporal convolution followed by softplus.
    ///
    /// `input` is `[k x d]`. `kernels` is either a single `[h x d]` filter
    /// with a one-element `bias`, giving `[k - h + 1]`, or a bank
    /// `[c x h x d]` with `bias` of length `c`, giving `[c x (k - h + 1)]`.
    /// Each output is `softplus(sum(K ∘ input[i..i+h]) + b)`.
    pub fn temporal_conv(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        const OP: &str = "temporal_conv";
        let (tw, tk, tb) = (self.val(input), self.val(kernels), self.val(bias));
        rank_is(OP, tw, 2)?;
        let (k, d) = (tw.shape()[0], tw.shape()[1]);
        let (channels, h, kd, single) = match tk.shape() {
            &[h, kd] => (1, h, kd, true),
            &[c, h, kd] => (c, h, kd, false),
            s => return shape_err(OP, format!("kernel shape {s:?}")),
        };
        if kd != d {
            return shape_err(OP, format!("kernel depth {kd} vs embedding dim {d}"));
        }
        if tb.len() != channels {
            return shape_err(OP, format!("{} biases for {channels} kernels", tb.len()));
        }
        if h == 0 || h > k {
            return Err(NdError::InvalidArgument {
                op: OP,
                detail: format!("kernel width {h} does not fit sentence length {k}"),
            });
        }
        let width = k - h + 1;
        let span = h * d;
        let (wd, kdat, bd) = (tw.data(), tk.data(), tb.data());
        let mut pre = Vec::with_capacity(channels * width);
        for c in 0..channels {
            let kern = &kdat[c * span..(c + 1) * span];
            for i in 0..width {
                let window = &wd[i * d..i * d + span];
                let dot: f64 = kern.iter().zip(window).map(|(a, b)| a * b).sum();
                pre.push(dot + bd[c]);
            }
        }
        let out: Vec<f64> = pre.iter().map(|&x| softplus(x)).collect();
        let shape = if single {
            vec![width]
        } else {
            vec![channels, width]
        };
        let out = Tensor::new(shape, out)?;
        let op = Op::TemporalConv {
            input,
            kernels,
            bias,
            pre,
        };
        self.push(OP, out, op, &[input, kernels, bias])
    }

    /// Maximum along the last axis. Ties resolve to the first maximal index,
    /// which alone receives the gradient.
    pub fn max_over_time(&mut self, a: Var) -> Result<Var> {
        let t = self.val(a);
        let (&len, outer) = match t.shape().split_last() {
            Some(x) => x,
            None => {
                return Err(NdError::InvalidArgument {
                    op: "max_over_time",
                    detail: "scalar input".into(),
                })
            }
        };
        if len == 0 {
            return Err(NdError::InvalidArgument {
                op: "max_over_time",
                detail: "empty feature map".into(),
            });
        }
        let mut argmax = Vec::new();
        let mut out = Vec::new();
        for row in t.data().chunks(len) {
            let mut best = 0;
            for (j, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = j;
                }
            }
            argmax.push(best);
            out.push(row[best]);
        }
        let out = Tensor::new(outer.to_vec(), out)?;
        self.push(
            "max_over_time",
            out,
            Op::MaxOverTime { input: a, argmax },
            &[a],
        )
    }

    /// Local response normalization across a rank-1 tensor.
    pub fn lrn(&mut self, a: Var, params: LrnParams) -> Result<Var> {
        let t = self.val(a);
        rank_is("lrn", t, 1)?;
        let v = t.data();
        let c = v.len();
        let mut denom = Vec::with_capacity(c);
        let mut out = Vec::with_capacity(c);
        for i in 0..c {
            let lo = i.saturating_sub(params.radius);
            let hi = (i + params.radius).min(c - 1);
            let sq: f64 = v[lo..=hi].iter().map(|x| x * x).sum();
            let base = params.k + params.alpha * sq;
            denom.push(base);
            out.push(v[i] / base.powf(params.beta));
        }
        let op = Op::Lrn {
            input: a,
            params,
            denom,
        };
        self.push("lrn", Tensor::vector(out), op, &[a])
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let n = self.val(a).len();
        self.masked_softmax(a, &vec![true; n])
    }

    /// Softmax over the entries where `mask` is true; masked entries get
    /// exactly zero probability (as if their score were negative infinity).
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let t = self.val(a);
        rank_is("softmax", t, 1)?;
        if mask.len() != t.len() {
            return shape_err("softmax", format!("mask {} vs {}", mask.len(), t.len()));
        }
        let z = t.data();
        let max = z
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(x, _)| *x)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(NdError::InvalidArgument {
                op: "softmax",
                detail: "every entry is masked".into(),
            });
        }
        let mut out: Vec<f64> = z
            .iter()
            .zip(mask)
            .map(|(x, &m)| if m { (x - max).exp() } else { 0.0 })
            .collect();
        let total: f64 = out.iter().sum();
        for p in &mut out {
            *p /= total;
        }
        self.push("softmax", Tensor::vector(out), Op::Softmax(a), &[a])
    }

    /// `-ln(max(p[label], 1e-12))` for a probability vector `p`.
    pub fn cross_entropy(&mut self, p: Var, label: usize) -> Result<Var> {
        let t = self.val(p);
        rank_is("cross_entropy", t, 1)?;
        if label >= t.len() {
            return Err(NdError::InvalidArgument {
                op: "cross_entropy",
                detail: format!("label {label} out of {}", t.len()),
            });
        }
        let out = Tensor::scalar(-t.data()[label].max(PROB_FLOOR).ln());
        self.push(
            "cross_entropy",
            out,
            Op::CrossEntropy { input: p, label },
            &[p],
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.val(a).sum());
        self.push("sum", out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.val(a).len();
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Reverse sweep from a scalar `loss`, consuming the record.
    ///
    /// Gradients are accumulated in strict reverse record order, so identical
    /// records produce bit-identical results.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes;
        let loss_shape = nodes[loss.0].value.shape().to_vec();
        if nodes[loss.0].value.len() != 1 {
            return Err(NdError::NonScalarLoss(loss_shape));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(&loss_shape, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let g = g.data();
            let mut acc = |v: Var, contribution: Vec<f64>| {
                if !nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => {
                        for (e, c) in existing.data_mut().iter_mut().zip(&contribution) {
                            *e += c;
                        }
                    }
                    slot @ None => {
                        let shape = nodes[v.0].value.shape().to_vec();
                        *slot = Some(Tensor::new(shape, contribution).expect("gradient shape"));
                    }
                }
            };
            let val = |v: Var| nodes[v.0].value.data();
            let out = node.value.data();

            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(*a, g.to_vec());
                    acc(*b, g.to_vec());
                }
                Op::Sub(a, b) => {
                    acc(*a, g.to_vec());
                    acc(*b, g.iter().map(|x| -x).collect());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    acc(*a, g.iter().zip(bv).map(|(g, y)| g * y).collect());
                    acc(*b, g.iter().zip(av).map(|(g, x)| g * x).collect());
                }
                Op::Scale(a, f) => acc(*a, g.iter().map(|x| x * f).collect()),
                Op::Sigmoid(a) => acc(
                    *a,
                    g.iter().zip(out).map(|(g, s)| g * s * (1.0 - s)).collect(),
                ),
                Op::Tanh(a) => acc(
                    *a,
                    g.iter().zip(out).map(|(g, t)| g * (1.0 - t * t)).collect(),
                ),
                Op::Softplus(a) => acc(
                    *a,
                    g.iter()
                        .zip(val(*a))
                        .map(|(g, x)| g * sigmoid(*x))
                        .collect(),
                ),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    let (ad, bd) = (ta.data(), tb.data());
                    if nodes[a.0].needs_grad {
                        let mut da = vec![0.0; m * k];
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                da[i * k + p] = grow
                                    .iter()
                                    .zip(&bd[p * n..(p + 1) * n])
                                    .map(|(x, y)| x * y)
                                    .sum();
                            }
                        }
                        acc(*a, da);
                    }
                    if nodes[b.0].needs_grad {
                        let mut db = vec![0.0; k * n];
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let aip = ad[i * k + p];
                                for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *d += aip * gv;
                                }
                            }
                        }
                        acc(*b, db);
                    }
                }
                Op::Reshape(a) => acc(*a, g.to_vec()),
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = nodes[p.0].value.len();
                        acc(*p, g[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                Op::Slice { input, start } => {
                    let mut d = vec![0.0; nodes[input.0].value.len()];
                    d[*start..*start + g.len()].copy_from_slice(g);
                    acc(*input, d);
                }
                Op::Gather { table, ids } => {
                    let t = &nodes[table.0].value;
                    let dim = t.shape()[1];
                    let mut d = vec![0.0; t.len()];
                    for (r, &id) in ids.iter().enumerate() {
                        for (dst, src) in d[id * dim..(id + 1) * dim]
                            .iter_mut()
                            .zip(&g[r * dim..(r + 1) * dim])
                        {
                            *dst += src;
                        }
                    }
                    acc(*table, d);
                }
                Op::TemporalConv {
                    input,
                    kernels,
                    bias,
                    pre,
                } => {
                    let (tw, tk) = (&nodes[input.0].value, &nodes[kernels.0].value);
                    let d = tw.shape()[1];
                    let channels = nodes[bias.0].value.len();
                    let span = tk.len() / channels;
                    let width = pre.len() / channels;
                    let (wd, kd) = (tw.data(), tk.data());
                    let mut dw = vec![0.0; tw.len()];
                    let mut dk = vec![0.0; tk.len()];
                    let mut db = vec![0.0; channels];
                    for c in 0..channels {
                        let kern = &kd[c * span..(c + 1) * span];
                        for i in 0..width {
                            let gp = g[c * width + i] * sigmoid(pre[c * width + i]);
                            if gp == 0.0 {
                                continue;
                            }
                            db[c] += gp;
                            let win = i * d..i * d + span;
                            for (dst, kv) in dw[win.clone()].iter_mut().zip(kern) {
                                *dst += gp * kv;
                            }
                            for (dst, wv) in dk[c * span..(c + 1) * span].iter_mut().zip(&wd[win]) {
                                *dst += gp * wv;
                            }
                        }
                    }
                    acc(*input, dw);
                    acc(*kernels, dk);
                    acc(*bias, db);
                }
                Op::MaxOverTime { input, argmax } => {
                    let t = &nodes[input.0].value;
                    let len = *t.shape().last().expect("rank >= 1");
                    let mut d = vec![0.0; t.len()];
                    for (r, &j) in argmax.iter().enumerate() {
                        d[r * len + j] = g[r];
                    }
                    acc(*input, d);
                }
                Op::Lrn {
                    input,
                    params,
                    denom,
                } => {
                    let v = val(*input);
                    let c = v.len();
                    // t_i = g_i * v_i * D_i^(-beta-1)
                    let t: Vec<f64> = (0..c)
                        .map(|i| g[i] * v[i] * denom[i].powf(-params.beta - 1.0))
                        .collect();
                    let mut d = vec![0.0; c];
                    for k in 0..c {
                        let lo = k.saturating_sub(params.radius);
                        let hi = (k + params.radius).min(c - 1);
                        let cross: f64 = t[lo..=hi].iter().sum();
                        d[k] = g[k] * denom[k].powf(-params.beta)
                            - 2.0 * params.alpha * params.beta * v[k] * cross;
                    }
                    acc(*input, d);
                }
                Op::Softmax(a) => {
                    let dot: f64 = g.iter().zip(out).map(|(g, p)| g * p).sum();
                    acc(*a, out.iter().zip(g).map(|(p, g)| p * (g - dot)).collect());
                }
                Op::CrossEntropy { input, label } => {
                    let p = val(*input);
                    let mut d = vec![0.0; p.len()];
                    if p[*label] >= PROB_FLOOR {
                        d[*label] = -g[0] / p[*label];
                    }
                    acc(*input, d);
                }
                Op::Sum(a) => acc(*a, vec![g[0]; nodes[a.0].value.len()]),
            }
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        for (slot, node) in grads.iter_mut().zip(&nodes) {
            if !matches!(node.op, Op::Leaf) || !node.needs_grad {
                *slot = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn elementwise_values() {
        let mut g = Graph::new();
        let zero = g.constant(Tensor::vector(vec![0.0]));
        let sp = g.softplus(zero).unwrap();
        let th = g.tanh(zero).unwrap();
        let sg = g.sigmoid(zero).unwrap();
        assert!(close(g.value(sp).data()[0], std::f64::consts::LN_2, 1e-12));
        assert_eq!(g.value(th).data()[0], 0.0);
        assert_eq!(g.value(sg).data()[0], 0.5);

        let a = g.constant(Tensor::vector(vec![2.0, 3.0]));
        let b = g.constant(Tensor::vector(vec![4.0, 5.0]));
        let m = g.mul(a, b).unwrap();
        assert_eq!(g.value(m).data(), &[8.0, 15.0]);
    }

    #[test]
    fn binary_shape_mismatch_is_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = g.constant(Tensor::vector(vec![1.0]));
        assert!(matches!(g.add(a, b), Err(NdError::ShapeMismatch { .. })));
    }

    #[test]
    fn non_finite_output_is_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1e308]));
        assert!(matches!(g.scale(a, 10.0), Err(NdError::NonFinite { .. })));
    }

    #[test]
    fn matmul_values_and_dims() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let b = g.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[11.0]);
        assert!(g.matmul(a, a).is_err());

        let eye = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let x = g.constant(Tensor::matrix(2, 1, vec![7.0, -2.0]).unwrap());
        let y = g.matmul(eye, x).unwrap();
        assert_eq!(g.value(y).data(), &[7.0, -2.0]);
    }

    #[test]
    fn sum_of_matmul_gradient_is_ones_times_b_transpose() {
        let mut g = Graph::new();
        let a = g.param(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = g.constant(Tensor::matrix(3, 2, vec![0.5, -1., 2., 0., 1., 3.]).unwrap());
        let c = g.matmul(a, b).unwrap();
        let s = g.sum(c).unwrap();
        let grads = g.backward(s).unwrap();
        // (ones[2x2] . B^T)[i][p] = sum_j B[p][j]
        let expected = [-0.5, 2.0, 4.0, -0.5, 2.0, 4.0];
        assert_eq!(grads.wrt(a).data(), &expected);
    }

    #[test]
    fn temporal_conv_hand_example() {
        let mut g = Graph::new();
        let w = g.constant(Tensor::matrix(3, 2, vec![1., 0., 0., 1., 1., 1.]).unwrap());
        let k = g.constant(Tensor::matrix(2, 2, vec![1., 1., 1., 1.]).unwrap());
        let b = g.constant(Tensor::scalar(0.0));
        let f = g.temporal_conv(w, k, b).unwrap();
        let out = g.value(f).data();
        assert_eq!(out.len(), 2);
        assert!(close(out[0], 2.126928011042972, 1e-12));
        assert!(close(out[1], 3.048587351573742, 1e-12));
    }

    #[test]
    fn temporal_conv_output_length_and_zero_input() {
        let mut g = Graph::new();
        let w = g.constant(Tensor::zeros(&[100, 4]));
        let k = g.constant(Tensor::filled(&[2, 4], 0.3));
        let b = g.constant(Tensor::scalar(0.0));
        let f = g.temporal_conv(w, k, b).unwrap();
        assert_eq!(g.value(f).shape(), &[99]);
        assert!(g
            .value(f)
            .data()
            .iter()
            .all(|&x| close(x, std::f64::consts::LN_2, 1e-15)));

        let too_wide = g.constant(Tensor::zeros(&[101, 4]));
        let b2 = g.constant(Tensor::scalar(0.0));
        assert!(g.temporal_conv(w, too_wide, b2).is_err());
    }

    #[test]
    fn max_over_time_ties_route_gradient_to_first() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![2.0, 2.0]));
        let m = g.max_over_time(x).unwrap();
        assert_eq!(g.value(m).item().unwrap(), 2.0);
        let grads = g.backward(m).unwrap();
        assert_eq!(grads.wrt(x).data(), &[1.0, 0.0]);

        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0, 5.0, 3.0]));
        let m = g.max_over_time(x).unwrap();
        assert_eq!(g.value(m).item().unwrap(), 5.0);
        let empty = g.constant(Tensor::vector(vec![]));
        assert!(g.max_over_time(empty).is_err());
    }

    #[test]
    fn lrn_hand_values() {
        let mut g = Graph::new();
        let one = g.constant(Tensor::vector(vec![1.0]));
        let p = LrnParams {
            k: 1.0,
            alpha: 1.0,
            beta: 1.0,
            radius: 0,
        };
        let y = g.lrn(one, p).unwrap();
        assert_eq!(g.value(y).data(), &[0.5]);

        let zeros = g.constant(Tensor::zeros(&[5]));
        let y = g.lrn(zeros, LrnParams::default()).unwrap();
        assert!(g.value(y).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn softmax_values() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let p = g.softmax(z).unwrap();
        assert_eq!(g.value(p).data(), &[0.5, 0.5]);
        let z = g.constant(Tensor::vector(vec![0.0, 3f64.ln()]));
        let p = g.softmax(z).unwrap();
        assert!(close(g.value(p).data()[0], 0.25, 1e-15));
        assert!(close(g.value(p).data()[1], 0.75, 1e-15));

        let z = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let none = [false, false];
        assert!(g.masked_softmax(z, &none).is_err());
        let p = g.masked_softmax(z, &[false, true]).unwrap();
        assert_eq!(g.value(p).data(), &[0.0, 1.0]);
    }

    #[test]
    fn cross_entropy_values() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::vector(vec![0.5, 0.5]));
        let l = g.cross_entropy(p, 1).unwrap();
        assert!(close(
            g.value(l).item().unwrap(),
            std::f64::consts::LN_2,
            1e-15
        ));
        let p = g.constant(Tensor::vector(vec![0.0, 1.0]));
        let l = g.cross_entropy(p, 1).unwrap();
        assert_eq!(g.value(l).item().unwrap(), 0.0);
        let l = g.cross_entropy(p, 0).unwrap();
        assert!(close(g.value(l).item().unwrap(), -(1e-12f64).ln(), 1e-9));
        assert!(g.cross_entropy(p, 2).is_err());
    }

    #[test]
    fn softmax_cross_entropy_gradient_is_p_minus_onehot() {
        let mut g = Graph::new();
        let z = g.param(Tensor::vector(vec![0.3, -1.2, 2.0]));
        let p = g.softmax(z).unwrap();
        let probs = g.value(p).data().to_vec();
        let l = g.cross_entropy(p, 2).unwrap();
        let grads = g.backward(l).unwrap();
        let dz = grads.wrt(z);
        for (i, (d, p)) in dz.data().iter().zip(&probs).enumerate() {
            let onehot = if i == 2 { 1.0 } else { 0.0 };
            assert!(close(*d, p - onehot, 1e-12));
        }
    }

    #[test]
    fn backward_basics() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let unused = g.param(Tensor::vector(vec![4.0, 4.0]));
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).data(), &[1.0, 1.0, 1.0]);
        assert_eq!(grads.wrt(unused).data(), &[0.0, 0.0]);
        assert!(grads.get(unused).is_none());

        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(NdError::NonScalarLoss(_))));
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![3.0]));
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).data(), &[6.0]);
    }
}
