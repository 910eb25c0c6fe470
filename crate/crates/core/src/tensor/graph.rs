use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Gelu(Var),
    Transpose(Var),
    Reshape(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        input: Var,
        axis: usize,
        start: usize,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Softmax {
        input: Var,
        axis: usize,
    },
    MeanAxis {
        input: Var,
        axis: usize,
    },
    VarAxis {
        input: Var,
        axis: usize,
    },
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    L2Normalize {
        input: Var,
        norms: Vec<f64>,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        targets: Vec<usize>,
        ignore_index: usize,
        count: usize,
    },
    Unfold {
        input: Var,
        width: usize,
        stride: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations in execution order. Node ids only ever refer to
/// earlier nodes, so insertion order is a valid topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// `(outer, dim, inner)` decomposition of `shape` around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::Rank {
            op,
            expected: axis + 1,
            shape: shape.to_vec(),
        });
    }
    Ok(())
}

fn check_rank(op: &'static str, shape: &[usize], rank: usize) -> Result<()> {
    if shape.len() != rank {
        return Err(Error::Rank {
            op,
            expected: rank,
            shape: shape.to_vec(),
        });
    }
    Ok(())
}

/// `out[m×n] += a[m×k] · b[k×n]`.
fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            // Exact zeros contribute nothing; skipping them keeps masked
            // attention rows bitwise independent of the masked values.
            if x == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &y) in out_row.iter_mut().zip(b_row) {
                *o += x * y;
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Leaf => value.requires_grad(),
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Inserts a leaf. Its gradient is tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        self.push(tensor, Op::Leaf, &[])
    }

    /// Inserts a leaf that never receives gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.with_requires_grad(false), Op::Leaf, &[])
    }

    /// Drops every node recorded after the first `len`. Handles to dropped
    /// nodes must not be used afterwards.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Resets accumulated leaf gradients to zero.
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        matmul_acc(self.data(a), self.data(b), &mut out, m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("same shape")
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("same shape")
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

    /// Adds a vector along the last axis of `a` (row broadcast).
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(a).last().unwrap_or(&1);
        if self.shape(bias) != [n] {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = self.data(bias).to_vec();
        let mut value = self.value(a).clone().with_requires_grad(false);
        value.clear_grad();
        for row in value.data_mut().chunks_mut(n) {
            for (x, y) in row.iter_mut().zip(&b) {
                *x += y;
            }
        }
        Ok(self.push(value, Op::AddBias(a, bias), &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.map(a, |x| c * x);
        self.push(value, Op::Scale(a, c), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.map(a, f64::exp);
        self.push(value, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.map(a, f64::ln);
        self.push(value, Op::Log(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.map(a, f64::tanh);
        self.push(value, Op::Tanh(a), &[a])
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.map(a, gelu);
        self.push(value, Op::Gelu(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        check_rank("transpose", self.shape(a), 2)?;
        let (m, n) = (self.shape(a)[0], self.shape(a)[1]);
        let src = self.data(a);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let value = Tensor::new(vec![n, m], out)?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = Tensor::new(shape, self.data(a).to_vec()).map_err(|_| Error::Shape {
            op: "reshape",
            lhs: self.shape(a).to_vec(),
            rhs: vec![self.value(a).numel()],
        })?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or(Error::EmptySequence("concat"))?;
        let base = self.shape(first).to_vec();
        check_axis("concat", &base, axis)?;
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let d = self.shape(v)[axis];
                let src = self.data(v);
                out.extend_from_slice(&src[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis("slice", &shape, axis)?;
        if len == 0 || start + len > shape[axis] {
            return Err(Error::Index {
                op: "slice",
                index: start + len,
                bound: shape[axis],
            });
        }
        let (outer, d, inner) = split_axis(&shape, axis);
        let src = self.data(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * d * inner + start * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let value = Tensor::new(new_shape, out)?;
        Ok(self.push(value, Op::Slice { input: a, axis, start }, &[a]))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        check_rank("gather", self.shape(table), 2)?;
        if ids.is_empty() {
            return Err(Error::EmptySequence("gather"));
        }
        let (v, d) = (self.shape(table)[0], self.shape(table)[1]);
        let src = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    op: "gather",
                    index: id,
                    bound: v,
                });
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let value = Tensor::new(vec![ids.len(), d], out)?;
        Ok(self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(a, axis, None)
    }

    /// Softmax over the last axis of a matrix where `allowed[i*cols + j]`
    /// selects the entries that participate. Disallowed entries come out as
    /// exactly zero.
    pub fn masked_softmax(&mut self, a: Var, allowed: &[bool]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_rank("masked_softmax", &shape, 2)?;
        if allowed.len() != shape[0] * shape[1] {
            return Err(Error::Shape {
                op: "masked_softmax",
                lhs: shape,
                rhs: vec![allowed.len()],
            });
        }
        for (i, row) in allowed.chunks(shape[1]).enumerate() {
            if !row.iter().any(|&x| x) {
                return Err(Error::Mask(i));
            }
        }
        self.softmax_impl(a, 1, Some(allowed))
    }

    fn softmax_impl(&mut self, a: Var, axis: usize, allowed: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis("softmax", &shape, axis)?;
        let (outer, d, inner) = split_axis(&shape, axis);
        let src = self.data(a);
        let mut out = vec![0.0; src.len()];
        let ok = |idx: usize| allowed.is_none_or(|m| m[idx]);
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| o * d * inner + j * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..d {
                    if ok(idx(j)) {
                        max = max.max(src[idx(j)]);
                    }
                }
                let mut sum = 0.0;
                for j in 0..d {
                    if ok(idx(j)) {
                        let e = (src[idx(j)] - max).exp();
                        out[idx(j)] = e;
                        sum += e;
                    }
                }
                for j in 0..d {
                    out[idx(j)] /= sum;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Softmax { input: a, axis }, &[a]))
    }

    fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
        let mut s = shape.to_vec();
        s.remove(axis);
        s
    }

    /// Arithmetic mean along `axis`; the axis is removed.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis("mean_axis", &shape, axis)?;
        let (outer, d, inner) = split_axis(&shape, axis);
        let src = self.data(a);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..d {
                for i in 0..inner {
                    out[o * inner + i] += src[o * d * inner + j * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|x| *x /= d as f64);
        let value = Tensor::new(Self::reduced_shape(&shape, axis), out)?;
        Ok(self.push(value, Op::MeanAxis { input: a, axis }, &[a]))
    }

    /// Mean over the rows of an `l×d` sequence, giving a `d` vector.
    pub fn mean_pool(&mut self, a: Var) -> Result<Var> {
        check_rank("mean_pool", self.shape(a), 2)?;
        self.mean_axis(a, 0)
    }

    /// Population variance along `axis`; the axis is removed.
    pub fn var_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axis("var_axis", &shape, axis)?;
        let (outer, d, inner) = split_axis(&shape, axis);
        let src = self.data(a);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| src[o * d * inner + j * inner + i];
                let mean = (0..d).map(at).sum::<f64>() / d as f64;
                out[o * inner + i] = (0..d).map(|j| (at(j) - mean).powi(2)).sum::<f64>() / d as f64;
            }
        }
        let value = Tensor::new(Self::reduced_shape(&shape, axis), out)?;
        Ok(self.push(value, Op::VarAxis { input: a, axis }, &[a]))
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let n = *self.shape(x).last().ok_or(Error::Rank {
            op: "layer_norm",
            expected: 1,
            shape: vec![],
        })?;
        for p in [gain, bias] {
            if self.shape(p) != [n] {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let src = self.data(x);
        let (g, b) = (self.data(gain), self.data(bias));
        let mut out = vec![0.0; src.len()];
        let mut xhat = vec![0.0; src.len()];
        let mut rstd = Vec::with_capacity(src.len() / n);
        for (r, row) in src.chunks(n).enumerate() {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd.push(rs);
            for j in 0..n {
                let h = (row[j] - mean) * rs;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                input: x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Scales each vector along the last axis to unit L2 norm.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let n = *self.shape(a).last().ok_or(Error::Rank {
            op: "l2_normalize",
            expected: 1,
            shape: vec![],
        })?;
        let src = self.data(a);
        let mut out = vec![0.0; src.len()];
        let mut norms = Vec::with_capacity(src.len() / n);
        for (r, row) in src.chunks(n).enumerate() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            norms.push(norm);
            for j in 0..n {
                out[r * n + j] = row[j] / norm;
            }
        }
        let value = Tensor::new(self.shape(a).to_vec(), out)?;
        Ok(self.push(value, Op::L2Normalize { input: a, norms }, &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`, over positions whose target is not `ignore_index`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore_index: usize) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        check_rank("cross_entropy", &shape, 2)?;
        let (t, v) = (shape[0], shape[1]);
        if targets.len() != t {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: shape,
                rhs: vec![targets.len()],
            });
        }
        let src = self.data(logits);
        let mut probs = vec![0.0; t * v];
        let mut total = 0.0;
        let mut count = 0;
        for (i, &target) in targets.iter().enumerate() {
            let row = &src[i * v..(i + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
            for j in 0..v {
                probs[i * v + j] = (row[j] - max).exp() / sum;
            }
            if target == ignore_index {
                continue;
            }
            if target >= v {
                return Err(Error::Index {
                    op: "cross_entropy",
                    index: target,
                    bound: v,
                });
            }
            total -= row[target] - max - sum.ln();
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptySequence("cross_entropy"));
        }
        let value = Tensor::scalar(total / count as f64);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
                ignore_index,
                count,
            },
            &[logits],
        ))
    }

    /// Sliding windows over the rows of an `l×c` sequence: output row `t`
    /// concatenates input rows `t*stride .. t*stride+width`, zero-padded past
    /// the end. Output has `ceil(l/stride)` rows of `width*c` columns.
    pub fn unfold(&mut self, a: Var, width: usize, stride: usize) -> Result<Var> {
        check_rank("unfold", self.shape(a), 2)?;
        if width == 0 || stride == 0 {
            return Err(Error::Param("unfold: width and stride must be positive".into()));
        }
        let (l, c) = (self.shape(a)[0], self.shape(a)[1]);
        if l < width {
            return Err(Error::Length {
                what: "unfold input",
                len: l,
                min: width,
            });
        }
        let l_out = l.div_ceil(stride);
        let src = self.data(a);
        let mut out = vec![0.0; l_out * width * c];
        for t in 0..l_out {
            for w in 0..width {
                let r = t * stride + w;
                if r < l {
                    let dst = t * width * c + w * c;
                    out[dst..dst + c].copy_from_slice(&src[r * c..(r + 1) * c]);
                }
            }
        }
        let value = Tensor::new(vec![l_out, width * c], out)?;
        Ok(self.push(
            value,
            Op::Unfold {
                input: a,
                width,
                stride,
            },
            &[a],
        ))
    }

    /// Reverse pass from a single-element `loss`. Gradients are added to
    /// every leaf that requires them; call [`Graph::zero_grads`] to reset.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Rank {
                op: "backward",
                expected: 0,
                shape: self.shape(loss).to_vec(),
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, g, &mut adj, &mut leaf_grads);
        }
        for (i, g) in leaf_grads {
            let grad = self.nodes[i].value.grad_mut();
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: Vec<f64>, adj: &mut [Option<Vec<f64>>], leaf_grads: &mut Vec<(usize, Vec<f64>)>) {
        let nodes = &self.nodes;
        // Adds into the adjoint of `v`, allocating it on first use.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let buf = adj[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
            f(buf);
        };
        let node = &nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => leaf_grads.push((i, g)),
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                let n = nodes[b.0].value.shape()[1];
                let (ad, bd) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc(*a, &mut |da| {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            da[r * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |db| {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let x = ad[r * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (o, y) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += x * y;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, &g));
                acc(*b, &mut |d| add_into(d, &g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, &g));
                acc(*b, &mut |d| d.iter_mut().zip(&g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                acc(*a, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] * bd[j];
                    }
                });
                acc(*b, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] * ad[j];
                    }
                });
            }
            Op::AddBias(a, b) => {
                acc(*a, &mut |d| add_into(d, &g));
                acc(*b, &mut |d| {
                    let n = d.len();
                    for row in g.chunks(n) {
                        add_into(d, row);
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |d| d.iter_mut().zip(&g).for_each(|(x, y)| *x += c * y)),
            Op::Exp(a) => acc(*a, &mut |d| {
                for j in 0..d.len() {
                    d[j] += g[j] * out[j];
                }
            }),
            Op::Log(a) => {
                let src = nodes[a.0].value.data();
                acc(*a, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] / src[j];
                    }
                });
            }
            Op::Tanh(a) => acc(*a, &mut |d| {
                for j in 0..d.len() {
                    d[j] += g[j] * (1.0 - out[j] * out[j]);
                }
            }),
            Op::Gelu(a) => {
                let src = nodes[a.0].value.data();
                acc(*a, &mut |d| {
                    for j in 0..d.len() {
                        d[j] += g[j] * gelu_grad(src[j]);
                    }
                });
            }
            Op::Transpose(a) => {
                let (m, n) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                acc(*a, &mut |d| {
                    for r in 0..m {
                        for c in 0..n {
                            d[r * n + c] += g[c * m + r];
                        }
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |d| add_into(d, &g)),
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let (outer, total, inner) = split_axis(shape, *axis);
                let mut offset = 0;
                for v in inputs {
                    let dv = nodes[v.0].value.shape()[*axis];
                    acc(*v, &mut |d| {
                        for o in 0..outer {
                            let src = o * total * inner + offset * inner;
                            add_into(&mut d[o * dv * inner..(o + 1) * dv * inner], &g[src..src + dv * inner]);
                        }
                    });
                    offset += dv;
                }
            }
            Op::Slice { input, axis, start } => {
                let (outer, d_in, inner) = split_axis(nodes[input.0].value.shape(), *axis);
                let len = node.value.shape()[*axis];
                acc(*input, &mut |d| {
                    for o in 0..outer {
                        let base = o * d_in * inner + start * inner;
                        add_into(
                            &mut d[base..base + len * inner],
                            &g[o * len * inner..(o + 1) * len * inner],
                        );
                    }
                });
            }
            Op::Gather { table, ids } => {
                let dim = nodes[table.0].value.shape()[1];
                acc(*table, &mut |d| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut d[id * dim..(id + 1) * dim], &g[r * dim..(r + 1) * dim]);
                    }
                });
            }
            Op::Softmax { input, axis } => {
                let (outer, dd, inner) = split_axis(node.value.shape(), *axis);
                acc(*input, &mut |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| o * dd * inner + j * inner + i;
                            let dot: f64 = (0..dd).map(|j| g[idx(j)] * out[idx(j)]).sum();
                            for j in 0..dd {
                                d[idx(j)] += out[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::MeanAxis { input, axis } => {
                let (outer, dd, inner) = split_axis(nodes[input.0].value.shape(), *axis);
                let inv = 1.0 / dd as f64;
                acc(*input, &mut |d| {
                    for o in 0..outer {
                        for j in 0..dd {
                            for i in 0..inner {
                                d[o * dd * inner + j * inner + i] += g[o * inner + i] * inv;
                            }
                        }
                    }
                });
            }
            Op::VarAxis { input, axis } => {
                let src = nodes[input.0].value.data();
                let (outer, dd, inner) = split_axis(nodes[input.0].value.shape(), *axis);
                acc(*input, &mut |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| o * dd * inner + j * inner + i;
                            let mean = (0..dd).map(|j| src[idx(j)]).sum::<f64>() / dd as f64;
                            let go = g[o * inner + i];
                            for j in 0..dd {
                                d[idx(j)] += go * 2.0 * (src[idx(j)] - mean) / dd as f64;
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let n = nodes[gain.0].value.numel();
                let gv = nodes[gain.0].value.data();
                acc(*input, &mut |d| {
                    for (r, &rs) in rstd.iter().enumerate() {
                        let row = r * n..(r + 1) * n;
                        let (gr, hr) = (&g[row.clone()], &xhat[row.clone()]);
                        // dxhat = g * gain
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..n {
                            let dh = gr[j] * gv[j];
                            m1 += dh;
                            m2 += dh * hr[j];
                        }
                        m1 /= n as f64;
                        m2 /= n as f64;
                        for j in 0..n {
                            let dh = gr[j] * gv[j];
                            d[r * n + j] += rs * (dh - m1 - hr[j] * m2);
                        }
                    }
                });
                acc(*gain, &mut |d| {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            d[j] += gr[j] * hr[j];
                        }
                    }
                });
                acc(*bias, &mut |d| {
                    for gr in g.chunks(n) {
                        add_into(d, gr);
                    }
                });
            }
            Op::L2Normalize { input, norms } => {
                let n = node.value.shape().last().copied().unwrap_or(1);
                acc(*input, &mut |d| {
                    for (r, &norm) in norms.iter().enumerate() {
                        let (gr, yr) = (&g[r * n..(r + 1) * n], &out[r * n..(r + 1) * n]);
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            d[r * n + j] += (gr[j] - yr[j] * dot) / norm;
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |d| d.iter_mut().for_each(|x| *x += g[0])),
            Op::CrossEntropy {
                logits,
                probs,
                targets,
                ignore_index,
                count,
            } => {
                let v = nodes[logits.0].value.shape()[1];
                let w = g[0] / *count as f64;
                acc(*logits, &mut |d| {
                    for (r, &t) in targets.iter().enumerate() {
                        if t == *ignore_index {
                            continue;
                        }
                        for j in 0..v {
                            d[r * v + j] += w * probs[r * v + j];
                        }
                        d[r * v + t] -= w;
                    }
                });
            }
            Op::Unfold { input, width, stride } => {
                let (l, c) = (nodes[input.0].value.shape()[0], nodes[input.0].value.shape()[1]);
                let l_out = node.value.shape()[0];
                acc(*input, &mut |d| {
                    for t in 0..l_out {
                        for w in 0..*width {
                            let r = t * stride + w;
                            if r < l {
                                let src = t * width * c + w * c;
                                add_into(&mut d[r * c..(r + 1) * c], &g[src..src + c]);
                            }
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}
