//! Gradient tape: forward values for every primitive, recorded in order, and
//! a reverse sweep that accumulates gradients into every node that depends on
//! a `requires_grad` leaf.

use rand::Rng;

use super::tensor::{numel, split_axis, Tensor};
use super::EngineError;
use crate::par::{self, Execution};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum MatKind {
    /// `[.., k] x [k, n]`, the right operand shared across all leading rows.
    Shared { m: usize, k: usize, n: usize },
    /// `[b.., m, k] x [b.., k, n]`.
    Batched {
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Affine {
        a: usize,
        scale: f64,
    },
    MatMul {
        a: usize,
        b: usize,
        kind: MatKind,
    },
    Transpose {
        a: usize,
        rows: usize,
        cols: usize,
    },
    Reshape(usize),
    Lookup {
        table: usize,
        ids: Vec<usize>,
        dim: usize,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Slice {
        a: usize,
        axis: usize,
        start: usize,
    },
    Stack {
        inputs: Vec<usize>,
        axis: usize,
    },
    Expand {
        a: usize,
        axis: usize,
        n: usize,
    },
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Softplus(usize),
    MaskedSoftmax {
        a: usize,
        axis: usize,
    },
    ReduceSum {
        a: usize,
        axis: usize,
    },
    ReduceMean {
        a: usize,
        axis: usize,
    },
    ReduceMax {
        a: usize,
        argmax: Vec<usize>,
    },
    Dropout {
        a: usize,
        keep: Vec<f64>,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    BinaryLogistic {
        scores: usize,
        labels: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Records primitive applications; one tape per forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    consumed: bool,
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_with(Execution::for_work(m * k * n), a, b, out, m, k, n);
}

/// `out[m x n] = a[m x k] * b[k x n]` in row-major order. Each output row
/// is summed in `p` order, so both execution modes agree bit for bit.
pub fn gemm_with(
    exec: Execution,
    a: &[f64],
    b: &[f64],
    out: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
) {
    assert!(
        a.len() == m * k && b.len() == k * n && out.len() == m * n,
        "gemm operand sizes"
    );
    par::for_each_row(out, n, exec, |i, row| {
        row.iter_mut().for_each(|x| *x = 0.0);
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &ap) in a_row.iter().enumerate() {
            if ap == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += ap * bv;
            }
        }
    });
}

fn transpose2(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, inputs: &[usize]) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// Records a leaf holding a copy of `t`, which must be `f64`.
    pub fn leaf(&mut self, t: &Tensor, requires_grad: bool) -> Result<Var, EngineError> {
        let value = t.as_f64()?.to_vec();
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn param(&mut self, t: &Tensor) -> Result<Var, EngineError> {
        self.leaf(t, true)
    }

    pub fn constant(&mut self, t: &Tensor) -> Result<Var, EngineError> {
        self.leaf(t, false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::from_f64(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn check_axis(&self, v: Var, axis: usize) -> Result<(), EngineError> {
        let rank = self.node(v).shape.len();
        if axis >= rank {
            return Err(EngineError::AxisOutOfRange { axis, rank });
        }
        Ok(())
    }

    fn broadcast_binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Vec<usize>, Vec<f64>), EngineError> {
        let (sa, sb) = (&self.node(a).shape, &self.node(b).shape);
        let (va, vb) = (&self.node(a).value, &self.node(b).value);
        if is_suffix(sb, sa) {
            let m = vb.len().max(1);
            let out = va
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, vb[i % m]))
                .collect();
            Ok((sa.clone(), out))
        } else if is_suffix(sa, sb) {
            let m = va.len().max(1);
            let out = vb
                .iter()
                .enumerate()
                .map(|(i, &y)| f(va[i % m], y))
                .collect();
            Ok((sb.clone(), out))
        } else {
            Err(EngineError::ShapeMismatch {
                op,
                left: sa.clone(),
                right: sb.clone(),
            })
        }
    }

    /// Elementwise sum; the lower-rank operand may broadcast over leading dims.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        let (shape, value) = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(shape, value, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        let (shape, value) = self.broadcast_binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(shape, value, Op::Sub(a.0, b.0), &[a.0, b.0]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        let (shape, value) = self.broadcast_binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(shape, value, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var, EngineError> {
        let n = self.node(a);
        let value = n.value.iter().map(|&x| scale * x + shift).collect();
        let shape = n.shape.clone();
        Ok(self.push(shape, value, Op::Affine { a: a.0, scale }, &[a.0]))
    }

    /// Matrix product. `[.., k] x [k, n] -> [.., n]` or, for equal ranks of at
    /// least three with identical leading dims, a batched product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, EngineError> {
        let sa = self.node(a).shape.clone();
        let sb = self.node(b).shape.clone();
        let mismatch = || EngineError::ShapeMismatch {
            op: "matmul",
            left: sa.clone(),
            right: sb.clone(),
        };
        if sa.is_empty() {
            return Err(mismatch());
        }
        if sb.len() == 2 {
            let k = *sa.last().unwrap();
            if sb[0] != k {
                return Err(mismatch());
            }
            let n = sb[1];
            let m = numel(&sa) / k.max(1);
            let mut out = vec![0.0; m * n];
            if k > 0 {
                gemm(&self.node(a).value, &self.node(b).value, &mut out, m, k, n);
            }
            let mut shape = sa[..sa.len() - 1].to_vec();
            shape.push(n);
            let kind = MatKind::Shared { m, k, n };
            return Ok(self.push(
                shape,
                out,
                Op::MatMul {
                    a: a.0,
                    b: b.0,
                    kind,
                },
                &[a.0, b.0],
            ));
        }
        let r = sa.len();
        if r >= 3 && sb.len() == r && sa[..r - 2] == sb[..r - 2] && sa[r - 1] == sb[r - 2] {
            let batch = numel(&sa[..r - 2]);
            let (m, k, n) = (sa[r - 2], sa[r - 1], sb[r - 1]);
            let mut out = vec![0.0; batch * m * n];
            let (va, vb) = (&self.node(a).value, &self.node(b).value);
            for bi in 0..batch {
                gemm(
                    &va[bi * m * k..(bi + 1) * m * k],
                    &vb[bi * k * n..(bi + 1) * k * n],
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
            let mut shape = sa[..r - 2].to_vec();
            shape.extend([m, n]);
            let kind = MatKind::Batched { batch, m, k, n };
            return Ok(self.push(
                shape,
                out,
                Op::MatMul {
                    a: a.0,
                    b: b.0,
                    kind,
                },
                &[a.0, b.0],
            ));
        }
        Err(mismatch())
    }

    /// Swaps the last two dims.
    pub fn transpose(&mut self, a: Var) -> Result<Var, EngineError> {
        let shape = self.node(a).shape.clone();
        let r = shape.len();
        if r < 2 {
            return Err(EngineError::AxisOutOfRange { axis: 1, rank: r });
        }
        let (rows, cols) = (shape[r - 2], shape[r - 1]);
        let batch = numel(&shape[..r - 2]);
        let v = &self.node(a).value;
        let mut out = Vec::with_capacity(v.len());
        for bi in 0..batch {
            out.extend(transpose2(
                &v[bi * rows * cols..(bi + 1) * rows * cols],
                rows,
                cols,
            ));
        }
        let mut new_shape = shape;
        new_shape.swap(r - 2, r - 1);
        Ok(self.push(new_shape, out, Op::Transpose { a: a.0, rows, cols }, &[a.0]))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, EngineError> {
        let n = self.node(a);
        if numel(&shape) != n.value.len() {
            return Err(EngineError::ShapeMismatch {
                op: "reshape",
                left: n.shape.clone(),
                right: shape,
            });
        }
        let value = n.value.clone();
        Ok(self.push(shape, value, Op::Reshape(a.0), &[a.0]))
    }

    /// Gathers rows of a `[rows, dim]` table: output shape is `ids.shape ++ [dim]`.
    pub fn lookup(&mut self, table: Var, ids: &Tensor) -> Result<Var, EngineError> {
        let ts = self.node(table).shape.clone();
        if ts.len() != 2 {
            return Err(EngineError::ShapeMismatch {
                op: "lookup",
                left: ts,
                right: ids.shape().to_vec(),
            });
        }
        let (rows, dim) = (ts[0], ts[1]);
        let raw = ids.as_i64()?;
        let mut flat = Vec::with_capacity(raw.len());
        for &id in raw {
            if id < 0 || id as usize >= rows {
                return Err(EngineError::IndexOutOfRange {
                    index: id,
                    bound: rows,
                });
            }
            flat.push(id as usize);
        }
        let tv = &self.node(table).value;
        let mut value = Vec::with_capacity(flat.len() * dim);
        for &r in &flat {
            value.extend_from_slice(&tv[r * dim..(r + 1) * dim]);
        }
        let mut shape = ids.shape().to_vec();
        shape.push(dim);
        let op = Op::Lookup {
            table: table.0,
            ids: flat,
            dim,
        };
        Ok(self.push(shape, value, op, &[table.0]))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, EngineError> {
        let first = inputs
            .first()
            .ok_or_else(|| EngineError::InvalidArgument("concat of nothing".into()))?;
        self.check_axis(*first, axis)?;
        let base = self.node(*first).shape.clone();
        let mut total = 0;
        for &v in inputs {
            let s = &self.node(v).shape;
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(EngineError::ShapeMismatch {
                    op: "concat",
                    left: base,
                    right: s.clone(),
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut value = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let n = self.node(v);
                let len = n.shape[axis] * inner;
                value.extend_from_slice(&n.value[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ids: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        Ok(self.push(
            shape,
            value,
            Op::Concat {
                inputs: ids.clone(),
                axis,
            },
            &ids,
        ))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(
        &mut self,
        a: Var,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<Var, EngineError> {
        self.check_axis(a, axis)?;
        let shape = self.node(a).shape.clone();
        if start + len > shape[axis] {
            return Err(EngineError::IndexOutOfRange {
                index: (start + len) as i64,
                bound: shape[axis],
            });
        }
        let (outer, alen, inner) = split_axis(&shape, axis);
        let v = &self.node(a).value;
        let mut value = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * alen * inner + start * inner;
            value.extend_from_slice(&v[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push(
            out_shape,
            value,
            Op::Slice {
                a: a.0,
                axis,
                start,
            },
            &[a.0],
        ))
    }

    /// Slice of width one along `axis`, with that axis removed.
    pub fn select(&mut self, a: Var, axis: usize, index: usize) -> Result<Var, EngineError> {
        let s = self.slice(a, axis, index, 1)?;
        let mut shape = self.node(s).shape.clone();
        shape.remove(axis);
        self.reshape(s, shape)
    }

    /// Stacks equally shaped inputs along a new `axis`.
    pub fn stack(&mut self, inputs: &[Var], axis: usize) -> Result<Var, EngineError> {
        let first = inputs
            .first()
            .ok_or_else(|| EngineError::InvalidArgument("stack of nothing".into()))?;
        let base = self.node(*first).shape.clone();
        if axis > base.len() {
            return Err(EngineError::AxisOutOfRange {
                axis,
                rank: base.len() + 1,
            });
        }
        for &v in inputs {
            if self.node(v).shape != base {
                return Err(EngineError::ShapeMismatch {
                    op: "stack",
                    left: base,
                    right: self.node(v).shape.clone(),
                });
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis..].iter().product();
        let mut value = Vec::with_capacity(outer * inputs.len() * inner);
        for o in 0..outer {
            for &v in inputs {
                value.extend_from_slice(&self.node(v).value[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = base;
        shape.insert(axis, inputs.len());
        let ids: Vec<usize> = inputs.iter().map(|v| v.0).collect();
        Ok(self.push(
            shape,
            value,
            Op::Stack {
                inputs: ids.clone(),
                axis,
            },
            &ids,
        ))
    }

    /// Inserts a new `axis` of size `n`, repeating the input along it.
    pub fn expand(&mut self, a: Var, axis: usize, n: usize) -> Result<Var, EngineError> {
        let base = self.node(a).shape.clone();
        if axis > base.len() {
            return Err(EngineError::AxisOutOfRange {
                axis,
                rank: base.len() + 1,
            });
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis..].iter().product();
        let v = &self.node(a).value;
        let mut value = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            for _ in 0..n {
                value.extend_from_slice(&v[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = base;
        shape.insert(axis, n);
        Ok(self.push(shape, value, Op::Expand { a: a.0, axis, n }, &[a.0]))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let n = self.node(a);
        let value = n.value.iter().map(|&x| f(x)).collect();
        let shape = n.shape.clone();
        self.push(shape, value, op, &[a.0])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x < 0.0 { 0.0 } else { x }, Op::Relu(a.0))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, stable_softplus, Op::Softplus(a.0))
    }

    /// Softmax along `axis` restricted to positions where `mask` is 1.
    /// Masked positions receive probability exactly 0.
    pub fn masked_softmax(
        &mut self,
        logits: Var,
        mask: &[f64],
        axis: usize,
    ) -> Result<Var, EngineError> {
        self.check_axis(logits, axis)?;
        let shape = self.node(logits).shape.clone();
        if mask.len() != numel(&shape) {
            return Err(EngineError::ShapeMismatch {
                op: "masked_softmax",
                left: shape,
                right: vec![mask.len()],
            });
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let x = &self.node(logits).value;
        let mut y = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| o * len * inner + j * inner + i;
                let mut max = f64::NEG_INFINITY;
                let mut kept = 0;
                for j in 0..len {
                    let m = mask[idx(j)];
                    if m != 0.0 && m != 1.0 {
                        return Err(EngineError::InvalidArgument(format!(
                            "mask value {m} is not 0 or 1"
                        )));
                    }
                    if m == 1.0 {
                        max = max.max(x[idx(j)]);
                        kept += 1;
                    }
                }
                if kept == 0 {
                    return Err(EngineError::MaskAllZero {
                        slice: o * inner + i,
                    });
                }
                let mut sum = 0.0;
                for j in 0..len {
                    if mask[idx(j)] == 1.0 {
                        let e = (x[idx(j)] - max).exp();
                        y[idx(j)] = e;
                        sum += e;
                    }
                }
                for j in 0..len {
                    y[idx(j)] /= sum;
                }
            }
        }
        Ok(self.push(
            shape,
            y,
            Op::MaskedSoftmax { a: logits.0, axis },
            &[logits.0],
        ))
    }

    fn reduce(
        &mut self,
        a: Var,
        axis: usize,
    ) -> Result<(Vec<usize>, usize, usize, usize), EngineError> {
        self.check_axis(a, axis)?;
        let shape = self.node(a).shape.clone();
        let (outer, len, inner) = split_axis(&shape, axis);
        let mut out_shape = shape;
        out_shape.remove(axis);
        Ok((out_shape, outer, len, inner))
    }

    pub fn reduce_sum(&mut self, a: Var, axis: usize) -> Result<Var, EngineError> {
        let (shape, outer, len, inner) = self.reduce(a, axis)?;
        let x = &self.node(a).value;
        let mut y = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    y[o * inner + i] += x[o * len * inner + j * inner + i];
                }
            }
        }
        Ok(self.push(shape, y, Op::ReduceSum { a: a.0, axis }, &[a.0]))
    }

    pub fn reduce_mean(&mut self, a: Var, axis: usize) -> Result<Var, EngineError> {
        let (shape, outer, len, inner) = self.reduce(a, axis)?;
        if len == 0 {
            return Err(EngineError::InvalidArgument(
                "mean over an empty axis".into(),
            ));
        }
        let x = &self.node(a).value;
        let mut y = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    y[o * inner + i] += x[o * len * inner + j * inner + i];
                }
            }
        }
        y.iter_mut().for_each(|v| *v /= len as f64);
        Ok(self.push(shape, y, Op::ReduceMean { a: a.0, axis }, &[a.0]))
    }

    /// Maximum along `axis`; the gradient flows to the first maximal entry.
    /// A NaN entry makes the maximum NaN.
    pub fn reduce_max(&mut self, a: Var, axis: usize) -> Result<Var, EngineError> {
        let (shape, outer, len, inner) = self.reduce(a, axis)?;
        if len == 0 {
            return Err(EngineError::InvalidArgument(
                "max over an empty axis".into(),
            ));
        }
        let x = &self.node(a).value;
        let mut y = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    let src = o * len * inner + j * inner + i;
                    let cur = y[o * inner + i];
                    if x[src] > cur || (x[src].is_nan() && !cur.is_nan()) {
                        y[o * inner + i] = x[src];
                        argmax[o * inner + i] = src;
                    }
                }
            }
        }
        Ok(self.push(shape, y, Op::ReduceMax { a: a.0, argmax }, &[a.0]))
    }

    /// Sum of all elements as a scalar.
    pub fn sum_all(&mut self, a: Var) -> Result<Var, EngineError> {
        let n = self.node(a).value.len();
        let flat = self.reshape(a, vec![n])?;
        self.reduce_sum(flat, 0)
    }

    /// Inverted dropout: at train time kept entries are scaled by `1/(1-p)`;
    /// otherwise the identity.
    pub fn dropout<R: Rng>(
        &mut self,
        a: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var, EngineError> {
        if !(0.0..1.0).contains(&p) {
            return Err(EngineError::InvalidArgument(format!(
                "dropout rate {p} not in [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let scale = 1.0 / (1.0 - p);
        let n = self.node(a).value.len();
        let keep: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale })
            .collect();
        let value = self
            .node(a)
            .value
            .iter()
            .zip(&keep)
            .map(|(x, k)| x * k)
            .collect();
        let shape = self.node(a).shape.clone();
        Ok(self.push(shape, value, Op::Dropout { a: a.0, keep }, &[a.0]))
    }

    /// Mean negative log-likelihood of `labels` under softmax of `[n, classes]` logits.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[i64]) -> Result<Var, EngineError> {
        let shape = self.node(logits).shape.clone();
        if shape.len() != 2 || shape[0] != labels.len() || shape[0] == 0 {
            return Err(EngineError::ShapeMismatch {
                op: "cross_entropy",
                left: shape,
                right: vec![labels.len()],
            });
        }
        let (n, c) = (shape[0], shape[1]);
        let x = &self.node(logits).value;
        let mut probs = vec![0.0; n * c];
        let mut loss = 0.0;
        let mut idx = Vec::with_capacity(n);
        for r in 0..n {
            let label = labels[r];
            if label < 0 || label as usize >= c {
                return Err(EngineError::IndexOutOfRange {
                    index: label,
                    bound: c,
                });
            }
            let row = &x[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            for j in 0..c {
                probs[r * c + j] = (row[j] - lse).exp();
            }
            loss += lse - row[label as usize];
            idx.push(label as usize);
        }
        let op = Op::CrossEntropy {
            logits: logits.0,
            labels: idx,
            probs,
        };
        Ok(self.push(vec![], vec![loss / n as f64], op, &[logits.0]))
    }

    /// Mean of `softplus(-y * s)` with labels `y` in {+1, -1}.
    pub fn binary_logistic_loss(
        &mut self,
        scores: Var,
        labels: &[f64],
    ) -> Result<Var, EngineError> {
        let s = &self.node(scores).value;
        if s.len() != labels.len() || s.is_empty() {
            return Err(EngineError::ShapeMismatch {
                op: "binary_logistic_loss",
                left: self.node(scores).shape.clone(),
                right: vec![labels.len()],
            });
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(EngineError::InvalidArgument(format!(
                "logistic label {bad} is not +1 or -1"
            )));
        }
        let total: f64 = s
            .iter()
            .zip(labels)
            .map(|(&x, &y)| stable_softplus(-y * x))
            .sum();
        let op = Op::BinaryLogistic {
            scores: scores.0,
            labels: labels.to_vec(),
        };
        Ok(self.push(vec![], vec![total / s.len() as f64], op, &[scores.0]))
    }

    /// Reverse sweep from a scalar `loss`. A tape supports a single sweep.
    pub fn backward(&mut self, loss: Var) -> Result<(), EngineError> {
        if self.consumed {
            return Err(EngineError::TapeConsumed);
        }
        let shape = &self.node(loss).shape;
        if numel(shape) != 1 {
            return Err(EngineError::NotScalar {
                shape: shape.clone(),
            });
        }
        self.consumed = true;
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, target: usize, delta: impl FnOnce(&mut [f64])) {
        if !self.nodes[target].requires_grad {
            return;
        }
        let n = self.nodes[target].value.len();
        let slot = self.grads[target].get_or_insert_with(|| vec![0.0; n]);
        delta(slot);
    }

    fn accumulate_broadcast(
        &mut self,
        target: usize,
        out_len: usize,
        g: &[f64],
        factor: impl Fn(usize) -> f64,
    ) {
        let n = self.nodes[target].value.len();
        if n == out_len {
            self.accumulate(target, |s| {
                s.iter_mut()
                    .enumerate()
                    .for_each(|(i, x)| *x += g[i] * factor(i))
            });
        } else {
            let m = n.max(1);
            self.accumulate(target, |s| {
                for (i, gi) in g.iter().enumerate() {
                    s[i % m] += gi * factor(i);
                }
            });
        }
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // Indices and small metadata are copied out so `self` can be mutated below.
        let out_len = g.len();
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                self.accumulate_broadcast(a, out_len, g, |_| 1.0);
                self.accumulate_broadcast(b, out_len, g, |_| 1.0);
            }
            &Op::Sub(a, b) => {
                self.accumulate_broadcast(a, out_len, g, |_| 1.0);
                self.accumulate_broadcast(b, out_len, g, |_| -1.0);
            }
            &Op::Mul(a, b) => {
                let va = self.nodes[a].value.clone();
                let vb = self.nodes[b].value.clone();
                let (ma, mb) = (va.len().max(1), vb.len().max(1));
                self.accumulate_broadcast(a, out_len, g, |k| vb[k % mb]);
                self.accumulate_broadcast(b, out_len, g, |k| va[k % ma]);
            }
            &Op::Affine { a, scale } => self.accumulate(a, |s| {
                s.iter_mut().zip(g).for_each(|(x, gi)| *x += scale * gi)
            }),
            Op::MatMul { a, b, kind } => {
                let (a, b) = (*a, *b);
                let (batch, m, k, n, shared) = match *kind {
                    MatKind::Shared { m, k, n } => (1, m, k, n, true),
                    MatKind::Batched { batch, m, k, n } => (batch, m, k, n, false),
                };
                let mut ga = vec![0.0; batch * m * k];
                let mut gb = vec![0.0; if shared { k * n } else { batch * k * n }];
                {
                    let va = &self.nodes[a].value;
                    let vb = &self.nodes[b].value;
                    for bi in 0..batch {
                        let ab = &va[bi * m * k..(bi + 1) * m * k];
                        let bb = if shared {
                            &vb[..]
                        } else {
                            &vb[bi * k * n..(bi + 1) * k * n]
                        };
                        let gy = &g[bi * m * n..(bi + 1) * m * n];
                        if self.nodes[a].requires_grad {
                            let bt = transpose2(bb, k, n);
                            gemm(gy, &bt, &mut ga[bi * m * k..(bi + 1) * m * k], m, n, k);
                        }
                        if self.nodes[b].requires_grad {
                            let at = transpose2(ab, m, k);
                            let dst = if shared {
                                &mut gb[..]
                            } else {
                                &mut gb[bi * k * n..(bi + 1) * k * n]
                            };
                            gemm(&at, gy, dst, k, m, n);
                        }
                    }
                }
                self.accumulate(a, |s| s.iter_mut().zip(&ga).for_each(|(x, d)| *x += d));
                self.accumulate(b, |s| s.iter_mut().zip(&gb).for_each(|(x, d)| *x += d));
            }
            &Op::Transpose { a, rows, cols } => {
                // Gradient of a transpose is the transpose back: [.., cols, rows] -> [.., rows, cols].
                let block = rows * cols;
                let mut back = Vec::with_capacity(g.len());
                for chunk in g.chunks(block.max(1)) {
                    back.extend(transpose2(chunk, cols, rows));
                }
                self.accumulate(a, |s| s.iter_mut().zip(&back).for_each(|(x, d)| *x += d));
            }
            &Op::Reshape(a) => {
                self.accumulate(a, |s| s.iter_mut().zip(g).for_each(|(x, d)| *x += d))
            }
            Op::Lookup { table, ids, dim } => {
                let (table, dim) = (*table, *dim);
                let ids = ids.clone();
                self.accumulate(table, |s| {
                    for (pos, &r) in ids.iter().enumerate() {
                        for d in 0..dim {
                            s[r * dim + d] += g[pos * dim + d];
                        }
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let (inputs, axis) = (inputs.clone(), *axis);
                let shape = self.nodes[i].shape.clone();
                let (outer, total, inner) = split_axis(&shape, axis);
                let mut offset = 0;
                for v in inputs {
                    let len = self.nodes[v].shape[axis];
                    self.accumulate(v, |s| {
                        for o in 0..outer {
                            for j in 0..len * inner {
                                s[o * len * inner + j] += g[o * total * inner + offset * inner + j];
                            }
                        }
                    });
                    offset += len;
                }
            }
            &Op::Slice { a, axis, start } => {
                let in_shape = self.nodes[a].shape.clone();
                let len = self.nodes[i].shape[axis];
                let (outer, alen, inner) = split_axis(&in_shape, axis);
                self.accumulate(a, |s| {
                    for o in 0..outer {
                        let base = o * alen * inner + start * inner;
                        for j in 0..len * inner {
                            s[base + j] += g[o * len * inner + j];
                        }
                    }
                });
            }
            Op::Stack { inputs, axis } => {
                let (inputs, axis) = (inputs.clone(), *axis);
                let base = self.nodes[inputs[0]].shape.clone();
                let outer: usize = base[..axis].iter().product();
                let inner: usize = base[axis..].iter().product();
                let count = inputs.len();
                for (pos, v) in inputs.into_iter().enumerate() {
                    self.accumulate(v, |s| {
                        for o in 0..outer {
                            for j in 0..inner {
                                s[o * inner + j] += g[(o * count + pos) * inner + j];
                            }
                        }
                    });
                }
            }
            &Op::Expand { a, axis, n } => {
                let base = self.nodes[a].shape.clone();
                let outer: usize = base[..axis].iter().product();
                let inner: usize = base[axis..].iter().product();
                self.accumulate(a, |s| {
                    for o in 0..outer {
                        for r in 0..n {
                            for j in 0..inner {
                                s[o * inner + j] += g[(o * n + r) * inner + j];
                            }
                        }
                    }
                });
            }
            &Op::Sigmoid(a) => {
                let y = self.nodes[i].value.clone();
                self.accumulate(a, |s| {
                    s.iter_mut()
                        .zip(g)
                        .zip(&y)
                        .for_each(|((x, gi), yi)| *x += gi * yi * (1.0 - yi))
                });
            }
            &Op::Tanh(a) => {
                let y = self.nodes[i].value.clone();
                self.accumulate(a, |s| {
                    s.iter_mut()
                        .zip(g)
                        .zip(&y)
                        .for_each(|((x, gi), yi)| *x += gi * (1.0 - yi * yi))
                });
            }
            &Op::Relu(a) => {
                let xin = self.nodes[a].value.clone();
                self.accumulate(a, |s| {
                    s.iter_mut()
                        .zip(g)
                        .zip(&xin)
                        .for_each(|((x, gi), v)| *x += if *v > 0.0 { *gi } else { 0.0 })
                });
            }
            &Op::Softplus(a) => {
                let xin = self.nodes[a].value.clone();
                self.accumulate(a, |s| {
                    s.iter_mut()
                        .zip(g)
                        .zip(&xin)
                        .for_each(|((x, gi), v)| *x += gi * sigmoid(*v))
                });
            }
            &Op::MaskedSoftmax { a, axis } => {
                let shape = self.nodes[i].shape.clone();
                let y = self.nodes[i].value.clone();
                let (outer, len, inner) = split_axis(&shape, axis);
                self.accumulate(a, |s| {
                    for o in 0..outer {
                        for ii in 0..inner {
                            let idx = |j: usize| o * len * inner + j * inner + ii;
                            let dot: f64 = (0..len).map(|j| y[idx(j)] * g[idx(j)]).sum();
                            for j in 0..len {
                                s[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                });
            }
            &Op::ReduceSum { a, axis } | &Op::ReduceMean { a, axis } => {
                let mean = matches!(self.nodes[i].op, Op::ReduceMean { .. });
                let in_shape = self.nodes[a].shape.clone();
                let (outer, len, inner) = split_axis(&in_shape, axis);
                let scale = if mean { 1.0 / len as f64 } else { 1.0 };
                self.accumulate(a, |s| {
                    for o in 0..outer {
                        for j in 0..len {
                            for ii in 0..inner {
                                s[o * len * inner + j * inner + ii] += g[o * inner + ii] * scale;
                            }
                        }
                    }
                });
            }
            Op::ReduceMax { a, argmax, .. } => {
                let a = *a;
                let argmax = argmax.clone();
                self.accumulate(a, |s| {
                    for (k, &src) in argmax.iter().enumerate() {
                        s[src] += g[k];
                    }
                });
            }
            Op::Dropout { a, keep } => {
                let a = *a;
                let keep = keep.clone();
                self.accumulate(a, |s| {
                    s.iter_mut()
                        .zip(g)
                        .zip(&keep)
                        .for_each(|((x, gi), k)| *x += gi * k)
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let logits = *logits;
                let n = labels.len();
                let c = probs.len() / n;
                let mut d = probs.clone();
                for (r, &l) in labels.iter().enumerate() {
                    d[r * c + l] -= 1.0;
                }
                let scale = g[0] / n as f64;
                self.accumulate(logits, |s| {
                    s.iter_mut().zip(&d).for_each(|(x, v)| *x += v * scale)
                });
            }
            Op::BinaryLogistic { scores, labels } => {
                let scores = *scores;
                let labels = labels.clone();
                let x = self.nodes[scores].value.clone();
                let scale = g[0] / labels.len() as f64;
                self.accumulate(scores, |s| {
                    for (k, slot) in s.iter_mut().enumerate() {
                        let y = labels[k];
                        *slot += -y * sigmoid(-y * x[k]) * scale;
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_f64(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn masked_softmax_zeroes_masked_positions() {
        let mut tape = Tape::new();
        let x = tape.constant(&t(&[3], &[1.0, 1.0, 1.0])).unwrap();
        let y = tape.masked_softmax(x, &[1.0, 1.0, 0.0], 0).unwrap();
        assert_eq!(tape.value(y), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn reduce_max_propagates_nan() {
        let mut tape = Tape::new();
        let x = tape
            .constant(&t(&[2, 2], &[1.0, f64::NAN, 2.0, 3.0]))
            .unwrap();
        let y = tape.reduce_max(x, 1).unwrap();
        assert!(tape.value(y)[0].is_nan());
        assert_eq!(tape.value(y)[1], 3.0);
    }

    #[test]
    fn masked_softmax_propagates_nan() {
        let mut tape = Tape::new();
        let x = tape.constant(&t(&[2], &[f64::NAN, f64::NAN])).unwrap();
        let y = tape.masked_softmax(x, &[1.0, 1.0], 0).unwrap();
        assert!(tape.value(y).iter().all(|v| v.is_nan()));
    }

    #[test]
    fn masked_softmax_rejects_empty_slice() {
        let mut tape = Tape::new();
        let x = tape.constant(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let err = tape
            .masked_softmax(x, &[1.0, 0.0, 0.0, 0.0], 1)
            .unwrap_err();
        assert!(matches!(err, EngineError::MaskAllZero { slice: 1 }));
    }

    #[test]
    fn matmul_of_ones() {
        let mut tape = Tape::new();
        let a = tape.constant(&t(&[2, 3], &[1.0; 6])).unwrap();
        let b = tape.constant(&t(&[3, 1], &[1.0; 3])).unwrap();
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.shape(c), &[2, 1]);
        assert_eq!(tape.value(c), &[3.0, 3.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(&t(&[2, 3], &[1.0; 6])).unwrap();
        let b = tape.constant(&t(&[2, 1], &[1.0; 2])).unwrap();
        let msg = tape.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 1]"), "{msg}");
    }

    #[test]
    fn softplus_at_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(&Tensor::scalar(0.0)).unwrap();
        let y = tape.softplus(x);
        assert!((tape.value(y)[0] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.param(&t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let a = tape.param(&Tensor::scalar(5.0)).unwrap();
        let y = tape.add(a, a).unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[2.0]);
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut tape = Tape::new();
        let a = tape.param(&Tensor::scalar(1.0)).unwrap();
        let y = tape.tanh(a);
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(EngineError::TapeConsumed)));
    }

    #[test]
    fn backward_needs_a_scalar() {
        let mut tape = Tape::new();
        let a = tape.param(&t(&[2], &[1.0, 2.0])).unwrap();
        assert!(matches!(
            tape.backward(a),
            Err(EngineError::NotScalar { .. })
        ));
    }

    #[test]
    fn broadcast_only_over_leading_dims() {
        let mut tape = Tape::new();
        let a = tape.constant(&t(&[2, 3], &[0.0; 6])).unwrap();
        let bias = tape.constant(&t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        let y = tape.add(a, bias).unwrap();
        assert_eq!(tape.value(y), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let col = tape.constant(&t(&[2], &[1.0, 2.0])).unwrap();
        assert!(matches!(
            tape.add(a, col),
            Err(EngineError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn dropout_is_identity_at_inference() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let a = tape.constant(&t(&[4], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let y = tape.dropout(a, 0.5, false, &mut rng).unwrap();
        assert_eq!(y, a);
        let z = tape.dropout(a, 0.5, true, &mut rng).unwrap();
        for (&v, &x) in tape.value(z).iter().zip(&[1.0, 2.0, 3.0, 4.0]) {
            assert!(v == 0.0 || v == 2.0 * x);
        }
    }

    #[test]
    fn lookup_rejects_bad_ids() {
        let mut tape = Tape::new();
        let table = tape.param(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let ids = Tensor::from_i64(vec![1], vec![2]).unwrap();
        assert!(matches!(
            tape.lookup(table, &ids),
            Err(EngineError::IndexOutOfRange { .. })
        ));
    }
}
