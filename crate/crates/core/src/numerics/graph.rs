//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation appends a node to the tape, so node order is already a
//! topological order and `backward` is a single reverse sweep.

use std::collections::BTreeMap;

use rand::Rng;

use super::params::Parameters;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;
const LOG_FLOOR: f64 = 1e-30;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    RowDot(Var, Var),
    SegmentSoftmax(Var, Vec<usize>),
    PickCols(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A differentiation graph. Confined to one thread; build one per step.
#[derive(Debug, Default)]
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    params: BTreeMap<String, Var>,
}

fn dims2(shape: &[usize]) -> (usize, usize) {
    let c = *shape.last().expect("non-empty shape");
    (shape.iter().product::<usize>() / c, c)
}

fn add_into<T: Real>(slot: &mut Option<Vec<T>>, len: usize) -> &mut Vec<T> {
    slot.get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf bound to a named parameter; repeated calls return the same node.
    pub fn param(&mut self, params: &Parameters<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = params
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?
            .clone();
        let v = self.leaf(value);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Parameters bound so far, by name.
    pub fn bound_params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    /// Gradients of every parameter in `params`; parameters the graph never
    /// touched get zeros.
    pub fn param_grads(&self, params: &Parameters<T>) -> BTreeMap<String, Vec<T>> {
        params
            .iter()
            .map(|(name, t)| {
                let g = self
                    .params
                    .get(name)
                    .and_then(|v| self.grads[v.0].clone())
                    .unwrap_or_else(|| vec![T::zero(); t.len()]);
                (name.clone(), g)
            })
            .collect()
    }

    // ---- forward ops ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == T::zero() {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let ng = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(Error::Dimension {
                op: "transpose",
                lhs: s,
                rhs: vec![],
            });
        }
        let (m, n) = (s[0], s[1]);
        let av = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av[i * n + j];
            }
        }
        let ng = self.needs(&[a]);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Transpose(a), ng))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a, b]);
        self.push(Tensor::new(shape, data).expect("shape preserved"), op, ng)
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a]);
        self.push(Tensor::new(shape, data).expect("shape preserved"), op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_map(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// Adds a length-`n` vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (_, n) = dims2(self.shape(a));
        if self.value(bias).len() != n {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let bv = self.value(bias).data();
        let data = self
            .value(a)
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(bv).map(|(&x, &b)| x + b))
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a, bias]);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddRow(a, bias), ng))
    }

    /// Multiplies row `r` of `a` by `c[r]`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (m, n) = dims2(self.shape(a));
        if self.value(c).len() != m {
            return Err(Error::Dimension {
                op: "mul_col",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(c).to_vec(),
            });
        }
        let cv = self.value(c).data();
        let data = self
            .value(a)
            .data()
            .chunks(n)
            .zip(cv)
            .flat_map(|(row, &s)| row.iter().map(move |&x| x * s))
            .collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a, c]);
        Ok(self.push(Tensor::new(shape, data)?, Op::MulCol(a, c), ng))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        self.map(a, |x| x + s, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(
            a,
            |x| {
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            },
            Op::Sigmoid(a),
        )
    }

    /// Natural log, floored at a tiny positive value.
    pub fn log(&mut self, a: Var) -> Var {
        let floor = T::of(LOG_FLOOR);
        self.map(a, |x| x.max(floor).ln(), Op::Log(a))
    }

    /// Row-wise softmax over the last dimension. Masked-out entries
    /// (`mask[k] == false`) are exactly zero.
    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (m, n) = dims2(self.shape(a));
        if let Some(mask) = mask {
            if mask.len() != m * n {
                return Err(Error::Dimension {
                    op: "softmax mask",
                    lhs: self.shape(a).to_vec(),
                    rhs: vec![mask.len()],
                });
            }
        }
        let x = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        for r in 0..m {
            let keep = |j: usize| mask.map_or(true, |mk| mk[r * n + j]);
            let row = &x[r * n..(r + 1) * n];
            let mut max = T::neg_infinity();
            let mut any = false;
            for (j, &v) in row.iter().enumerate() {
                if keep(j) {
                    any = true;
                    max = max.max(v);
                }
            }
            if !any {
                return Err(Error::DegenerateMask { row: r });
            }
            let mut sum = T::zero();
            for (j, &v) in row.iter().enumerate() {
                if keep(j) {
                    let e = (v - max).exp();
                    out[r * n + j] = e;
                    sum += e;
                }
            }
            for o in &mut out[r * n..(r + 1) * n] {
                *o /= sum;
            }
        }
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(a), ng))
    }

    /// Per-row `-log softmax(logits)[target]`, shape `[rows]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, n) = dims2(self.shape(logits));
        if targets.len() != m {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: self.shape(logits).to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::InvalidClass {
                index: bad,
                classes: n,
            });
        }
        let x = self.value(logits).data();
        let mut probs = vec![T::zero(); m * n];
        let mut out = Vec::with_capacity(m);
        for r in 0..m {
            let row = &x[r * n..(r + 1) * n];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                probs[r * n + j] = e;
                sum += e;
            }
            for p in &mut probs[r * n..(r + 1) * n] {
                *p /= sum;
            }
            out.push(sum.ln() + max - row[targets[r]]);
        }
        let ng = self.needs(&[logits]);
        Ok(self.push(
            Tensor::new(vec![m], out)?,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        ))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, n) = dims2(self.shape(x));
        if self.value(gamma).len() != n || self.value(beta).len() != n {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gamma).to_vec(),
            });
        }
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let nf = T::of(n as f64);
        let eps = T::of(LN_EPS);
        let mut xhat = vec![T::zero(); m * n];
        let mut inv_std = Vec::with_capacity(m);
        let mut out = vec![T::zero(); m * n];
        for r in 0..m {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * gv[j] + bv[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let ng = self.needs(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Selects rows of a 2-D tensor; also serves as embedding lookup.
    pub fn gather_rows(&mut self, src: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = dims2(self.shape(src));
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::OutOfRange(format!("row {bad} of {m}")));
        }
        if idx.is_empty() {
            return Err(Error::Empty("gather_rows index"));
        }
        let sv = self.value(src).data();
        let data = idx
            .iter()
            .flat_map(|&i| sv[i * n..(i + 1) * n].iter().copied())
            .collect();
        let ng = self.needs(&[src]);
        Ok(self.push(
            Tensor::new(vec![idx.len(), n], data)?,
            Op::GatherRows(src, idx.to_vec()),
            ng,
        ))
    }

    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    /// `out[idx[r]] += src[r]` into a fresh `[out_rows, n]` tensor.
    pub fn scatter_add_rows(&mut self, src: Var, idx: &[usize], out_rows: usize) -> Result<Var> {
        let (m, n) = dims2(self.shape(src));
        if idx.len() != m || idx.iter().any(|&i| i >= out_rows) {
            return Err(Error::OutOfRange(format!(
                "scatter of {m} rows into {out_rows}"
            )));
        }
        let sv = self.value(src).data();
        let mut out = vec![T::zero(); out_rows * n];
        for (r, &i) in idx.iter().enumerate() {
            for j in 0..n {
                out[i * n + j] += sv[r * n + j];
            }
        }
        let ng = self.needs(&[src]);
        Ok(self.push(
            Tensor::new(vec![out_rows, n], out)?,
            Op::ScatterAddRows(src, idx.to_vec()),
            ng,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = dims2(self.shape(parts[0])).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = dims2(self.shape(p));
            if r != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let ng = self.needs(parts);
        Ok(self.push(
            Tensor::new(vec![rows, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            ng,
        ))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, src: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = dims2(self.shape(src));
        if start >= end || end > n {
            return Err(Error::OutOfRange(format!("columns {start}..{end} of {n}")));
        }
        let w = end - start;
        let sv = self.value(src).data();
        let mut out = Vec::with_capacity(m * w);
        for r in 0..m {
            out.extend_from_slice(&sv[r * n + start..r * n + end]);
        }
        let ng = self.needs(&[src]);
        Ok(self.push(
            Tensor::new(vec![m, w], out)?,
            Op::SliceCols(src, start),
            ng,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = dims2(self.shape(parts[0])).1;
        let mut out = Vec::new();
        for &p in parts {
            if dims2(self.shape(p)).1 != n {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            out.extend_from_slice(self.value(p).data());
        }
        let rows = out.len() / n;
        let ng = self.needs(parts);
        Ok(self.push(
            Tensor::new(vec![rows, n], out)?,
            Op::ConcatRows(parts.to_vec()),
            ng,
        ))
    }

    /// Row-wise dot product of two same-shape matrices, shape `[rows]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let (m, n) = dims2(self.shape(a));
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let out = (0..m)
            .map(|r| {
                av[r * n..(r + 1) * n]
                    .iter()
                    .zip(&bv[r * n..(r + 1) * n])
                    .map(|(&x, &y)| x * y)
                    .sum()
            })
            .collect();
        let ng = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![m], out)?, Op::RowDot(a, b), ng))
    }

    /// Softmax of a score vector within each segment: entries sharing the
    /// same `segment[e]` are normalized together.
    pub fn segment_softmax(&mut self, scores: Var, segment: &[usize]) -> Result<Var> {
        let x = self.value(scores).data();
        if segment.len() != x.len() {
            return Err(Error::Dimension {
                op: "segment_softmax",
                lhs: self.shape(scores).to_vec(),
                rhs: vec![segment.len()],
            });
        }
        let nseg = segment.iter().max().map_or(0, |m| m + 1);
        let mut max = vec![T::neg_infinity(); nseg];
        for (&s, &v) in segment.iter().zip(x) {
            max[s] = max[s].max(v);
        }
        let mut out: Vec<T> = segment.iter().zip(x).map(|(&s, &v)| (v - max[s]).exp()).collect();
        let mut sum = vec![T::zero(); nseg];
        for (&s, &e) in segment.iter().zip(&out) {
            sum[s] += e;
        }
        for (o, &s) in out.iter_mut().zip(segment) {
            *o /= sum[s];
        }
        let shape = self.shape(scores).to_vec();
        let ng = self.needs(&[scores]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::SegmentSoftmax(scores, segment.to_vec()),
            ng,
        ))
    }

    /// `out[r] = src[r, cols[r]]`.
    pub fn pick_cols(&mut self, src: Var, cols: &[usize]) -> Result<Var> {
        let (m, n) = dims2(self.shape(src));
        if cols.len() != m {
            return Err(Error::Dimension {
                op: "pick_cols",
                lhs: self.shape(src).to_vec(),
                rhs: vec![cols.len()],
            });
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= n) {
            return Err(Error::InvalidClass {
                index: bad,
                classes: n,
            });
        }
        let sv = self.value(src).data();
        let out = cols.iter().enumerate().map(|(r, &c)| sv[r * n + c]).collect();
        let ng = self.needs(&[src]);
        Ok(self.push(
            Tensor::new(vec![m], out)?,
            Op::PickCols(src, cols.to_vec()),
            ng,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let ng = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a).data();
        let s = v.iter().copied().sum::<T>() / T::of(v.len() as f64);
        let ng = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), ng)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = Tensor::new(shape.to_vec(), self.value(a).data().to_vec())?;
        let ng = self.needs(&[a]);
        Ok(self.push(t, Op::Reshape(a), ng))
    }

    /// Inverted dropout: identity when `!train` or `p == 0`, otherwise
    /// zeroes entries with probability `p` and scales survivors by
    /// `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidProbability(p));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let shape = self.shape(a).to_vec();
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let m = self.constant(Tensor::new(shape, mask)?);
        self.mul(a, m)
    }

    // ---- backward ----

    /// Reverse sweep from a one-element `loss`. Gradients accumulate across
    /// calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut g: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        g[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(dout) = g[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.propagate(i, &dout, &mut g);
            }
            g[i] = Some(dout);
        }
        for (i, gi) in g.into_iter().enumerate() {
            if let (Some(d), true) = (gi, self.nodes[i].needs_grad) {
                match &mut self.grads[i] {
                    Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, &b)| *a += b),
                    slot => *slot = Some(d),
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, d: &[T], g: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let want = |v: &Var| self.nodes[v.0].needs_grad;
        let len = |v: &Var| self.nodes[v.0].value.len();
        let val = |v: &Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let sa = self.nodes[a.0].value.shape();
                let (m, k) = (sa[0], sa[1]);
                let n = node.value.shape()[1];
                if want(a) {
                    let bv = val(b);
                    let ga = add_into(&mut g[a.0], m * k);
                    for r in 0..m {
                        let drow = &d[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[r * k + p] += drow.iter().zip(brow).map(|(&x, &y)| x * y).sum::<T>();
                        }
                    }
                }
                if want(b) {
                    let av = val(a);
                    let gb = add_into(&mut g[b.0], k * n);
                    for r in 0..m {
                        let drow = &d[r * n..(r + 1) * n];
                        for p in 0..k {
                            let x = av[r * k + p];
                            if x == T::zero() {
                                continue;
                            }
                            for (o, &y) in gb[p * n..(p + 1) * n].iter_mut().zip(drow) {
                                *o += x * y;
                            }
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                let s = node.value.shape();
                let (n, m) = (s[0], s[1]);
                let ga = add_into(&mut g[a.0], m * n);
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] += d[j * m + i];
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                if want(a) {
                    let ga = add_into(&mut g[a.0], d.len());
                    ga.iter_mut().zip(d).for_each(|(x, &y)| *x += y);
                }
                if want(b) {
                    let gb = add_into(&mut g[b.0], d.len());
                    gb.iter_mut().zip(d).for_each(|(x, &y)| *x += sign * y);
                }
            }
            Op::Mul(a, b) => {
                if want(a) {
                    let bv = val(b);
                    let ga = add_into(&mut g[a.0], d.len());
                    for k in 0..d.len() {
                        ga[k] += d[k] * bv[k];
                    }
                }
                if want(b) {
                    let av = val(a);
                    let gb = add_into(&mut g[b.0], d.len());
                    for k in 0..d.len() {
                        gb[k] += d[k] * av[k];
                    }
                }
            }
            Op::AddRow(a, b) => {
                let n = len(b);
                if want(a) {
                    let ga = add_into(&mut g[a.0], d.len());
                    ga.iter_mut().zip(d).for_each(|(x, &y)| *x += y);
                }
                if want(b) {
                    let gb = add_into(&mut g[b.0], n);
                    for row in d.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::MulCol(a, c) => {
                let m = len(c);
                let n = d.len() / m;
                if want(a) {
                    let cv = val(c);
                    let ga = add_into(&mut g[a.0], d.len());
                    for r in 0..m {
                        for j in 0..n {
                            ga[r * n + j] += d[r * n + j] * cv[r];
                        }
                    }
                }
                if want(c) {
                    let av = val(a);
                    let gc = add_into(&mut g[c.0], m);
                    for r in 0..m {
                        gc[r] += (0..n).map(|j| d[r * n + j] * av[r * n + j]).sum::<T>();
                    }
                }
            }
            Op::Scale(a, s) => {
                let ga = add_into(&mut g[a.0], d.len());
                ga.iter_mut().zip(d).for_each(|(x, &y)| *x += *s * y);
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                let ga = add_into(&mut g[a.0], d.len());
                ga.iter_mut().zip(d).for_each(|(x, &y)| *x += y);
            }
            Op::Relu(a) => {
                let av = val(a);
                let ga = add_into(&mut g[a.0], d.len());
                for k in 0..d.len() {
                    if av[k] > T::zero() {
                        ga[k] += d[k];
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let ga = add_into(&mut g[a.0], d.len());
                for k in 0..d.len() {
                    ga[k] += d[k] * y[k] * (T::one() - y[k]);
                }
            }
            Op::Log(a) => {
                let av = val(a);
                let floor = T::of(LOG_FLOOR);
                let ga = add_into(&mut g[a.0], d.len());
                for k in 0..d.len() {
                    if av[k] > floor {
                        ga[k] += d[k] / av[k];
                    }
                }
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let n = node.value.cols();
                let ga = add_into(&mut g[a.0], d.len());
                for (r, (yr, dr)) in y.chunks(n).zip(d.chunks(n)).enumerate() {
                    let dot: T = yr.iter().zip(dr).map(|(&p, &q)| p * q).sum();
                    for j in 0..n {
                        ga[r * n + j] += yr[j] * (dr[j] - dot);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let n = self.nodes[logits.0].value.cols();
                let ga = add_into(&mut g[logits.0], probs.len());
                for (r, &t) in targets.iter().enumerate() {
                    for j in 0..n {
                        let onehot = if j == t { T::one() } else { T::zero() };
                        ga[r * n + j] += d[r] * (probs[r * n + j] - onehot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let n = len(gamma);
                let nf = T::of(n as f64);
                let gv = val(gamma);
                if want(gamma) {
                    let gg = add_into(&mut g[gamma.0], n);
                    for (h, dr) in xhat.chunks(n).zip(d.chunks(n)) {
                        for j in 0..n {
                            gg[j] += dr[j] * h[j];
                        }
                    }
                }
                if want(beta) {
                    let gb = add_into(&mut g[beta.0], n);
                    for dr in d.chunks(n) {
                        gb.iter_mut().zip(dr).for_each(|(x, &y)| *x += y);
                    }
                }
                if want(x) {
                    let gx = add_into(&mut g[x.0], d.len());
                    for (r, (h, dr)) in xhat.chunks(n).zip(d.chunks(n)).enumerate() {
                        let dh: Vec<T> = (0..n).map(|j| dr[j] * gv[j]).collect();
                        let sum_dh: T = dh.iter().copied().sum();
                        let sum_dhh: T = dh.iter().zip(h).map(|(&a, &b)| a * b).sum();
                        let scale = inv_std[r] / nf;
                        for j in 0..n {
                            gx[r * n + j] += scale * (nf * dh[j] - sum_dh - h[j] * sum_dhh);
                        }
                    }
                }
            }
            Op::GatherRows(src, idx) => {
                let n = node.value.cols();
                let gs = add_into(&mut g[src.0], len(src));
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..n {
                        gs[i * n + j] += d[r * n + j];
                    }
                }
            }
            Op::ScatterAddRows(src, idx) => {
                let n = node.value.cols();
                let gs = add_into(&mut g[src.0], len(src));
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..n {
                        gs[r * n + j] += d[i * n + j];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut off = 0;
                for p in parts {
                    let w = self.nodes[p.0].value.cols();
                    if want(p) {
                        let gp = add_into(&mut g[p.0], rows * w);
                        for r in 0..rows {
                            for j in 0..w {
                                gp[r * w + j] += d[r * total + off + j];
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::SliceCols(src, start) => {
                let n = self.nodes[src.0].value.cols();
                let w = node.value.cols();
                let gs = add_into(&mut g[src.0], len(src));
                for (r, dr) in d.chunks(w).enumerate() {
                    for j in 0..w {
                        gs[r * n + start + j] += dr[j];
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let l = len(p);
                    if want(p) {
                        let gp = add_into(&mut g[p.0], l);
                        gp.iter_mut().zip(&d[off..off + l]).for_each(|(x, &y)| *x += y);
                    }
                    off += l;
                }
            }
            Op::RowDot(a, b) => {
                let n = self.nodes[a.0].value.cols();
                for (this, other) in [(a, b), (b, a)] {
                    if want(this) {
                        let ov = val(other);
                        let gt = add_into(&mut g[this.0], ov.len());
                        for (r, &dr) in d.iter().enumerate() {
                            for j in 0..n {
                                gt[r * n + j] += dr * ov[r * n + j];
                            }
                        }
                    }
                }
            }
            Op::SegmentSoftmax(src, seg) => {
                let y = node.value.data();
                let nseg = seg.iter().max().map_or(0, |m| m + 1);
                let mut dot = vec![T::zero(); nseg];
                for e in 0..y.len() {
                    dot[seg[e]] += y[e] * d[e];
                }
                let gs = add_into(&mut g[src.0], y.len());
                for e in 0..y.len() {
                    gs[e] += y[e] * (d[e] - dot[seg[e]]);
                }
            }
            Op::PickCols(src, cols) => {
                let n = self.nodes[src.0].value.cols();
                let gs = add_into(&mut g[src.0], len(src));
                for (r, &c) in cols.iter().enumerate() {
                    gs[r * n + c] += d[r];
                }
            }
            Op::Sum(a) => {
                let ga = add_into(&mut g[a.0], len(a));
                ga.iter_mut().for_each(|x| *x += d[0]);
            }
            Op::Mean(a) => {
                let l = len(a);
                let s = d[0] / T::of(l as f64);
                let ga = add_into(&mut g[a.0], l);
                ga.iter_mut().for_each(|x| *x += s);
            }
        }
    }
}
