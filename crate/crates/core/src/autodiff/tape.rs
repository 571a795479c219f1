//! Wengert-list reverse-mode differentiation.
//!
//! Every op appends a node to the tape in application order. `backward`
//! walks the nodes in exactly the reverse of that order, so whatever layer
//! order a forward pass used is the order its gradients are propagated in.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::SeedRng;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Reshape(Var),
    SliceLast {
        src: Var,
        start: usize,
    },
    ConcatLast(Vec<Var>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(Var),
    Softmax(Var),
    Dropout {
        src: Var,
        mask: Vec<T>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    GatherRows {
        src: Var,
        rows: Vec<usize>,
    },
    TileRows {
        src: Var,
    },
    PrependClass {
        class: Var,
        patches: Var,
        batch: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros shaped like `like` when `var` did not
    /// influence the loss.
    pub fn get_or_zeros(&self, var: Var, like: &Tensor<T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn check_rank(op: &'static str, t: &Tensor<impl Real>, ranks: &[usize]) -> Result<()> {
    if ranks.contains(&t.rank()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{op}: unsupported rank {} (shape {:?})",
            t.rank(),
            t.shape()
        )))
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Param => true,
            Op::Constant => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Constant, &[])
    }

    /// Leaf whose gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Param, &[])
    }

    /// Matrix product of rank-2 operands, or batched product of rank-3
    /// operands sharing the leading dimension.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let err = || Error::shape("matmul", &sa, &sb);
        let (batch, m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (1, *m, *k, *n),
            ([b1, m, k], [b2, k2, n]) if b1 == b2 && k == k2 => (*b1, *m, *k, *n),
            _ => return Err(err()),
        };
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            gemm(
                &av[bi * m * k..(bi + 1) * m * k],
                &bv[bi * k * n..(bi + 1) * k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let shape = if sa.len() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// Swaps the last two dimensions of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        check_rank("transpose", t, &[2, 3])?;
        let s = t.shape();
        let (batch, r, c) = if s.len() == 2 {
            (1, s[0], s[1])
        } else {
            (s[0], s[1], s[2])
        };
        let out = transpose_blocks(t.data(), batch, r, c);
        let shape = if s.len() == 2 {
            vec![c, r]
        } else {
            vec![batch, c, r]
        };
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a rank-1 `bias` to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rank() != 1 || tb.len() != ta.last_dim() {
            return Err(Error::shape("add_bias", ta.shape(), tb.shape()));
        }
        let c = ta.last_dim();
        let mut data = ta.data().to_vec();
        for row in data.chunks_mut(c) {
            for (x, &b) in row.iter_mut().zip(tb.data()) {
                *x += b;
            }
        }
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.push(value, Op::AddBias(a, bias), &[a, bias]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s), &[a])
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Columns `start..start + len` of the last dimension.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let c = t.last_dim();
        if len == 0 || start + len > c {
            return Err(Error::InvalidArgument(format!(
                "slice_last: range {start}..{} outside last dim {c}",
                start + len
            )));
        }
        let data = t
            .data()
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(value, Op::SliceLast { src: a, start }, &[a]))
    }

    /// Concatenation along the last dimension; leading dims must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_last: no inputs".into()))?;
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut width = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::shape("concat_last", self.shape(first), s));
            }
            width += s[s.len() - 1];
        }
        let rows = self.value(first).rows();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(width);
        let value = Tensor::new(&shape, data)?;
        Ok(self.push(value, Op::ConcatLast(parts.to_vec()), parts))
    }

    /// Normalizes each row over the last dimension, then applies `gain` and
    /// `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::InvalidArgument(format!("layer_norm: eps {eps} <= 0")));
        }
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let d = tx.last_dim();
        if tg.shape() != [d] || tb.shape() != [d] {
            return Err(Error::shape("layer_norm", tx.shape(), tg.shape()));
        }
        let rows = tx.rows();
        let mut xhat = Vec::with_capacity(rows * d);
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows * d);
        let inv_d = T::one() / T::of(d as f64);
        for row in tx.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let r = T::one() / (var + T::of(eps)).sqrt();
            rstd.push(r);
            for ((&v, &g), &b) in row.iter().zip(tg.data()).zip(tb.data()) {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g + b);
            }
        }
        let value = Tensor::new(tx.shape(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(gelu_scalar);
        self.push(value, Op::Gelu(a), &[a])
    }

    /// Softmax over the last dimension.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.last_dim();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(c) {
            softmax_in_place(row);
        }
        let value = Tensor::new(t.shape(), data).expect("same shape");
        self.push(value, Op::Softmax(a), &[a])
    }

    /// Inverted dropout. Returns `a` unchanged outside training or when
    /// `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut SeedRng, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask = (0..self.value(a).len())
            .map(|_| if rng.bernoulli(p) { T::zero() } else { keep })
            .collect();
        self.dropout_with_mask(a, mask)
    }

    /// Dropout with a caller-supplied mask of per-element multipliers.
    pub fn dropout_with_mask(&mut self, a: Var, mask: Vec<T>) -> Result<Var> {
        let t = self.value(a);
        if mask.len() != t.len() {
            return Err(Error::shape("dropout", t.shape(), &[mask.len()]));
        }
        let data = t.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let value = Tensor::new(t.shape(), data)?;
        Ok(self.push(value, Op::Dropout { src: a, mask }, &[a]))
    }

    /// Mean over rows of `-log softmax(logits_row)[target]`. A rank-1 input
    /// is a single row.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let c = t.last_dim();
        if t.rows() != targets.len() {
            return Err(Error::shape("cross_entropy", t.shape(), &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&y| y >= c) {
            return Err(Error::InvalidArgument(format!(
                "cross_entropy: target {bad} outside 0..{c}"
            )));
        }
        let mut probs = t.data().to_vec();
        let mut total = 0.0f64;
        for (row, (src, &y)) in probs.chunks_mut(c).zip(t.data().chunks(c).zip(targets)) {
            let max = src.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + src.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            total += (lse - src[y]).as_f64();
            softmax_in_place(row);
        }
        let loss = T::of(total / targets.len() as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Selects rows of a matrix (or of a rank-1 tensor viewed as one row).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        check_rank("gather_rows", t, &[1, 2])?;
        let n = t.rows();
        if rows.is_empty() || rows.iter().any(|&r| r >= n) {
            return Err(Error::InvalidArgument(format!(
                "gather_rows: indices {rows:?} outside 0..{n}"
            )));
        }
        let c = t.last_dim();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            data.extend_from_slice(t.row(r));
        }
        let value = Tensor::new(&[rows.len(), c], data)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                src: a,
                rows: rows.to_vec(),
            },
            &[a],
        ))
    }

    /// Stacks `reps` copies of a matrix (or rank-1 row) vertically.
    pub fn tile_rows(&mut self, a: Var, reps: usize) -> Result<Var> {
        let t = self.value(a);
        check_rank("tile_rows", t, &[1, 2])?;
        if reps == 0 {
            return Err(Error::InvalidArgument("tile_rows: zero repetitions".into()));
        }
        let (r, c) = (t.rows(), t.last_dim());
        let data = t.data().repeat(reps);
        let value = Tensor::new(&[reps * r, c], data)?;
        Ok(self.push(value, Op::TileRows { src: a }, &[a]))
    }

    /// Builds `[class; p_1; ...; p_N]` for each of `batch` images whose patch
    /// rows are stacked in `patches`.
    pub fn prepend_class(&mut self, class: Var, patches: Var, batch: usize) -> Result<Var> {
        let (tc, tp) = (self.value(class), self.value(patches));
        let d = tc.len();
        if tc.rows() != 1 || tp.rank() != 2 || tp.last_dim() != d || tp.rows() % batch != 0 {
            return Err(Error::shape("prepend_class", tc.shape(), tp.shape()));
        }
        let n = tp.rows() / batch;
        let mut data = Vec::with_capacity(batch * (n + 1) * d);
        for b in 0..batch {
            data.extend_from_slice(tc.data());
            data.extend_from_slice(&tp.data()[b * n * d..(b + 1) * n * d]);
        }
        let value = Tensor::new(&[batch * (n + 1), d], data)?;
        Ok(self.push(
            value,
            Op::PrependClass {
                class,
                patches,
                batch,
            },
            &[class, patches],
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.filter(|_| node.needs_grad)
                    .map(|g| Tensor::new(node.value.shape(), g).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let s = ta.shape();
                let (batch, m, k) = if s.len() == 2 {
                    (1, s[0], s[1])
                } else {
                    (s[0], s[1], s[2])
                };
                let n = tb.last_dim();
                acc(*a, &mut |da| {
                    for bi in 0..batch {
                        gemm_nt(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &tb.data()[bi * k * n..(bi + 1) * k * n],
                            &mut da[bi * m * k..(bi + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                });
                acc(*b, &mut |db| {
                    for bi in 0..batch {
                        gemm_tn(
                            &ta.data()[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            &mut db[bi * k * n..(bi + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                });
            }
            Op::Transpose(a) => {
                let s = node.value.shape();
                let (batch, r, c) = if s.len() == 2 {
                    (1, s[0], s[1])
                } else {
                    (s[0], s[1], s[2])
                };
                let back = transpose_blocks(g, batch, r, c);
                acc(*a, &mut |da| add_into(da, &back));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*b, &mut |db| add_into(db, g));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |da| {
                    for ((d, &gi), &y) in da.iter_mut().zip(g).zip(tb) {
                        *d += gi * y;
                    }
                });
                acc(*b, &mut |db| {
                    for ((d, &gi), &x) in db.iter_mut().zip(g).zip(ta) {
                        *d += gi * x;
                    }
                });
            }
            Op::AddBias(a, bias) => {
                acc(*a, &mut |da| add_into(da, g));
                acc(*bias, &mut |db| {
                    let c = db.len();
                    for row in g.chunks(c) {
                        add_into(db, row);
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |da| {
                for (d, &gi) in da.iter_mut().zip(g) {
                    *d += gi * *s;
                }
            }),
            Op::Sum(a) => acc(*a, &mut |da| {
                for d in da.iter_mut() {
                    *d += g[0];
                }
            }),
            Op::Reshape(a) => acc(*a, &mut |da| add_into(da, g)),
            Op::SliceLast { src, start } => {
                let c = self.value(*src).last_dim();
                let len = node.value.last_dim();
                acc(*src, &mut |ds| {
                    for (drow, grow) in ds.chunks_mut(c).zip(g.chunks(len)) {
                        add_into(&mut drow[*start..*start + len], grow);
                    }
                });
            }
            Op::ConcatLast(parts) => {
                let width = node.value.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).last_dim();
                    acc(p, &mut |dp| {
                        for (drow, grow) in dp.chunks_mut(c).zip(g.chunks(width)) {
                            add_into(drow, &grow[offset..offset + c]);
                        }
                    });
                    offset += c;
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = self.value(*x).last_dim();
                let gv = self.value(*gain).data();
                acc(*x, &mut |dx| {
                    let inv_d = T::one() / T::of(d as f64);
                    for (r, ((dxr, gr), hr)) in dx
                        .chunks_mut(d)
                        .zip(g.chunks(d))
                        .zip(xhat.chunks(d))
                        .enumerate()
                    {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh *= inv_d;
                        mean_dh_h *= inv_d;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            dxr[j] += rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                });
                acc(*gain, &mut |dg| {
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += gr[j] * hr[j];
                        }
                    }
                });
                acc(*bias, &mut |db| {
                    for gr in g.chunks(d) {
                        add_into(db, gr);
                    }
                });
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                acc(*a, &mut |da| {
                    for ((d, &gi), &xi) in da.iter_mut().zip(g).zip(x) {
                        *d += gi * gelu_derivative(xi);
                    }
                });
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let c = node.value.last_dim();
                acc(*a, &mut |da| {
                    for ((dr, gr), yr) in da.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for j in 0..c {
                            dr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Dropout { src, mask } => acc(*src, &mut |ds| {
                for ((d, &gi), &m) in ds.iter_mut().zip(g).zip(mask) {
                    *d += gi * m;
                }
            }),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let c = self.value(*logits).last_dim();
                let scale = g[0] / T::of(targets.len() as f64);
                acc(*logits, &mut |dl| {
                    for ((dr, pr), &y) in dl.chunks_mut(c).zip(probs.chunks(c)).zip(targets) {
                        for j in 0..c {
                            let onehot = if j == y { T::one() } else { T::zero() };
                            dr[j] += scale * (pr[j] - onehot);
                        }
                    }
                });
            }
            Op::GatherRows { src, rows } => {
                let c = node.value.last_dim();
                acc(*src, &mut |ds| {
                    for (&r, gr) in rows.iter().zip(g.chunks(c)) {
                        add_into(&mut ds[r * c..(r + 1) * c], gr);
                    }
                });
            }
            Op::TileRows { src } => acc(*src, &mut |ds| {
                for block in g.chunks(ds.len()) {
                    add_into(ds, block);
                }
            }),
            Op::PrependClass {
                class,
                patches,
                batch,
            } => {
                let d = node.value.last_dim();
                let per_image = node.value.rows() / batch;
                acc(*class, &mut |dc| {
                    for b in 0..*batch {
                        let off = b * per_image * d;
                        add_into(dc, &g[off..off + d]);
                    }
                });
                acc(*patches, &mut |dp| {
                    let n = per_image - 1;
                    for b in 0..*batch {
                        let src = (b * per_image + 1) * d;
                        add_into(&mut dp[b * n * d..(b + 1) * n * d], &g[src..src + n * d]);
                    }
                });
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn gelu_scalar<T: Real>(x: T) -> T {
    x * T::of(0.5) * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_derivative<T: Real>(x: T) -> T {
    let cdf = T::of(0.5) * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::of(0.5)).exp() * T::of(0.398_942_280_401_432_7);
    cdf + x * pdf
}

fn transpose_blocks<T: Real>(src: &[T], batch: usize, r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for b in 0..batch {
        let (s, o) = (&src[b * r * c..(b + 1) * r * c], &mut out[b * r * c..(b + 1) * r * c]);
        for i in 0..r {
            for j in 0..c {
                o[j * r + i] = s[i * c + j];
            }
        }
    }
    out
}

/// `c += a[m x k] * b[k x n]`
fn gemm<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            for (cv, &bv) in crow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cv += aip * bv;
            }
        }
    }
}

/// `da += g[m x n] * b[k x n]^T`
fn gemm_nt<T: Real>(g: &[T], b: &[T], da: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = T::zero();
            for (&x, &y) in grow.iter().zip(brow) {
                s += x * y;
            }
            da[i * k + p] += s;
        }
    }
}

/// `db += a[m x k]^T * g[m x n]`
fn gemm_tn<T: Real>(a: &[T], g: &[T], db: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *d += aip * gv;
            }
        }
    }
}
