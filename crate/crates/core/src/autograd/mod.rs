//! Tape-based reverse-mode differentiation over dense row-major tensors.
//!
//! A [`Graph`] records every operation applied to [`Var`] handles. Calling
//! [`Graph::backward`] on a scalar walks the tape in reverse and returns the
//! gradient of every node that depends on a differentiable leaf.

mod geometry;

use std::cell::RefCell;
use std::rc::Rc;

use crate::scalar::{matmul_into, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape {shape:?} does not match {} values", data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: vec![], data: vec![v] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Size of the last dimension (1 for scalars).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn rows(&self) -> usize {
        self.numel() / self.cols().max(1)
    }

    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &mut Grads<T>)>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

/// Gradient accumulator indexed by [`Var`].
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
    wanted: Vec<bool>,
}

impl<T: Scalar> Grads<T> {
    /// Whether `v` participates in differentiation.
    pub fn wants(&self, v: Var) -> bool {
        self.wanted[v.0]
    }

    /// Adds into the gradient buffer of `v` through `f` (buffer zero-initialized).
    pub fn accumulate_with(&mut self, v: Var, f: impl FnOnce(&mut [T])) {
        if !self.wanted[v.0] {
            return;
        }
        let shape = &self.shapes[v.0];
        let g = self.grads[v.0].get_or_insert_with(|| Tensor::zeros(shape));
        f(&mut g.data);
    }

    pub fn accumulate(&mut self, v: Var, g: &[T]) {
        self.accumulate_with(v, |buf| {
            for (b, x) in buf.iter_mut().zip(g) {
                *b += *x;
            }
        });
    }

    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }
}

pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, value: Tensor<T>, requires_grad: bool, backward: Option<BackwardFn<T>>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), requires_grad, backward });
        Var(nodes.len() - 1)
    }

    /// Records an op result; the backward closure is kept only if an input
    /// requires gradients.
    pub fn push_op(
        &self,
        value: Tensor<T>,
        inputs: &[Var],
        backward: impl Fn(&Tensor<T>, &mut Grads<T>) + 'static,
    ) -> Var {
        let requires = inputs.iter().any(|v| self.requires_grad(*v));
        let bw: Option<BackwardFn<T>> = if requires { Some(Box::new(backward)) } else { None };
        self.push_node(value, requires, bw)
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push_node(value, requires_grad, None)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> Rc<Tensor<T>> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape.clone()
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[loss.0].value.numel(), 1, "backward needs a scalar");
        let mut grads = Grads {
            grads: (0..nodes.len()).map(|_| None).collect(),
            shapes: nodes.iter().map(|n| n.value.shape.clone()).collect(),
            wanted: nodes.iter().map(|n| n.requires_grad).collect(),
        };
        grads.accumulate(loss, &[T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(bw) = &nodes[i].backward else { continue };
            let Some(g) = grads.grads[i].take() else { continue };
            bw(&g, &mut grads);
            grads.grads[i] = Some(g);
        }
        grads
    }

    // ---- dense ops -------------------------------------------------------

    /// `x[..., in] * w[in, out] + b[out]`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        assert_eq!(wv.shape.len(), 2, "weight must be 2-D");
        let (din, dout) = (wv.shape[0], wv.shape[1]);
        assert_eq!(xv.cols(), din, "linear: input width {} vs weight {:?}", xv.cols(), wv.shape);
        let rows = xv.rows();
        let mut out = vec![T::zero(); rows * dout];
        matmul_into(&xv.data, false, &wv.data, false, &mut out, rows, din, dout, false);
        let bv = b.map(|b| self.value(b));
        if let Some(bv) = &bv {
            assert_eq!(bv.numel(), dout, "bias size");
            for r in out.chunks_exact_mut(dout) {
                for (o, bb) in r.iter_mut().zip(&bv.data) {
                    *o += *bb;
                }
            }
        }
        let mut shape = xv.shape.clone();
        *shape.last_mut().unwrap() = dout;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push_op(Tensor::new(shape, out), &inputs, move |g, grads| {
            if grads.wants(x) {
                grads.accumulate_with(x, |dx| matmul_into(&g.data, false, &wv.data, true, dx, rows, dout, din, true));
            }
            if grads.wants(w) {
                grads.accumulate_with(w, |dw| matmul_into(&xv.data, true, &g.data, false, dw, din, rows, dout, true));
            }
            if let Some(b) = b {
                grads.accumulate_with(b, |db| {
                    for r in g.data.chunks_exact(dout) {
                        for (d, v) in db.iter_mut().zip(r) {
                            *d += *v;
                        }
                    }
                });
            }
        })
    }

    fn binary(&self, a: Var, b: Var, f: impl Fn(T, T) -> T, da: fn(T, T, T) -> T, db: fn(T, T, T) -> T) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape, bv.shape, "elementwise op shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| f(*x, *y)).collect();
        self.push_op(Tensor::new(av.shape.clone(), data), &[a, b], move |g, grads| {
            grads.accumulate_with(a, |d| {
                for i in 0..d.len() {
                    d[i] += da(g.data[i], av.data[i], bv.data[i]);
                }
            });
            grads.accumulate_with(b, |d| {
                for i in 0..d.len() {
                    d[i] += db(g.data[i], av.data[i], bv.data[i]);
                }
            });
        })
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, |g, _, _| g, |g, _, _| g)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, |g, _, _| g, |g, _, _| -g)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, |g, _, y| g * y, |g, x, _| g * x)
    }

    fn unary(&self, x: Var, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var {
        let xv = self.value(x);
        let out: Vec<T> = xv.data.iter().map(|v| f(*v)).collect();
        let yv = Rc::new(out.clone());
        self.push_op(Tensor::new(xv.shape.clone(), out), &[x], move |g, grads| {
            grads.accumulate_with(x, |d| {
                for i in 0..d.len() {
                    d[i] += g.data[i] * df(xv.data[i], yv[i]);
                }
            });
        })
    }

    pub fn scale(&self, x: Var, s: T) -> Var {
        self.unary(x, |v| v * s, move |_, _| s)
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, |v| if v <= T::zero() { T::zero() } else { v }, |x, _| if x > T::zero() { T::one() } else { T::zero() })
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, |v| T::one() / (T::one() + (-v).exp()), |_, y| y * (T::one() - y))
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), |_, y| T::one() - y * y)
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&self, x: Var, c: Rc<Vec<T>>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.numel(), c.len(), "mask size");
        let data = xv.data.iter().zip(c.iter()).map(|(a, b)| *a * *b).collect();
        self.push_op(Tensor::new(xv.shape.clone(), data), &[x], move |g, grads| {
            grads.accumulate_with(x, |d| {
                for i in 0..d.len() {
                    d[i] += g.data[i] * c[i];
                }
            });
        })
    }

    /// Adds a constant tensor of the same shape.
    pub fn add_const(&self, x: Var, c: &[T]) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.numel(), c.len(), "constant size");
        let data = xv.data.iter().zip(c).map(|(a, b)| *a + *b).collect();
        self.push_op(Tensor::new(xv.shape.clone(), data), &[x], move |g, grads| grads.accumulate(x, &g.data))
    }

    /// `x + b` with `b` repeated over the leading entries (`b` trailing-shaped).
    pub fn add_tiled(&self, x: Var, b: Var) -> Var {
        let xv = self.value(x);
        let bv = self.value(b);
        let nb = bv.numel();
        assert!(nb > 0 && xv.numel() % nb == 0, "tiled operand size");
        let data = xv.data.iter().enumerate().map(|(i, v)| *v + bv.data[i % nb]).collect();
        self.push_op(Tensor::new(xv.shape.clone(), data), &[x, b], move |g, grads| {
            grads.accumulate(x, &g.data);
            if grads.wants(b) {
                grads.accumulate_with(b, |db| {
                    for r in g.data.chunks_exact(nb) {
                        db.iter_mut().zip(r).for_each(|(d, v)| *d += *v);
                    }
                });
            }
        })
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Var {
        let xv = self.value(x);
        let t = Tensor::new(shape.to_vec(), xv.data.clone());
        self.push_op(t, &[x], move |g, grads| grads.accumulate(x, &g.data))
    }

    /// Concatenation along the last dimension; leading dims must agree.
    pub fn concat_last(&self, xs: &[Var]) -> Var {
        let vals: Vec<Rc<Tensor<T>>> = xs.iter().map(|v| self.value(*v)).collect();
        let rows = vals[0].rows();
        let lead = &vals[0].shape[..vals[0].shape.len() - 1];
        for v in &vals {
            assert_eq!(&v.shape[..v.shape.len() - 1], lead, "concat_last leading dims");
        }
        let widths: Vec<usize> = vals.iter().map(|v| v.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, w) in vals.iter().zip(&widths) {
                out.extend_from_slice(&v.data[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let xs = xs.to_vec();
        self.push_op(Tensor::new(shape, out), &xs.clone(), move |g, grads| {
            let mut off = 0;
            for (v, w) in xs.iter().zip(&widths) {
                let (off_c, w) = (off, *w);
                grads.accumulate_with(*v, |d| {
                    for r in 0..rows {
                        for c in 0..w {
                            d[r * w + c] += g.data[r * total + off_c + c];
                        }
                    }
                });
                off += w;
            }
        })
    }

    /// Columns `start..start + len` of the last dimension.
    pub fn narrow_last(&self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        assert!(start + len <= cols, "narrow out of range");
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xv.data[r * cols + start..r * cols + start + len]);
        }
        let mut shape = xv.shape.clone();
        *shape.last_mut().unwrap() = len;
        self.push_op(Tensor::new(shape, out), &[x], move |g, grads| {
            grads.accumulate_with(x, |d| {
                for r in 0..rows {
                    for c in 0..len {
                        d[r * cols + start + c] += g.data[r * len + c];
                    }
                }
            });
        })
    }

    /// Rows of `x` (rows = all but the last dim) picked by `idx`; the result
    /// has shape `out_lead ++ [cols]`.
    pub fn gather_rows(&self, x: Var, idx: Rc<Vec<usize>>, out_lead: &[usize]) -> Var {
        let xv = self.value(x);
        let cols = xv.cols();
        assert_eq!(out_lead.iter().product::<usize>(), idx.len(), "gather output shape");
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx.iter() {
            out.extend_from_slice(&xv.data[i * cols..(i + 1) * cols]);
        }
        let mut shape = out_lead.to_vec();
        shape.push(cols);
        self.push_op(Tensor::new(shape, out), &[x], move |g, grads| {
            grads.accumulate_with(x, |d| {
                for (k, &i) in idx.iter().enumerate() {
                    for c in 0..cols {
                        d[i * cols + c] += g.data[k * cols + c];
                    }
                }
            });
        })
    }

    /// Max over consecutive groups of `group` rows: `[G * group, C] -> [G, C]`
    /// (output leading shape `out_lead`). Ties go to the first row.
    pub fn max_pool_rows(&self, x: Var, group: usize, out_lead: &[usize]) -> Var {
        let xv = self.value(x);
        let cols = xv.cols();
        let groups = xv.rows() / group;
        assert_eq!(groups * group, xv.rows(), "rows not divisible by group size");
        assert_eq!(out_lead.iter().product::<usize>(), groups, "max-pool output shape");
        let mut out = vec![T::zero(); groups * cols];
        let mut arg = vec![0usize; groups * cols];
        for gi in 0..groups {
            for c in 0..cols {
                let mut best = xv.data[gi * group * cols + c];
                let mut bi = gi * group;
                for r in gi * group + 1..(gi + 1) * group {
                    let v = xv.data[r * cols + c];
                    if v > best {
                        best = v;
                        bi = r;
                    }
                }
                out[gi * cols + c] = best;
                arg[gi * cols + c] = bi;
            }
        }
        let mut shape = out_lead.to_vec();
        shape.push(cols);
        self.push_op(Tensor::new(shape, out), &[x], move |g, grads| {
            grads.accumulate_with(x, |d| {
                for (k, &r) in arg.iter().enumerate() {
                    d[r * cols + k % cols] += g.data[k];
                }
            });
        })
    }

    /// Copies `[N, C]` to `[N, k, C]`.
    pub fn repeat_mid(&self, x: Var, k: usize) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut out = Vec::with_capacity(rows * k * cols);
        for r in 0..rows {
            for _ in 0..k {
                out.extend_from_slice(&xv.data[r * cols..(r + 1) * cols]);
            }
        }
        let mut shape = xv.shape[..xv.shape.len() - 1].to_vec();
        shape.extend([k, cols]);
        self.push_op(Tensor::new(shape, out), &[x], move |g, grads| {
            grads.accumulate_with(x, |d| {
                for r in 0..rows {
                    for j in 0..k {
                        for c in 0..cols {
                            d[r * cols + c] += g.data[(r * k + j) * cols + c];
                        }
                    }
                }
            });
        })
    }

    /// `out[n] = A * x[n]` for `x: [N, J, C]` and a constant `J x J` matrix.
    pub fn mix_nodes(&self, x: Var, a: Rc<Vec<T>>) -> Var {
        let xv = self.value(x);
        let s = &xv.shape;
        assert!(s.len() >= 2, "mix_nodes needs [.., J, C]");
        let (j, c) = (s[s.len() - 2], s[s.len() - 1]);
        assert_eq!(a.len(), j * j, "adjacency size");
        let n = xv.numel() / (j * c);
        let mut out = vec![T::zero(); xv.numel()];
        for b in 0..n {
            let r = b * j * c..(b + 1) * j * c;
            matmul_into(&a, false, &xv.data[r.clone()], false, &mut out[r], j, j, c, false);
        }
        self.push_op(Tensor::new(xv.shape.clone(), out), &[x], move |g, grads| {
            grads.accumulate_with(x, |d| {
                for b in 0..n {
                    let r = b * j * c..(b + 1) * j * c;
                    matmul_into(&a, true, &g.data[r.clone()], false, &mut d[r], j, j, c, true);
                }
            });
        })
    }

    /// `out[b, t] = x[b, t - shift]` on `[B, T, ...]`, zero outside the window.
    pub fn time_shift(&self, x: Var, shift: isize) -> Var {
        let xv = self.value(x);
        let (bn, tn) = (xv.shape[0], xv.shape[1]);
        let f = xv.numel() / (bn * tn);
        let mut out = vec![T::zero(); xv.numel()];
        let src = |t: usize| -> Option<usize> {
            let s = t as isize - shift;
            (0..tn as isize).contains(&s).then_some(s as usize)
        };
        for b in 0..bn {
            for t in 0..tn {
                if let Some(s) = src(t) {
                    out[(b * tn + t) * f..(b * tn + t + 1) * f].copy_from_slice(&xv.data[(b * tn + s) * f..(b * tn + s + 1) * f]);
                }
            }
        }
        self.push_op(Tensor::new(xv.shape.clone(), out), &[x], move |g, grads| {
            grads.accumulate_with(x, |d| {
                for b in 0..bn {
                    for t in 0..tn {
                        let s = t as isize - shift;
                        if (0..tn as isize).contains(&s) {
                            let s = s as usize;
                            for k in 0..f {
                                d[(b * tn + s) * f + k] += g.data[(b * tn + t) * f + k];
                            }
                        }
                    }
                }
            });
        })
    }

    /// Stacks per-step `[B, C]` tensors into `[B, T, C]`.
    pub fn stack_time(&self, steps: &[Var]) -> Var {
        let vals: Vec<Rc<Tensor<T>>> = steps.iter().map(|v| self.value(*v)).collect();
        let (bn, c) = (vals[0].shape[0], vals[0].cols());
        let tn = steps.len();
        let mut out = vec![T::zero(); bn * tn * c];
        for (t, v) in vals.iter().enumerate() {
            for b in 0..bn {
                out[(b * tn + t) * c..(b * tn + t + 1) * c].copy_from_slice(&v.data[b * c..(b + 1) * c]);
            }
        }
        let steps = steps.to_vec();
        self.push_op(Tensor::new(vec![bn, tn, c], out), &steps.clone(), move |g, grads| {
            for (t, v) in steps.iter().enumerate() {
                grads.accumulate_with(*v, |d| {
                    for b in 0..bn {
                        for k in 0..c {
                            d[b * c + k] += g.data[(b * tn + t) * c + k];
                        }
                    }
                });
            }
        })
    }

    /// Per-channel normalization of `[N, C]` rows followed by `gamma, beta`.
    /// With `stats = None` batch statistics are used (biased variance) and
    /// returned as `(mean, biased variance)`; otherwise the given running
    /// statistics are applied as constants.
    pub fn batch_norm(&self, x: Var, gamma: Var, beta: Var, stats: Option<(&[T], &[T])>, eps: T) -> (Var, Option<(Vec<T>, Vec<T>)>) {
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let (rows, c) = (xv.rows(), xv.cols());
        assert_eq!(gv.numel(), c, "gamma size");
        let nrm = T::from_count(rows);
        let (mean, var, batch) = match stats {
            Some((m, v)) => (m.to_vec(), v.to_vec(), false),
            None => {
                let mut m = vec![T::zero(); c];
                for r in xv.data.chunks_exact(c) {
                    for (a, b) in m.iter_mut().zip(r) {
                        *a += *b;
                    }
                }
                m.iter_mut().for_each(|v| *v /= nrm);
                let mut v = vec![T::zero(); c];
                for r in xv.data.chunks_exact(c) {
                    for k in 0..c {
                        let d = r[k] - m[k];
                        v[k] += d * d;
                    }
                }
                v.iter_mut().for_each(|x| *x /= nrm);
                (m, v, true)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        let mut xhat = vec![T::zero(); xv.numel()];
        let mut out = vec![T::zero(); xv.numel()];
        for r in 0..rows {
            for k in 0..c {
                let i = r * c + k;
                xhat[i] = (xv.data[i] - mean[k]) * inv_std[k];
                out[i] = xhat[i] * gv.data[k] + bv.data[k];
            }
        }
        let ret_stats = batch.then(|| (mean.clone(), var.clone()));
        let node = self.push_op(Tensor::new(xv.shape.clone(), out), &[x, gamma, beta], move |g, grads| {
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            for r in 0..rows {
                for k in 0..c {
                    let i = r * c + k;
                    sum_g[k] += g.data[i];
                    sum_gx[k] += g.data[i] * xhat[i];
                }
            }
            grads.accumulate(gamma, &sum_gx);
            grads.accumulate(beta, &sum_g);
            grads.accumulate_with(x, |d| {
                for r in 0..rows {
                    for k in 0..c {
                        let i = r * c + k;
                        let s = gv.data[k] * inv_std[k];
                        d[i] += if batch { s * (g.data[i] - (sum_g[k] + xhat[i] * sum_gx[k]) / nrm) } else { s * g.data[i] };
                    }
                }
            });
        });
        (node, ret_stats)
    }

    /// `sum((x - target)^2)` as a scalar.
    pub fn sq_err_sum(&self, x: Var, target: Rc<Vec<T>>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.numel(), target.len(), "target size");
        let s = xv.data.iter().zip(target.iter()).fold(T::zero(), |acc, (a, b)| acc + (*a - *b) * (*a - *b));
        self.push_op(Tensor::scalar(s), &[x], move |g, grads| {
            let two_g = g.data[0] * T::lit(2.0);
            grads.accumulate_with(x, |d| {
                for i in 0..d.len() {
                    d[i] += two_g * (xv.data[i] - target[i]);
                }
            });
        })
    }
}
