//! Parameter storage, forward context (train/eval behavior of batch norm and
//! dropout), initializers and the Adam optimizer.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Grads, Graph, Tensor, Var};
use crate::scalar::Scalar;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Named trainable tensors plus non-trainable buffers (batch-norm running
/// statistics, fixed model constants).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    pub params: BTreeMap<String, Tensor<T>>,
    pub buffers: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: BTreeMap::new(), buffers: BTreeMap::new() }
    }

    pub fn param(&self, name: &str) -> &Tensor<T> {
        self.params.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn buffer(&self, name: &str) -> &Tensor<T> {
        self.buffers.get(name).unwrap_or_else(|| panic!("unknown buffer {name}"))
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(|t| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Registers `prefix.weight [din, dout]` and `prefix.bias [dout]` with
    /// uniform `+-scale/sqrt(din)` initialization.
    pub fn add_linear(&mut self, rng: &mut ChaCha8Rng, prefix: &str, din: usize, dout: usize, scale: f64) {
        let bound = scale / (din as f64).sqrt();
        self.params.insert(format!("{prefix}.weight"), uniform(rng, &[din, dout], bound));
        self.params.insert(format!("{prefix}.bias"), uniform(rng, &[dout], bound));
    }

    pub fn add_batch_norm(&mut self, prefix: &str, c: usize) {
        self.params.insert(format!("{prefix}.gamma"), Tensor::full(&[c], T::one()));
        self.params.insert(format!("{prefix}.beta"), Tensor::zeros(&[c]));
        self.buffers.insert(format!("{prefix}.running_mean"), Tensor::zeros(&[c]));
        self.buffers.insert(format!("{prefix}.running_var"), Tensor::full(&[c], T::one()));
    }
}

pub fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 })).collect();
    Tensor::new(shape.to_vec(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

struct BnUpdate<T> {
    prefix: String,
    mean: Vec<T>,
    var: Vec<T>,
    count: usize,
}

/// One forward pass: binds parameters into a graph and applies layers.
pub struct Ctx<'a, T: Scalar> {
    pub graph: &'a Graph<T>,
    pub store: &'a ParamStore<T>,
    pub mode: Mode,
    dropout: f64,
    track_grads: bool,
    rng: RefCell<ChaCha8Rng>,
    leaves: RefCell<BTreeMap<String, Var>>,
    bn_updates: RefCell<Vec<BnUpdate<T>>>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(graph: &'a Graph<T>, store: &'a ParamStore<T>, mode: Mode, dropout: f64, seed: u64, track_grads: bool) -> Self {
        Self {
            graph,
            store,
            mode,
            dropout,
            track_grads,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
            leaves: RefCell::new(BTreeMap::new()),
            bn_updates: RefCell::new(Vec::new()),
        }
    }

    /// Graph leaf for a named parameter (created once per pass).
    pub fn p(&self, name: &str) -> Var {
        if let Some(v) = self.leaves.borrow().get(name) {
            return *v;
        }
        let t = self.store.param(name).clone();
        let v = if self.track_grads { self.graph.param(t) } else { self.graph.constant(t) };
        self.leaves.borrow_mut().insert(name.to_string(), v);
        v
    }

    pub fn has(&self, name: &str) -> bool {
        self.store.params.contains_key(name)
    }

    pub fn linear(&self, x: Var, prefix: &str) -> Var {
        let b = format!("{prefix}.bias");
        let b = self.has(&b).then(|| self.p(&b));
        self.graph.linear(x, self.p(&format!("{prefix}.weight")), b)
    }

    /// Batch norm over every row of the last dimension.
    pub fn batch_norm(&self, x: Var, prefix: &str) -> Var {
        let gamma = self.p(&format!("{prefix}.gamma"));
        let beta = self.p(&format!("{prefix}.beta"));
        let eps = T::lit(BN_EPS);
        match self.mode {
            Mode::Train => {
                let (y, stats) = self.graph.batch_norm(x, gamma, beta, None, eps);
                let (mean, var) = stats.expect("batch statistics");
                let count = self.graph.value(x).rows();
                self.bn_updates.borrow_mut().push(BnUpdate { prefix: prefix.to_string(), mean, var, count });
                y
            }
            Mode::Eval => {
                let m = &self.store.buffer(&format!("{prefix}.running_mean")).data;
                let v = &self.store.buffer(&format!("{prefix}.running_var")).data;
                self.graph.batch_norm(x, gamma, beta, Some((m, v)), eps).0
            }
        }
    }

    /// Inverted dropout in training mode, identity in eval mode.
    pub fn dropout(&self, x: Var) -> Var {
        if self.mode == Mode::Eval || self.dropout <= 0.0 {
            return x;
        }
        let n = self.graph.value(x).numel();
        let keep = 1.0 - self.dropout;
        let scale = T::lit(1.0 / keep);
        let mut rng = self.rng.borrow_mut();
        let mask: Vec<T> = (0..n).map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() }).collect();
        self.graph.mul_const(x, Rc::new(mask))
    }

    /// Parameter gradients of this pass, keyed by name.
    pub fn param_grads(&self, grads: &mut Grads<T>) -> BTreeMap<String, Tensor<T>> {
        let leaves = self.leaves.borrow();
        let mut out = BTreeMap::new();
        for (name, v) in leaves.iter() {
            let g = grads.take(*v).unwrap_or_else(|| Tensor::zeros(&self.store.param(name).shape));
            out.insert(name.clone(), g);
        }
        out
    }

    /// Batch statistics recorded by this pass: `(prefix, mean, unbiased var)`.
    pub fn batch_stats(&self) -> Vec<(String, Vec<T>, Vec<T>)> {
        self.bn_updates
            .borrow()
            .iter()
            .map(|u| {
                let unbias = if u.count > 1 { T::from_count(u.count) / T::from_count(u.count - 1) } else { T::one() };
                (u.prefix.clone(), u.mean.clone(), u.var.iter().map(|v| *v * unbias).collect())
            })
            .collect()
    }

    /// Folds the batch statistics of this pass into the running buffers
    /// (unbiased variance, momentum 0.1).
    pub fn apply_bn_updates(&self, store: &mut ParamStore<T>) {
        let m = T::lit(BN_MOMENTUM);
        for u in self.bn_updates.borrow().iter() {
            let unbias = if u.count > 1 { T::from_count(u.count) / T::from_count(u.count - 1) } else { T::one() };
            let rm = store.buffers.get_mut(&format!("{}.running_mean", u.prefix)).expect("running mean");
            for (r, b) in rm.data.iter_mut().zip(&u.mean) {
                *r = (T::one() - m) * *r + m * *b;
            }
            let rv = store.buffers.get_mut(&format!("{}.running_var", u.prefix)).expect("running var");
            for (r, b) in rv.data.iter_mut().zip(&u.var) {
                *r = (T::one() - m) * *r + m * *b * unbias;
            }
        }
    }
}

/// Adam with coupled L2 weight decay (`g += weight_decay * w`).
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: BTreeMap<String, Vec<T>>,
    v: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &BTreeMap<String, Tensor<T>>) {
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(self.step as i32));
        let c2 = T::lit(1.0 - self.beta2.powi(self.step as i32));
        let (lr, eps, wd) = (T::lit(self.lr), T::lit(self.eps), T::lit(self.weight_decay));
        for (name, g) in grads {
            let w = store.params.get_mut(name).expect("gradient for unknown parameter");
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![T::zero(); g.numel()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![T::zero(); g.numel()]);
            for i in 0..g.numel() {
                let gi = g.data[i] + wd * w.data[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                w.data[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::<f64>::new();
        store.params.insert("w".into(), Tensor::new(vec![2], vec![1.0, -1.0]));
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), Tensor::new(vec![2], vec![0.5, -3.0]));
        let mut adam = Adam::new(0.01, 0.0);
        adam.update(&mut store, &grads);
        // bias-corrected first step is lr * sign(g)
        let w = &store.param("w").data;
        assert!((w[0] - 0.99).abs() < 1e-9 && (w[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn adam_minimizes_quadratic_with_decay() {
        let mut store = ParamStore::<f64>::new();
        store.params.insert("w".into(), Tensor::new(vec![1], vec![3.0]));
        let mut adam = Adam::new(0.05, 0.1);
        for _ in 0..2000 {
            let w = store.param("w").data[0];
            let mut grads = BTreeMap::new();
            grads.insert("w".to_string(), Tensor::new(vec![1], vec![2.0 * (w - 1.0)]));
            adam.update(&mut store, &grads);
        }
        // minimizer of (w-1)^2 + 0.05 w^2
        let w = store.param("w").data[0];
        assert!((w - 2.0 / 2.1).abs() < 1e-2, "{w}");
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut store = ParamStore::<f64>::new();
        store.add_batch_norm("bn", 1);
        let g = Graph::new();
        let ctx = Ctx::new(&g, &store, Mode::Train, 0.0, 0, true);
        let x = g.constant(Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]));
        ctx.batch_norm(x, "bn");
        let mut updated = store.clone();
        ctx.apply_bn_updates(&mut updated);
        assert!((updated.buffer("bn.running_mean").data[0] - 0.25).abs() < 1e-12);
        // unbiased variance of 1..4 is 5/3
        assert!((updated.buffer("bn.running_var").data[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn dropout_is_identity_in_eval_and_seeded_in_train() {
        let store = ParamStore::<f64>::new();
        let g = Graph::new();
        let x = g.constant(Tensor::full(&[1000], 1.0));
        let eval = Ctx::new(&g, &store, Mode::Eval, 0.5, 1, false);
        assert_eq!(eval.dropout(x), x);
        let a = g.value(Ctx::new(&g, &store, Mode::Train, 0.5, 7, false).dropout(x));
        let b = g.value(Ctx::new(&g, &store, Mode::Train, 0.5, 7, false).dropout(x));
        assert_eq!(a, b);
        let kept = a.data.iter().filter(|v| **v > 0.0).count();
        assert!((400..600).contains(&kept));
        assert!(a.data.iter().all(|v| *v == 0.0 || *v == 2.0));
    }
}
