//! Dense/embedding kernels, softmax cross-entropy, dropout and optimizers.
//!
//! Kernels are generic over the float type so that gradient checks can run
//! the exact same code in 64-bit precision.

use std::fmt::Debug;

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Scalar: Float + Default + Debug + Send + Sync + std::iter::Sum + 'static {
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// A trainable parameter with its gradient accumulator. Matrices are row-major `[rows, cols]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<T> {
    pub shape: Vec<usize>,
    pub values: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> ParamTensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), values: vec![T::zero(); n], grad: vec![T::zero(); n] }
    }

    pub fn from_values(shape: &[usize], values: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(Error::Dimension(format!("shape {shape:?} needs {n} values, got {}", values.len())));
        }
        Ok(Self { shape: shape.to_vec(), grad: vec![T::zero(); n], values })
    }

    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    pub fn glorot<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let mut t = Self::zeros(shape);
        let a = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
        for v in &mut t.values {
            *v = T::of(rng.random_range(-a..=a));
        }
        t
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> ParamTensor<U> {
        ParamTensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
            grad: self.grad.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    None,
}

fn matrix_dims<T>(w: &ParamTensor<T>) -> Result<(usize, usize)> {
    match w.shape.as_slice() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Dimension(format!("expected a matrix, got shape {s:?}"))),
    }
}

/// Dot product with a fixed eight-lane accumulation order.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] = acc[k] + x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s = s + *x * *y;
    }
    s
}

/// `y += a * x`
#[inline]
pub fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * *xi;
    }
}

/// `out = act(W x + b)` on raw slices; `w` is `[out.len(), x.len()]` row-major.
pub fn dense_into<T: Scalar>(w: &[T], b: &[T], x: &[T], act: Activation, out: &mut [T]) {
    let n = x.len();
    for (o, (row, &bias)) in out.iter_mut().zip(w.chunks_exact(n.max(1)).zip(b)) {
        let acc = if n > 0 { bias + dot(row, x) } else { bias };
        *o = match act {
            Activation::Relu if acc < T::zero() => T::zero(),
            _ => acc,
        };
    }
}

pub fn dense_forward<T: Scalar>(
    x: &[T],
    w: &ParamTensor<T>,
    b: &ParamTensor<T>,
    act: Activation,
) -> Result<Vec<T>> {
    let (rows, cols) = matrix_dims(w)?;
    if cols != x.len() || b.len() != rows {
        return Err(Error::Dimension(format!(
            "dense layer [{rows}x{cols}] with bias {} applied to input of length {}",
            b.len(),
            x.len()
        )));
    }
    let mut out = vec![T::zero(); rows];
    if cols == 0 {
        for (o, &bias) in out.iter_mut().zip(&b.values) {
            *o = if act == Activation::Relu && bias < T::zero() { T::zero() } else { bias };
        }
    } else {
        dense_into(&w.values, &b.values, x, act, &mut out);
    }
    Ok(out)
}

/// Backward pass of `dense_forward`. `y` is the forward output; `dy` the
/// incoming gradient. Accumulates into `w.grad`, `b.grad` and, if given, `dx`.
pub fn dense_backward<T: Scalar>(
    x: &[T],
    y: &[T],
    dy: &[T],
    w: &mut ParamTensor<T>,
    b: &mut ParamTensor<T>,
    act: Activation,
    dx: Option<&mut [T]>,
) -> Result<()> {
    let (rows, cols) = matrix_dims(w)?;
    if cols != x.len() || rows != y.len() || rows != dy.len() || b.len() != rows {
        return Err(Error::Dimension("dense backward shapes disagree".into()));
    }
    let mut dz: Vec<T> = dy.to_vec();
    if act == Activation::Relu {
        for (g, &o) in dz.iter_mut().zip(y) {
            if o <= T::zero() {
                *g = T::zero();
            }
        }
    }
    for (gb, &g) in b.grad.iter_mut().zip(&dz) {
        *gb = *gb + g;
    }
    if cols == 0 {
        return Ok(());
    }
    for (grow, &g) in w.grad.chunks_exact_mut(cols).zip(&dz) {
        if g != T::zero() {
            for (gw, &xi) in grow.iter_mut().zip(x) {
                *gw = *gw + g * xi;
            }
        }
    }
    if let Some(dx) = dx {
        if dx.len() != cols {
            return Err(Error::Dimension("dx length differs from input".into()));
        }
        for (row, &g) in w.values.chunks_exact(cols).zip(&dz) {
            if g != T::zero() {
                for (d, &wv) in dx.iter_mut().zip(row) {
                    *d = *d + g * wv;
                }
            }
        }
    }
    Ok(())
}

pub fn embedding_forward<T: Scalar>(index: usize, e: &ParamTensor<T>) -> Result<&[T]> {
    let (rows, cols) = matrix_dims(e)?;
    if index >= rows {
        return Err(Error::Dimension(format!("embedding index {index} out of range for {rows} rows")));
    }
    Ok(&e.values[index * cols..(index + 1) * cols])
}

pub fn embedding_backward<T: Scalar>(index: usize, dy: &[T], e: &mut ParamTensor<T>) -> Result<()> {
    let (rows, cols) = matrix_dims(e)?;
    if index >= rows || dy.len() != cols {
        return Err(Error::Dimension(format!("embedding backward index {index} or width {} invalid", dy.len())));
    }
    for (g, &d) in e.grad[index * cols..(index + 1) * cols].iter_mut().zip(dy) {
        *g = *g + d;
    }
    Ok(())
}

/// In-place softmax with max subtraction.
pub fn softmax_in_place<T: Scalar>(v: &mut [T]) {
    let m = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s = s + *x;
    }
    for x in v.iter_mut() {
        *x = *x / s;
    }
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    p
}

/// Returns `(-ln p[target], p - onehot(target))`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], target: usize) -> (T, Vec<T>) {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&z| (z - m).exp()).sum::<T>().ln() + m;
    let loss = lse - logits[target];
    let mut grad: Vec<T> = logits.iter().map(|&z| (z - lse).exp()).collect();
    grad[target] = grad[target] - T::one();
    (loss, grad)
}

/// Inverted dropout: each entry is 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<T> {
    if rate <= 0.0 {
        return vec![T::one(); len];
    }
    let keep = T::of(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect()
}

/// Pairwise sum of equal-length buffers with a fixed combination tree.
pub fn tree_sum<T: Scalar>(mut parts: Vec<Vec<T>>) -> Option<Vec<T>> {
    if parts.is_empty() {
        return None;
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x = *x + *y;
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop()
}

fn check_finite<T: Scalar>(params: &[ParamTensor<T>]) -> Result<()> {
    for (i, p) in params.iter().enumerate() {
        if p.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of parameter {i}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// One bias-corrected step. Gradients are zeroed afterwards; a
    /// non-finite gradient rejects the step and leaves parameters as they were.
    pub fn step(&mut self, params: &mut [ParamTensor<T>]) -> Result<()> {
        check_finite(params)?;
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::of(1.0 - self.beta2.powi(self.t as i32));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        let one = T::one();
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for (((x, g), mi), vi) in p.values.iter_mut().zip(&mut p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * *g;
                *vi = b2 * *vi + (one - b2) * *g * *g;
                let mh = *mi / c1;
                let vh = *vi / c2;
                *x = *x - lr * mh / (vh.sqrt() + eps);
                *g = T::zero();
            }
        }
        Ok(())
    }
}

/// Plain gradient descent; zeroes gradients afterwards.
pub fn sgd_step<T: Scalar>(params: &mut [ParamTensor<T>], lr: f64) -> Result<()> {
    check_finite(params)?;
    let lr = T::of(lr);
    for p in params {
        for (x, g) in p.values.iter_mut().zip(&mut p.grad) {
            *x = *x - lr * *g;
            *g = T::zero();
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpConfig {
    pub enabled: bool,
    pub clip_norm: f64,
    pub noise_multiplier: f64,
    /// Informational only; not computed here.
    pub reported_epsilon: Option<f64>,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self { enabled: false, clip_norm: 1.0, noise_multiplier: 1.0, reported_epsilon: None }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::Config(format!("clip_norm must be positive, got {}", self.clip_norm)));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::Config("noise_multiplier must be non-negative".into()));
        }
        Ok(())
    }
}

/// Rescales a full per-example gradient to L2 norm at most `clip`.
pub fn clip_in_place<T: Scalar>(grads: &mut [Vec<T>], clip: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > clip {
        let f = T::of(clip / norm);
        for g in grads.iter_mut().flat_map(|g| g.iter_mut()) {
            *g = *g * f;
        }
    }
    norm
}

/// Clipped-sum accumulator for one DP-SGD batch.
pub struct DpAccumulator<T> {
    sum: Vec<Vec<T>>,
    count: usize,
    clip: f64,
}

impl<T: Scalar> DpAccumulator<T> {
    pub fn new(params: &[ParamTensor<T>], dp: &DpConfig) -> Result<Self> {
        dp.validate()?;
        Ok(Self {
            sum: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            count: 0,
            clip: dp.clip_norm,
        })
    }

    pub fn add(&mut self, mut example: Vec<Vec<T>>) -> Result<()> {
        if example.len() != self.sum.len() || example.iter().zip(&self.sum).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Dimension("per-example gradient shape differs from parameters".into()));
        }
        if example.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("per-example gradient".into()));
        }
        clip_in_place(&mut example, self.clip);
        for (s, e) in self.sum.iter_mut().zip(&example) {
            for (a, b) in s.iter_mut().zip(e) {
                *a = *a + *b;
            }
        }
        self.count += 1;
        Ok(())
    }

    /// Merges another accumulator built for the same batch.
    pub fn merge(&mut self, other: DpAccumulator<T>) {
        for (s, e) in self.sum.iter_mut().zip(other.sum) {
            for (a, b) in s.iter_mut().zip(e) {
                *a = *a + b;
            }
        }
        self.count += other.count;
    }

    /// Adds noise, averages and applies an SGD step.
    pub fn apply<R: Rng + ?Sized>(
        self,
        params: &mut [ParamTensor<T>],
        dp: &DpConfig,
        lr: f64,
        rng: &mut R,
    ) -> Result<()> {
        dp_noisy_step(params, self.sum, self.count, dp, lr, rng)
    }
}

/// Given the sum of `count` clipped per-example gradients, adds Gaussian
/// noise of std `σC` per coordinate, divides by `count` and takes an SGD step.
pub fn dp_noisy_step<T: Scalar, R: Rng + ?Sized>(
    params: &mut [ParamTensor<T>],
    clipped_sum: Vec<Vec<T>>,
    count: usize,
    dp: &DpConfig,
    lr: f64,
    rng: &mut R,
) -> Result<()> {
    if count == 0 {
        return Err(Error::Training("DP-SGD step on an empty batch".into()));
    }
    let std = dp.noise_multiplier * dp.clip_norm;
    let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
    let b = count as f64;
    for (p, s) in params.iter_mut().zip(clipped_sum) {
        for (g, v) in p.grad.iter_mut().zip(s) {
            let noise = if std > 0.0 { normal.sample(rng) } else { 0.0 };
            *g = T::of((v.as_f64() + noise) / b);
        }
    }
    sgd_step(params, lr)
}

/// Clip each example, sum, add N(0, (σC)²) noise, divide by batch size, step.
pub fn dp_sgd_step<T: Scalar, R: Rng + ?Sized>(
    params: &mut [ParamTensor<T>],
    per_example: Vec<Vec<Vec<T>>>,
    dp: &DpConfig,
    lr: f64,
    rng: &mut R,
) -> Result<()> {
    if per_example.is_empty() {
        return Err(Error::Training("DP-SGD step on an empty batch".into()));
    }
    let mut acc = DpAccumulator::new(params, dp)?;
    for ex in per_example {
        acc.add(ex)?;
    }
    acc.apply(params, dp, lr, rng)
}
