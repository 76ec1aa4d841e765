//! Dense row-major `f64` tensors and the handful of kernels the models need.
//!
//! Layers keep their own forward caches and write gradients into a parameter
//! container of the same type, so most of the math here works on plain
//! slices. [`Tensor`] still carries an optional gradient slot, used by the
//! op-level API ([`matmul_backward`]) and by callers that want to park a
//! gradient next to its value.

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension(format!(
                "shape {shape:?} must have at least one dimension, all positive"
            )));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {n} values, got {}",
                values.len()
            )));
        }
        Ok(Self { shape, values, grad: None })
    }

    /// Panics on a zero dimension; use [`Tensor::new`] for checked construction.
    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape.to_vec(), vec![0.0; shape.iter().product()])
            .expect("zeros: invalid shape")
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        Self::new(vec![values.len()], values)
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], values)
    }

    /// Glorot/Xavier uniform init: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    pub fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut t = Self::zeros(shape);
        for v in t.values.iter_mut() {
            *v = rng.uniform(-a, a);
        }
        t
    }

    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let mut t = Self::zeros(shape);
        for v in t.values.iter_mut() {
            *v = rng.uniform(lo, hi);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() > 1 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.values[i * c..(i + 1) * c]
    }

    pub fn fill(&mut self, v: f64) {
        self.values.iter_mut().for_each(|x| *x = v);
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Gradient slot, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        let n = self.values.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.values.len() {
            return Err(Error::Dimension(format!(
                "gradient of length {} for tensor of shape {:?}",
                grad.len(),
                self.shape
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn require_matrix(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    if t.shape.len() != 2 {
        return Err(Error::Dimension(format!("{what} must be 2-D, got shape {:?}", t.shape)));
    }
    Ok((t.shape[0], t.shape[1]))
}

/// Matrix product `a · b` of an `m×k` and a `k×n` tensor.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_matrix(a, "left operand")?;
    let (k2, n) = require_matrix(b, "right operand")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul of {:?} by {:?}: inner dimensions differ",
            a.shape, b.shape
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a.values[i * k + p];
            axpy(aip, &b.values[p * n..(p + 1) * n], orow);
        }
    }
    Tensor::matrix(m, n, out)
}

/// Accumulates `dL/da = g · bᵀ` and `dL/db = aᵀ · g` into the gradient slots.
pub fn matmul_backward(a: &mut Tensor, b: &mut Tensor, grad_out: &Tensor) -> Result<()> {
    let (m, k) = require_matrix(a, "left operand")?;
    let (k2, n) = require_matrix(b, "right operand")?;
    if k != k2 || grad_out.shape != [m, n] {
        return Err(Error::Dimension(format!(
            "matmul backward with a={:?}, b={:?}, grad={:?}",
            a.shape, b.shape, grad_out.shape
        )));
    }
    let g = &grad_out.values;
    {
        let bv = &b.values;
        let ga = a.grad_mut();
        for i in 0..m {
            for p in 0..k {
                ga[i * k + p] += dot(&g[i * n..(i + 1) * n], &bv[p * n..(p + 1) * n]);
            }
        }
    }
    let av = a.values.clone();
    let gb = b.grad_mut();
    for i in 0..m {
        for p in 0..k {
            axpy(av[i * k + p], &g[i * n..(i + 1) * n], &mut gb[p * n..(p + 1) * n]);
        }
    }
    Ok(())
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Dimension("softmax of an empty vector".into()));
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    Ok(out)
}

/// Pulls a gradient w.r.t. softmax outputs back to its inputs:
/// `dx = p ⊙ (g − ⟨g, p⟩)`.
pub fn softmax_backward(probs: &[f64], grad_probs: &[f64]) -> Vec<f64> {
    let inner = dot(probs, grad_probs);
    probs.iter().zip(grad_probs).map(|(p, g)| p * (g - inner)).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Index of the largest entry; ties resolve to the smallest index.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = i;
        }
    }
    best
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = W x` for a row-major `rows×cols` matrix.
pub(crate) fn matvec(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), cols);
    debug_assert_eq!(w.len(), out.len() * cols);
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(&w[i * cols..(i + 1) * cols], x);
    }
}

/// `out += Wᵀ g` for a row-major `rows×cols` matrix.
pub(crate) fn matvec_t_acc(w: &[f64], cols: usize, g: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), cols);
    for (i, &gi) in g.iter().enumerate() {
        if gi != 0.0 {
            axpy(gi, &w[i * cols..(i + 1) * cols], out);
        }
    }
}

/// `G += g xᵀ` for a row-major `g.len()×x.len()` gradient matrix.
pub(crate) fn outer_acc(grad: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    for (i, &gi) in g.iter().enumerate() {
        if gi != 0.0 {
            axpy(gi, x, &mut grad[i * cols..(i + 1) * cols]);
        }
    }
}
