//! Composite operations assembled from the graph primitives. Their gradients
//! come from the primitives, so they are twice differentiable for free.

use std::sync::Arc;

use super::graph::{Graph, Var, GATHER_PAD};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Logit added to disallowed attention positions.
pub const MASKED_LOGIT: f64 = -1e9;

impl Graph {
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.sum_to(a, &[])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Sum over the last axis, keeping it with size 1.
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let mut shape = self.shape(a).to_vec();
        match shape.last_mut() {
            Some(l) => *l = 1,
            None => return Ok(a),
        }
        self.sum_to(a, &shape)
    }

    pub fn mean_last(&mut self, a: Var) -> Result<Var> {
        let d = *self.shape(a).last().unwrap_or(&1) as f64;
        let s = self.sum_last(a)?;
        self.scale(s, 1.0 / d)
    }

    /// Mean over the rows of a 2-D tensor, giving `[1, cols]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(Error::shape("mean_rows", format!("expected 2-D, got {shape:?}")));
        }
        let s = self.sum_to(a, &[1, shape[1]])?;
        self.scale(s, 1.0 / shape[0] as f64)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    /// Softmax over the last axis. The row max is subtracted as a
    /// non-differentiable shift, which leaves the gradient exact.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let m = self.max_last(a)?;
        let shifted = self.sub(a, m)?;
        let e = self.exp(shifted)?;
        let s = self.sum_last(e)?;
        self.div(e, s)
    }

    /// Normalize over the last axis to zero mean and unit variance, without
    /// the affine part.
    pub fn normalize_last(&mut self, a: Var, eps: f64) -> Result<Var> {
        let mu = self.mean_last(a)?;
        let xc = self.sub(a, mu)?;
        let sq = self.mul(xc, xc)?;
        let var = self.mean_last(sq)?;
        let eps = self.scalar(eps);
        let ve = self.add(var, eps)?;
        let sd = self.sqrt(ve)?;
        self.div(xc, sd)
    }

    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let n = self.normalize_last(a, eps)?;
        let s = self.mul(n, gamma)?;
        self.add(s, beta)
    }

    /// `x · Wᵀ + b` with `W` stored as `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul_t(x, w, false, true)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    /// Scaled dot-product attention for one head.
    ///
    /// `q` is `[Lq, d]`, `k` and `v` are `[Lk, d]`. `mask`, when given, is a
    /// `[Lq, Lk]` boolean grid of allowed positions; disallowed logits get
    /// [`MASKED_LOGIT`] before the softmax.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, mask: Option<&AttentionMask>) -> Result<Var> {
        let d = *self.shape(q).last().unwrap_or(&1);
        let lq = self.shape(q)[0];
        let lk = self.shape(k)[0];
        let logits = self.matmul_t(q, k, false, true)?;
        let mut logits = self.scale(logits, 1.0 / (d as f64).sqrt())?;
        if let Some(m) = mask {
            if m.rows != lq || m.cols != lk {
                return Err(Error::shape("attention", format!("mask {}x{} for logits {lq}x{lk}", m.rows, m.cols)));
            }
            let bias = self.constant(m.additive());
            logits = self.add(logits, bias)?;
        }
        let weights = self.softmax(logits)?;
        self.matmul(weights, v)
    }

    /// Concatenate tensors of equal rank along `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?).to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} for rank {}", first.len())));
        }
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i]) {
                return Err(Error::shape("concat", format!("{s:?} vs {first:?} on axis {axis}")));
            }
            out_shape[axis] += s[axis];
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let out_axis = out_shape[axis];
        let mut acc: Option<Var> = None;
        let mut start = 0;
        for &p in parts {
            let len = self.shape(p)[axis];
            let mut index = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                for a in 0..len {
                    for i in 0..inner {
                        index.push((o * out_axis + start + a) * inner + i);
                    }
                }
            }
            let placed = self.scatter_add(p, Arc::from(index), &out_shape)?;
            acc = Some(match acc {
                None => placed,
                Some(prev) => self.add(prev, placed)?,
            });
            start += len;
        }
        Ok(acc.expect("at least two parts"))
    }

    /// Rows `start..start + len` of a 2-D tensor.
    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 || start + len > shape[0] {
            return Err(Error::shape("rows", format!("rows {start}..{} of {shape:?}", start + len)));
        }
        self.slice(a, start * shape[1], &[len, shape[1]])
    }

    /// Select rows of a 2-D table by index (embedding lookup).
    pub fn lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(Error::shape("lookup", format!("table must be 2-D, got {shape:?}")));
        }
        let d = shape[1];
        let mut index = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= shape[0] {
                return Err(Error::shape("lookup", format!("id {id} out of {}", shape[0])));
            }
            index.extend((0..d).map(|j| id * d + j));
        }
        self.gather(table, Arc::from(index), &[ids.len(), d])
    }

    /// 2-D convolution, stride 1, zero padding that preserves the grid size.
    ///
    /// `x` is channels-last `[H, W, C_in]`; `kernel` is `[C_out, C_in·k·k]`
    /// with taps ordered (channel, dy, dx); `bias` is `[C_out]`. The result is
    /// `[H·W, C_out]`, cells flattened row-major, which is the token layout the
    /// spatial attention consumes.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Option<Var>, k: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::shape("conv2d", format!("input must be [H, W, C], got {xs:?}")));
        }
        if k.is_multiple_of(2) {
            return Err(Error::shape("conv2d", format!("kernel size {k} must be odd")));
        }
        let (h, w, c) = (xs[0], xs[1], xs[2]);
        let ks = self.shape(kernel).to_vec();
        if ks.len() != 2 || ks[1] != c * k * k {
            return Err(Error::shape("conv2d", format!("kernel {ks:?} does not match {c} channels with {k}x{k} taps")));
        }
        let half = (k / 2) as isize;
        let mut index = Vec::with_capacity(h * w * c * k * k);
        for r in 0..h as isize {
            for col in 0..w as isize {
                for ch in 0..c {
                    for dy in -half..=half {
                        for dx in -half..=half {
                            let (rr, cc) = (r + dy, col + dx);
                            if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                                index.push(GATHER_PAD);
                            } else {
                                index.push((rr as usize * w + cc as usize) * c + ch);
                            }
                        }
                    }
                }
            }
        }
        let cols = self.gather(x, Arc::from(index), &[h * w, c * k * k])?;
        self.linear(cols, kernel, bias)
    }

    /// Elementwise multiply by a constant mask tensor.
    pub fn mul_const(&mut self, a: Var, mask: Tensor) -> Result<Var> {
        let m = self.constant(mask);
        self.mul(a, m)
    }

    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }
}

/// Boolean attention mask, `allowed[i * cols + j]` for query i and key j.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMask {
    pub rows: usize,
    pub cols: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    /// Query i may attend to keys `0..=i`.
    pub fn causal(n: usize) -> Self {
        let mut allowed = vec![false; n * n];
        for i in 0..n {
            for j in 0..=i {
                allowed[i * n + j] = true;
            }
        }
        Self { rows: n, cols: n, allowed }
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    fn additive(&self) -> Tensor {
        let data = self.allowed.iter().map(|&a| if a { 0.0 } else { MASKED_LOGIT }).collect();
        Tensor::from_parts(vec![self.rows, self.cols], data)
    }
}
