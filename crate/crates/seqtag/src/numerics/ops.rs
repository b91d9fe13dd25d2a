//! Differentiable primitives: forward functions paired with explicit
//! backward functions that accumulate into caller-provided buffers.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Matrix product of a [m x k] and b [k x n].
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (p, &av) in arow.iter().enumerate() {
            let brow = b.row(p);
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

/// Accumulates dL/da += d_out * b^T and dL/db += a^T * d_out.
pub fn matmul_backward(a: &Tensor, b: &Tensor, d_out: &Tensor, da: &mut Tensor, db: &mut Tensor) {
    let (m, k) = (a.rows(), a.cols());
    let n = b.cols();
    debug_assert_eq!(d_out.shape(), &[m, n]);
    for i in 0..m {
        let drow = d_out.row(i);
        let darow = da.row_mut(i);
        for p in 0..k {
            let brow = b.row(p);
            let mut acc = 0.0;
            for (dv, bv) in drow.iter().zip(brow.iter()) {
                acc += dv * bv;
            }
            darow[p] += acc;
        }
        let arow = a.row(i);
        for (p, &av) in arow.iter().enumerate() {
            let dbrow = db.row_mut(p);
            for (dbv, &dv) in dbrow.iter_mut().zip(drow.iter()) {
                *dbv += av * dv;
            }
        }
    }
}

/// Elementwise logistic sigmoid 1 / (1 + e^-x).
pub fn sigmoid(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| sigmoid_scalar(v)).collect();
    Tensor::from_vec(x.shape(), data).expect("shape preserved")
}

pub fn sigmoid_scalar(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// dx += d_y * y * (1 - y), where y = sigmoid(x).
pub fn sigmoid_backward(y: &Tensor, d_y: &Tensor, dx: &mut Tensor) {
    for ((g, &yv), &dv) in dx
        .data_mut()
        .iter_mut()
        .zip(y.data().iter())
        .zip(d_y.data().iter())
    {
        *g += dv * yv * (1.0 - yv);
    }
}

/// Elementwise hyperbolic tangent.
pub fn tanh_op(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.tanh()).collect();
    Tensor::from_vec(x.shape(), data).expect("shape preserved")
}

/// dx += d_y * (1 - y^2), where y = tanh(x).
pub fn tanh_backward(y: &Tensor, d_y: &Tensor, dx: &mut Tensor) {
    for ((g, &yv), &dv) in dx
        .data_mut()
        .iter_mut()
        .zip(y.data().iter())
        .zip(d_y.data().iter())
    {
        *g += dv * (1.0 - yv * yv);
    }
}

/// Numerically stable log(sum(exp(x))) over a nonempty slice.
pub fn logsumexp(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::domain("logsumexp of empty input"));
    }
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        // all -inf collapses to -inf; +inf propagates
        return Ok(m);
    }
    let s: f64 = xs.iter().map(|&v| (v - m).exp()).sum();
    Ok(m + s.ln())
}

/// Softmax weights of a slice, written into `out` (same length).
pub fn softmax_into(xs: &[f64], out: &mut [f64]) {
    debug_assert_eq!(xs.len(), out.len());
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(xs.iter()) {
        let e = (v - m).exp();
        *o = e;
        total += e;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

// Vector helpers used by the layer implementations. They carry the same
// accumulate-into-buffers convention as the tensor ops above.

/// w [m x k] * x [k] -> [m]
pub(crate) fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.cols(), x.len());
    (0..w.rows())
        .map(|r| {
            w.row(r)
                .iter()
                .zip(x.iter())
                .map(|(&a, &b)| a * b)
                .sum::<f64>()
        })
        .collect()
}

/// dx += w^T * dy
pub(crate) fn matvec_backward_input(w: &Tensor, dy: &[f64], dx: &mut [f64]) {
    debug_assert_eq!(w.rows(), dy.len());
    debug_assert_eq!(w.cols(), dx.len());
    for (r, &d) in dy.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        for (g, &wv) in dx.iter_mut().zip(w.row(r).iter()) {
            *g += wv * d;
        }
    }
}

/// dw += dy (outer) x
pub(crate) fn add_outer(dw: &mut Tensor, dy: &[f64], x: &[f64]) {
    debug_assert_eq!(dw.rows(), dy.len());
    debug_assert_eq!(dw.cols(), x.len());
    for (r, &d) in dy.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        for (g, &xv) in dw.row_mut(r).iter_mut().zip(x.iter()) {
            *g += d * xv;
        }
    }
}
