//! Slice-level kernels shared by the tape and the functional ops.

use super::Float;

/// `a` is m×k, `b` is k×n; returns m×n.
pub(crate) fn matmul(a: &[Float], b: &[Float], m: usize, k: usize, n: usize) -> Vec<Float> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a[i * k + p];
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }
    out
}

/// `a` is m×k, `b` is n×k; returns a·bᵀ (m×n).
pub(crate) fn matmul_bt(a: &[Float], b: &[Float], m: usize, k: usize, n: usize) -> Vec<Float> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// `a` is k×m, `b` is k×n; returns aᵀ·b (m×n).
pub(crate) fn matmul_at(a: &[Float], b: &[Float], k: usize, m: usize, n: usize) -> Vec<Float> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_pi * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose(a: &[Float], rows: usize, cols: usize) -> Vec<Float> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Max-subtracted softmax over a strided lane of `len` entries.
pub(crate) fn softmax_lane(
    x: &[Float],
    out: &mut [Float],
    offset: usize,
    stride: usize,
    len: usize,
) {
    let max = (0..len)
        .map(|i| x[offset + i * stride])
        .fold(Float::NEG_INFINITY, Float::max);
    let mut sum = 0.0;
    for i in 0..len {
        let e = (x[offset + i * stride] - max).exp();
        out[offset + i * stride] = e;
        sum += e;
    }
    for i in 0..len {
        out[offset + i * stride] /= sum;
    }
}

pub(crate) fn log_softmax_lane(
    x: &[Float],
    out: &mut [Float],
    offset: usize,
    stride: usize,
    len: usize,
) {
    let max = (0..len)
        .map(|i| x[offset + i * stride])
        .fold(Float::NEG_INFINITY, Float::max);
    let sum: Float = (0..len).map(|i| (x[offset + i * stride] - max).exp()).sum();
    let log_z = max + sum.ln();
    for i in 0..len {
        out[offset + i * stride] = x[offset + i * stride] - log_z;
    }
}

pub(crate) fn softmax_rows(x: &[Float], cols: usize) -> Vec<Float> {
    let mut out = vec![0.0; x.len()];
    for r in 0..x.len() / cols {
        softmax_lane(x, &mut out, r * cols, 1, cols);
    }
    out
}

pub(crate) fn log_softmax_rows(x: &[Float], cols: usize) -> Vec<Float> {
    let mut out = vec![0.0; x.len()];
    for r in 0..x.len() / cols {
        log_softmax_lane(x, &mut out, r * cols, 1, cols);
    }
    out
}

const GELU_COEFF: Float = 0.044715;

fn sqrt_2_over_pi() -> Float {
    (2.0 / std::f64::consts::PI).sqrt() as Float
}

/// tanh-approximated GELU.
pub(crate) fn gelu(x: Float) -> Float {
    let inner = sqrt_2_over_pi() * (x + GELU_COEFF * x * x * x);
    0.5 * x * (1.0 + inner.tanh())
}

pub(crate) fn gelu_grad(x: Float) -> Float {
    let c = sqrt_2_over_pi();
    let inner = c * (x + GELU_COEFF * x * x * x);
    let t = inner.tanh();
    let d_inner = c * (1.0 + 3.0 * GELU_COEFF * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
}
