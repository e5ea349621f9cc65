//! Dense row-major tensors and the row-wise kernels shared by the training
//! tape and the inference path.
//!
//! Every kernel accumulates each output element in ascending inner-index
//! order starting from `0.0`, independent of how many rows are processed.
//! A row computed alone is therefore bit-identical to the same row computed
//! as part of a larger matrix, which the incremental sampler relies on.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("dims must be positive, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension when viewed as a matrix (all but the last axis
    /// flattened).
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `acc[j] += a * b[j]`.
#[inline]
pub fn axpy(acc: &mut [f64], a: f64, b: &[f64]) {
    for (o, &x) in acc.iter_mut().zip(b) {
        *o += a * x;
    }
}

/// Sequential dot product.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// One output row of `x · W` where `W` is `k × n` row-major.
#[inline]
pub fn row_matmul(x: &[f64], w: &[f64], n: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (kk, &a) in x.iter().enumerate() {
        axpy(out, a, &w[kk * n..(kk + 1) * n]);
    }
}

const COL_BLOCK: usize = 256;
const DEPTH_BLOCK: usize = 256;
const TILE_R: usize = 4;
const TILE_C: usize = 8;

/// `C += A · B` where `A(r, t) = a[r·ars + t·acs]` is `m×k`, `B` is
/// row-major `k×n` and `C` row-major `m×n`.
///
/// Every element of `C` receives its `k` products one at a time in
/// ascending `t`, exactly as a scalar loop would, so results do not depend
/// on the blocking or on how many rows are computed together.
fn gemm_acc(a: &[f64], ars: usize, acs: usize, b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let mut pack = vec![0.0; TILE_R * DEPTH_BLOCK.min(k)];
    for j0 in (0..n).step_by(COL_BLOCK) {
        let j1 = (j0 + COL_BLOCK).min(n);
        for k0 in (0..k).step_by(DEPTH_BLOCK) {
            let k1 = (k0 + DEPTH_BLOCK).min(k);
            let depth = k1 - k0;
            let mut i = 0;
            while i < m {
                let ib = (m - i).min(TILE_R);
                if ib == TILE_R {
                    for t in 0..depth {
                        for r in 0..TILE_R {
                            pack[t * TILE_R + r] = a[(i + r) * ars + (k0 + t) * acs];
                        }
                    }
                }
                let mut j = j0;
                while j < j1 {
                    let jb = (j1 - j).min(TILE_C);
                    if ib == TILE_R && jb == TILE_C {
                        let mut acc = [[0.0; TILE_C]; TILE_R];
                        for (r, row) in acc.iter_mut().enumerate() {
                            row.copy_from_slice(&c[(i + r) * n + j..(i + r) * n + j + TILE_C]);
                        }
                        for (t, ap) in pack[..depth * TILE_R].chunks_exact(TILE_R).enumerate() {
                            let off = (k0 + t) * n + j;
                            let bv: &[f64; TILE_C] = b[off..off + TILE_C].try_into().unwrap();
                            for (row, &av) in acc.iter_mut().zip(ap) {
                                for s in 0..TILE_C {
                                    row[s] += av * bv[s];
                                }
                            }
                        }
                        for (r, row) in acc.iter().enumerate() {
                            c[(i + r) * n + j..(i + r) * n + j + TILE_C].copy_from_slice(row);
                        }
                    } else {
                        for r in i..i + ib {
                            for s in j..j + jb {
                                let mut v = c[r * n + s];
                                for t in k0..k1 {
                                    v += a[r * ars + t * acs] * b[t * n + s];
                                }
                                c[r * n + s] = v;
                            }
                        }
                    }
                    j += jb;
                }
                i += ib;
            }
        }
    }
}

/// `C = A · B` for `A: m×k`, `B: k×n`. A row of the result equals
/// [`row_matmul`] of that row bit for bit.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm_acc(a, k, 1, b, &mut c, m, k, n);
    c
}

/// `C = A · Bᵀ` for `A: m×k`, `B: n×k`. Each element accumulates exactly
/// like a sequential [`dot`].
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    const DEPTH: usize = 512;
    let mut c = vec![0.0; m * n];
    for k0 in (0..k).step_by(DEPTH) {
        let k1 = (k0 + DEPTH).min(k);
        let len = k1 - k0;
        let mut i = 0;
        while i < m {
            let ib = (m - i).min(4);
            let mut j = 0;
            while j < n {
                let jb = (n - j).min(4);
                if ib == 4 && jb == 4 {
                    let ar: [&[f64]; 4] =
                        std::array::from_fn(|r| &a[(i + r) * k + k0..(i + r) * k + k1]);
                    let br: [&[f64]; 4] =
                        std::array::from_fn(|s| &b[(j + s) * k + k0..(j + s) * k + k1]);
                    let mut acc = [[0.0; 4]; 4];
                    for (r, row) in acc.iter_mut().enumerate() {
                        for (s, v) in row.iter_mut().enumerate() {
                            *v = c[(i + r) * n + j + s];
                        }
                    }
                    for t in 0..len {
                        let av = [ar[0][t], ar[1][t], ar[2][t], ar[3][t]];
                        let bv = [br[0][t], br[1][t], br[2][t], br[3][t]];
                        for r in 0..4 {
                            for s in 0..4 {
                                acc[r][s] += av[r] * bv[s];
                            }
                        }
                    }
                    for (r, row) in acc.iter().enumerate() {
                        for (s, v) in row.iter().enumerate() {
                            c[(i + r) * n + j + s] = *v;
                        }
                    }
                } else {
                    for r in i..i + ib {
                        for s in j..j + jb {
                            let mut acc = c[r * n + s];
                            for (x, y) in a[r * k + k0..r * k + k1].iter().zip(&b[s * k + k0..s * k + k1]) {
                                acc += x * y;
                            }
                            c[r * n + s] = acc;
                        }
                    }
                }
                j += jb;
            }
            i += ib;
        }
    }
    c
}

/// Row-major transpose of an `r×c` matrix.
pub fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut t = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = a[i * c + j];
        }
    }
    t
}

/// `C += Aᵀ · B` for `A: m×k`, `B: m×n`, `C: k×n`; each element adds its
/// terms in ascending `i`.
pub fn matmul_tn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    gemm_acc(a, 1, k, b, c, k, m, n);
}

/// Numerically stable softmax of one row in place. `-inf` entries map to 0.
/// Returns an error when every entry is `-inf`.
pub fn softmax_row(row: &mut [f64]) -> Result<()> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument(
            "softmax row has no finite entry".into(),
        ));
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = if *v == f64::NEG_INFINITY { 0.0 } else { (*v - max).exp() };
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
    Ok(())
}

/// `log Σ exp(row)` via the max shift.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let mut s = 0.0;
    for &v in row {
        s += (v - max).exp();
    }
    max + s.ln()
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Layer normalization of one row. Returns `(mean, 1/σ)` for the backward
/// pass; `out` receives `γ ⊙ x̂ + β`.
pub fn layer_norm_row(x: &[f64], gamma: &[f64], beta: &[f64], out: &mut [f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mut mean = 0.0;
    for &v in x {
        mean += v;
    }
    mean /= n;
    let mut var = 0.0;
    for &v in x {
        var += (v - mean) * (v - mean);
    }
    var /= n;
    let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    for j in 0..x.len() {
        out[j] = gamma[j] * ((x[j] - mean) * rstd) + beta[j];
    }
    (mean, rstd)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
