//! Dense kernels shared by both towers, generic over the float type so the
//! gradient checks can run the identical code path in f64.

use std::borrow::Cow;
use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub const LN_EPS: f64 = 1e-5;

pub trait Real:
    Copy
    + Debug
    + Default
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;
    /// Borrow f32 weights when `Self` is f32, convert otherwise.
    fn view(data: &[f32]) -> Cow<'_, [Self]>;
    fn from_f32(v: f32) -> Self {
        Self::from_f64(v as f64)
    }
    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn ln(self) -> Self {
        f32::ln(self)
    }
    fn sqrt(self) -> Self {
        f32::sqrt(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn view(data: &[f32]) -> Cow<'_, [Self]> {
        Cow::Borrowed(data)
    }
    fn from_f32(v: f32) -> Self {
        v
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn view(data: &[f32]) -> Cow<'_, [Self]> {
        Cow::Owned(data.iter().map(|&v| v as f64).collect())
    }
}

/// Eight independent accumulators; fixed summation order keeps results
/// deterministic while letting the compiler vectorize.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::ZERO; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::ZERO;
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `y = x W^T + b` with `x: [rows, in]`, `w: [out, in]`.
pub fn linear<T: Real>(x: &[T], rows: usize, w: &[T], b: Option<&[T]>, out_dim: usize) -> Vec<T> {
    let in_dim = w.len() / out_dim;
    debug_assert_eq!(x.len(), rows * in_dim);
    let mut y = vec![T::ZERO; rows * out_dim];
    for o in 0..out_dim {
        let wo = &w[o * in_dim..(o + 1) * in_dim];
        let bias = b.map_or(T::ZERO, |b| b[o]);
        for r in 0..rows {
            y[r * out_dim + o] = dot(&x[r * in_dim..(r + 1) * in_dim], wo) + bias;
        }
    }
    y
}

/// Input gradient of [`linear`]: `gx = gy W`.
pub fn linear_backward<T: Real>(gy: &[T], rows: usize, w: &[T], out_dim: usize) -> Vec<T> {
    let in_dim = w.len() / out_dim;
    let mut gx = vec![T::ZERO; rows * in_dim];
    for r in 0..rows {
        let gxr = &mut gx[r * in_dim..(r + 1) * in_dim];
        for o in 0..out_dim {
            let g = gy[r * out_dim + o];
            if g != T::ZERO {
                axpy(g, &w[o * in_dim..(o + 1) * in_dim], gxr);
            }
        }
    }
    gx
}

/// Per-row normalization statistics kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub fn layer_norm<T: Real>(x: &[T], width: usize, gamma: &[T], beta: &[T]) -> (Vec<T>, LayerNormCache<T>) {
    let rows = x.len() / width;
    let inv_n = T::from_f64(1.0 / width as f64);
    let eps = T::from_f64(LN_EPS);
    let mut y = vec![T::ZERO; x.len()];
    let mut xhat = vec![T::ZERO; x.len()];
    let mut rstd = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * width..(r + 1) * width];
        let mean = row.iter().fold(T::ZERO, |a, &v| a + v) * inv_n;
        let var = row.iter().fold(T::ZERO, |a, &v| a + (v - mean) * (v - mean)) * inv_n;
        let rs = T::ONE / (var + eps).sqrt();
        rstd.push(rs);
        for k in 0..width {
            let h = (row[k] - mean) * rs;
            xhat[r * width + k] = h;
            y[r * width + k] = h * gamma[k] + beta[k];
        }
    }
    (y, LayerNormCache { xhat, rstd })
}

pub fn layer_norm_backward<T: Real>(gy: &[T], width: usize, gamma: &[T], cache: &LayerNormCache<T>) -> Vec<T> {
    let rows = gy.len() / width;
    let inv_n = T::from_f64(1.0 / width as f64);
    let mut gx = vec![T::ZERO; gy.len()];
    let mut gh = vec![T::ZERO; width];
    for r in 0..rows {
        let xh = &cache.xhat[r * width..(r + 1) * width];
        let mut mean_g = T::ZERO;
        let mut mean_gx = T::ZERO;
        for k in 0..width {
            gh[k] = gy[r * width + k] * gamma[k];
            mean_g += gh[k];
            mean_gx += gh[k] * xh[k];
        }
        mean_g *= inv_n;
        mean_gx *= inv_n;
        let rs = cache.rstd[r];
        for k in 0..width {
            gx[r * width + k] = rs * (gh[k] - mean_g - xh[k] * mean_gx);
        }
    }
    gx
}

const GELU_ALPHA: f64 = 1.702;

fn sigmoid<T: Real>(x: T) -> T {
    T::ONE / (T::ONE + (-x).exp())
}

/// `x * sigmoid(1.702 x)`, the activation the pretrained CLIP towers use.
pub fn quick_gelu<T: Real>(x: T) -> T {
    x * sigmoid(T::from_f64(GELU_ALPHA) * x)
}

pub fn quick_gelu_grad<T: Real>(x: T) -> T {
    let a = T::from_f64(GELU_ALPHA);
    let s = sigmoid(a * x);
    s + a * x * s * (T::ONE - s)
}

/// In-place softmax over `v`.
pub fn softmax_in_place<T: Real>(v: &mut [T]) {
    let m = v.iter().fold(v[0], |a, &b| a.max(b));
    let mut sum = T::ZERO;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x = *x / sum;
    }
}

pub fn l2_norm<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::ZERO, |a, &x| a + x * x).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64 * 0.11).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn linear_and_its_backward_are_adjoint() {
        // <gy, W x> == <W^T gy, x>
        let w: Vec<f64> = (0..12).map(|i| i as f64 * 0.1 - 0.5).collect();
        let x: Vec<f64> = vec![0.3, -1.0, 2.0, 0.5, 0.1, -0.2, 0.7, 0.0];
        let gy: Vec<f64> = vec![1.0, -2.0, 0.5, 0.25, 0.0, 3.0];
        let y = linear(&x, 2, &w, None, 3);
        let gx = linear_backward(&gy, 2, &w, 3);
        let lhs: f64 = gy.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = gx.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn quick_gelu_derivative() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (quick_gelu(x + h) - quick_gelu(x - h)) / (2.0 * h);
            assert!((fd - quick_gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_backward_matches_fd() {
        let x: Vec<f64> = vec![0.3, -1.2, 2.0, 0.5, 1.1, -0.4, 0.7, 0.05];
        let gamma = vec![1.1, 0.9, -0.3, 2.0];
        let beta = vec![0.0, 0.1, 0.2, -0.1];
        let gy = vec![0.5, -1.0, 0.25, 2.0, 1.0, 0.0, -0.7, 0.3];
        let f = |x: &[f64]| -> f64 {
            let (y, _) = layer_norm(x, 4, &gamma, &beta);
            y.iter().zip(&gy).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = layer_norm(&x, 4, &gamma, &beta);
        let g = layer_norm_backward(&gy, 4, &gamma, &cache);
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += 1e-6;
            xm[i] -= 1e-6;
            let fd = (f(&xp) - f(&xm)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut v = vec![1000.0f32, 999.0, -5.0];
        softmax_in_place(&mut v);
        let s: f32 = v.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
        assert!(v.iter().all(|x| x.is_finite()));
    }
}
