#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const FD_STEP: f64 = 1e-3;
pub const MAX_REL_ERR: f64 = 1e-3;
pub const ABS_FLOOR: f64 = 1e-6;

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let d = Normal::new(0.0, std).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

/// Central difference of `f` along coordinate `i`.
pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Worst per-element relative error; elements where the finite difference is
/// below `ABS_FLOOR` are compared absolutely instead. Returns
/// `(worst relative error, worst absolute error on floored elements)`.
pub fn compare_gradients(analytic: &[f64], fd: &[f64]) -> (f64, f64) {
    let mut worst_rel: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    for (&a, &f) in analytic.iter().zip(fd) {
        if f.abs() < ABS_FLOOR {
            worst_abs = worst_abs.max((a - f).abs());
        } else {
            worst_rel = worst_rel.max((a - f).abs() / a.abs().max(f.abs()));
        }
    }
    (worst_rel, worst_abs)
}

pub fn pick_heads(rng: &mut ChaCha8Rng, width: usize) -> usize {
    let options: Vec<usize> = [1, 2, 4, 8].into_iter().filter(|h| width.is_multiple_of(*h)).collect();
    options[rng.random_range(0..options.len())]
}

/// Two Gaussian classes in `dim` dimensions whose means sit at `±μ` along a
/// random unit direction, `|2μ| = separation` standard deviations apart.
pub fn separable_set(n: usize, dim: usize, separation: f64, seed: u64) -> Vec<(Vec<f32>, cloudgate::verdict::Label)> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir = normal_vec(&mut rng, dim, 1.0);
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v /= norm);
    (0..n)
        .map(|i| {
            let (label, sign) = if i % 2 == 0 {
                (cloudgate::verdict::Label::Cloudy, 1.0)
            } else {
                (cloudgate::verdict::Label::Clear, -1.0)
            };
            let noise = normal_vec(&mut rng, dim, 1.0);
            let x = noise
                .iter()
                .zip(&dir)
                .map(|(&e, &d)| (e + sign * 0.5 * separation * d) as f32)
                .collect();
            (x, label)
        })
        .collect()
}

pub fn unit_f32(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    let v = normal_vec(rng, dim, 1.0);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}
