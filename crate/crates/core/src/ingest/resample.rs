//! Separable bicubic resampling with the support widened on downscale, the
//! same scheme Pillow uses for `Image.resize(..., BICUBIC)`.

const BICUBIC_A: f64 = -0.5;
const BICUBIC_SUPPORT: f64 = 2.0;

fn bicubic(x: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        ((BICUBIC_A + 2.0) * x - (BICUBIC_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * BICUBIC_A
    } else {
        0.0
    }
}

/// Per output index: first source index and normalized weights.
fn coefficients(in_size: usize, out_size: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = in_size as f64 / out_size as f64;
    let filter_scale = scale.max(1.0);
    let support = BICUBIC_SUPPORT * filter_scale;
    (0..out_size)
        .map(|xx| {
            let center = (xx as f64 + 0.5) * scale;
            let ss = 1.0 / filter_scale;
            // truncation toward zero, then clamp, as in the reference C code
            let xmin = ((center - support + 0.5) as i64).max(0) as usize;
            let xmax = ((center + support + 0.5) as i64).min(in_size as i64) as usize;
            let mut k: Vec<f64> = (xmin..xmax)
                .map(|x| bicubic((x as f64 - center + 0.5) * ss))
                .collect();
            let total: f64 = k.iter().sum();
            if total != 0.0 {
                for w in k.iter_mut() {
                    *w /= total;
                }
            }
            (xmin, k)
        })
        .collect()
}

/// Resizes one `height x width` plane to `out_height x out_width`.
pub fn resize_bicubic(
    plane: &[f32],
    width: usize,
    height: usize,
    out_width: usize,
    out_height: usize,
) -> Vec<f32> {
    assert_eq!(plane.len(), width * height);
    let horizontal: Vec<f32> = if out_width == width {
        plane.to_vec()
    } else {
        let coeffs = coefficients(width, out_width);
        let mut out = vec![0.0f32; out_width * height];
        for y in 0..height {
            let row = &plane[y * width..(y + 1) * width];
            for (x, (start, k)) in coeffs.iter().enumerate() {
                let acc: f64 = k.iter().enumerate().map(|(i, &w)| row[start + i] as f64 * w).sum();
                out[y * out_width + x] = acc as f32;
            }
        }
        out
    };
    if out_height == height {
        return horizontal;
    }
    let coeffs = coefficients(height, out_height);
    let mut out = vec![0.0f32; out_width * out_height];
    for (y, (start, k)) in coeffs.iter().enumerate() {
        for x in 0..out_width {
            let acc: f64 = k
                .iter()
                .enumerate()
                .map(|(i, &w)| horizontal[(start + i) * out_width + x] as f64 * w)
                .sum();
            out[y * out_width + x] = acc as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_size_is_a_copy() {
        let p: Vec<f32> = (0..12).map(|i| i as f32).collect();
        assert_eq!(resize_bicubic(&p, 4, 3, 4, 3), p);
    }

    #[test]
    fn constant_plane_stays_constant() {
        let p = vec![0.25f32; 50 * 40];
        for v in resize_bicubic(&p, 50, 40, 17, 23) {
            assert!((v - 0.25).abs() < 1e-6);
        }
    }

    #[test]
    fn kernel_interpolates() {
        assert_eq!(bicubic(0.0), 1.0);
        assert_eq!(bicubic(1.0), 0.0);
        assert_eq!(bicubic(2.0), 0.0);
    }
}
