//! Separable image resampling: cubic convolution, bilinear and nearest.
//!
//! All three use half-pixel center alignment,
//! `src = (dst + 0.5) * in / out - 0.5`, and clamp taps at the borders.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

/// Parameter of the cubic convolution kernel.
pub const CUBIC_A: f64 = -0.5;

/// Cubic convolution kernel with parameter `a`.
pub fn cubic_kernel(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x < 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpolation {
    Nearest,
    Bilinear,
    Bicubic,
}

/// Source taps `(index, weight)` for every output coordinate along one axis.
fn taps(in_size: usize, out_size: usize, method: Interpolation) -> Vec<Vec<(usize, f64)>> {
    let ratio = in_size as f64 / out_size as f64;
    let clamp = |i: isize| i.clamp(0, in_size as isize - 1) as usize;
    (0..out_size)
        .map(|d| {
            let src = (d as f64 + 0.5) * ratio - 0.5;
            match method {
                Interpolation::Nearest => {
                    let i = ((d as f64 + 0.5) * ratio).floor() as isize;
                    vec![(clamp(i), 1.0)]
                }
                Interpolation::Bilinear => {
                    let base = src.floor();
                    let t = src - base;
                    let i = base as isize;
                    vec![(clamp(i), 1.0 - t), (clamp(i + 1), t)]
                }
                Interpolation::Bicubic => {
                    let base = src.floor();
                    let t = src - base;
                    let i = base as isize;
                    (-1..=2)
                        .map(|k| (clamp(i + k), cubic_kernel(t - k as f64, CUBIC_A)))
                        .collect()
                }
            }
        })
        .collect()
}

/// Resizes every plane of `img` to `out_h x out_w`.
pub fn resize<T: Real>(
    img: &Tensor4<T>,
    out_h: usize,
    out_w: usize,
    method: Interpolation,
) -> Result<Tensor4<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(
            "resize",
            format!("target size {out_h}x{out_w} must be positive"),
        ));
    }
    let [n, c, h, w] = img.shape();
    if h == 0 || w == 0 {
        return Err(Error::invalid("resize", "source image is empty"));
    }
    let to_t = |taps: Vec<Vec<(usize, f64)>>| -> Vec<Vec<(usize, T)>> {
        taps.into_iter()
            .map(|v| v.into_iter().map(|(i, wt)| (i, T::from_f64(wt))).collect())
            .collect()
    };
    let row_taps = to_t(taps(w, out_w, method));
    let col_taps = to_t(taps(h, out_h, method));

    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    let mut tmp = vec![T::ZERO; h * out_w];
    for b in 0..n {
        for ch in 0..c {
            let src = img.plane(b, ch);
            for y in 0..h {
                let row = &src[y * w..(y + 1) * w];
                for (x, tx) in row_taps.iter().enumerate() {
                    let mut s = T::ZERO;
                    for &(i, wt) in tx {
                        s += wt * row[i];
                    }
                    tmp[y * out_w + x] = s;
                }
            }
            for ty in &col_taps {
                for x in 0..out_w {
                    let mut s = T::ZERO;
                    for &(i, wt) in ty {
                        s += wt * tmp[i * out_w + x];
                    }
                    out.push(s);
                }
            }
        }
    }
    Tensor4::from_vec([n, c, out_h, out_w], out)
}

pub fn bicubic_resize<T: Real>(img: &Tensor4<T>, out_h: usize, out_w: usize) -> Result<Tensor4<T>> {
    resize(img, out_h, out_w, Interpolation::Bicubic)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Tensor4<f64> {
        Tensor4::from_fn([1, 1, h, w], |[_, _, y, x]| (y * w + x) as f64 / 10.0)
    }

    /// Direct 2-D evaluation of the cubic kernel definition.
    fn bicubic_oracle(img: &Tensor4<f64>, oh: usize, ow: usize) -> Vec<f64> {
        let (h, w) = (img.height(), img.width());
        let mut out = Vec::new();
        for oy in 0..oh {
            for ox in 0..ow {
                let sy = (oy as f64 + 0.5) * h as f64 / oh as f64 - 0.5;
                let sx = (ox as f64 + 0.5) * w as f64 / ow as f64 - 0.5;
                let mut acc = 0.0;
                for iy in (sy.floor() as i64 - 1)..=(sy.floor() as i64 + 2) {
                    for ix in (sx.floor() as i64 - 1)..=(sx.floor() as i64 + 2) {
                        let wy = cubic_kernel(sy - iy as f64, -0.5);
                        let wx = cubic_kernel(sx - ix as f64, -0.5);
                        let cy = iy.clamp(0, h as i64 - 1) as usize;
                        let cx = ix.clamp(0, w as i64 - 1) as usize;
                        acc += wy * wx * img.get(0, 0, cy, cx);
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    #[test]
    fn kernel_values() {
        assert_eq!(cubic_kernel(0.0, CUBIC_A), 1.0);
        assert_eq!(cubic_kernel(1.0, CUBIC_A), 0.0);
        assert_eq!(cubic_kernel(2.0, CUBIC_A), 0.0);
        assert_eq!(cubic_kernel(2.5, CUBIC_A), 0.0);
        assert!((cubic_kernel(0.5, CUBIC_A) - 0.5625).abs() < 1e-15);
        assert!((cubic_kernel(-1.5, CUBIC_A) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn unit_scale_is_identity() {
        let img = ramp(5, 7).map(|v| v.sin());
        for m in [Interpolation::Nearest, Interpolation::Bilinear, Interpolation::Bicubic] {
            assert_eq!(resize(&img, 5, 7, m).unwrap(), img, "{m:?}");
        }
    }

    #[test]
    fn constant_stays_constant() {
        let img = Tensor4::filled([1, 2, 6, 9], 0.37);
        for (oh, ow) in [(3, 3), (12, 18), (17, 5), (2, 27)] {
            for m in [Interpolation::Nearest, Interpolation::Bilinear, Interpolation::Bicubic] {
                let out = resize(&img, oh, ow, m).unwrap();
                assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn ramp_downscale_matches_oracle() {
        let img = ramp(4, 4);
        let out = bicubic_resize(&img, 2, 2).unwrap();
        let expect = bicubic_oracle(&img, 2, 2);
        for (a, b) in out.data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn upscale_matches_oracle() {
        let img = ramp(5, 6).map(|v| (v * 1.3).cos());
        for (oh, ow) in [(10, 12), (15, 18), (20, 24)] {
            let out = bicubic_resize(&img, oh, ow).unwrap();
            let expect = bicubic_oracle(&img, oh, ow);
            for (a, b) in out.data().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nearest_replicates_pixels() {
        let img = Tensor4::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = resize(&img, 4, 4, Interpolation::Nearest).unwrap();
        assert_eq!(
            out.data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
    }

    #[test]
    fn bilinear_midpoints() {
        let img = Tensor4::from_vec([1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let out = resize(&img, 1, 4, Interpolation::Bilinear).unwrap();
        assert_eq!(out.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn zero_target_rejected() {
        let img = ramp(4, 4);
        assert!(bicubic_resize(&img, 0, 4).is_err());
        assert!(bicubic_resize(&img, 4, 0).is_err());
    }
}
