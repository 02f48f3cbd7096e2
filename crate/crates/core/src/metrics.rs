//! PSNR and SSIM.
//!
//! Images are expected in `[0, 1]`; evaluation divides both the reference
//! and the test image by the reference's maximum first (see
//! [`normalize_pair`]). SSIM uses an 11x11 Gaussian window with
//! `sigma = 1.5`, `K1 = 0.01`, `K2 = 0.03`, dynamic range 1, evaluated at
//! every position where the window fits entirely inside the image.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_same(a: &Image, b: &Image, op: &'static str) -> Result<()> {
    if a.dims() != b.dims() {
        let (ah, aw) = a.dims();
        let (bh, bw) = b.dims();
        return Err(Error::shape(op, &[ah, aw], &[bh, bw]));
    }
    Ok(())
}

pub fn mse(reference: &Image, test: &Image) -> Result<f64> {
    check_same(reference, test, "mse")?;
    let n = reference.data().len() as f64;
    Ok(reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// `10 log10(peak^2 / MSE)` in dB; `+inf` for identical images.
pub fn psnr(reference: &Image, test: &Image, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::invalid("psnr", format!("peak must be positive, got {peak}")));
    }
    let err = mse(reference, test)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / err).log10())
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &g {
        for b in &g {
            w.push(a * b);
        }
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

/// Mean structural similarity.
pub fn ssim(reference: &Image, test: &Image) -> Result<f64> {
    check_same(reference, test, "ssim")?;
    let (h, w) = reference.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!("image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let window = gaussian_window();
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for y in 0..oh {
        for x in 0..ow {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let wt = window[dy * SSIM_WINDOW + dx];
                    let a = reference.get(y + dy, x + dx);
                    let b = test.get(y + dy, x + dx);
                    mx += wt * a;
                    my += wt * b;
                    sxx += wt * a * a;
                    syy += wt * b * b;
                    sxy += wt * (a * b);
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (oh * ow) as f64)
}

/// Divides both images by the reference maximum (left as is when that
/// maximum is not positive).
pub fn normalize_pair(reference: &Image, test: &Image) -> (Image, Image) {
    let peak = reference.max();
    if peak > 0.0 && peak.is_finite() {
        (reference.map(|v| v / peak), test.map(|v| v / peak))
    } else {
        (reference.clone(), test.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub per_image: Vec<ImageScore>,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
}

fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

impl MetricReport {
    pub fn from_scores(per_image: Vec<ImageScore>) -> Self {
        let n = per_image.len().max(1) as f64;
        let mean_psnr_db = per_image.iter().map(|s| s.psnr_db).sum::<f64>() / n;
        let mean_ssim = per_image.iter().map(|s| s.ssim).sum::<f64>() / n;
        Self {
            per_image,
            mean_psnr_db,
            mean_ssim,
        }
    }

    /// Scores one reference/output pair after max-normalization.
    pub fn score(id: impl Into<String>, reference: &Image, output: &Image) -> Result<ImageScore> {
        let (r, t) = normalize_pair(reference, output);
        Ok(ImageScore {
            id: id.into(),
            psnr_db: psnr(&r, &t, 1.0)?,
            ssim: ssim(&r, &t)?,
        })
    }

    /// `image_id,psnr_db,ssim` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# intensities divided by per-image reference max, peak 1.0\n");
        out.push_str("image_id,psnr_db,ssim\n");
        for s in &self.per_image {
            let _ = writeln!(out, "{},{},{}", s.id, fmt_value(s.psnr_db), fmt_value(s.ssim));
        }
        let _ = writeln!(
            out,
            "mean,{},{}",
            fmt_value(self.mean_psnr_db),
            fmt_value(self.mean_ssim)
        );
        out
    }
}
