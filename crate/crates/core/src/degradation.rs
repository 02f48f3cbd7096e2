//! Low-resolution image generation: bicubic downsampling (BD) and k-space
//! truncation (TD), plus zero-filled k-space recovery.
//!
//! Spectra are centered: after [`fftshift`] the DC bin sits at
//! `(H/2, W/2)` (integer division). Truncation keeps rows
//! `H/2 - h/2 .. H/2 - h/2 + h` of the centered spectrum (and the same for
//! columns), where `h = H / r`.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::resize::bicubic_resize;

/// Complex-valued 2-D array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum2D {
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex<f64>>,
}

impl Spectrum2D {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex::new(0.0, 0.0); height * width],
        }
    }

    pub fn from_real(img: &Image) -> Self {
        Self {
            height: img.height(),
            width: img.width(),
            data: img.data().iter().map(|&v| Complex::new(v, 0.0)).collect(),
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> Complex<f64> {
        self.data[y * self.width + x]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn magnitude(&self) -> Image {
        Image::new(self.height, self.width, self.data.iter().map(|c| c.norm()).collect())
            .expect("length matches")
    }

    pub fn real(&self) -> Image {
        Image::new(self.height, self.width, self.data.iter().map(|c| c.re).collect())
            .expect("length matches")
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for c in &mut self.data {
            *c *= s;
        }
        self
    }
}

fn transform(grid: &Spectrum2D, inverse: bool) -> Spectrum2D {
    let (h, w) = (grid.height, grid.width);
    let mut out = grid.clone();
    if h == 0 || w == 0 {
        return out;
    }
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for row in out.data.chunks_mut(w) {
        row_fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = out.data[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            out.data[y * w + x] = col[y];
        }
    }
    if inverse {
        let norm = 1.0 / (h * w) as f64;
        for c in &mut out.data {
            *c *= norm;
        }
    }
    out
}

/// Unnormalized forward transform, uncentered (DC at `(0, 0)`).
pub fn dft2(img: &Image) -> Spectrum2D {
    transform(&Spectrum2D::from_real(img), false)
}

pub fn dft2_complex(grid: &Spectrum2D) -> Spectrum2D {
    transform(grid, false)
}

/// Inverse transform normalized by `1 / (H W)`.
pub fn idft2(spec: &Spectrum2D) -> Spectrum2D {
    transform(spec, true)
}

fn roll(spec: &Spectrum2D, dy: usize, dx: usize) -> Spectrum2D {
    let (h, w) = (spec.height, spec.width);
    let mut out = Spectrum2D::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            out.data[((y + dy) % h) * w + (x + dx) % w] = spec.get(y, x);
        }
    }
    out
}

/// Moves the DC bin from `(0, 0)` to `(H/2, W/2)`.
pub fn fftshift(spec: &Spectrum2D) -> Spectrum2D {
    roll(spec, spec.height / 2, spec.width / 2)
}

/// Inverse of [`fftshift`].
pub fn ifftshift(spec: &Spectrum2D) -> Spectrum2D {
    let (h, w) = (spec.height, spec.width);
    roll(spec, h - h / 2, w - w / 2)
}

pub fn centered_spectrum(img: &Image) -> Spectrum2D {
    fftshift(&dft2(img))
}

fn check_divisible(img: &Image, r: usize, op: &'static str) -> Result<()> {
    let (h, w) = img.dims();
    if r == 0 || h % r != 0 || w % r != 0 || h == 0 || w == 0 {
        return Err(Error::invalid(
            op,
            format!("image {h}x{w} is not divisible by scale {r}"),
        ));
    }
    Ok(())
}

/// Bicubic downsampling by `r`.
pub fn degrade_bd(hr: &Image, r: usize) -> Result<Image> {
    check_divisible(hr, r, "degrade_bd")?;
    let (h, w) = hr.dims();
    let out = bicubic_resize(&hr.to_tensor::<f64>(), h / r, w / r)?;
    Ok(Image::from_tensor(&out, 0, 0))
}

/// Central `h x w` block of a centered spectrum.
pub fn truncate_centered(spec: &Spectrum2D, h: usize, w: usize) -> Spectrum2D {
    let y0 = spec.height / 2 - h / 2;
    let x0 = spec.width / 2 - w / 2;
    let mut out = Spectrum2D::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            out.data[y * w + x] = spec.get(y0 + y, x0 + x);
        }
    }
    out
}

/// Embeds a centered spectrum in the center of an `h x w` zero spectrum.
pub fn zero_pad_centered(spec: &Spectrum2D, h: usize, w: usize) -> Spectrum2D {
    let y0 = h / 2 - spec.height / 2;
    let x0 = w / 2 - spec.width / 2;
    let mut out = Spectrum2D::zeros(h, w);
    for y in 0..spec.height {
        for x in 0..spec.width {
            out.data[(y0 + y) * w + x0 + x] = spec.get(y, x);
        }
    }
    out
}

/// The complex low-resolution image of the truncation model, before the
/// magnitude step. Linear in `hr`.
pub fn truncate_complex(hr: &Image, r: usize) -> Result<Spectrum2D> {
    check_divisible(hr, r, "degrade_td")?;
    let (h, w) = hr.dims();
    let kept = truncate_centered(&centered_spectrum(hr), h / r, w / r);
    Ok(idft2(&ifftshift(&kept)).scaled(1.0 / (r * r) as f64))
}

/// k-space truncation: keep the central `(H/r) x (W/r)` frequencies,
/// inverse-transform, take the magnitude, scale by `1/r^2`.
pub fn degrade_td(hr: &Image, r: usize) -> Result<Image> {
    Ok(truncate_complex(hr, r)?.magnitude())
}

/// Zero-fills the spectrum of `lr` up to `(H r) x (W r)`, inverse-transforms
/// and returns the magnitude scaled by `r^2`.
pub fn zero_fill_recover(lr: &Image, r: usize) -> Result<Image> {
    let (h, w) = lr.dims();
    if r == 0 || h == 0 || w == 0 {
        return Err(Error::invalid(
            "zero_fill_recover",
            format!("cannot recover {h}x{w} by {r}"),
        ));
    }
    let padded = zero_pad_centered(&centered_spectrum(lr), h * r, w * r);
    Ok(idft2(&ifftshift(&padded)).scaled((r * r) as f64).magnitude())
}
