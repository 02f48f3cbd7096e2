use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

/// Single-channel 2-D image, row-major, double precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape("Image::new", &[height, width], &[data.len()]));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// As a `(1, 1, H, W)` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor4<T> {
        Tensor4::from_vec(
            [1, 1, self.height, self.width],
            self.data.iter().map(|&v| T::from_f64(v)).collect(),
        )
        .expect("length matches")
    }

    /// Plane `(n, c)` of a tensor.
    pub fn from_tensor<T: Real>(t: &Tensor4<T>, n: usize, c: usize) -> Self {
        Self {
            height: t.height(),
            width: t.width(),
            data: t.plane(n, c).iter().map(|v| v.to_f64()).collect(),
        }
    }

    /// Copy of the `h x w` window at `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Self> {
        if y + h > self.height || x + w > self.width {
            return Err(Error::invalid(
                "Image::crop",
                format!(
                    "window {h}x{w} at ({y}, {x}) exceeds {}x{}",
                    self.height, self.width
                ),
            ));
        }
        Ok(Self::from_fn(h, w, |yy, xx| self.get(y + yy, x + xx)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip() {
        let img = Image::from_fn(3, 4, |y, x| (y * 4 + x) as f64);
        let t: Tensor4<f64> = img.to_tensor();
        assert_eq!(t.shape(), [1, 1, 3, 4]);
        assert_eq!(Image::from_tensor(&t, 0, 0), img);
    }

    #[test]
    fn crop_window() {
        let img = Image::from_fn(4, 4, |y, x| (y * 4 + x) as f64);
        let c = img.crop(1, 2, 2, 2).unwrap();
        assert_eq!(c.data(), &[6.0, 7.0, 10.0, 11.0]);
        assert!(img.crop(3, 3, 2, 2).is_err());
    }
}
