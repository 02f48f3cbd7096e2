//! Dense `(batch, channels, height, width)` tensors and the primitive
//! forward kernels used by the network.
//!
//! Every kernel that reduces over several inputs does so in a fixed order
//! per output element, and parallel work is only split across independent
//! output planes. Results are therefore bitwise identical for any rayon
//! thread count.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Scalar type a tensor can hold. Implemented for `f32` (training) and
/// `f64` (oracles and gradient checks).
pub trait Real:
    Copy
    + Send
    + Sync
    + PartialOrd
    + Debug
    + Default
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// Row-major 4-D array, layout `N, C, H, W`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::filled(shape, T::ZERO)
    }

    pub fn filled(shape: [usize; 4], value: T) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::shape("Tensor4::from_vec", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([b, ch, y, x]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    #[inline]
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape[2]
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: T) {
        let i = self.offset(n, c, y, x);
        self.data[i] = value;
    }

    /// The `H x W` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let len = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * len;
        &self.data[start..start + len]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::ZERO, |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    /// Sample `n` as a standalone tensor with batch size one.
    pub fn sample(&self, n: usize) -> Self {
        let len = self.shape[1] * self.shape[2] * self.shape[3];
        Self {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[n * len..(n + 1) * len].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(parts: &[Tensor4<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("stack", "no tensors given"))?;
        let inner = &first.shape[1..];
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if &p.shape[1..] != inner {
                return Err(Error::shape("stack", &first.shape, &p.shape));
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            shape: [n, inner[0], inner[1], inner[2]],
            data,
        })
    }
}

/// Weights `(out, in, k, k)` and per-output bias of one convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel<T> {
    pub weight: Tensor4<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvKernel<T> {
    pub fn new(weight: Tensor4<T>, bias: Vec<T>) -> Result<Self> {
        check_kernel(&weight, &bias)?;
        Ok(Self { weight, bias })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, k: usize) -> Result<Self> {
        Self::new(
            Tensor4::zeros([out_channels, in_channels, k, k]),
            vec![T::ZERO; out_channels],
        )
    }

    pub fn apply(&self, input: &Tensor4<T>) -> Result<Tensor4<T>> {
        conv2d(input, &self.weight, &self.bias)
    }
}

fn check_kernel<T: Real>(weight: &Tensor4<T>, bias: &[T]) -> Result<()> {
    let [o, _, kh, kw] = weight.shape();
    if kh != kw || kh % 2 == 0 {
        return Err(Error::invalid(
            "conv2d",
            format!("kernel must be square with odd side, got {kh}x{kw}"),
        ));
    }
    if bias.len() != o {
        return Err(Error::shape("conv2d bias", &weight.shape(), &[bias.len()]));
    }
    Ok(())
}

/// Adds `scale * src` shifted by `(oy, ox)` into `dst`, reading zero outside
/// the `h x w` plane: `dst[y][x] += scale * src[y + oy][x + ox]`.
#[inline]
fn accumulate_shifted<T: Real>(
    dst: &mut [T],
    src: &[T],
    h: usize,
    w: usize,
    oy: isize,
    ox: isize,
    scale: T,
) {
    let x0 = (-ox).max(0) as usize;
    let x1 = (w as isize - ox).min(w as isize);
    if x1 <= x0 as isize {
        return;
    }
    let x1 = x1 as usize;
    for y in 0..h {
        let sy = y as isize + oy;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        let d = &mut dst[y * w + x0..y * w + x1];
        let s_start = (sy as usize) * w + (x0 as isize + ox) as usize;
        let s = &src[s_start..s_start + (x1 - x0)];
        for (dv, &sv) in d.iter_mut().zip(s) {
            *dv += scale * sv;
        }
    }
}

/// Same-size zero-padded 2-D convolution (cross-correlation).
///
/// `out[n,o,y,x] = bias[o] + sum_{c,dy,dx} in[n,c,y+dy-k/2,x+dx-k/2] * w[o,c,dy,dx]`,
/// accumulated channel-major, then by kernel row and column.
pub fn conv2d<T: Real>(input: &Tensor4<T>, weight: &Tensor4<T>, bias: &[T]) -> Result<Tensor4<T>> {
    check_kernel(weight, bias)?;
    let [n, c, h, w] = input.shape();
    let [o, ci, k, _] = weight.shape();
    if ci != c {
        return Err(Error::shape("conv2d", &input.shape(), &weight.shape()));
    }
    let pad = (k / 2) as isize;
    let plane = h * w;
    let mut out = vec![T::ZERO; n * o * plane];
    if plane > 0 {
        out.par_chunks_mut(plane)
            .enumerate()
            .for_each(|(idx, acc)| {
                let (b, oc) = (idx / o, idx % o);
                acc.fill(bias[oc]);
                for ic in 0..c {
                    let src = input.plane(b, ic);
                    let wk = &weight.data[(oc * c + ic) * k * k..(oc * c + ic + 1) * k * k];
                    for dy in 0..k {
                        for dx in 0..k {
                            accumulate_shifted(
                                acc,
                                src,
                                h,
                                w,
                                dy as isize - pad,
                                dx as isize - pad,
                                wk[dy * k + dx],
                            );
                        }
                    }
                }
            });
    }
    Tensor4::from_vec([n, o, h, w], out)
}

/// Gradient of [`conv2d`] with respect to its input.
pub fn conv2d_grad_input<T: Real>(grad_out: &Tensor4<T>, weight: &Tensor4<T>) -> Tensor4<T> {
    let [n, o, h, w] = grad_out.shape();
    let [_, c, k, _] = weight.shape();
    let pad = (k / 2) as isize;
    let plane = h * w;
    let mut out = vec![T::ZERO; n * c * plane];
    if plane > 0 {
        out.par_chunks_mut(plane)
            .enumerate()
            .for_each(|(idx, acc)| {
                let (b, ic) = (idx / c, idx % c);
                for oc in 0..o {
                    let g = grad_out.plane(b, oc);
                    let wk = &weight.data[(oc * c + ic) * k * k..(oc * c + ic + 1) * k * k];
                    for dy in 0..k {
                        for dx in 0..k {
                            accumulate_shifted(
                                acc,
                                g,
                                h,
                                w,
                                pad - dy as isize,
                                pad - dx as isize,
                                wk[dy * k + dx],
                            );
                        }
                    }
                }
            });
    }
    Tensor4 {
        shape: [n, c, h, w],
        data: out,
    }
}

/// Gradients of [`conv2d`] with respect to weight and bias.
pub fn conv2d_grad_params<T: Real>(
    input: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    k: usize,
) -> (Tensor4<T>, Vec<T>) {
    let [n, c, h, w] = input.shape();
    let o = grad_out.channels();
    let pad = (k / 2) as isize;
    let per_out = c * k * k;
    let mut gw = vec![T::ZERO; o * per_out];
    gw.par_chunks_mut(per_out.max(1))
        .enumerate()
        .for_each(|(oc, dst)| {
            for b in 0..n {
                let g = grad_out.plane(b, oc);
                for ic in 0..c {
                    let src = input.plane(b, ic);
                    for dy in 0..k {
                        for dx in 0..k {
                            let (oy, ox) = (dy as isize - pad, dx as isize - pad);
                            dst[(ic * k + dy) * k + dx] += shifted_dot(g, src, h, w, oy, ox);
                        }
                    }
                }
            }
        });
    let gb = (0..o)
        .into_par_iter()
        .map(|oc| {
            let mut s = T::ZERO;
            for b in 0..n {
                for &v in grad_out.plane(b, oc) {
                    s += v;
                }
            }
            s
        })
        .collect();
    (
        Tensor4 {
            shape: [o, c, k, k],
            data: gw,
        },
        gb,
    )
}

/// `sum_{y,x} g[y][x] * src[y + oy][x + ox]` over the valid region.
#[inline]
fn shifted_dot<T: Real>(g: &[T], src: &[T], h: usize, w: usize, oy: isize, ox: isize) -> T {
    let x0 = (-ox).max(0) as usize;
    let x1 = (w as isize - ox).min(w as isize);
    let mut acc = T::ZERO;
    if x1 <= x0 as isize {
        return acc;
    }
    let x1 = x1 as usize;
    for y in 0..h {
        let sy = y as isize + oy;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        let gr = &g[y * w + x0..y * w + x1];
        let s_start = (sy as usize) * w + (x0 as isize + ox) as usize;
        let sr = &src[s_start..s_start + (x1 - x0)];
        for (&a, &b) in gr.iter().zip(sr) {
            acc += a * b;
        }
    }
    acc
}

pub fn relu<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

pub fn add<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    if a.shape != b.shape {
        return Err(Error::shape("add", &a.shape, &b.shape));
    }
    Ok(Tensor4 {
        shape: a.shape,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect(),
    })
}

pub fn scale<T: Real>(x: &Tensor4<T>, alpha: T) -> Tensor4<T> {
    x.map(|v| v * alpha)
}

/// Concatenates along the channel axis, preserving part order.
pub fn concat_channels<T: Real>(parts: &[&Tensor4<T>]) -> Result<Tensor4<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat_channels", "no tensors given"))?;
    let [n, _, h, w] = first.shape;
    let mut total = 0;
    for p in parts {
        if p.shape[0] != n || p.shape[2] != h || p.shape[3] != w {
            return Err(Error::shape("concat_channels", &first.shape, &p.shape));
        }
        total += p.shape[1];
    }
    let mut data = Vec::with_capacity(n * total * h * w);
    for b in 0..n {
        for p in parts {
            let len = p.shape[1] * h * w;
            data.extend_from_slice(&p.data[b * len..(b + 1) * len]);
        }
    }
    Ok(Tensor4 {
        shape: [n, total, h, w],
        data,
    })
}

/// Splits into contiguous channel slices of the given sizes.
pub fn split_channels<T: Real>(x: &Tensor4<T>, sizes: &[usize]) -> Result<Vec<Tensor4<T>>> {
    let [n, c, h, w] = x.shape;
    let sum: usize = sizes.iter().sum();
    if sum != c {
        return Err(Error::invalid(
            "split_channels",
            format!("sizes {sizes:?} sum to {sum}, tensor has {c} channels"),
        ));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in sizes {
        let mut data = Vec::with_capacity(n * s * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            data.extend_from_slice(&x.data[base..base + s * plane]);
        }
        out.push(Tensor4 {
            shape: [n, s, h, w],
            data,
        });
        start += s;
    }
    Ok(out)
}

/// Sub-pixel rearrangement:
/// `out[n, c, y*r+dy, x*r+dx] = in[n, c*r*r + dy*r + dx, y, x]`.
pub fn pixel_shuffle<T: Real>(x: &Tensor4<T>, r: usize) -> Result<Tensor4<T>> {
    let [n, c, h, w] = x.shape;
    if r == 0 || c % (r * r) != 0 {
        return Err(Error::invalid(
            "pixel_shuffle",
            format!("{c} channels not divisible by r^2 = {}", r * r),
        ));
    }
    let oc = c / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = Tensor4::zeros([n, oc, oh, ow]);
    for b in 0..n {
        for ch in 0..oc {
            for dy in 0..r {
                for dx in 0..r {
                    let src = x.plane(b, ch * r * r + dy * r + dx);
                    for y in 0..h {
                        let row = out.offset(b, ch, y * r + dy, 0);
                        for xx in 0..w {
                            out.data[row + xx * r + dx] = src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Real>(x: &Tensor4<T>, r: usize) -> Result<Tensor4<T>> {
    let [n, c, oh, ow] = x.shape;
    if r == 0 || oh % r != 0 || ow % r != 0 {
        return Err(Error::invalid(
            "pixel_unshuffle",
            format!("spatial size {oh}x{ow} not divisible by {r}"),
        ));
    }
    let (h, w) = (oh / r, ow / r);
    let mut out = Tensor4::zeros([n, c * r * r, h, w]);
    for b in 0..n {
        for ch in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let dst = out.offset(b, ch * r * r + dy * r + dx, 0, 0);
                    for y in 0..h {
                        for xx in 0..w {
                            out.data[dst + y * w + xx] = x.get(b, ch, y * r + dy, xx * r + dx);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Mirror along the width axis.
pub fn flip_h<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let [_, _, _, w] = x.shape;
    Tensor4::from_fn(x.shape, |[n, c, y, xx]| x.get(n, c, y, w - 1 - xx))
}

/// Mirror along the height axis.
pub fn flip_v<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let [_, _, h, _] = x.shape;
    Tensor4::from_fn(x.shape, |[n, c, y, xx]| x.get(n, c, h - 1 - y, xx))
}

/// Counter-clockwise quarter turn; swaps height and width.
pub fn rot90<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = x.shape;
    Tensor4::from_fn([n, c, w, h], |[b, ch, y, xx]| x.get(b, ch, xx, w - 1 - y))
}

/// Element `index` (0..8) of the dihedral group of the square:
/// `index % 4` counter-clockwise quarter turns, then a horizontal flip when
/// `index >= 4`.
pub fn dihedral<T: Real>(x: &Tensor4<T>, index: usize) -> Tensor4<T> {
    let mut out = x.clone();
    for _ in 0..index % 4 {
        out = rot90(&out);
    }
    if index % 8 >= 4 {
        out = flip_h(&out);
    }
    out
}
