#![allow(dead_code)]

use csn::degradation::degrade_bd;
use csn::image::Image;
use csn::model::{CsnModel, ModelConfig};
use csn::training::{Dataset, Pair, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Separable Gaussian smoothing with clamped borders.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = k.iter().sum();
    let (h, w) = img.dims();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let rows = Image::from_fn(h, w, |y, x| {
        (-r..=r).map(|d| k[(d + r) as usize] * img.get(y, clamp(x as isize + d, w))).sum::<f64>() / total
    });
    Image::from_fn(h, w, |y, x| {
        (-r..=r).map(|d| k[(d + r) as usize] * rows.get(clamp(y as isize + d, h), x)).sum::<f64>() / total
    })
}

/// Smoothed phantom: rectangles and disks on a dark background, blurred
/// with sigma = 1 pixel so edges are not aliased by downsampling.
pub fn phantom(size: usize, seed: u64) -> Image {
    gaussian_blur(&sharp_phantom(size, seed), 1.0)
}

/// Piecewise constant phantom, values in [0, 1].
pub fn sharp_phantom(size: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::filled(size, size, rng.gen_range(0.0..0.2));
    let s = size as f64;
    for _ in 0..rng.gen_range(3..6) {
        let v = rng.gen_range(0.2..1.0);
        if rng.gen_bool(0.5) {
            let (y0, x0) = (rng.gen_range(0.0..s * 0.7), rng.gen_range(0.0..s * 0.7));
            let (h, w) = (rng.gen_range(s * 0.15..s * 0.5), rng.gen_range(s * 0.15..s * 0.5));
            let data = img.data_mut();
            for y in 0..size {
                for x in 0..size {
                    let (fy, fx) = (y as f64, x as f64);
                    if fy >= y0 && fy < y0 + h && fx >= x0 && fx < x0 + w {
                        data[y * size + x] = v;
                    }
                }
            }
        } else {
            let (cy, cx) = (rng.gen_range(0.0..s), rng.gen_range(0.0..s));
            let rad = rng.gen_range(s * 0.1..s * 0.3);
            let data = img.data_mut();
            for y in 0..size {
                for x in 0..size {
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    if dy * dy + dx * dx <= rad * rad {
                        data[y * size + x] = v;
                    }
                }
            }
        }
    }
    img
}

pub fn phantom_dataset(count: usize, size: usize, scale: usize, seed: u64) -> Dataset {
    let pairs = (0..count)
        .map(|i| {
            let hr = phantom(size, seed * 1000 + i as u64);
            Pair {
                id: format!("phantom{i:02}"),
                lr: degrade_bd(&hr, scale).unwrap(),
                hr,
            }
        })
        .collect();
    Dataset::new(scale, pairs).unwrap()
}

/// The desk-scale overfit setting: tiny model, batch 4, 16x16 LR patches,
/// constant lr 1e-3, 500 steps.
pub fn overfit_trainer(seed: u64) -> Trainer {
    let model = CsnModel::build(ModelConfig::tiny(), seed).unwrap();
    let cfg = TrainConfig {
        batch_size: 4,
        patch_lr: 16,
        iterations: 500,
        lr0: 1e-3,
        seed,
        log_every: 50,
        validation_every: 500,
        checkpoint_every: 500,
        ..TrainConfig::default()
    };
    Trainer::new(model, cfg).unwrap()
}
