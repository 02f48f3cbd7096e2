use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{dihedral, Tensor4};

/// One low/high resolution training pair held in memory.
#[derive(Clone, Debug)]
pub struct Pair {
    pub id: String,
    pub lr: Image,
    pub hr: Image,
}

/// In-memory pairs sharing one scale factor.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub scale: usize,
    pub pairs: Vec<Pair>,
}

impl Dataset {
    /// Checks that every HR image is exactly `scale` times its LR image.
    pub fn new(scale: usize, pairs: Vec<Pair>) -> Result<Self> {
        if scale == 0 {
            return Err(Error::Dataset("scale must be positive".into()));
        }
        for p in &pairs {
            let (lh, lw) = p.lr.dims();
            let (hh, hw) = p.hr.dims();
            if hh != lh * scale || hw != lw * scale {
                return Err(Error::Dataset(format!(
                    "pair `{}`: HR {hh}x{hw} is not {scale} x LR {lh}x{lw}",
                    p.id
                )));
            }
        }
        Ok(Self { scale, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Fails unless every LR image fits a `patch x patch` window.
    pub fn check_patch(&self, patch: usize) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::Dataset("dataset is empty".into()));
        }
        for p in &self.pairs {
            let (h, w) = p.lr.dims();
            if h < patch || w < patch {
                return Err(Error::Dataset(format!(
                    "pair `{}`: LR {h}x{w} is smaller than the {patch}x{patch} patch",
                    p.id
                )));
            }
        }
        Ok(())
    }
}

/// Where one batch element came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Draw {
    pub pair: usize,
    /// `(y, x)` of the LR patch; the HR patch starts at `scale` times this.
    pub lr_offset: (usize, usize),
    /// Index into the dihedral group, see [`crate::tensor::dihedral`].
    pub transform: usize,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub lr: Tensor4<f32>,
    pub hr: Tensor4<f32>,
    pub draws: Vec<Draw>,
}

/// Serializable position of the sampler's random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplerState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

/// Uniform patch sampler with random dihedral augmentation. Pairs and
/// offsets are drawn i.i.d. with replacement.
#[derive(Clone, Debug)]
pub struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn state(&self) -> SamplerState {
        SamplerState {
            seed: self.rng.get_seed(),
            stream: self.rng.get_stream(),
            word_pos: self.rng.get_word_pos(),
        }
    }

    pub fn from_state(state: SamplerState) -> Self {
        let mut rng = ChaCha8Rng::from_seed(state.seed);
        rng.set_stream(state.stream);
        rng.set_word_pos(state.word_pos);
        Self { rng }
    }

    pub fn draw(&mut self, data: &Dataset, patch: usize) -> Draw {
        let pair = self.rng.gen_range(0..data.pairs.len());
        let (h, w) = data.pairs[pair].lr.dims();
        let y = self.rng.gen_range(0..=h - patch);
        let x = self.rng.gen_range(0..=w - patch);
        let transform = self.rng.gen_range(0..8);
        Draw {
            pair,
            lr_offset: (y, x),
            transform,
        }
    }

    pub fn sample_batch(&mut self, data: &Dataset, batch_size: usize, patch: usize) -> Result<Batch> {
        data.check_patch(patch)?;
        let r = data.scale;
        let mut lrs = Vec::with_capacity(batch_size);
        let mut hrs = Vec::with_capacity(batch_size);
        let mut draws = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let d = self.draw(data, patch);
            let p = &data.pairs[d.pair];
            let (y, x) = d.lr_offset;
            let lr = p.lr.crop(y, x, patch, patch)?.to_tensor::<f32>();
            let hr = p.hr.crop(y * r, x * r, patch * r, patch * r)?.to_tensor::<f32>();
            lrs.push(dihedral(&lr, d.transform));
            hrs.push(dihedral(&hr, d.transform));
            draws.push(d);
        }
        Ok(Batch {
            lr: Tensor4::stack(&lrs)?,
            hr: Tensor4::stack(&hrs)?,
            draws,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degradation::degrade_bd;

    fn dataset(n: usize) -> Dataset {
        let pairs = (0..n)
            .map(|i| {
                let hr = Image::from_fn(48, 40, |y, x| ((y * 40 + x + i * 7) % 97) as f64 / 97.0);
                Pair {
                    id: format!("img{i}"),
                    lr: degrade_bd(&hr, 2).unwrap(),
                    hr,
                }
            })
            .collect();
        Dataset::new(2, pairs).unwrap()
    }

    #[test]
    fn patches_are_colocated() {
        let data = dataset(3);
        let mut s = Sampler::new(1);
        let batch = s.sample_batch(&data, 6, 8).unwrap();
        assert_eq!(batch.lr.shape(), [6, 1, 8, 8]);
        assert_eq!(batch.hr.shape(), [6, 1, 16, 16]);
        for (i, d) in batch.draws.iter().enumerate() {
            let p = &data.pairs[d.pair];
            let (y, x) = d.lr_offset;
            let lr = dihedral(&p.lr.crop(y, x, 8, 8).unwrap().to_tensor::<f32>(), d.transform);
            let hr = dihedral(&p.hr.crop(2 * y, 2 * x, 16, 16).unwrap().to_tensor::<f32>(), d.transform);
            assert_eq!(batch.lr.sample(i), lr);
            assert_eq!(batch.hr.sample(i), hr);
        }
    }

    #[test]
    fn hr_offset_scales() {
        let hr = Image::from_fn(60, 60, |y, x| (y * 60 + x) as f64);
        let lr = Image::filled(30, 30, 0.0);
        let crop = hr.crop(3 * 2, 5 * 2, 48, 48).unwrap();
        assert_eq!(crop.dims(), (48, 48));
        assert_eq!(crop.get(0, 0), (6 * 60 + 10) as f64);
        assert!(Dataset::new(2, vec![Pair { id: "a".into(), lr, hr }]).is_ok());
    }

    #[test]
    fn reproducible_and_resumable() {
        let data = dataset(2);
        let mut a = Sampler::new(9);
        let mut b = Sampler::new(9);
        for _ in 0..3 {
            assert_eq!(a.sample_batch(&data, 4, 8).unwrap().draws, b.sample_batch(&data, 4, 8).unwrap().draws);
        }
        let mut resumed = Sampler::from_state(a.state());
        assert_eq!(
            a.sample_batch(&data, 4, 8).unwrap().draws,
            resumed.sample_batch(&data, 4, 8).unwrap().draws
        );
    }

    #[test]
    fn dihedral_draws_are_uniform() {
        let data = dataset(1);
        let mut s = Sampler::new(2024);
        let mut counts = [0usize; 8];
        let n = 10_000;
        for _ in 0..n {
            counts[s.draw(&data, 8).transform] += 1;
        }
        let expected = n as f64 / 8.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 7 degrees of freedom, 99.9th percentile
        assert!(chi2 < 24.32, "chi2 = {chi2}, counts = {counts:?}");
        for c in counts {
            assert!((c as f64 / n as f64 - 0.125).abs() <= 0.02);
        }
    }

    #[test]
    fn invalid_datasets_rejected() {
        let bad = Pair {
            id: "bad".into(),
            lr: Image::filled(10, 10, 0.0),
            hr: Image::filled(21, 20, 0.0),
        };
        assert!(Dataset::new(2, vec![bad]).is_err());
        let data = dataset(1);
        assert!(data.check_patch(25).is_err());
        assert!(Dataset::new(2, vec![]).unwrap().check_patch(4).is_err());
    }
}
