//! L1 training with Adam, random patches and dihedral augmentation.

mod adam;
mod sampler;

use std::fmt;

pub use adam::{adam_step, AdamParams, AdamState};
pub use sampler::{Batch, Dataset, Draw, Pair, Sampler, SamplerState};

use crate::autodiff::{Graph, Tape};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{normalize_pair, psnr};
use crate::model::CsnModel;
use crate::tensor::{Real, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub patch_lr: usize,
    pub iterations: u64,
    pub lr0: f64,
    pub lr_halve_period: u64,
    pub adam: AdamParams,
    pub seed: u64,
    pub validation_every: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            patch_lr: 24,
            iterations: 1_000_000,
            lr0: 1e-4,
            lr_halve_period: 200_000,
            adam: AdamParams::default(),
            seed: 0,
            validation_every: 10_000,
            checkpoint_every: 50_000,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size as u64),
            ("patch_lr", self.patch_lr as u64),
            ("iterations", self.iterations),
            ("lr_halve_period", self.lr_halve_period),
            ("validation_every", self.validation_every),
            ("checkpoint_every", self.checkpoint_every),
            ("log_every", self.log_every),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr0 must be positive, got {}", self.lr0)));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
            return Err(Error::InvalidConfig(
                "adam betas must lie in [0, 1) and epsilon must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Piecewise constant schedule: `lr0` halved every `lr_halve_period` steps.
pub fn lr_at(iter: u64, cfg: &TrainConfig) -> f64 {
    let halvings = (iter / cfg.lr_halve_period).min(i32::MAX as u64) as i32;
    cfg.lr0 * 2f64.powi(-halvings)
}

/// Mean absolute error.
pub fn l1_loss<T: Real>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("l1_loss", &pred.shape(), &target.shape()));
    }
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a - b).abs().to_f64())
        .sum();
    Ok(s / pred.len() as f64)
}

/// Upscales a whole image.
pub fn super_resolve<T: Real>(model: &CsnModel<T>, lr: &Image) -> Result<Image> {
    let out = model.forward(&lr.to_tensor::<T>())?;
    Ok(Image::from_tensor(&out, 0, 0))
}

/// Mean L1 loss over full images of every pair.
pub fn dataset_loss<T: Real>(model: &CsnModel<T>, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for p in &data.pairs {
        let sr = super_resolve(model, &p.lr)?;
        total += l1_loss(&sr.to_tensor::<f64>(), &p.hr.to_tensor::<f64>())?;
    }
    Ok(total / data.pairs.len().max(1) as f64)
}

/// Mean PSNR over full slices, each pair normalized by its HR maximum.
pub fn validation_psnr<T: Real>(model: &CsnModel<T>, pairs: &[Pair]) -> Result<f64> {
    let mut total = 0.0;
    for p in pairs {
        let sr = super_resolve(model, &p.lr)?;
        let (r, t) = normalize_pair(&p.hr, &sr);
        total += psnr(&r, &t, 1.0)?;
    }
    Ok(total / pairs.len().max(1) as f64)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub iteration: u64,
    pub lr: f64,
    pub loss: f64,
    pub val_psnr: Option<f64>,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "iter={} lr={:e} loss={:.8}", self.iteration, self.lr, self.loss)?;
        if let Some(v) = self.val_psnr {
            write!(f, " val_psnr={v:.4}")?;
        }
        Ok(())
    }
}

/// Everything needed to continue a run bit-exactly.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: CsnModel<f32>,
    pub config: TrainConfig,
    pub adam: AdamState<f32>,
    pub sampler: Sampler,
    /// Steps completed so far; step `i` uses `lr_at(i)`.
    pub iteration: u64,
}

impl Trainer {
    pub fn new(model: CsnModel<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(&model.params);
        let sampler = Sampler::new(config.seed);
        Ok(Self {
            model,
            config,
            adam,
            sampler,
            iteration: 0,
        })
    }

    pub fn resume(
        model: CsnModel<f32>,
        config: TrainConfig,
        adam: AdamState<f32>,
        sampler: Sampler,
        iteration: u64,
    ) -> Result<Self> {
        config.validate()?;
        if !adam.matches(&model.params) {
            return Err(Error::Incompatible("optimizer state does not match the model".into()));
        }
        Ok(Self {
            model,
            config,
            adam,
            sampler,
            iteration,
        })
    }

    fn check_dataset(&self, data: &Dataset) -> Result<()> {
        if data.scale != self.model.config.scale {
            return Err(Error::Incompatible(format!(
                "dataset scale {} does not match model scale {}",
                data.scale, self.model.config.scale
            )));
        }
        data.check_patch(self.config.patch_lr)
    }

    /// sample -> forward -> L1 -> backward -> Adam. Returns the batch loss.
    pub fn step(&mut self, data: &Dataset) -> Result<f64> {
        self.check_dataset(data)?;
        let iteration = self.iteration;
        let lr = lr_at(iteration, &self.config);
        let batch = self
            .sampler
            .sample_batch(data, self.config.batch_size, self.config.patch_lr)?;
        let (loss, grads) = {
            let mut tape = Tape::new(&self.model.params);
            let pred = self.model.forward_graph(&mut tape, batch.lr)?;
            let target = tape.constant(batch.hr);
            let loss = tape.l1_loss(pred, target)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration,
                    loss: value.to_f64(),
                });
            }
            (value.to_f64(), tape.backward(loss)?)
        };
        self.model.params.accumulate(grads);
        adam_step(&mut self.model.params, &mut self.adam, lr, self.config.adam)?;
        self.iteration += 1;
        Ok(loss)
    }

    /// Runs until `config.iterations` steps are done. `on_log` sees every
    /// record as it is produced; `on_checkpoint` runs every
    /// `checkpoint_every` steps and once at the end.
    pub fn run(
        &mut self,
        data: &Dataset,
        validation: &[Pair],
        mut on_log: impl FnMut(&LogRecord) -> Result<()>,
        mut on_checkpoint: impl FnMut(&Trainer) -> Result<()>,
    ) -> Result<Vec<LogRecord>> {
        self.check_dataset(data)?;
        let mut log = Vec::new();
        let total = self.config.iterations;
        let mut last_saved = None;
        while self.iteration < total {
            let i = self.iteration;
            let lr = lr_at(i, &self.config);
            let loss = self.step(data)?;
            let validate = !validation.is_empty() && i.is_multiple_of(self.config.validation_every);
            if i.is_multiple_of(self.config.log_every) || validate || i + 1 == total {
                let val_psnr = if validate {
                    Some(validation_psnr(&self.model, validation)?)
                } else {
                    None
                };
                let rec = LogRecord {
                    iteration: i,
                    lr,
                    loss,
                    val_psnr,
                };
                on_log(&rec)?;
                log.push(rec);
            }
            if self.iteration.is_multiple_of(self.config.checkpoint_every) {
                on_checkpoint(self)?;
                last_saved = Some(self.iteration);
            }
        }
        if last_saved != Some(self.iteration) {
            on_checkpoint(self)?;
        }
        Ok(log)
    }
}
