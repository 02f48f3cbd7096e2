//! Binary checkpoints. All integers and floats are little-endian.
//!
//! ```text
//! "CSNCKPT1"
//! u32 config length, config text (see `Config::to_text`)
//! u64 iteration
//! u32 parameter count, then per parameter:
//!     u32 name length, name bytes, u32 rank, rank x u64 dims, f32 values
//! u8 has_adam; if 1: u64 step, all first moments, then all second moments
//!     (f32, parameter order, same sizes as the parameters)
//! u8 has_sampler; if 1: 32-byte seed, u64 stream, u128 word position
//! u32 CRC-32 of every preceding byte
//! ```

use std::path::Path;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::io::config::Config;
use crate::model::CsnModel;
use crate::training::{AdamState, Sampler, SamplerState, Trainer};

pub const MAGIC: &[u8; 8] = b"CSNCKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    pub iteration: u64,
    pub params: ParamStore<f32>,
    pub adam: Option<AdamState<f32>>,
    pub sampler: Option<SamplerState>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            what: "checkpoint",
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!(
                "truncated: need {n} bytes, {} left",
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn len(&mut self) -> Result<usize> {
        let at = self.pos;
        let n = self.u64()?;
        usize::try_from(n).map_err(|_| Error::Format {
            what: "checkpoint",
            offset: at,
            reason: format!("dimension {n} too large"),
        })
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.fail("size overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn flag(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => {
                self.pos -= 1;
                Err(self.fail(format!("invalid flag byte {v}")))
            }
        }
    }
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    /// Snapshot of a training run, including optimizer and sampler state.
    pub fn from_trainer(t: &Trainer) -> Self {
        Self {
            config: Config {
                model: t.model.config.clone(),
                train: t.config.clone(),
            },
            iteration: t.iteration,
            params: t.model.params.clone(),
            adam: Some(t.adam.clone()),
            sampler: Some(t.sampler.state()),
        }
    }

    /// Weights only.
    pub fn from_model(model: &CsnModel<f32>, config: Config) -> Self {
        Self {
            config: Config {
                model: model.config.clone(),
                ..config
            },
            iteration: 0,
            params: model.params.clone(),
            adam: None,
            sampler: None,
        }
    }

    pub fn model(&self) -> Result<CsnModel<f32>> {
        CsnModel::from_params(self.config.model.clone(), self.params.clone())
    }

    /// Continues the stored run. Missing optimizer or sampler state starts
    /// fresh: zero moments, sampler seeded from the training config.
    pub fn into_trainer(self) -> Result<Trainer> {
        let model = CsnModel::from_params(self.config.model, self.params)?;
        let adam = self.adam.unwrap_or_else(|| AdamState::new(&model.params));
        let sampler = match self.sampler {
            Some(s) => Sampler::from_state(s),
            None => Sampler::new(self.config.train.seed),
        };
        Trainer::resume(model, self.config.train, adam, sampler, self.iteration)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let text = self.config.to_text();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in self.params.iter() {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.dims.len() as u32).to_le_bytes());
            for &d in &p.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_f32s(&mut out, p.value.data());
        }
        match &self.adam {
            Some(a) => {
                out.push(1);
                out.extend_from_slice(&a.step.to_le_bytes());
                for m in &a.first {
                    put_f32s(&mut out, m);
                }
                for v in &a.second {
                    put_f32s(&mut out, v);
                }
            }
            None => out.push(0),
        }
        match &self.sampler {
            Some(s) => {
                out.push(1);
                out.extend_from_slice(&s.seed);
                out.extend_from_slice(&s.stream.to_le_bytes());
                out.extend_from_slice(&s.word_pos.to_le_bytes());
            }
            None => out.push(0),
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 {
            return Err(Error::Format {
                what: "checkpoint",
                offset: bytes.len(),
                reason: "file too short".into(),
            });
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format {
                what: "checkpoint",
                offset: 0,
                reason: "bad magic".into(),
            });
        }
        let body_len = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body_len..].try_into().expect("4 bytes"));
        let actual = crc32fast::hash(&bytes[..body_len]);
        if stored != actual {
            return Err(Error::Format {
                what: "checkpoint",
                offset: body_len,
                reason: format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}"),
            });
        }

        let mut r = Reader {
            bytes: &bytes[..body_len],
            pos: MAGIC.len(),
        };
        let text_len = r.u32()? as usize;
        let text_at = r.pos;
        let text = std::str::from_utf8(r.take(text_len)?).map_err(|_| Error::Format {
            what: "checkpoint",
            offset: text_at,
            reason: "config is not UTF-8".into(),
        })?;
        let config = Config::parse(text)?;
        let iteration = r.u64()?;

        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name_at = r.pos;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format {
                    what: "checkpoint",
                    offset: name_at,
                    reason: "parameter name is not UTF-8".into(),
                })?
                .to_string();
            let rank_at = r.pos;
            let rank = r.u32()? as usize;
            if !(1..=4).contains(&rank) {
                return Err(Error::Format {
                    what: "checkpoint",
                    offset: rank_at,
                    reason: format!("parameter `{name}` has rank {rank}"),
                });
            }
            let dims = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| r.fail("parameter size overflow"))?;
            let values = r.f32s(n)?;
            params.insert(name, &dims, values).map_err(|e| r.fail(e.to_string()))?;
        }

        let adam = if r.flag()? {
            let step = r.u64()?;
            let sizes: Vec<usize> = params.iter().map(|p| p.value.len()).collect();
            let first = sizes.iter().map(|&n| r.f32s(n)).collect::<Result<Vec<_>>>()?;
            let second = sizes.iter().map(|&n| r.f32s(n)).collect::<Result<Vec<_>>>()?;
            Some(AdamState { step, first, second })
        } else {
            None
        };
        let sampler = if r.flag()? {
            let seed = r.array::<32>()?;
            let stream = r.u64()?;
            let word_pos = u128::from_le_bytes(r.array()?);
            Some(SamplerState { seed, stream, word_pos })
        } else {
            None
        };
        if r.pos != body_len {
            return Err(r.fail(format!("{} unexpected trailing bytes", body_len - r.pos)));
        }
        Ok(Self {
            config,
            iteration,
            params,
            adam,
            sampler,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degradation::degrade_bd;
    use crate::image::Image;
    use crate::model::ModelConfig;
    use crate::training::{Dataset, Pair, TrainConfig};

    fn trained(steps: u64) -> Trainer {
        let hr = Image::from_fn(24, 24, |y, x| ((y / 4 + x / 3) % 2) as f64 * 0.8);
        let data = Dataset::new(
            2,
            vec![Pair {
                id: "a".into(),
                lr: degrade_bd(&hr, 2).unwrap(),
                hr,
            }],
        )
        .unwrap();
        let cfg = TrainConfig {
            batch_size: 2,
            patch_lr: 8,
            iterations: steps,
            lr0: 1e-3,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(CsnModel::build(ModelConfig::tiny(), 3).unwrap(), cfg).unwrap();
        for _ in 0..steps {
            t.step(&data).unwrap();
        }
        t
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = Checkpoint::from_trainer(&trained(3));
        let bytes = ck.encode();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode(), bytes);
        for (a, b) in ck.params.iter().zip(back.params.iter()) {
            let bits = |p: &crate::autodiff::Param<f32>| p.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(back.adam.as_ref().unwrap().step, 3);
    }

    #[test]
    fn weights_only_round_trip() {
        let model = CsnModel::<f32>::build(ModelConfig::tiny(), 9).unwrap();
        let ck = Checkpoint::from_model(&model, Config::default());
        let back = Checkpoint::decode(&ck.encode()).unwrap();
        assert!(back.adam.is_none() && back.sampler.is_none());
        assert_eq!(back.model().unwrap().params, model.params);
        assert_eq!(back.config.model, ModelConfig::tiny());
    }

    #[test]
    fn corruption_detected() {
        let bytes = Checkpoint::from_trainer(&trained(1)).encode();
        let mut flipped = bytes.clone();
        flipped[100] ^= 0x10;
        assert!(matches!(Checkpoint::decode(&flipped), Err(Error::Format { reason, .. }) if reason.contains("checksum")));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(Checkpoint::decode(&magic), Err(Error::Format { offset: 0, .. })));
        assert!(Checkpoint::decode(&bytes[..bytes.len() - 9]).is_err());
        assert!(Checkpoint::decode(&bytes[..5]).is_err());
    }

    #[test]
    fn trainer_resumes_from_checkpoint() {
        let t = trained(2);
        let resumed = Checkpoint::decode(&Checkpoint::from_trainer(&t).encode())
            .unwrap()
            .into_trainer()
            .unwrap();
        assert_eq!(resumed.iteration, 2);
        assert_eq!(resumed.sampler.state(), t.sampler.state());
        assert_eq!(resumed.adam, t.adam);
    }
}
