//! `key = value` configuration files.
//!
//! One assignment per line; `#` starts a comment. Missing keys keep their
//! defaults, unknown keys are rejected.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub const KEYS: [&str; 21] = [
    "n",
    "m",
    "variant",
    "channels",
    "growth",
    "scale",
    "in_channels",
    "esc",
    "residual_scale",
    "batch_size",
    "patch_lr",
    "iterations",
    "lr0",
    "lr_halve_period",
    "beta1",
    "beta2",
    "epsilon",
    "seed",
    "validation_every",
    "checkpoint_every",
    "log_every",
];

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| Error::ConfigParse {
        line,
        reason: format!("invalid value `{raw}` for `{key}`"),
    })
}

impl Config {
    fn set(&mut self, line: usize, key: &str, raw: &str) -> Result<()> {
        let (m, t) = (&mut self.model, &mut self.train);
        let at_line = |e: Error| Error::ConfigParse {
            line,
            reason: e.to_string(),
        };
        match key {
            "n" => m.n = value(line, key, raw)?,
            "m" => m.m = value(line, key, raw)?,
            "variant" => m.variant = raw.parse().map_err(at_line)?,
            "channels" => m.channels = value(line, key, raw)?,
            "growth" => m.growth = value(line, key, raw)?,
            "scale" => m.scale = value(line, key, raw)?,
            "in_channels" => m.in_channels = value(line, key, raw)?,
            "esc" => m.esc = raw.parse().map_err(at_line)?,
            "residual_scale" => m.residual_scale = value(line, key, raw)?,
            "batch_size" => t.batch_size = value(line, key, raw)?,
            "patch_lr" => t.patch_lr = value(line, key, raw)?,
            "iterations" => t.iterations = value(line, key, raw)?,
            "lr0" => t.lr0 = value(line, key, raw)?,
            "lr_halve_period" => t.lr_halve_period = value(line, key, raw)?,
            "beta1" => t.adam.beta1 = value(line, key, raw)?,
            "beta2" => t.adam.beta2 = value(line, key, raw)?,
            "epsilon" => t.adam.epsilon = value(line, key, raw)?,
            "seed" => t.seed = value(line, key, raw)?,
            "validation_every" => t.validation_every = value(line, key, raw)?,
            "checkpoint_every" => t.checkpoint_every = value(line, key, raw)?,
            "log_every" => t.log_every = value(line, key, raw)?,
            _ => {
                return Err(Error::ConfigParse {
                    line,
                    reason: format!("unknown key `{key}`"),
                })
            }
        }
        Ok(())
    }

    /// Parses and validates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen = Vec::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw_line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, raw) = content.split_once('=').ok_or_else(|| Error::ConfigParse {
                line,
                reason: format!("expected `key = value`, found `{content}`"),
            })?;
            let (key, raw) = (key.trim(), raw.trim());
            if key.is_empty() || raw.is_empty() {
                return Err(Error::ConfigParse {
                    line,
                    reason: format!("expected `key = value`, found `{content}`"),
                });
            }
            if seen.iter().any(|k: &String| k == key) {
                return Err(Error::ConfigParse {
                    line,
                    reason: format!("duplicate key `{key}`"),
                });
            }
            cfg.set(line, key, raw)?;
            seen.push(key.to_string());
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Every key, in a form [`Config::parse`] reads back to an equal value.
    pub fn to_text(&self) -> String {
        let (m, t) = (&self.model, &self.train);
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("n", m.n.to_string());
        put("m", m.m.to_string());
        put("variant", m.variant.to_string());
        put("channels", m.channels.to_string());
        put("growth", m.growth.to_string());
        put("scale", m.scale.to_string());
        put("in_channels", m.in_channels.to_string());
        put("esc", m.esc.to_string());
        // `{:?}` prints the shortest string that parses back exactly
        put("residual_scale", format!("{:?}", m.residual_scale));
        put("batch_size", t.batch_size.to_string());
        put("patch_lr", t.patch_lr.to_string());
        put("iterations", t.iterations.to_string());
        put("lr0", format!("{:?}", t.lr0));
        put("lr_halve_period", t.lr_halve_period.to_string());
        put("beta1", format!("{:?}", t.adam.beta1));
        put("beta2", format!("{:?}", t.adam.beta2));
        put("epsilon", format!("{:?}", t.adam.epsilon));
        put("seed", t.seed.to_string());
        put("validation_every", t.validation_every.to_string());
        put("checkpoint_every", t.checkpoint_every.to_string());
        put("log_every", t.log_every.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BranchKind, EscMode, StageSpec, Variant};
    use proptest::prelude::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::parse("").unwrap();
        assert_eq!((c.model.n, c.model.m), (4, 4));
        assert_eq!((c.model.channels, c.model.growth), (256, 64));
        assert_eq!(c.model.variant, Variant::R3D3);
        assert_eq!(c.model.scale, 2);
        assert_eq!(c.model.esc, EscMode::Bicubic);
        assert_eq!(c.train.batch_size, 16);
        assert_eq!(c.train.patch_lr, 24);
        assert_eq!(c.train.lr0, 1e-4);
        assert_eq!(c, Config::parse("# only a comment\n\n   \n").unwrap());
    }

    #[test]
    fn variant_key_selects_branches() {
        let c = Config::parse("variant = R3R5  # two residual branches\n").unwrap();
        match c.model.variant.stage() {
            StageSpec::Split { upper, lower, .. } => {
                assert_eq!((upper.kind, upper.kernel), (BranchKind::Residual, 3));
                assert_eq!((lower.kind, lower.kernel), (BranchKind::Residual, 5));
            }
            StageSpec::Plain => panic!("expected split stage"),
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        let line_of = |text: &str| match Config::parse(text) {
            Err(Error::ConfigParse { line, .. }) => line,
            other => panic!("{other:?}"),
        };
        assert_eq!(line_of("n = 2\nchanels = 8\n"), 2);
        assert_eq!(line_of("\n\nscale three\n"), 3);
        assert_eq!(line_of("lr0 = fast\n"), 1);
        assert_eq!(line_of("variant = R9D9\n"), 1);
        assert_eq!(line_of("n = 2\nn = 3\n"), 2);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(matches!(Config::parse("n = 0"), Err(Error::InvalidConfig(_))));
        assert!(matches!(Config::parse("channels = 15"), Err(Error::InvalidConfig(_))));
        assert!(matches!(Config::parse("batch_size = 0"), Err(Error::InvalidConfig(_))));
        assert!(Config::parse("n = -1").is_err());
    }

    #[test]
    fn every_key_is_written() {
        let text = Config::default().to_text();
        for k in KEYS {
            assert!(text.contains(&format!("\n{k} = ")) || text.starts_with(&format!("{k} = ")), "{k}");
        }
        assert_eq!(text.lines().count(), KEYS.len());
    }

    proptest! {
        #[test]
        fn text_round_trip(
            n in 1usize..6, m in 1usize..6, v in 0usize..9, half in 1usize..64,
            scale in 2usize..5, esc in 0usize..4, lr0 in 1e-7f64..1.0, seed in any::<u64>(),
            rs in -2.0f64..2.0,
        ) {
            let mut c = Config::default();
            c.model.n = n;
            c.model.m = m;
            c.model.variant = Variant::ALL[v];
            c.model.channels = 2 * half;
            c.model.scale = scale;
            c.model.esc = [EscMode::None, EscMode::Nearest, EscMode::Bilinear, EscMode::Bicubic][esc];
            c.model.residual_scale = rs;
            c.train.lr0 = lr0;
            c.train.seed = seed;
            prop_assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
        }
    }
}
