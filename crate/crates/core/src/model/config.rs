use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::resize::Interpolation;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchKind {
    /// conv, ReLU, conv.
    Residual,
    /// conv, ReLU, then a conv over the concatenation of the branch input
    /// and the first conv's output.
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BranchSpec {
    pub kind: BranchKind,
    pub kernel: usize,
}

/// Structure of one stage mapping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageSpec {
    /// A single conv + ReLU on the unsplit features.
    Plain,
    /// Two branches over the channel halves. With `merge_and_run` each
    /// branch output also receives the average of both branch inputs.
    Split {
        upper: BranchSpec,
        lower: BranchSpec,
        merge_and_run: bool,
    },
}

/// Stage mapping structures. Two-letter codes name the upper (first channel
/// half) then the lower branch: `R`/`D` for residual/dense, digit for the
/// kernel size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    Sp,
    R3D3,
    R3R3,
    D3D3,
    R3D5,
    R5D3,
    R3R5,
    D3D5,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Baseline,
        Variant::Sp,
        Variant::R3D3,
        Variant::R3R3,
        Variant::D3D3,
        Variant::R3D5,
        Variant::R5D3,
        Variant::R3R5,
        Variant::D3D5,
    ];

    pub fn stage(self) -> StageSpec {
        use BranchKind::{Dense as D, Residual as R};
        let split = |uk, u, lk, l, mar| StageSpec::Split {
            upper: BranchSpec { kind: uk, kernel: u },
            lower: BranchSpec { kind: lk, kernel: l },
            merge_and_run: mar,
        };
        match self {
            Variant::Baseline => StageSpec::Plain,
            Variant::Sp => split(R, 3, D, 3, false),
            Variant::R3D3 => split(R, 3, D, 3, true),
            Variant::R3R3 => split(R, 3, R, 3, true),
            Variant::D3D3 => split(D, 3, D, 3, true),
            Variant::R3D5 => split(R, 3, D, 5, true),
            Variant::R5D3 => split(R, 5, D, 3, true),
            Variant::R3R5 => split(R, 3, R, 5, true),
            Variant::D3D5 => split(D, 3, D, 5, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "BASELINE",
            Variant::Sp => "SP",
            Variant::R3D3 => "R3D3",
            Variant::R3R3 => "R3R3",
            Variant::D3D3 => "D3D3",
            Variant::R3D5 => "R3D5",
            Variant::R5D3 => "R5D3",
            Variant::R3R5 => "R3R5",
            Variant::D3D5 => "D3D5",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant `{s}`")))
    }
}

/// Interpolation used for the external skip connection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EscMode {
    None,
    Nearest,
    Bilinear,
    Bicubic,
}

impl EscMode {
    pub fn interpolation(self) -> Option<Interpolation> {
        match self {
            EscMode::None => None,
            EscMode::Nearest => Some(Interpolation::Nearest),
            EscMode::Bilinear => Some(Interpolation::Bilinear),
            EscMode::Bicubic => Some(Interpolation::Bicubic),
        }
    }
}

impl fmt::Display for EscMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EscMode::None => "none",
            EscMode::Nearest => "nearest",
            EscMode::Bilinear => "bilinear",
            EscMode::Bicubic => "bicubic",
        })
    }
}

impl FromStr for EscMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(EscMode::None),
            "nearest" | "nn" => Ok(EscMode::Nearest),
            "bilinear" => Ok(EscMode::Bilinear),
            "bicubic" => Ok(EscMode::Bicubic),
            _ => Err(Error::InvalidConfig(format!("unknown esc mode `{s}`"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Number of channel splitting blocks.
    pub n: usize,
    /// Stage mappings per block.
    pub m: usize,
    pub variant: Variant,
    /// Trunk width. Must be even.
    pub channels: usize,
    /// Output width of the dense branch's first conv.
    pub growth: usize,
    pub scale: usize,
    pub in_channels: usize,
    pub esc: EscMode,
    /// Multiplier on each branch output before the merge terms are added.
    pub residual_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n: 4,
            m: 4,
            variant: Variant::R3D3,
            channels: 256,
            growth: 64,
            scale: 2,
            in_channels: 1,
            esc: EscMode::Bicubic,
            residual_scale: 1.0,
        }
    }
}

impl ModelConfig {
    /// The small configuration used for gradient checks and smoke tests.
    pub fn tiny() -> Self {
        Self {
            n: 1,
            m: 1,
            channels: 16,
            growth: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n == 0 {
            return fail("n must be at least 1".into());
        }
        if self.m == 0 {
            return fail("m must be at least 1".into());
        }
        if self.channels == 0 || !self.channels.is_multiple_of(2) {
            return fail(format!("channels must be even and positive, got {}", self.channels));
        }
        if self.growth == 0 {
            return fail("growth must be at least 1".into());
        }
        if !(2..=4).contains(&self.scale) {
            return fail(format!("scale must be 2, 3 or 4, got {}", self.scale));
        }
        if self.in_channels == 0 {
            return fail("in_channels must be at least 1".into());
        }
        if !self.residual_scale.is_finite() {
            return fail("residual_scale must be finite".into());
        }
        Ok(())
    }

    /// Longest input-to-output path in conv layers.
    pub fn depth(&self) -> usize {
        let s = if self.scale == 4 { 2 } else { 1 };
        let per_stage = match self.variant.stage() {
            StageSpec::Plain => 1,
            StageSpec::Split { .. } => 2,
        };
        self.n * (per_stage * self.m + 1) + s + 6
    }

    /// Pixel-shuffle factors of the upscaling stages.
    pub fn upscale_factors(&self) -> Vec<usize> {
        if self.scale == 4 {
            vec![2, 2]
        } else {
            vec![self.scale]
        }
    }
}
