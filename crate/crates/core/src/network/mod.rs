//! Pose-transfer network.
//!
//! The pose mesh passes through a per-vertex encoder (three 1×1 conv +
//! instance norm + relu stages). Its features are concatenated with the
//! identity mesh coordinates and decoded by three residual blocks whose
//! normalization layers are modulated per vertex by the identity mesh
//! (SPAdaIN). The final tanh output is in identity-mesh vertex order.

pub mod checkpoint;
mod layers;
mod params;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Shape, TensorError};

pub use layers::{
    conv, encode_pose, forward, forward_tapped, norm_unit, predict, spadain, spadain_resblock, BoundParams, ConvVars,
    NormUnit, ResBlockVars, SpadainVars,
};
pub use params::{param_layout, ModelParams, ParamSpec};

/// Instance-norm epsilon used throughout the network.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{which} mesh must have 3 channels, got shape {shape}")]
    InputChannels { which: &'static str, shape: Shape },
    #[error("pose mesh {pose} and identity mesh {identity} must share batch and vertex counts")]
    MeshMismatch { pose: Shape, identity: Shape },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("parameter `{name}`: expected shape {expected}, found {found}")]
    ShapeMismatch {
        name: String,
        expected: Shape,
        found: Shape,
    },
    #[error("block width mismatch: input has {input} channels, block expects {block}")]
    WidthMismatch { input: usize, block: usize },
    #[error("invalid widths: {0}")]
    InvalidWidths(String),
}

pub type Result<T, E = NetworkError> = std::result::Result<T, E>;

/// Architecture variants compared in the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Encoder, SPAdaIN residual decoder, tanh.
    Full,
    /// Decoder replaced by a plain 1×1 conv + relu stack of the same widths.
    Concat1,
    /// Residual decoder with every SPAdaIN unit replaced by instance norm.
    NoSpadain,
    /// Pose features max-pooled to one global vector and broadcast; the
    /// normalization of the first decoder block's input is removed.
    Maxpool,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::Concat1, Variant::NoSpadain, Variant::Maxpool];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Concat1 => "concat1",
            Variant::NoSpadain => "no_spadain",
            Variant::Maxpool => "maxpool",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected full, concat1, no_spadain, maxpool)"))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Channel widths: encoder `3 → enc1 → enc2 → enc3`, decoder
/// `(enc3 + 3) → dec2 → dec3 → 3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Widths {
    pub enc1: usize,
    pub enc2: usize,
    pub enc3: usize,
    pub dec2: usize,
    pub dec3: usize,
}

impl Widths {
    /// Full-size network: 64, 128, 1024, 513, 256.
    pub const PAPER: Widths = Widths {
        enc1: 64,
        enc2: 128,
        enc3: 1024,
        dec2: 513,
        dec3: 256,
    };

    /// Small preset for CPU training: 16, 32, 128, 64, 32.
    pub const DESK: Widths = Widths {
        enc1: 16,
        enc2: 32,
        enc3: 128,
        dec2: 64,
        dec3: 32,
    };

    /// Width of the latent embedding (pose features + identity xyz).
    pub fn latent(&self) -> usize {
        self.enc3 + 3
    }

    pub fn as_array(&self) -> [usize; 5] {
        [self.enc1, self.enc2, self.enc3, self.dec2, self.dec3]
    }

    pub fn from_array(a: [usize; 5]) -> Result<Self> {
        let w = Widths {
            enc1: a[0],
            enc2: a[1],
            enc3: a[2],
            dec2: a[3],
            dec3: a[4],
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().contains(&0) {
            return Err(NetworkError::InvalidWidths(format!("{:?} contains a zero width", self.as_array())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub widths: Widths,
    pub variant: Variant,
    pub eps: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(widths: Widths, variant: Variant, seed: u64) -> Self {
        Self {
            widths,
            variant,
            eps: NORM_EPS,
            seed,
        }
    }

    pub fn desk(variant: Variant, seed: u64) -> Self {
        Self::new(Widths::DESK, variant, seed)
    }

    pub fn paper(variant: Variant, seed: u64) -> Self {
        Self::new(Widths::PAPER, variant, seed)
    }
}
