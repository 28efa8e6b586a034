//! Network architecture: capacity variants, the declarative layer spec,
//! and the instantiated encoder/neck/decoder graph.

mod micro;
mod yunet;

pub use micro::MicroNet;
pub use yunet::{FusedMaps, Network, NetworkCache};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Scalar;

/// Base (pre-scaling) channel widths for encoder stages P1..P5.
const BASE_CHANNELS: [usize; 5] = [64, 128, 256, 512, 1024];
/// Base repeat counts for the stage blocks of P2..P5.
const BASE_REPEATS: [usize; 4] = [2, 4, 4, 2];
/// Base repeat count for fusion blocks in the neck.
const BASE_NECK_REPEATS: usize = 2;

/// The five capacity tiers, ordered `n < s < m < l < x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    N,
    S,
    M,
    L,
    X,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::N, Variant::S, Variant::M, Variant::L, Variant::X];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::N => "n",
            Variant::S => "s",
            Variant::M => "m",
            Variant::L => "l",
            Variant::X => "x",
        }
    }

    /// Depth/width multipliers and the channel cap for each tier.
    pub fn scale(self) -> ScaleConfig {
        let (depth, width, max_channels) = match self {
            Variant::N => (0.50, 0.25, 1024),
            Variant::S => (0.50, 0.50, 1024),
            Variant::M => (0.50, 1.00, 512),
            Variant::L => (1.00, 1.00, 512),
            Variant::X => (1.00, 1.50, 512),
        };
        ScaleConfig {
            depth_multiplier: depth,
            width_multiplier: width,
            max_channels,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" => Ok(Variant::N),
            "s" => Ok(Variant::S),
            "m" => Ok(Variant::M),
            "l" => Ok(Variant::L),
            "x" => Ok(Variant::X),
            other => Err(Error::Config(format!(
                "unknown variant {other:?}; expected one of n, s, m, l, x"
            ))),
        }
    }
}

/// Multipliers that turn the base layout into a concrete tier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub depth_multiplier: f64,
    pub width_multiplier: f64,
    pub max_channels: usize,
}

impl ScaleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.depth_multiplier > 0.0 && self.depth_multiplier <= 1.0) {
            return Err(Error::Config(format!(
                "depth multiplier {} outside (0, 1]",
                self.depth_multiplier
            )));
        }
        if !(self.width_multiplier > 0.0 && self.width_multiplier <= 2.0) {
            return Err(Error::Config(format!(
                "width multiplier {} outside (0, 2]",
                self.width_multiplier
            )));
        }
        if self.max_channels < 64 {
            return Err(Error::Config(format!(
                "max_channels {} below 64",
                self.max_channels
            )));
        }
        Ok(())
    }

    fn channels(&self, base: usize) -> usize {
        let scaled = (base as f64 * self.width_multiplier / 8.0).round() as usize;
        (scaled.max(1) * 8).min(self.max_channels)
    }

    fn repeats(&self, base: usize) -> usize {
        ((base as f64 * self.depth_multiplier).round() as usize).max(1)
    }
}

/// Declarative description of one network instance. Serializes to TOML with
/// the key set `variant", "in_channels", "num_classes", "stage_channels",
/// "stage_repeats"`; this document is embedded in checkpoints so that they
/// are self-describing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub variant: Variant,
    pub in_channels: usize,
    pub num_classes: usize,
    /// Output channels of encoder stages P1..P5 (strides 2..32).
    pub stage_channels: Vec<usize>,
    /// Stage-block repeat counts for P2..P5.
    pub stage_repeats: Vec<usize>,
    /// Encoder-stride -> decoder-stride skip connections, derived.
    #[serde(skip, default)]
    pub skip_wiring: Vec<(u32, u32)>,
}

impl NetworkSpec {
    pub fn for_variant(variant: Variant, in_channels: usize, num_classes: usize) -> Result<Self> {
        if in_channels == 0 {
            return Err(Error::Config("in_channels must be >= 1".into()));
        }
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be >= 1".into()));
        }
        let scale = variant.scale();
        scale.validate()?;
        let spec = NetworkSpec {
            variant,
            in_channels,
            num_classes,
            stage_channels: BASE_CHANNELS.iter().map(|&b| scale.channels(b)).collect(),
            stage_repeats: BASE_REPEATS.iter().map(|&b| scale.repeats(b)).collect(),
            skip_wiring: default_skip_wiring(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Repeat count of the fusion blocks in the neck, scaled like the stages.
    pub fn neck_repeats(&self) -> usize {
        self.variant.scale().repeats(BASE_NECK_REPEATS)
    }

    /// Stride-halving steps in the encoder (stem plus four stage downsamples).
    pub const fn downsample_steps() -> usize {
        5
    }

    /// Stride-doubling steps along the neck + decoder path to full resolution.
    pub const fn upsample_steps() -> usize {
        2 + 3
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.num_classes == 0 {
            return Err(Error::Config(
                "in_channels and num_classes must be >= 1".into(),
            ));
        }
        if self.stage_channels.len() != 5 {
            return Err(Error::Config(format!(
                "expected 5 stage channels, got {}",
                self.stage_channels.len()
            )));
        }
        if self.stage_repeats.len() != 4 {
            return Err(Error::Config(format!(
                "expected 4 stage repeat counts, got {}",
                self.stage_repeats.len()
            )));
        }
        if self.stage_channels.contains(&0) {
            return Err(Error::Config("stage channels must be positive".into()));
        }
        if self.stage_repeats.contains(&0) {
            return Err(Error::Config("stage repeats must be positive".into()));
        }
        if !self.skip_wiring.is_empty() && self.skip_wiring != default_skip_wiring() {
            return Err(Error::Config(
                "decoder skip wiring must connect encoder strides 4 and 2 \
                 to the decoder stages at the same strides"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut spec: NetworkSpec = toml::from_str(text)
            .map_err(|e| Error::Config(format!("invalid network spec document: {e}")))?;
        if spec.skip_wiring.is_empty() {
            spec.skip_wiring = default_skip_wiring();
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn default_skip_wiring() -> Vec<(u32, u32)> {
    vec![(4, 4), (2, 2)]
}

/// Encoder activations keyed by output stride.
#[derive(Debug, Clone)]
pub struct FeaturePyramid<F: Scalar> {
    pub levels: BTreeMap<u32, Array4<F>>,
}

impl<F: Scalar> FeaturePyramid<F> {
    pub fn level(&self, stride: u32) -> Option<&Array4<F>> {
        self.levels.get(&stride)
    }

    pub fn strides(&self) -> impl Iterator<Item = u32> + '_ {
        self.levels.keys().copied()
    }
}

/// Builds an initialized network for a capacity tier. Initialization is
/// seeded and reproducible; the parameter count depends only on the spec.
pub fn build_variant<F: Scalar>(
    variant: Variant,
    in_channels: usize,
    num_classes: usize,
    seed: u64,
) -> Result<Network<F>> {
    let spec = NetworkSpec::for_variant(variant, in_channels, num_classes)?;
    Network::from_spec(spec, seed)
}
