use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::NetError;
use crate::autodiff::conv_output_size;
use crate::sigproc::ChannelId;

/// Input/output combination of the transpulmonary-pressure task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// EIT in, one output.
    EitOnly,
    /// EIT in, transpulmonary and airway pressure out.
    EitJointOutputs,
    /// EIT and absolute airway pressure in.
    EitPlusPaw,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::EitOnly, Variant::EitJointOutputs, Variant::EitPlusPaw];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::EitOnly => "eit-only",
            Variant::EitJointOutputs => "eit-joint-outputs",
            Variant::EitPlusPaw => "eit-plus-paw",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "1" | "v1" | "eit-only" => Ok(Variant::EitOnly),
            "2" | "v2" | "eit-joint-outputs" => Ok(Variant::EitJointOutputs),
            "3" | "v3" | "eit-plus-paw" => Ok(Variant::EitPlusPaw),
            _ => Err(format!("unknown variant '{s}' (expected 1, 2, 3 or eit-only, eit-joint-outputs, eit-plus-paw)")),
        }
    }
}

/// Airway pressure is divided by this before the auxiliary layer, cmH2O.
pub const AUX_PAW_SCALE: f64 = 20.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Residual groups `N`.
    pub groups: usize,
    /// Residual blocks per group `n_i`; each block holds two convolutions.
    pub layers_per_group: usize,
    /// Stem width `n_f`; group `g` has `n_f · 2^g` channels.
    pub initial_features: usize,
    /// Per-frame feature size `n_intermed`.
    pub intermed_dim: usize,
    pub lstm_hidden: usize,
    pub output_channels: Vec<ChannelId>,
    pub variant: Variant,
    pub aux_hidden: usize,
    pub image_size: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            groups: 3,
            layers_per_group: 3,
            initial_features: 8,
            intermed_dim: 32,
            lstm_hidden: 512,
            output_channels: vec![ChannelId::Volume],
            variant: Variant::EitOnly,
            aux_hidden: 32,
            image_size: 32,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

/// Spatial size and width entering and leaving one residual block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub in_size: usize,
    pub out_size: usize,
}

impl BlockShape {
    pub fn needs_projection(&self) -> bool {
        self.in_channels != self.out_channels || self.stride != 1
    }
}

impl ModelConfig {
    pub fn output_count(&self) -> usize {
        self.output_channels.len()
    }

    /// Convolutions on the main path: the stem plus two per block.
    /// Shortcut projections are not counted.
    pub fn conv_layer_count(&self) -> usize {
        1 + 2 * self.groups * self.layers_per_group
    }

    pub fn lstm_input_size(&self) -> usize {
        self.intermed_dim + if self.variant == Variant::EitPlusPaw { self.aux_hidden } else { 0 }
    }

    pub fn group_channels(&self, g: usize) -> usize {
        self.initial_features << g
    }

    /// Width of the last group, i.e. the pooled feature size.
    pub fn pooled_channels(&self) -> usize {
        self.group_channels(self.groups - 1)
    }

    /// Validates the configuration and walks the extractor's shape algebra:
    /// every convolution must yield a whole spatial size of at least one
    /// pixel, and each shortcut must agree with its main path.
    pub fn block_shapes(&self) -> Result<Vec<BlockShape>, NetError> {
        let positive = [
            ("groups", self.groups),
            ("layers_per_group", self.layers_per_group),
            ("initial_features", self.initial_features),
            ("intermed_dim", self.intermed_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("image_size", self.image_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(NetError::Config(format!("{name} must be positive")));
            }
        }
        if self.groups > 16 {
            return Err(NetError::Config(format!("groups = {} is unreasonably deep", self.groups)));
        }
        if self.output_channels.is_empty() {
            return Err(NetError::Config("output_channels must not be empty".into()));
        }
        if self.variant == Variant::EitPlusPaw && self.aux_hidden == 0 {
            return Err(NetError::Config("aux_hidden must be positive for eit-plus-paw".into()));
        }
        if self.variant == Variant::EitJointOutputs && self.output_channels.len() < 2 {
            return Err(NetError::Config("eit-joint-outputs needs at least two output channels".into()));
        }
        if self.variant == Variant::EitPlusPaw && self.output_channels.contains(&ChannelId::Paw) {
            return Err(NetError::Config("eit-plus-paw takes p_aw as input; it cannot also be an output".into()));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(NetError::Config("bn_eps must be positive and bn_momentum within [0, 1]".into()));
        }
        let mut size = conv_output_size(self.image_size, 3, 1, 1)
            .ok_or_else(|| NetError::Config("stem kernel larger than the image".into()))?;
        let mut channels = self.initial_features;
        let mut shapes = Vec::new();
        for g in 0..self.groups {
            for b in 0..self.layers_per_group {
                let stride = if g > 0 && b == 0 { 2 } else { 1 };
                let out_channels = self.group_channels(g);
                let collapse = || {
                    NetError::Config(format!(
                        "group {g} block {b}: spatial size {size} cannot be downsampled at stride {stride}"
                    ))
                };
                if stride > 1 && size < 2 {
                    return Err(collapse());
                }
                let main = conv_output_size(size, 3, stride, 1).ok_or_else(collapse)?;
                let main = conv_output_size(main, 3, 1, 1).ok_or_else(collapse)?;
                let shortcut = conv_output_size(size, 1, stride, 0).ok_or_else(collapse)?;
                if main == 0 || main != shortcut {
                    return Err(NetError::Config(format!(
                        "group {g} block {b}: main path {main} and shortcut {shortcut} disagree"
                    )));
                }
                shapes.push(BlockShape { in_channels: channels, out_channels, stride, in_size: size, out_size: main });
                channels = out_channels;
                size = main;
            }
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        self.block_shapes().map(|_| ())
    }
}
