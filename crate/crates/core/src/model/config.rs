use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Negative slope of every leaky ReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Colour channels of input images and of the predicted rain layer.
pub const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backbone {
    /// p4 group convolutions.
    P4,
    /// Plain planar convolutions (the parameter-matched counterpart).
    RegularCnn,
}

/// How the orientation channels of the last group feature map are merged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    /// Learned convolution over all `4K` orientation planes.
    Learned,
    OrientMax,
    OrientAvg,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub regular_channels: usize,
    pub p4_layers: usize,
    pub kernel: usize,
    pub aggregation: Aggregation,
    pub use_se: bool,
    pub se_reduction: usize,
    pub backbone: Backbone,
    pub cnn_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            regular_channels: 10,
            p4_layers: 4,
            kernel: 5,
            aggregation: Aggregation::Learned,
            use_se: true,
            se_reduction: 2,
            backbone: Backbone::P4,
            cnn_channels: 20,
        }
    }
}

impl ModelConfig {
    /// Default settings for the regular-CNN counterpart.
    pub fn cnn() -> Self {
        ModelConfig {
            backbone: Backbone::RegularCnn,
            ..Default::default()
        }
    }

    /// Channels carried between layers: regular channels for p4, planes for the CNN.
    pub fn width(&self) -> usize {
        match self.backbone {
            Backbone::P4 => self.regular_channels,
            Backbone::RegularCnn => self.cnn_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(Error::config(format!("kernel {} must be odd", self.kernel)));
        }
        if self.width() == 0 {
            return Err(Error::config("channel width must be positive"));
        }
        if self.use_se && (self.se_reduction == 0 || self.width() % self.se_reduction != 0) {
            return Err(Error::config(format!(
                "se_reduction {} must divide the attention width {}",
                self.se_reduction,
                self.width()
            )));
        }
        if self.backbone == Backbone::RegularCnn && self.aggregation != Aggregation::Learned {
            return Err(Error::config("orientation pooling needs the p4 backbone"));
        }
        Ok(())
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p4" => Ok(Backbone::P4),
            "cnn" | "regular_cnn" => Ok(Backbone::RegularCnn),
            other => Err(Error::config(format!("unknown backbone `{other}` (p4 | cnn)"))),
        }
    }
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backbone::P4 => "p4",
            Backbone::RegularCnn => "cnn",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" | "learned_conv" => Ok(Aggregation::Learned),
            "max" | "orient_max" => Ok(Aggregation::OrientMax),
            "avg" | "orient_avg" => Ok(Aggregation::OrientAvg),
            other => Err(Error::config(format!("unknown aggregation `{other}` (learned | max | avg)"))),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Learned => "learned",
            Aggregation::OrientMax => "max",
            Aggregation::OrientAvg => "avg",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig::cnn().validate().is_ok());
        let even = ModelConfig {
            kernel: 4,
            ..Default::default()
        };
        assert!(even.validate().is_err());
        let bad_se = ModelConfig {
            se_reduction: 3,
            ..Default::default()
        };
        assert!(bad_se.validate().is_err());
        let pooled_cnn = ModelConfig {
            aggregation: Aggregation::OrientMax,
            ..ModelConfig::cnn()
        };
        assert!(pooled_cnn.validate().is_err());
    }
}
