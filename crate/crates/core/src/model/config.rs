use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the graying block turns its channel logits into band weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GbNormalize {
    /// Softmax over channels: weights are positive and sum to one.
    #[default]
    Softmax,
    /// Raw fully-connected outputs.
    None,
}

impl GbNormalize {
    pub fn code(self) -> u8 {
        match self {
            GbNormalize::Softmax => 0,
            GbNormalize::None => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(GbNormalize::Softmax),
            1 => Some(GbNormalize::None),
            _ => None,
        }
    }
}

impl FromStr for GbNormalize {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "softmax" => Ok(GbNormalize::Softmax),
            "none" => Ok(GbNormalize::None),
            other => Err(format!("unknown gb normalization {other:?} (expected softmax or none)")),
        }
    }
}

/// Network hyperparameters. The defaults follow the `k3n128s1` layer label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub bands: usize,
    pub ratio: usize,
    pub feb_channels: usize,
    pub feb_kernel: usize,
    pub dedb_layers: usize,
    pub dedb_growth: usize,
    pub gb_hidden_channels: usize,
    pub gb_fc_hidden: usize,
    pub rb_kernel_size: usize,
    /// Standard deviation of the Gaussian the blur kernel starts from.
    pub rb_init_sigma: f64,
    pub gb_normalize: GbNormalize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            bands: 4,
            ratio: 4,
            feb_channels: 128,
            feb_kernel: 3,
            dedb_layers: 4,
            dedb_growth: 128,
            gb_hidden_channels: 32,
            gb_fc_hidden: 8,
            rb_kernel_size: 9,
            rb_init_sigma: 2.0,
            gb_normalize: GbNormalize::Softmax,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// A narrow network with the full block structure, for gradient checks
    /// and fast tests.
    pub fn micro() -> Self {
        ModelConfig {
            feb_channels: 4,
            dedb_growth: 4,
            gb_hidden_channels: 4,
            ..Self::default()
        }
    }

    /// The width used for desk-scale training runs.
    pub fn compact() -> Self {
        ModelConfig {
            feb_channels: 16,
            dedb_growth: 16,
            gb_hidden_channels: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("bands", self.bands),
            ("feb_channels", self.feb_channels),
            ("dedb_layers", self.dedb_layers),
            ("dedb_growth", self.dedb_growth),
            ("gb_hidden_channels", self.gb_hidden_channels),
            ("gb_fc_hidden", self.gb_fc_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.rb_kernel_size % 2 == 0 {
            return Err(Error::InvalidArgument(format!("rb_kernel_size must be odd, got {}", self.rb_kernel_size)));
        }
        if self.feb_kernel % 2 == 0 {
            return Err(Error::InvalidArgument(format!("feb_kernel must be odd, got {}", self.feb_kernel)));
        }
        // One stride-2 downsampling conv in each FEB and one stride-2 deconv
        // in the DEDB; the network itself runs at PAN resolution.
        if self.ratio != 4 {
            return Err(Error::InvalidArgument(format!("only r=4 is supported, got {}", self.ratio)));
        }
        if !(self.rb_init_sigma > 0.0) {
            return Err(Error::InvalidArgument("rb_init_sigma must be positive".into()));
        }
        Ok(())
    }

    /// Input channel count of DEDB layer `i` (1-based).
    pub fn dedb_layer_inputs(&self, i: usize) -> usize {
        2 * self.feb_channels + self.dedb_growth * (i - 1)
    }
}
