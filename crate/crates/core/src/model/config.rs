use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Structural hyperparameters of a PyFormer network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PyFormerConfig {
    /// Patch side S.
    pub patch_size: usize,
    /// Reduced band count B*.
    pub b_star: usize,
    pub num_levels: usize,
    /// Encoder layers per level.
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub ff_hidden: usize,
    /// Filters of the first (spatial-collapsing) convolution.
    pub conv1_channels: usize,
    /// L2 coefficient on the head weights.
    pub lambda: f64,
    pub num_classes: usize,
    #[serde(default)]
    pub use_layernorm: bool,
}

impl Default for PyFormerConfig {
    fn default() -> Self {
        PyFormerConfig {
            patch_size: 8,
            b_star: 16,
            num_levels: 2,
            num_layers: 2,
            num_heads: 4,
            d_model: 64,
            ff_hidden: 256,
            conv1_channels: 32,
            lambda: 0.01,
            num_classes: 3,
            use_layernorm: false,
        }
    }
}

impl PyFormerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("patch_size", self.patch_size),
            ("b_star", self.b_star),
            ("num_levels", self.num_levels),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("d_model", self.d_model),
            ("ff_hidden", self.ff_hidden),
            ("conv1_channels", self.conv1_channels),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(invalid!("{name} must be positive"));
        }
        if self.num_levels > 16 {
            return Err(invalid!("num_levels {} is unreasonably deep", self.num_levels));
        }
        if self.d_model % self.num_heads != 0 {
            return Err(invalid!("d_model {} is not divisible by {} heads", self.d_model, self.num_heads));
        }
        let top = self.scale(self.num_levels - 1);
        if self.patch_size % top != 0 || self.b_star % top != 0 {
            return Err(invalid!(
                "patch size {} and B* {} must both be divisible by 2^{} = {top}",
                self.patch_size,
                self.b_star,
                self.num_levels - 1
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid!("lambda must be finite and nonnegative, got {}", self.lambda));
        }
        Ok(())
    }

    /// Down-scaling factor 2^level.
    pub fn scale(&self, level: usize) -> usize {
        1usize << level
    }

    pub fn level_side(&self, level: usize) -> usize {
        self.patch_size / self.scale(level)
    }

    /// Token count at a level: the reduced band count at that scale.
    pub fn level_tokens(&self, level: usize) -> usize {
        self.b_star / self.scale(level)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    /// Length of the concatenated feature vector fed to the head.
    pub fn feature_len(&self) -> usize {
        (0..self.num_levels).map(|l| self.level_tokens(l) * self.d_model).sum()
    }

    /// Closed-form count of learnable scalars.
    pub fn param_count(&self) -> usize {
        let (d, c1, ff) = (self.d_model, self.conv1_channels, self.ff_hidden);
        let attention = 4 * d * d + 3 * d;
        let feed_forward = d * ff + ff + ff * d + d;
        let per_layer = attention + feed_forward;
        let levels: usize = (0..self.num_levels)
            .map(|l| {
                let s = self.level_side(l);
                let conv1 = c1 * s * s + c1;
                let conv2 = d * c1 + d;
                let residual = d * c1 + d;
                let positional = self.level_tokens(l) * d;
                conv1 + conv2 + residual + positional + self.num_layers * per_layer
            })
            .sum();
        levels + self.feature_len() * self.num_classes + self.num_classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        let c = PyFormerConfig::default();
        c.validate().unwrap();
        assert_eq!(c.head_dim(), 16);
        assert_eq!(c.feature_len(), 1536);
    }

    #[test]
    fn indivisible_heads_rejected() {
        let c = PyFormerConfig { num_heads: 6, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn odd_patch_with_two_levels_rejected() {
        let c = PyFormerConfig { patch_size: 5, ..Default::default() };
        assert!(c.validate().is_err());
        let one = PyFormerConfig { patch_size: 5, num_levels: 1, ..Default::default() };
        one.validate().unwrap();
    }
}
