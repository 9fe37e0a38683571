use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyKeyConfig {
    /// Output channels of the three encoder blocks.
    pub channels: [usize; 3],
    pub descriptor_dim: usize,
    /// DKD window radius r; windows are (2r+1)^2.
    pub dkd_radius: usize,
    pub dkd_temperature: f32,
    /// Minimum score for evaluation-time detections.
    pub score_threshold: f32,
    pub train_detected: usize,
    pub train_random: usize,
    pub max_eval_keypoints: usize,
    /// Random training keypoints stay this far from the image edge.
    pub random_border: usize,
    pub bn_momentum: f32,
    pub bn_eps: f32,
}

impl Default for HyKeyConfig {
    fn default() -> Self {
        Self {
            channels: [32, 64, 128],
            descriptor_dim: 64,
            dkd_radius: 2,
            dkd_temperature: 0.1,
            score_threshold: 0.1,
            train_detected: 400,
            train_random: 400,
            max_eval_keypoints: 1024,
            random_border: 4,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl HyKeyConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.descriptor_dim < 8 {
            return fail(format!("descriptor_dim {} < 8", self.descriptor_dim));
        }
        if self.dkd_radius < 1 {
            return fail("dkd_radius must be >= 1".into());
        }
        if !(self.dkd_temperature > 0.0) {
            return fail("dkd_temperature must be > 0".into());
        }
        if self.channels.contains(&0) {
            return fail("encoder channels must be positive".into());
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return fail("bn_eps must be > 0 and bn_momentum in [0, 1]".into());
        }
        if self.random_border < self.dkd_radius {
            return fail("random_border must be >= dkd_radius".into());
        }
        Ok(())
    }

    /// Channel count of the aggregated feature block.
    pub fn aggregated_channels(&self) -> usize {
        self.channels.iter().sum()
    }
}
