use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressionLoss {
    Mse,
    Mae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionConfig {
    pub loss: RegressionLoss,
}

/// Shapes, loss weights and optimizer settings of the prototype encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Class count `C` (1 for regression).
    pub classes: usize,
    /// Time-series channels `N`.
    pub channels: usize,
    /// Time steps `T`.
    pub time_steps: usize,
    /// Text embedding dimension `d_s`.
    pub embedding_dim: usize,
    /// Time kernel width `w`.
    pub time_kernel: usize,
    /// Time feature dimension `h`.
    pub time_features: usize,
    /// Text kernel width `w′`, in segments.
    pub text_kernel: usize,
    /// Text feature dimension `h′`.
    pub text_features: usize,
    /// Time prototypes per class `k`.
    pub time_prototypes: usize,
    /// Text prototypes per class `k′`.
    pub text_prototypes: usize,
    pub lambda_clustering: f64,
    pub lambda_evidencing: f64,
    pub lambda_diversity: f64,
    pub d_min_time: f64,
    pub d_min_text: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Project prototypes every this many epochs during training as well as
    /// at the end. Off when `None`.
    pub projection_every: Option<usize>,
    pub regression: Option<RegressionConfig>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            classes: 2,
            channels: 1,
            time_steps: 48,
            embedding_dim: 64,
            time_kernel: 8,
            time_features: 8,
            text_kernel: 1,
            text_features: 8,
            time_prototypes: 5,
            text_prototypes: 5,
            lambda_clustering: 0.1,
            lambda_evidencing: 0.1,
            lambda_diversity: 0.1,
            d_min_time: 1.0,
            d_min_text: 3.0,
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 32,
            seed: 7,
            projection_every: None,
            regression: None,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("classes", self.classes),
            ("channels", self.channels),
            ("time_steps", self.time_steps),
            ("embedding_dim", self.embedding_dim),
            ("time_kernel", self.time_kernel),
            ("time_features", self.time_features),
            ("text_kernel", self.text_kernel),
            ("text_features", self.text_features),
            ("time_prototypes", self.time_prototypes),
            ("text_prototypes", self.text_prototypes),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be ≥ 1")));
        }
        if self.time_kernel > self.time_steps {
            return Err(Error::InvalidConfig(format!(
                "time kernel width {} exceeds {} time steps",
                self.time_kernel, self.time_steps
            )));
        }
        for (name, v) in [
            ("lambda_clustering", self.lambda_clustering),
            ("lambda_evidencing", self.lambda_evidencing),
            ("lambda_diversity", self.lambda_diversity),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} = {v} must be ≥ 0")));
            }
        }
        for (name, v) in [("d_min_time", self.d_min_time), ("d_min_text", self.d_min_text)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} = {v} must be > 0")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.projection_every == Some(0) {
            return Err(Error::InvalidConfig("projection_every must be ≥ 1".into()));
        }
        if self.regression.is_some() && self.classes != 1 {
            return Err(Error::InvalidConfig("regression requires classes = 1".into()));
        }
        Ok(())
    }

    pub fn time_segments(&self) -> usize {
        self.time_steps - self.time_kernel + 1
    }

    pub fn total_time_prototypes(&self) -> usize {
        self.time_prototypes * self.classes
    }

    pub fn total_text_prototypes(&self) -> usize {
        self.text_prototypes * self.classes
    }
}
