use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer sizes of the conv + bidirectional LSTM detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub pool_factor: usize,
    /// Units per direction of each stacked bidirectional layer.
    pub recurrent_units: Vec<usize>,
    pub fc_units: Vec<usize>,
    /// Dropout before each fully connected layer, one per entry of `fc_units`.
    pub dropout_probs: Vec<f64>,
    pub classes: usize,
    pub input_length: usize,
    pub input_channels: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            conv_filters: 10,
            conv_kernel: 3,
            pool_factor: 2,
            recurrent_units: vec![200, 150, 100],
            fc_units: vec![300, 200],
            dropout_probs: vec![0.5, 0.3],
            classes: 2,
            input_length: 15,
            input_channels: 1,
        }
    }
}

impl NetworkConfig {
    /// Smaller recurrent and dense layers; same topology.
    pub fn reduced() -> Self {
        Self {
            recurrent_units: vec![32, 16, 16],
            fc_units: vec![32, 16],
            ..Self::default()
        }
    }

    /// Hand-checkable sizes used by gradient and shape tests.
    pub fn tiny() -> Self {
        Self {
            conv_filters: 2,
            recurrent_units: vec![3],
            fc_units: vec![4],
            dropout_probs: vec![0.5],
            input_length: 8,
            ..Self::default()
        }
    }

    pub fn conv_output_length(&self) -> usize {
        self.input_length + 1 - self.conv_kernel
    }

    pub fn pooled_length(&self) -> usize {
        self.conv_output_length() / self.pool_factor
    }

    /// Width of the recurrent stack's output vector.
    pub fn recurrent_output_width(&self) -> usize {
        2 * self.recurrent_units.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Structural(format!("invalid network config: {m}")));
        if self.conv_kernel == 0 || self.conv_kernel > self.input_length {
            return bad("conv kernel must lie in 1..=input_length");
        }
        if self.pool_factor == 0 || self.pooled_length() == 0 {
            return bad("pooling leaves no time steps");
        }
        if self.conv_filters == 0 || self.input_channels == 0 || self.classes < 2 {
            return bad("filters and channels must be >= 1, classes >= 2");
        }
        if self.recurrent_units.is_empty() || self.recurrent_units.contains(&0) {
            return bad("need at least one recurrent layer with >= 1 unit");
        }
        if self.fc_units.contains(&0) {
            return bad("fully connected units must be >= 1");
        }
        if self.dropout_probs.len() != self.fc_units.len() {
            return bad("one dropout probability per fully connected layer");
        }
        if self.dropout_probs.iter().any(|p| !(0.0..1.0).contains(p)) {
            return bad("dropout probabilities must lie in [0, 1)");
        }
        Ok(())
    }
}

/// How the validation set is carved out of the training samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationSplit {
    /// The final fraction in the given (chronological) order.
    #[default]
    Tail,
    /// The final fraction after a seeded shuffle. On a single day the tail
    /// is the empty evening, which leaves early stopping nothing to track.
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub validation_split: ValidationSplit,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    /// RMSprop moving-average decay.
    pub rho: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 70,
            validation_fraction: 0.2,
            validation_split: ValidationSplit::Tail,
            early_stop_patience: 20,
            max_epochs: 300,
            rho: 0.9,
            epsilon: 1e-7,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.early_stop_patience == 0 {
            return Err(Error::domain(
                "learning_rate must be > 0, batch_size and patience >= 1",
            ));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::domain("validation_fraction must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.rho) || !(self.epsilon > 0.0) {
            return Err(Error::domain("rho must lie in [0, 1) and epsilon > 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shapes() {
        let c = NetworkConfig::default();
        c.validate().unwrap();
        assert_eq!(c.conv_output_length(), 13);
        assert_eq!(c.pooled_length(), 6);
        assert_eq!(c.recurrent_output_width(), 200);
    }

    #[test]
    fn tiny_shapes() {
        let c = NetworkConfig::tiny();
        c.validate().unwrap();
        assert_eq!(c.conv_output_length(), 6);
        assert_eq!(c.pooled_length(), 3);
        assert_eq!(c.recurrent_output_width(), 6);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = NetworkConfig::default();
        c.conv_kernel = 16;
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::default();
        c.dropout_probs = vec![0.5];
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::default();
        c.dropout_probs = vec![0.5, 1.0];
        assert!(c.validate().is_err());
        let mut c = NetworkConfig::default();
        c.recurrent_units = vec![];
        assert!(c.validate().is_err());
    }
}
