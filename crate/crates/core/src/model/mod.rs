//! The biaffine sentence linker with structural auxiliary heads.

mod adam;
mod checkpoint;
pub mod loss;
mod network;
mod params;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use network::{
    backward, features, forward, loss, loss_and_gradients, predict, ForwardOutput, LossBreakdown,
    Mode, OutputGrads, Targets,
};
pub use params::{
    BiLstmLayer, BiaffineParams, Dense, LstmCell, ModelParams, DEPTH_CLASSES, QACT_CLASSES,
};
pub use train::{train, write_training_log, EpochLog, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Sentence embedding width, without the position feature.
    pub input_dim: usize,
    pub dense1_units: usize,
    /// Hidden units per LSTM direction.
    pub lstm_units: usize,
    pub lstm_stacks: usize,
    pub proj_units: usize,
    pub dropout_rate: f64,
    pub use_spos: bool,
    pub use_qact_head: bool,
    pub use_nd_head: bool,
    pub margin: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 768,
            dense1_units: 512,
            lstm_units: 256,
            lstm_stacks: 3,
            proj_units: 256,
            dropout_rate: 0.3,
            use_spos: false,
            use_qact_head: false,
            use_nd_head: false,
            margin: 1.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let units = [
            ("input_dim", self.input_dim),
            ("dense1_units", self.dense1_units),
            ("lstm_units", self.lstm_units),
            ("lstm_stacks", self.lstm_stacks),
            ("proj_units", self.proj_units),
        ];
        if let Some((name, _)) = units.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if !self.margin.is_finite() || self.margin < 0.0 {
            return Err(Error::Config(format!("margin {} must be >= 0", self.margin)));
        }
        Ok(())
    }

    pub fn dense_input_dim(&self) -> usize {
        self.input_dim + usize::from(self.use_spos)
    }

    /// Width of the BiLSTM output read by the projections and aux heads.
    pub fn context_dim(&self) -> usize {
        2 * self.lstm_units
    }

    /// Number of learned task weights: zero for the single-task model,
    /// otherwise one per active task.
    pub fn task_count_weighted(&self) -> usize {
        let tasks = 1 + usize::from(self.use_qact_head) + usize::from(self.use_nd_head);
        if tasks == 1 {
            0
        } else {
            tasks
        }
    }
}
