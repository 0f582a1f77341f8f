//! Optimisation: reconstruction losses, Adam, plateau decay with early
//! stopping, and the epoch loop that ties them to the model.

mod adam;
mod fit;
mod loss;
mod schedule;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use fit::{evaluate, fit, fit_with, split_indices, EpochRecord, FitOutput, EPOCH_CSV_HEADER};
pub use loss::{bce_loss, mse_loss, LossKind};
pub use schedule::{early_stop, plateau_decay, PlateauSchedule, ScheduleStep, MIN_DELTA};

use crate::config::KvEntry;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub lr0: f64,
    pub plateau_patience: usize,
    pub decay_factor: f64,
    pub stop_patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub val_fraction: f64,
    /// L2 coefficient on the ConvLSTM recurrent kernels.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Bce,
            lr0: 1e-4,
            plateau_patience: 5,
            decay_factor: 0.5,
            stop_patience: 10,
            batch_size: 16,
            max_epochs: 100,
            val_fraction: 0.1,
            lambda: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 10] = [
        "loss",
        "lr0",
        "plateau_patience",
        "decay_factor",
        "stop_patience",
        "batch_size",
        "max_epochs",
        "val_fraction",
        "lambda",
        "seed",
    ];

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be a nonnegative number, got {}", self.lr0));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return bad(format!("decay_factor must lie in (0, 1), got {}", self.decay_factor));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        if self.plateau_patience == 0 || self.batch_size == 0 {
            return bad("plateau_patience and batch_size must be positive".into());
        }
        if self.stop_patience < self.plateau_patience {
            return bad(format!(
                "stop_patience ({}) must be at least plateau_patience ({})",
                self.stop_patience, self.plateau_patience
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be a nonnegative number, got {}", self.lambda));
        }
        Ok(())
    }

    pub fn set(&mut self, e: &KvEntry) -> Result<bool> {
        match e.key.as_str() {
            "loss" => self.loss = e.parse()?,
            "lr0" => self.lr0 = e.parse()?,
            "plateau_patience" => self.plateau_patience = e.parse()?,
            "decay_factor" => self.decay_factor = e.parse()?,
            "stop_patience" => self.stop_patience = e.parse()?,
            "batch_size" => self.batch_size = e.parse()?,
            "max_epochs" => self.max_epochs = e.parse()?,
            "val_fraction" => self.val_fraction = e.parse()?,
            "lambda" => self.lambda = e.parse()?,
            "seed" => self.seed = e.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("loss".into(), self.loss.to_string()),
            ("lr0".into(), self.lr0.to_string()),
            ("plateau_patience".into(), self.plateau_patience.to_string()),
            ("decay_factor".into(), self.decay_factor.to_string()),
            ("stop_patience".into(), self.stop_patience.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("max_epochs".into(), self.max_epochs.to_string()),
            ("val_fraction".into(), self.val_fraction.to_string()),
            ("lambda".into(), self.lambda.to_string()),
        ]
    }
}
