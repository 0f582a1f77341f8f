//! Plateau learning-rate decay and early stopping on the validation loss.
//!
//! An epoch improves when its loss beats the best seen so far by more than
//! [`MIN_DELTA`]. The first epoch has nothing to beat and counts as
//! non-improving. Decay fires after `plateau_patience` consecutive
//! non-improving epochs and then restarts its count; stopping fires after
//! `stop_patience` consecutive non-improving epochs and is not reset by
//! decay.

use super::TrainConfig;

pub const MIN_DELTA: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleStep {
    /// Learning rate for the next epoch.
    pub lr: f64,
    pub decayed: bool,
    pub stop: bool,
    pub improved: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlateauSchedule {
    lr: f64,
    decay_factor: f64,
    plateau_patience: usize,
    stop_patience: usize,
    best: Option<f64>,
    plateau_wait: usize,
    stop_wait: usize,
}

impl PlateauSchedule {
    pub fn new(cfg: &TrainConfig, lr: f64) -> Self {
        PlateauSchedule {
            lr,
            decay_factor: cfg.decay_factor,
            plateau_patience: cfg.plateau_patience,
            stop_patience: cfg.stop_patience,
            best: None,
            plateau_wait: 0,
            stop_wait: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn observe(&mut self, val_loss: f64) -> ScheduleStep {
        let improved = match self.best {
            None => {
                self.best = Some(val_loss);
                false
            }
            Some(b) if val_loss < b - MIN_DELTA => {
                self.best = Some(val_loss);
                true
            }
            Some(_) => false,
        };
        if improved {
            self.plateau_wait = 0;
            self.stop_wait = 0;
        } else {
            self.plateau_wait += 1;
            self.stop_wait += 1;
        }
        let decayed = self.plateau_wait >= self.plateau_patience;
        if decayed {
            self.lr *= self.decay_factor;
            self.plateau_wait = 0;
        }
        ScheduleStep {
            lr: self.lr,
            decayed,
            stop: self.stop_wait >= self.stop_patience,
            improved,
        }
    }
}

/// Learning rate after replaying `history` from `lr`.
pub fn plateau_decay(history: &[f64], lr: f64, cfg: &TrainConfig) -> f64 {
    let mut s = PlateauSchedule::new(cfg, lr);
    for &v in history {
        s.observe(v);
    }
    s.lr()
}

/// Whether the last `stop_patience` epochs of `history` brought no improvement.
pub fn early_stop(history: &[f64], cfg: &TrainConfig) -> bool {
    let mut s = PlateauSchedule::new(cfg, 1.0);
    history.iter().fold(false, |_, &v| s.observe(v).stop)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig::default()
    }

    #[test]
    fn decreasing_history_keeps_lr() {
        let h: Vec<f64> = (0..40).map(|i| 1.0 / (i + 1) as f64).collect();
        assert_eq!(plateau_decay(&h, 1e-4, &cfg()), 1e-4);
        assert!(!early_stop(&h, &cfg()));
    }

    #[test]
    fn five_flat_epochs_halve_lr() {
        assert_eq!(plateau_decay(&[0.7; 5], 1e-4, &cfg()), 5e-5);
        assert_eq!(plateau_decay(&[0.7; 4], 1e-4, &cfg()), 1e-4);
        assert_eq!(plateau_decay(&[0.7; 10], 1e-4, &cfg()), 2.5e-5);
    }

    #[test]
    fn improvement_resets_plateau_count() {
        // epochs 1-3 flat, epoch 4 improves, then four more flat: no decay yet
        let h = [1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.5];
        assert_eq!(plateau_decay(&h, 1.0, &cfg()), 1.0);
        let mut h = h.to_vec();
        h.push(0.5);
        assert_eq!(plateau_decay(&h, 1.0, &cfg()), 0.5);
    }

    #[test]
    fn sub_threshold_gains_do_not_count() {
        let h = [1.0, 1.0 - 5e-7, 1.0 - 9e-7, 1.0 - 1e-6, 1.0 - 1e-6];
        assert_eq!(plateau_decay(&h, 1.0, &cfg()), 0.5);
        // gains accumulate against the last counted best
        let h = [1.0, 1.0 - 5e-7, 1.0 - 9e-7, 1.0 - 1e-6, 1.0 - 1.4e-6];
        assert_eq!(plateau_decay(&h, 1.0, &cfg()), 1.0);
    }

    #[test]
    fn stop_after_ten() {
        assert!(early_stop(&[0.3; 10], &cfg()));
        assert!(!early_stop(&[0.3; 9], &cfg()));
        let mut h = vec![0.3; 9];
        h.push(0.1);
        assert!(!early_stop(&h, &cfg()));
        let mut h = vec![0.9, 0.5];
        h.extend([0.6; 10]);
        assert!(early_stop(&h, &cfg()));
        h.truncate(11);
        assert!(!early_stop(&h, &cfg()));
    }
}
