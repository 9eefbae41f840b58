//! Plateau-driven learning-rate decay with best-model restore.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Maximize,
    Minimize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleAction {
    Continue,
    /// The learning rate was divided; the caller must reload the best model.
    DecayAndRestore,
    Stop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub learning_rate: f64,
    pub patience_epochs: usize,
    pub decay_factor: f64,
    pub stop_threshold: f64,
    pub best_metric: Option<f64>,
    pub best_epoch: Option<usize>,
    epochs_without_improvement: usize,
    last_improved: bool,
    epoch: usize,
}

impl LrSchedule {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            patience_epochs: 4,
            decay_factor: 10.0,
            stop_threshold: 1e-8,
            best_metric: None,
            best_epoch: None,
            epochs_without_improvement: 0,
            last_improved: false,
            epoch: 0,
        }
    }

    /// Whether the most recent epoch set a new best (the caller should
    /// snapshot the model).
    pub fn improved(&self) -> bool {
        self.last_improved
    }

    /// Records one epoch's held-out metric.
    ///
    /// A new best resets the plateau counter. Otherwise, once the learning
    /// rate is already below `stop_threshold` training stops; else after
    /// `patience_epochs` consecutive misses the rate is divided by
    /// `decay_factor` and the caller is told to restore the best model.
    pub fn epoch_end(&mut self, metric: f64, direction: Direction) -> ScheduleAction {
        let epoch = self.epoch;
        self.epoch += 1;
        let better = match (self.best_metric, direction) {
            (None, _) => true,
            (Some(best), Direction::Maximize) => metric > best,
            (Some(best), Direction::Minimize) => metric < best,
        };
        self.last_improved = better;
        if better {
            self.best_metric = Some(metric);
            self.best_epoch = Some(epoch);
            self.epochs_without_improvement = 0;
            return ScheduleAction::Continue;
        }
        if self.learning_rate < self.stop_threshold {
            return ScheduleAction::Stop;
        }
        self.epochs_without_improvement += 1;
        if self.epochs_without_improvement >= self.patience_epochs {
            self.epochs_without_improvement = 0;
            self.learning_rate /= self.decay_factor;
            return ScheduleAction::DecayAndRestore;
        }
        ScheduleAction::Continue
    }
}
