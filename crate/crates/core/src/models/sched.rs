use crate::error::{Error, Result};

/// Direction in which the scheduled metric improves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricMode {
    HigherBetter,
    LowerBetter,
}

/// Reduce-on-plateau learning-rate scheduler.
///
/// A metric counts as improved only when it beats the best seen so far by
/// more than `min_delta`, so flat streams do not oscillate. After `patience`
/// consecutive non-improving observations the rate is multiplied by `factor`
/// and the stale counter resets.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    mode: MetricMode,
    min_delta: f64,
    best: Option<f64>,
    stale: usize,
    reduction_count: usize,
}

/// What one scheduler observation decided.
#[derive(Debug, Clone, Copy)]
pub struct PlateauDecision {
    pub lr: f64,
    pub reduced: bool,
    pub reduction_count: usize,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, factor: f64, patience: usize, mode: MetricMode) -> Self {
        PlateauScheduler {
            lr: initial_lr,
            factor,
            patience,
            mode,
            min_delta: 1e-6,
            best: None,
            stale: 0,
            reduction_count: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn reduction_count(&self) -> usize {
        self.reduction_count
    }

    fn improved(&self, metric: f64) -> bool {
        match self.best {
            None => true,
            Some(best) => match self.mode {
                MetricMode::HigherBetter => metric > best + self.min_delta,
                MetricMode::LowerBetter => metric < best - self.min_delta,
            },
        }
    }

    /// Records one metric observation (one evaluation per round).
    pub fn step(&mut self, metric: f64) -> Result<PlateauDecision> {
        if !metric.is_finite() {
            return Err(Error::NonFinite("scheduler metric".into()));
        }
        let mut reduced = false;
        if self.improved(metric) {
            self.best = Some(metric);
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr *= self.factor;
                self.stale = 0;
                self.reduction_count += 1;
                reduced = true;
            }
        }
        Ok(PlateauDecision {
            lr: self.lr,
            reduced,
            reduction_count: self.reduction_count,
        })
    }
}
