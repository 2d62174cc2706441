//! Learning-rate schedule and training phase arithmetic.
//!
//! Linear warmup from `base_lr * warmup_factor` to `base_lr`, then step
//! decay: once `iter` reaches `floor(milestone * total_iters)` the rate becomes
//! `base_lr * gamma` for that milestone. Gammas multiply the base rate; they
//! do not compound.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("invalid schedule: {0}")]
    Invalid(String),
    #[error("iteration {iter} is past the end of a {total}-iteration schedule")]
    OutOfRange { iter: u64, total: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub warmup_iters: u64,
    pub warmup_factor: f64,
    /// Fractions of `total_iters`.
    pub milestones: Vec<f64>,
    pub gammas: Vec<f64>,
    pub total_iters: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            base_lr: 8e-5,
            warmup_iters: 50,
            warmup_factor: 1e-3,
            milestones: vec![0.88, 0.97],
            gammas: vec![0.1, 0.01],
            total_iters: PhasePlan::default().summary().total_iters,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        let bad = |m: String| Err(ScheduleError::Invalid(m));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if !(self.warmup_factor > 0.0 && self.warmup_factor <= 1.0) {
            return bad(format!("warmup_factor must lie in (0, 1], got {}", self.warmup_factor));
        }
        if self.total_iters <= self.warmup_iters {
            return bad(format!(
                "total_iters ({}) must exceed warmup_iters ({})",
                self.total_iters, self.warmup_iters
            ));
        }
        if self.milestones.len() != self.gammas.len() {
            return bad("milestones and gammas must have the same length".into());
        }
        if self.milestones.iter().any(|m| !(*m > 0.0 && *m < 1.0)) {
            return bad("milestones must lie in (0, 1)".into());
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return bad("milestones must be strictly increasing".into());
        }
        if self.gammas.iter().any(|g| !(*g > 0.0)) || self.gammas.windows(2).any(|w| w[0] <= w[1]) {
            return bad("gammas must be positive and strictly decreasing".into());
        }
        Ok(())
    }

    /// Iteration at which each milestone takes effect.
    pub fn milestone_iters(&self) -> Vec<u64> {
        self.milestones
            .iter()
            .map(|m| (m * self.total_iters as f64 + 1e-9).floor() as u64)
            .collect()
    }

    pub fn lr_at(&self, iter: u64) -> Result<f64, ScheduleError> {
        self.validate()?;
        if iter >= self.total_iters {
            return Err(ScheduleError::OutOfRange {
                iter,
                total: self.total_iters,
            });
        }
        Ok(self.lr_unchecked(iter, &self.milestone_iters()))
    }

    fn lr_unchecked(&self, iter: u64, milestone_iters: &[u64]) -> f64 {
        if iter < self.warmup_iters {
            let t = iter as f64 / self.warmup_iters as f64;
            return self.base_lr * (self.warmup_factor + (1.0 - self.warmup_factor) * t);
        }
        match milestone_iters.iter().filter(|&&m| iter >= m).count() {
            0 => self.base_lr,
            k => self.base_lr * self.gammas[k - 1],
        }
    }

    /// `(iter, lr)` for every iteration.
    pub fn table(&self) -> Result<Vec<(u64, f64)>, ScheduleError> {
        self.validate()?;
        let ms = self.milestone_iters();
        Ok((0..self.total_iters).map(|i| (i, self.lr_unchecked(i, &ms))).collect())
    }

    /// The table as `iter,lr` lines without a header.
    pub fn to_csv(&self) -> Result<String, ScheduleError> {
        let mut s = String::new();
        for (i, lr) in self.table()? {
            let _ = writeln!(s, "{i},{}", format_lr(lr));
        }
        Ok(s)
    }
}

/// Scientific notation with 12 significant decimals, trailing zeros trimmed:
/// `8e-8`, `4.0799200000e-6` becomes `4.07992e-6`.
pub fn format_lr(v: f64) -> String {
    let s = format!("{v:.11e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
    format!("{mantissa}e{exp}")
}

/// Training length bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhasePlan {
    pub epochs_per_cycle: u64,
    pub cycles: u64,
    pub dataset_size: u64,
    pub batch_size: u64,
    pub checkpoint_interval: u64,
    pub log_interval: u64,
}

impl Default for PhasePlan {
    fn default() -> Self {
        Self {
            epochs_per_cycle: 12,
            cycles: 3,
            dataset_size: 20365,
            batch_size: 16,
            checkpoint_interval: 2000,
            log_interval: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub iters_per_epoch: u64,
    pub iters_per_cycle: u64,
    pub total_iters: u64,
    pub checkpoints_per_cycle: u64,
    pub checkpoint_iters: Vec<u64>,
    pub log_interval: u64,
    pub log_count: u64,
}

impl PhasePlan {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        let fields = [
            ("epochs_per_cycle", self.epochs_per_cycle),
            ("cycles", self.cycles),
            ("dataset_size", self.dataset_size),
            ("batch_size", self.batch_size),
            ("checkpoint_interval", self.checkpoint_interval),
            ("log_interval", self.log_interval),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(ScheduleError::Invalid(format!("{name} must be positive"))),
            None => Ok(()),
        }
    }

    /// Derived counts. Checkpoints and log points fall on positive multiples
    /// of their intervals up to and including the last iteration count.
    pub fn summary(&self) -> PhaseSummary {
        let iters_per_epoch = self.dataset_size.div_ceil(self.batch_size);
        let iters_per_cycle = iters_per_epoch * self.epochs_per_cycle;
        let total_iters = iters_per_cycle * self.cycles;
        PhaseSummary {
            iters_per_epoch,
            iters_per_cycle,
            total_iters,
            checkpoints_per_cycle: iters_per_cycle / self.checkpoint_interval,
            checkpoint_iters: (1..=total_iters / self.checkpoint_interval)
                .map(|k| k * self.checkpoint_interval)
                .collect(),
            log_interval: self.log_interval,
            log_count: total_iters / self.log_interval,
        }
    }
}

/// Whether milestones are placed over the whole run or over one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Full,
    Cycle,
}

impl FromStr for Preset {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Preset::Full),
            "cycle" => Ok(Preset::Cycle),
            other => Err(ScheduleError::Invalid(format!("unknown preset {other:?}, expected full or cycle"))),
        }
    }
}

impl Preset {
    pub fn total_iters(self, plan: &PhasePlan) -> u64 {
        let s = plan.summary();
        match self {
            Preset::Full => s.total_iters,
            Preset::Cycle => s.iters_per_cycle,
        }
    }
}
