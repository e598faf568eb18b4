//! Fine-tuning losses and loops (MarginMSE distillation and in-batch MNRL),
//! plus the pre-training objectives in [`pretrain`].

mod finetune;
mod losses;
pub mod pretrain;

pub use finetune::{
    gpl_train, gpl_train_with, margin_mse_batch, mnrl_batch, resolve_tuples, qgen_train, qgen_train_with, QgenNegatives,
    TupleIds,
};
pub use losses::{margin_mse_loss, mnrl_loss, mnrl_loss_masked, token_cross_entropy, LossConfig, MnrlOutput};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{GplError, Result};
use crate::model::EncoderModel;
use crate::seed::rng_for;

pub const DEFAULT_LEARNING_RATE: f64 = 2e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMethod {
    Gpl,
    Qgen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRunConfig {
    pub method: TrainMethod,
    /// Ignored when `epochs` is set.
    pub steps: usize,
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Record the mean loss of every window of this many steps.
    pub log_every: usize,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig::gpl()
    }
}

impl TrainRunConfig {
    pub fn gpl() -> Self {
        TrainRunConfig {
            method: TrainMethod::Gpl,
            steps: 140_000,
            epochs: None,
            batch_size: 32,
            seed: 0,
            learning_rate: DEFAULT_LEARNING_RATE,
            momentum: 0.0,
            log_every: 100,
        }
    }

    pub fn qgen() -> Self {
        TrainRunConfig { method: TrainMethod::Qgen, epochs: Some(1), batch_size: 75, ..TrainRunConfig::gpl() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 && self.epochs.is_none() {
            return Err(GplError::Config("steps must be >= 1".into()));
        }
        if self.epochs == Some(0) {
            return Err(GplError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(GplError::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(GplError::Config(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(GplError::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.log_every == 0 {
            return Err(GplError::Config("log_every must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of optimizer steps over a dataset of `n` examples.
    pub fn total_steps(&self, n: usize) -> usize {
        match self.epochs {
            Some(e) => e * n.div_ceil(self.batch_size),
            None => self.steps,
        }
    }
}

/// Batches of example indices. Each epoch is a fresh permutation seeded by
/// `(seed, tag, epoch)`; the last batch of an epoch may be short.
pub(crate) struct BatchSchedule {
    n: usize,
    batch_size: usize,
    seed: u64,
    tag: &'static str,
    epoch: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSchedule {
    pub(crate) fn new(n: usize, batch_size: usize, seed: u64, tag: &'static str) -> Self {
        let mut s = BatchSchedule { n, batch_size, seed, tag, epoch: 0, order: Vec::new(), cursor: 0 };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        let mut rng = rng_for(self.seed, &[self.tag.into(), "epoch".into(), self.epoch.into()]);
        self.order = (0..self.n).collect();
        self.order.shuffle(&mut rng);
        self.cursor = 0;
    }

    pub(crate) fn epoch(&self) -> usize {
        self.epoch
    }

    pub(crate) fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor >= self.n {
            self.epoch += 1;
            self.shuffle();
        }
        let end = (self.cursor + self.batch_size).min(self.n);
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }
}

/// Windowed mean losses, written as CSV `step,loss`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub entries: Vec<(usize, f64)>,
    window: Vec<f64>,
    log_every: usize,
}

impl LossTrace {
    pub fn new(log_every: usize) -> Self {
        LossTrace { entries: Vec::new(), window: Vec::new(), log_every: log_every.max(1) }
    }

    /// `step` counts from 1.
    pub fn record(&mut self, step: usize, loss: f64) {
        self.window.push(loss);
        if step.is_multiple_of(self.log_every) {
            self.flush(step);
        }
    }

    pub fn finish(&mut self, last_step: usize) {
        if !self.window.is_empty() {
            self.flush(last_step);
        }
    }

    fn flush(&mut self, step: usize) {
        let mean = self.window.iter().sum::<f64>() / self.window.len() as f64;
        log::debug!("step {step}: loss {mean:.6}");
        self.entries.push((step, mean));
        self.window.clear();
    }

    pub fn last(&self) -> Option<f64> {
        self.entries.last().map(|e| e.1)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| GplError::io(path, e))?);
        writeln!(w, "step,loss").map_err(|e| GplError::io(path, e))?;
        for (step, loss) in &self.entries {
            writeln!(w, "{step},{loss:.10e}").map_err(|e| GplError::io(path, e))?;
        }
        w.flush().map_err(|e| GplError::io(path, e))
    }
}

/// Periodic checkpoints to `<dir>/ckpt-<step>`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHooks {
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainHooks {
    pub fn checkpoints(dir: impl Into<PathBuf>, every: usize) -> Self {
        TrainHooks { checkpoint_every: Some(every), checkpoint_dir: Some(dir.into()) }
    }

    pub(crate) fn after_step(&self, step: usize, model: &EncoderModel) -> Result<()> {
        if let (Some(every), Some(dir)) = (self.checkpoint_every, &self.checkpoint_dir) {
            if every > 0 && step.is_multiple_of(every) {
                model.save(dir.join(format!("ckpt-{step}")))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_covers_each_epoch_once() {
        let mut s = BatchSchedule::new(7, 3, 1, "t");
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_batch()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
        assert_eq!(s.epoch(), 0);
        s.next_batch();
        assert_eq!(s.epoch(), 1);
    }

    #[test]
    fn schedule_is_deterministic() {
        let mut a = BatchSchedule::new(50, 8, 9, "t");
        let mut b = BatchSchedule::new(50, 8, 9, "t");
        for _ in 0..20 {
            assert_eq!(a.next_batch(), b.next_batch());
        }
    }

    #[test]
    fn qgen_steps_follow_epochs() {
        let cfg = TrainRunConfig::qgen();
        assert_eq!(cfg.total_steps(150), 2);
        assert_eq!(cfg.total_steps(151), 3);
        assert_eq!(TrainRunConfig::gpl().total_steps(10), 140_000);
    }

    #[test]
    fn trace_windows() {
        let mut t = LossTrace::new(2);
        for (i, l) in [1.0, 3.0, 5.0].into_iter().enumerate() {
            t.record(i + 1, l);
        }
        t.finish(3);
        assert_eq!(t.entries, vec![(2, 2.0), (3, 5.0)]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("loss.csv");
        t.write_csv(&p).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("step,loss\n2,"));
    }
}
