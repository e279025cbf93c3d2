//! Optimization: Adam, the step-decay schedule, the joint depth/pose
//! self-supervised loop and the teacher→student distillation loop.

mod adam;
mod config;
mod distill;
mod selfsup;

pub use adam::Adam;
pub use config::{TrainConfig, TrainMode};
pub use distill::{load_depth_checkpoint, train_distill, DistillTrainer};
pub use selfsup::{train_selfsup, SelfSupTrainer};

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use crate::arch::Checkpoint;
use crate::data::{collate, Batch, Batcher, Sample};
use crate::error::{contract_err, Error, Result};

/// Seed offsets separating the random streams of one run.
pub(crate) const POSE_SEED_OFFSET: u64 = 0x5EED_0001;

/// Step counters and the in-memory loss log of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Progress {
    pub step: usize,
    /// Next epoch to run.
    pub epoch: usize,
    pub log: Vec<String>,
    /// Objective value per step.
    pub losses: Vec<f64>,
    /// Mean reprojection term per step (self-supervised runs only).
    pub reprojection: Vec<f64>,
}

/// What one optimizer step reports.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub reprojection: Option<f64>,
    /// Log fields after the step/epoch/lr prefix.
    pub fields: String,
}

pub trait Trainer {
    fn config(&self) -> &TrainConfig;
    fn progress(&self) -> &Progress;
    fn progress_mut(&mut self) -> &mut Progress;
    /// One forward/backward/update at the given learning rate. Parameters
    /// must be left untouched when an error is returned.
    fn train_step(&mut self, batch: &Batch, lr: f64) -> Result<StepReport>;
    fn checkpoint(&self) -> Checkpoint;
}

pub(crate) fn check_samples(cfg: &TrainConfig, samples: &[Sample]) -> Result<()> {
    if samples.len() < cfg.batch_size {
        return contract_err("train", format!("{} samples cannot fill a batch of {}", samples.len(), cfg.batch_size));
    }
    for s in samples {
        let t = s.target.shape();
        if (t.h, t.w) != (cfg.height, cfg.width) {
            return contract_err("train", format!("sample {t:?} does not match {}x{}", cfg.width, cfg.height));
        }
    }
    Ok(())
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{line}")?;
    Ok(())
}

/// Runs epochs from the trainer's current position until the configured
/// epoch count or step limit. With `out`, appends the loss log to
/// `loss_log.txt` and writes `epoch_NNN.ckpt` plus `last.ckpt` at every
/// epoch boundary; a non-finite loss writes `last_good.ckpt` and aborts.
pub fn fit<T: Trainer>(trainer: &mut T, samples: &[Sample], out: Option<&Path>) -> Result<()> {
    let cfg = trainer.config().clone();
    cfg.validate()?;
    check_samples(&cfg, samples)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let batcher = Batcher::new(samples.len(), cfg.batch_size, cfg.seed)?;
    let limit_hit = |t: &T| cfg.max_steps > 0 && t.progress().step >= cfg.max_steps;
    while trainer.progress().epoch < cfg.epochs && !limit_hit(trainer) {
        let epoch = trainer.progress().epoch;
        let lr = cfg.lr_at(epoch);
        let mut completed = true;
        for idx in batcher.epoch(epoch) {
            if limit_hit(trainer) {
                completed = false;
                break;
            }
            let batch = collate(samples, &idx)?;
            let report = match trainer.train_step(&batch, lr) {
                Ok(r) => r,
                Err(Error::NonFinite(msg)) => {
                    if let Some(dir) = out {
                        trainer.checkpoint().save(&dir.join("last_good.ckpt"))?;
                    }
                    return Err(Error::NonFinite(format!("step {}: {msg}", trainer.progress().step + 1)));
                }
                Err(e) => return Err(e),
            };
            let p = trainer.progress_mut();
            p.step += 1;
            let line = format!("step={} epoch={epoch} lr={lr:e} {}", p.step, report.fields);
            p.losses.push(report.loss);
            if let Some(r) = report.reprojection {
                p.reprojection.push(r);
            }
            log::debug!("{line}");
            if let Some(dir) = out {
                append_line(&dir.join("loss_log.txt"), &line)?;
            }
            p.log.push(line);
        }
        if !completed {
            break;
        }
        trainer.progress_mut().epoch += 1;
        if let Some(last) = trainer.progress().log.last() {
            log::info!("epoch {epoch} done: {last}");
        }
        if let Some(dir) = out {
            let ck = trainer.checkpoint();
            ck.save(&dir.join(format!("epoch_{epoch:03}.ckpt")))?;
            ck.save(&dir.join("last.ckpt"))?;
        }
    }
    if let Some(dir) = out {
        trainer.checkpoint().save(&dir.join("last.ckpt"))?;
    }
    Ok(())
}

/// Restores step, epoch and optimizer moments recorded by [`Trainer::checkpoint`].
pub(crate) fn restore_progress(ck: &Checkpoint, adam: &mut Adam) -> Result<Progress> {
    let step: usize = ck.meta.require("progress.step")?;
    let epoch: usize = ck.meta.require("progress.epoch")?;
    adam.load_named(&ck.with_prefix("adam."), ck.meta.require("adam.step")?)?;
    Ok(Progress {
        step,
        epoch,
        ..Progress::default()
    })
}

pub(crate) fn progress_meta(ck: &mut Checkpoint, p: &Progress, adam: &Adam) {
    ck.meta.insert("progress.step", p.step);
    ck.meta.insert("progress.epoch", p.epoch);
    ck.meta.insert("adam.step", adam.step);
    ck.extend_prefixed("adam.", adam.named_tensors());
}
