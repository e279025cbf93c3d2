use std::path::Path;

use crate::arch::{Checkpoint, Ctx, DepthNet, ParamStore, PoseNet};
use crate::autograd::Tape;
use crate::data::{Batch, Sample, SourceKind};
use crate::error::{contract_err, Error, Result};
use crate::geometry::{matrices_tensor, pose_to_matrix};
use crate::losses::{total_loss, LossBreakdown, ViewBatch};

use super::{fit, progress_meta, restore_progress, Adam, Progress, StepReport, TrainConfig, TrainMode, Trainer, POSE_SEED_OFFSET};

/// Depth and pose networks trained jointly under one optimizer.
pub struct SelfSupTrainer {
    pub config: TrainConfig,
    pub depth: DepthNet,
    pub depth_store: ParamStore,
    pub pose: PoseNet,
    pub pose_store: ParamStore,
    pub adam: Adam,
    pub progress: Progress,
}

impl SelfSupTrainer {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let (depth, depth_store) = DepthNet::new(&config.arch, config.seed)?;
        let (pose, pose_store) = PoseNet::new(&config.pose, config.seed.wrapping_add(POSE_SEED_OFFSET))?;
        let adam = Adam::for_stores(&[&depth_store, &pose_store], config.lr);
        Ok(SelfSupTrainer {
            config: config.clone(),
            depth,
            depth_store,
            pose,
            pose_store,
            adam,
            progress: Progress::default(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = TrainConfig::from_kv(&ck.meta)?;
        if config.mode != TrainMode::SelfSup {
            return contract_err("resume", "checkpoint is not from a self-supervised run");
        }
        let mut t = Self::new(&config)?;
        t.depth_store.load_named(&ck.with_prefix("depth."))?;
        t.pose_store.load_named(&ck.with_prefix("pose."))?;
        t.progress = restore_progress(ck, &mut t.adam)?;
        Ok(t)
    }

    /// Loss and breakdown of a batch without updating anything.
    pub fn evaluate(&self, batch: &Batch) -> Result<LossBreakdown> {
        let tape = Tape::no_grad();
        let dctx = Ctx::new(&tape, &self.depth_store, false, true);
        let pctx = Ctx::new(&tape, &self.pose_store, false, true);
        Ok(self.loss(&tape, &dctx, &pctx, batch)?.1)
    }

    fn loss<'t>(&self, tape: &'t Tape, dctx: &Ctx<'t, '_>, pctx: &Ctx<'t, '_>, batch: &Batch) -> Result<(crate::Var<'t>, LossBreakdown)> {
        let target = tape.constant(batch.target.clone());
        let disps = self.depth.forward(dctx, target)?;
        let mut sources = Vec::with_capacity(batch.sources.len());
        let mut transforms = Vec::with_capacity(batch.sources.len());
        for (k, img) in batch.sources.iter().enumerate() {
            let src = tape.constant(img.clone());
            let t = match batch.kinds[k] {
                SourceKind::Stereo => {
                    let Some(fixed) = &batch.transforms[k] else {
                        return contract_err("train_step", "stereo source without a transform");
                    };
                    tape.constant(matrices_tensor(fixed))
                }
                // The pose network always sees the pair in temporal order.
                SourceKind::Temporal(off) if off < 0 => pose_to_matrix(self.pose.forward(pctx, src, target)?, true)?,
                SourceKind::Temporal(_) => pose_to_matrix(self.pose.forward(pctx, target, src)?, false)?,
            };
            sources.push(src);
            transforms.push(t);
        }
        let view = ViewBatch {
            target,
            sources,
            transforms,
            intrinsics: batch.intrinsics,
            range: self.config.range,
        };
        total_loss(&disps, &view, &self.config.loss)
    }
}

impl Trainer for SelfSupTrainer {
    fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn progress(&self) -> &Progress {
        &self.progress
    }

    fn progress_mut(&mut self) -> &mut Progress {
        &mut self.progress
    }

    fn train_step(&mut self, batch: &Batch, lr: f64) -> Result<StepReport> {
        let tape = Tape::new();
        let (grads, bn_depth, bn_pose, breakdown) = {
            let dctx = Ctx::new(&tape, &self.depth_store, true, true);
            let pctx = Ctx::new(&tape, &self.pose_store, true, true);
            let (loss, breakdown) = self.loss(&tape, &dctx, &pctx, batch)?;
            if !breakdown.total.is_finite() {
                return Err(Error::NonFinite(format!("loss {}", breakdown.total)));
            }
            let g = tape.backward(loss, None)?;
            (
                vec![dctx.grads(&g), pctx.grads(&g)],
                dctx.take_bn_updates(),
                pctx.take_bn_updates(),
                breakdown,
            )
        };
        self.adam.lr = lr;
        self.adam
            .step_stores(&mut [&mut self.depth_store, &mut self.pose_store], &grads)?;
        self.depth_store.apply_bn_stats(&bn_depth);
        self.pose_store.apply_bn_stats(&bn_pose);
        Ok(StepReport {
            loss: breakdown.total,
            reprojection: Some(breakdown.mean_reprojection()),
            fields: breakdown.fields(),
        })
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.config.to_kv());
        ck.meta.insert("kind", "selfsup");
        ck.extend_prefixed("depth.", self.depth_store.named_tensors());
        ck.extend_prefixed("pose.", self.pose_store.named_tensors());
        progress_meta(&mut ck, &self.progress, &self.adam);
        ck
    }
}

/// Trains depth and pose from scratch on `samples`.
pub fn train_selfsup(config: &TrainConfig, samples: &[Sample], out: Option<&Path>) -> Result<SelfSupTrainer> {
    let mut t = SelfSupTrainer::new(config)?;
    fit(&mut t, samples, out)?;
    Ok(t)
}
