use std::path::Path;

use crate::arch::{ArchConfig, Checkpoint, Ctx, DepthNet, ParamStore};
use crate::autograd::Tape;
use crate::data::{Batch, Sample};
use crate::error::{contract_err, Error, Result};
use crate::kv::KvMap;
use crate::losses::distill_loss;

use super::{fit, progress_meta, restore_progress, Adam, Progress, StepReport, TrainConfig, TrainMode, Trainer};

/// Depth network and its metadata from any checkpoint holding `arch.*` keys
/// and `depth.*` tensors.
pub fn load_depth_checkpoint(path: &Path) -> Result<(DepthNet, ParamStore, KvMap)> {
    let ck = Checkpoint::load(path)?;
    let arch = ArchConfig::from_kv(&ck.meta, "arch.")?;
    let (net, mut store) = DepthNet::build(&arch)?;
    store.load_named(&ck.with_prefix("depth."))?;
    Ok((net, store, ck.meta))
}

/// A student regressing a frozen teacher's disparities.
pub struct DistillTrainer {
    pub config: TrainConfig,
    pub teacher: DepthNet,
    pub teacher_store: ParamStore,
    pub student: DepthNet,
    pub student_store: ParamStore,
    pub adam: Adam,
    pub progress: Progress,
}

impl DistillTrainer {
    /// `config.arch` describes the student.
    pub fn new(config: &TrainConfig, teacher: DepthNet, teacher_store: ParamStore) -> Result<Self> {
        config.validate()?;
        let ts = teacher.config().num_output_scales;
        if ts != config.arch.num_output_scales {
            return contract_err(
                "train_distill",
                format!("teacher emits {ts} scales, student {}", config.arch.num_output_scales),
            );
        }
        let (student, student_store) = DepthNet::new(&config.arch, config.seed)?;
        let adam = Adam::for_stores(&[&student_store], config.lr);
        Ok(DistillTrainer {
            config: TrainConfig { mode: TrainMode::Distill, ..config.clone() },
            teacher,
            teacher_store,
            student,
            student_store,
            adam,
            progress: Progress::default(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint, teacher: DepthNet, teacher_store: ParamStore) -> Result<Self> {
        let config = TrainConfig::from_kv(&ck.meta)?;
        let mut t = Self::new(&config, teacher, teacher_store)?;
        t.student_store.load_named(&ck.with_prefix("depth."))?;
        t.progress = restore_progress(ck, &mut t.adam)?;
        Ok(t)
    }

    /// Teacher disparities, inference only.
    pub fn teacher_disparities(&self, image: &crate::Tensor) -> Result<Vec<crate::Tensor>> {
        self.teacher.predict(&self.teacher_store, image)
    }
}

impl Trainer for DistillTrainer {
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
        let teacher = self.teacher_disparities(&batch.target)?;
        let tape = Tape::new();
        let (grads, bn, loss) = {
            let ctx = Ctx::new(&tape, &self.student_store, true, true);
            let student = self.student.forward(&ctx, tape.constant(batch.target.clone()))?;
            let loss = distill_loss(&teacher, &student, &self.config.distill)?;
            let value = loss.value().item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("distillation loss {value}")));
            }
            let g = tape.backward(loss, None)?;
            (vec![ctx.grads(&g)], ctx.take_bn_updates(), value)
        };
        self.adam.lr = lr;
        self.adam.step_stores(&mut [&mut self.student_store], &grads)?;
        self.student_store.apply_bn_stats(&bn);
        Ok(StepReport {
            loss,
            reprojection: None,
            fields: format!("L_distill={loss:e} norm={}", self.config.distill.norm),
        })
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.config.to_kv());
        ck.meta.insert("kind", "distill");
        ck.extend_prefixed("depth.", self.student_store.named_tensors());
        progress_meta(&mut ck, &self.progress, &self.adam);
        ck
    }
}

/// Trains a student from scratch against a frozen teacher.
pub fn train_distill(
    config: &TrainConfig,
    teacher: DepthNet,
    teacher_store: ParamStore,
    samples: &[Sample],
    out: Option<&Path>,
) -> Result<DistillTrainer> {
    let mut t = DistillTrainer::new(config, teacher, teacher_store)?;
    fit(&mut t, samples, out)?;
    Ok(t)
}
