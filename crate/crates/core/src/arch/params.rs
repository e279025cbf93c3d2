//! Named parameter storage and the per-pass binding of parameters to a tape.

use std::cell::RefCell;
use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::ops::BatchStats;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in ±1/√fan_in.
    FanIn(usize),
    Const(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    /// Graph node that owns the parameter, for the audit.
    pub node: String,
    pub init: Init,
    pub value: Tensor,
}

/// Learnable parameters (in registration order, which is topological) and
/// non-learnable buffers such as running batch-norm statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<ParamEntry>,
    buffers: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
    node: String,
}

/// Momentum of running batch-norm estimates.
pub const BN_MOMENTUM: f64 = 0.1;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Node tag attached to subsequently registered parameters.
    pub fn set_node(&mut self, node: impl Into<String>) {
        self.node = node.into();
    }

    pub fn register(&mut self, name: impl Into<String>, shape: Shape, init: Init) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "parameter {name} registered twice"
        );
        let value = match init {
            Init::Const(c) => Tensor::full(shape, c),
            Init::FanIn(_) => Tensor::zeros(shape),
        };
        self.index.insert(name.clone(), self.params.len());
        self.params.push(ParamEntry {
            name,
            node: self.node.clone(),
            init,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn register_buffer(&mut self, name: impl Into<String>, value: Tensor) -> BufferId {
        self.buffers.push((name.into(), value));
        BufferId(self.buffers.len() - 1)
    }

    /// Draws every fan-in initialized parameter from one seeded stream, in
    /// registration order, and resets constants and buffers.
    pub fn init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut self.params {
            p.value = match p.init {
                Init::FanIn(fan_in) => {
                    let b = 1.0 / (fan_in.max(1) as f64).sqrt();
                    Tensor::rand_uniform(p.value.shape(), -b, b, &mut rng)
                }
                Init::Const(c) => Tensor::full(p.value.shape(), c),
            };
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.params
    }

    pub fn buffers(&self) -> &[(String, Tensor)] {
        &self.buffers
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor {
        &self.buffers[id.0].1
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i].value)
    }

    pub fn set_value(&mut self, index: usize, value: Tensor) -> Result<()> {
        let p = &mut self.params[index];
        if p.value.shape() != value.shape() {
            return Err(Error::Shape {
                op: "set_value",
                detail: format!("{}: {:?} vs {:?}", p.name, p.value.shape(), value.shape()),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn set_buffer(&mut self, index: usize, value: Tensor) -> Result<()> {
        let b = &mut self.buffers[index];
        if b.1.shape() != value.shape() {
            return Err(Error::Shape {
                op: "set_buffer",
                detail: format!("{}: {:?} vs {:?}", b.0, b.1.shape(), value.shape()),
            });
        }
        b.1 = value;
        Ok(())
    }

    /// Total number of learnable scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn apply_bn_stats(&mut self, stats: &[BnUpdate]) {
        for u in stats {
            for (id, batch) in [(u.mean, &u.stats.mean), (u.var, &u.stats.var)] {
                let slot = &mut self.buffers[id.0].1;
                *slot = slot
                    .zip_map(batch, |r, b| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * b)
                    .expect("running statistics match their layer");
            }
        }
    }

    /// Every parameter and buffer as a named tensor list, parameters first.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .chain(self.buffers.iter().cloned())
            .collect()
    }

    /// Restores values from a named list; every name must match exactly.
    pub fn load_named(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        let expected = self.params.len() + self.buffers.len();
        if tensors.len() != expected {
            return Err(Error::Data(format!(
                "checkpoint holds {} tensors, model expects {expected}",
                tensors.len()
            )));
        }
        let np = self.params.len();
        for (i, (name, t)) in tensors.iter().enumerate() {
            let want = if i < np { &self.params[i].name } else { &self.buffers[i - np].0 };
            if want != name {
                return Err(Error::Data(format!("tensor {i}: expected {want}, found {name}")));
            }
            if i < np {
                self.set_value(i, t.clone())?;
            } else {
                self.set_buffer(i - np, t.clone())?;
            }
        }
        Ok(())
    }

    /// True when every parameter and buffer is bitwise equal to `other`'s.
    pub fn bit_eq(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self.buffers.len() == other.buffers.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value.bit_eq(&b.value))
            && self
                .buffers
                .iter()
                .zip(&other.buffers)
                .all(|(a, b)| a.0 == b.0 && a.1.bit_eq(&b.1))
    }
}

/// A pending running-statistics update from one batch-norm layer.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub mean: BufferId,
    pub var: BufferId,
    pub stats: BatchStats,
}

/// One forward pass's view of a [`ParamStore`]: every parameter bound as a
/// tape leaf, plus the train/eval switch for batch norm.
pub struct Ctx<'t, 's> {
    tape: &'t Tape,
    store: &'s ParamStore,
    vars: Vec<Var<'t>>,
    train: bool,
    bn_updates: RefCell<Vec<BnUpdate>>,
}

impl<'t, 's> Ctx<'t, 's> {
    /// `learn` binds parameters as differentiable leaves; `train` selects
    /// batch statistics in batch norm.
    pub fn new(tape: &'t Tape, store: &'s ParamStore, learn: bool, train: bool) -> Self {
        let vars = store
            .params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), learn))
            .collect();
        Ctx {
            tape,
            store,
            vars,
            train,
            bn_updates: RefCell::new(Vec::new()),
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn train(&self) -> bool {
        self.train
    }

    pub fn param(&self, id: ParamId) -> Var<'t> {
        self.vars[id.0]
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor {
        self.store.buffer(id)
    }

    pub(crate) fn push_bn_update(&self, u: BnUpdate) {
        self.bn_updates.borrow_mut().push(u);
    }

    pub fn take_bn_updates(&self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates.borrow_mut())
    }

    /// Gradient of every parameter, `None` where the output does not depend on it.
    pub fn grads(&self, grads: &Gradients) -> Vec<Option<Tensor>> {
        self.vars.iter().map(|v| grads.get(v).cloned()).collect()
    }
}
