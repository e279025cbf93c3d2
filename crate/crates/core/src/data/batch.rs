use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract_err, Result};
use crate::geometry::{CameraIntrinsics, Mat4};
use crate::tensor::Tensor;

use super::{Sample, SourceKind};

/// Epoch-wise shuffled index batches; the last partial batch is dropped.
#[derive(Clone, Debug)]
pub struct Batcher {
    len: usize,
    batch_size: usize,
    seed: u64,
}

impl Batcher {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return contract_err("batcher", "batch size must be at least 1");
        }
        Ok(Batcher { len, batch_size, seed })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.len / self.batch_size
    }

    /// Index batches of `epoch`; the shuffle is seeded by `seed + epoch`.
    pub fn epoch(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.len).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(epoch as u64)));
        order
            .chunks_exact(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

/// Samples stacked along the batch axis.
#[derive(Clone, Debug)]
pub struct Batch {
    pub target: Tensor,
    pub sources: Vec<Tensor>,
    pub kinds: Vec<SourceKind>,
    /// Per source, the known per-sample transforms if every sample has one.
    pub transforms: Vec<Option<Vec<Mat4>>>,
    pub intrinsics: CameraIntrinsics,
    pub depth: Option<Tensor>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.target.shape().n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn collate(samples: &[Sample], indices: &[usize]) -> Result<Batch> {
    let Some(&first) = indices.first() else {
        return contract_err("collate", "empty batch");
    };
    let head = &samples[first];
    let picked: Vec<&Sample> = indices.iter().map(|&i| &samples[i]).collect();
    for s in &picked {
        if s.intrinsics != head.intrinsics {
            return contract_err("collate", "samples in one batch must share intrinsics");
        }
        if s.sources.iter().map(|f| f.kind).ne(head.sources.iter().map(|f| f.kind)) {
            return contract_err("collate", "samples in one batch must share source layout");
        }
    }
    let target = Tensor::stack(&picked.iter().map(|s| s.target.clone()).collect::<Vec<_>>())?;
    let mut sources = Vec::new();
    let mut transforms = Vec::new();
    for k in 0..head.sources.len() {
        sources.push(Tensor::stack(
            &picked.iter().map(|s| s.sources[k].image.clone()).collect::<Vec<_>>(),
        )?);
        transforms.push(picked.iter().map(|s| s.sources[k].transform).collect::<Option<Vec<_>>>());
    }
    let depth = picked
        .iter()
        .map(|s| s.depth.clone())
        .collect::<Option<Vec<_>>>()
        .map(|d| Tensor::stack(&d))
        .transpose()?;
    Ok(Batch {
        target,
        sources,
        kinds: head.sources.iter().map(|f| f.kind).collect(),
        transforms,
        intrinsics: head.intrinsics,
        depth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn drops_last_partial_batch() {
        let b = Batcher::new(25, 12, 0).unwrap();
        assert_eq!(b.batches_per_epoch(), 2);
        let e = b.epoch(0);
        assert_eq!(e.len(), 2);
        let all: BTreeSet<usize> = e.iter().flatten().copied().collect();
        assert_eq!(all.len(), 24);
    }

    #[test]
    fn shuffle_is_seeded_per_epoch() {
        let b = Batcher::new(30, 5, 7).unwrap();
        assert_eq!(b.epoch(3), Batcher::new(30, 5, 7).unwrap().epoch(3));
        assert_ne!(b.epoch(0), b.epoch(1));
        assert!(Batcher::new(3, 0, 0).is_err());
    }
}
