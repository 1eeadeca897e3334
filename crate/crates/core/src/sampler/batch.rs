use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::keyed_rng;

/// Stream for one `(seed, purpose, epoch, batch, slot)` cell, independent of how
/// many workers consume the schedule.
pub fn batch_rng(seed: u64, purpose: &str, epoch: usize, batch: usize, slot: usize) -> ChaCha8Rng {
    keyed_rng(purpose, &[seed, epoch as u64, batch as u64, slot as u64])
}

/// Per-sample weights inversely proportional to the sample's class frequency.
pub fn class_weights(labels: &[u16], class_count: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; class_count];
    for &l in labels {
        let c = counts
            .get_mut(l as usize)
            .ok_or_else(|| Error::Sampler(format!("label {l} outside {class_count} classes")))?;
        *c += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Sampler(format!("class {c} has no samples")));
    }
    Ok(labels.iter().map(|&l| 1.0 / counts[l as usize] as f64).collect())
}

/// Samples per configuration in batch `batch`: `floor(B / N)` each, the remaining
/// `B mod N` slots handed out round-robin starting at configuration `batch mod N`.
pub fn mixed_quotas(n: usize, batch_size: usize, batch: usize) -> Result<Vec<usize>> {
    if n == 0 || batch_size < n {
        return Err(Error::Sampler(format!("batch size {batch_size} cannot hold {n} configurations")));
    }
    let mut q = vec![batch_size / n; n];
    for k in 0..batch_size % n {
        q[(batch + k) % n] += 1;
    }
    Ok(q)
}

/// One mixed batch: `(configuration, sample index)` pairs grouped by configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MixedBatch {
    pub entries: Vec<(usize, usize)>,
}

impl MixedBatch {
    pub fn count_for(&self, config: usize) -> usize {
        self.entries.iter().filter(|(c, _)| *c == config).count()
    }
}

/// Class-balanced sampling with replacement over `N` training sets.
#[derive(Clone, Debug)]
pub struct MixedSchedule {
    dists: Vec<WeightedIndex<f64>>,
    sizes: Vec<usize>,
    batch_size: usize,
    seed: u64,
}

impl MixedSchedule {
    pub fn configs(&self) -> usize {
        self.sizes.len()
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// `ceil(max training size / floor(B / N))`
    pub fn epoch_len(&self) -> usize {
        let quota = self.batch_size / self.sizes.len();
        self.sizes.iter().max().copied().unwrap_or(0).div_ceil(quota)
    }

    pub fn batch(&self, epoch: usize, batch: usize) -> MixedBatch {
        let quotas = mixed_quotas(self.sizes.len(), self.batch_size, batch).expect("validated");
        let mut entries = Vec::with_capacity(self.batch_size);
        for (k, (&q, dist)) in quotas.iter().zip(&self.dists).enumerate() {
            let mut rng = batch_rng(self.seed, "batch-draw", epoch, batch, k);
            entries.extend((0..q).map(|_| (k, dist.sample(&mut rng))));
        }
        MixedBatch { entries }
    }

    pub fn epoch(&self, epoch: usize) -> Vec<MixedBatch> {
        (0..self.epoch_len()).map(|b| self.batch(epoch, b)).collect()
    }
}

/// Mixed schedule over several training sets, given each set's labels and class count.
pub fn mixed_batch_schedule(
    labels: &[Vec<u16>],
    class_counts: &[usize],
    batch_size: usize,
    seed: u64,
) -> Result<MixedSchedule> {
    mixed_quotas(labels.len(), batch_size, 0)?;
    if labels.len() != class_counts.len() {
        return Err(Error::Sampler("one class count per configuration required".into()));
    }
    let mut dists = Vec::with_capacity(labels.len());
    for (l, &c) in labels.iter().zip(class_counts) {
        let w = class_weights(l, c)?;
        dists.push(WeightedIndex::new(&w).map_err(|e| Error::Sampler(e.to_string()))?);
    }
    Ok(MixedSchedule { dists, sizes: labels.iter().map(Vec::len).collect(), batch_size, seed })
}

/// Class-balanced batches over one training set: the one-configuration schedule.
pub fn balanced_batches(labels: &[u16], class_count: usize, batch_size: usize, seed: u64) -> Result<MixedSchedule> {
    if batch_size == 0 {
        return Err(Error::Sampler("batch size must be >= 1".into()));
    }
    mixed_batch_schedule(&[labels.to_vec()], &[class_count], batch_size, seed)
}

/// In-order index ranges for evaluation.
pub fn sequential_batches(len: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    (0..len).step_by(batch_size.max(1)).map(|s| s..(s + batch_size).min(len)).collect()
}
