//! Model-ready samples drawn from split assignments.
//!
//! Sample tensors are channel-first: `[bands, height, width]`, with height along
//! the cube's `x` axis.

mod augment;
mod batch;
mod object;
mod patch;

use std::sync::Arc;

use ndarray::Array3;

pub use augment::{augment, flip, rot90, AugmentRecord, AugmentSpec, FlipAxis};
pub use batch::{
    balanced_batches, batch_rng, class_weights, mixed_batch_schedule, mixed_quotas, sequential_batches, MixedBatch,
    MixedSchedule,
};
pub use object::{objectwise_view, resize_bilinear, RecordSet, OBJECT_SIZE};
pub use patch::{extract_patches, mirror_index, Padding, PatchSet, PatchSpec};

use crate::cube::DataConfig;
use crate::splits::{SplitTag, Unit};

#[derive(Clone, Debug)]
pub struct Sample {
    pub data: Array3<f32>,
    pub label: u16,
    pub unit: Unit,
    pub split: SplitTag,
    pub config: Arc<DataConfig>,
}

/// Random-access sample collection; samples are materialized on demand.
pub trait SampleSource: Send + Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn label(&self, i: usize) -> u16;
    fn unit(&self, i: usize) -> &Unit;
    fn split(&self) -> SplitTag;
    fn config(&self) -> &Arc<DataConfig>;
    fn class_count(&self) -> usize;
    /// `[bands, height, width]`
    fn sample_shape(&self) -> [usize; 3];
    fn tensor(&self, i: usize) -> Array3<f32>;

    fn sample(&self, i: usize) -> Sample {
        Sample {
            data: self.tensor(i),
            label: self.label(i),
            unit: self.unit(i).clone(),
            split: self.split(),
            config: self.config().clone(),
        }
    }

    fn labels(&self) -> Vec<u16> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }
}
