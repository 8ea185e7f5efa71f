//! Adam, classification metrics, evaluation and the training loop.

mod adam;
mod fit;
mod metrics;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use fit::{train, train_with_observer, EpochRecord, History, Monitor, TrainConfig};
pub use metrics::{argmax, roc_auc, softmax, Metrics};

use rayon::prelude::*;

use crate::anchor_masks::{build_mask_stack_with_deltas, MaskStack};
use crate::autodiff::Tensor;
use crate::bag_io::FeatureBag;
use crate::error::{KatError, Result};
use crate::model::{logits, KatConfig, KatParams, MaskSettings};

/// A bag with its mask stack already built, ready for repeated passes.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedBag {
    pub id: String,
    pub features: Tensor,
    pub masks: MaskStack,
    pub label: usize,
}

impl PreparedBag {
    pub fn new(bag: &FeatureBag, settings: &MaskSettings) -> Result<Self> {
        let (_, masks) =
            build_mask_stack_with_deltas(&bag.grid, settings.nk_bar, &settings.deltas, settings.anchor_seed)?;
        Ok(PreparedBag {
            id: bag.id.clone(),
            features: bag.features.clone(),
            masks,
            label: bag.label,
        })
    }

    /// Same bag with every mask entry set to 1, keeping the kernel count.
    pub fn without_masks(&self) -> Self {
        let m = &self.masks;
        PreparedBag {
            masks: MaskStack::all_ones(m.n_kernels(), m.n_patches(), m.n_scales()),
            ..self.clone()
        }
    }
}

/// Builds every bag's masks, concurrently; output order follows input.
pub fn prepare_bags(bags: &[FeatureBag], settings: &MaskSettings) -> Result<Vec<PreparedBag>> {
    bags.par_iter().map(|b| PreparedBag::new(b, settings)).collect()
}

/// Logits of every bag, concurrently; output order follows input.
pub fn predict(params: &KatParams, bags: &[PreparedBag], config: &KatConfig) -> Result<Vec<Vec<f64>>> {
    bags.par_iter()
        .map(|b| logits(&b.features, &b.masks, params, config).map(|t| t.into_data()))
        .collect()
}

pub fn evaluate(params: &KatParams, bags: &[PreparedBag], config: &KatConfig) -> Result<Metrics> {
    if bags.is_empty() {
        return Err(KatError::Data("cannot evaluate an empty split".into()));
    }
    let rows = predict(params, bags, config)?;
    let labels: Vec<usize> = bags.iter().map(|b| b.label).collect();
    Metrics::from_logits(&rows, &labels, config.n_classes)
}
