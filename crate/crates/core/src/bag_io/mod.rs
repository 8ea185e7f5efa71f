//! Feature bags on disk, dataset manifests, splitting, and synthetic data.

mod format;
mod manifest;
mod split;
mod synth;

pub use format::{decode_bag, encode_bag, encoded_len, read_bag, write_bag, BAG_MAGIC, BAG_VERSION, HEADER_BYTES};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use split::{split, split_manifest, SplitAssignment};
pub use synth::{synth_dataset, synth_dataset_with_info, SynthBagInfo, SynthConfig, SynthDataset};

use crate::anchor_masks::PatchGrid;
use crate::autodiff::Tensor;

/// One slide: patch coordinates, an `n_p × d_f` feature matrix whose rows
/// align with the coordinates, and a class label.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBag {
    pub id: String,
    pub grid: PatchGrid,
    pub features: Tensor,
    pub label: usize,
}

impl FeatureBag {
    pub fn n_patches(&self) -> usize {
        self.grid.len()
    }

    pub fn d_f(&self) -> usize {
        self.features.cols()
    }
}
