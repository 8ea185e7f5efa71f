use serde::{Deserialize, Serialize};

use crate::error::{KatError, Result};

/// Network shape and the switches that select between model variants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KatConfig {
    pub d_f: usize,
    pub d_e: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_classes: usize,
    pub dropout: f64,
    /// One query/key/value set shared by the summary, distribution and
    /// classification flows of a block. When false each flow has its own.
    pub shared_projections: bool,
    /// Residual connection around the classification flow.
    pub cls_residual: bool,
}

impl KatConfig {
    pub fn new(d_f: usize, d_e: usize, n_blocks: usize, n_heads: usize, n_classes: usize) -> Self {
        KatConfig {
            d_f,
            d_e,
            n_blocks,
            n_heads,
            d_ff: 4 * d_e,
            n_classes,
            dropout: 0.0,
            shared_projections: true,
            cls_residual: true,
        }
    }

    /// Four blocks, eight heads, 256-wide embedding.
    pub fn reference(d_f: usize, n_classes: usize) -> Self {
        Self::new(d_f, 256, 4, 8, n_classes)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(KatError::Config(m));
        if self.d_f == 0 || self.d_e == 0 || self.d_ff == 0 {
            return fail("feature, embedding and feed-forward widths must be positive".into());
        }
        if self.n_heads == 0 || !self.d_e.is_multiple_of(self.n_heads) {
            return fail(format!(
                "embedding width {} is not divisible by {} heads",
                self.d_e, self.n_heads
            ));
        }
        if self.n_blocks == 0 {
            return fail("at least one block is required".into());
        }
        if self.n_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_e / self.n_heads
    }

    /// Attention temperature: square root of the per-head width.
    pub fn tau(&self) -> f64 {
        (self.head_dim() as f64).sqrt()
    }

    pub fn flow_sets(&self) -> usize {
        if self.shared_projections {
            1
        } else {
            3
        }
    }
}
