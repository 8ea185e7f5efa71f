//! Analytic matmul FLOP and activation counts for kernel attention and for
//! plain token self-attention, with log-log scaling fits.
//!
//! A product of an `a×b` and a `b×c` matrix costs `2abc` FLOPs; softmax,
//! normalization and elementwise work are not counted. Per block, with
//! `R = n_p + K + 1` stacked rows, `T = n_p + 1` tokens, width `d` and
//! feed-forward width `f`:
//!
//! ```text
//! kernel attention  2d²(3n_p + 3K + 1) + 8K·n_p·d + 4K·d + 2R·d² + 4R·d·f
//! self-attention    8T·d² + 4T²·d + 4T·d·f
//! ```
//!
//! With one projection set per flow the kernel attention projection term
//! becomes `2d²(3n_p + 5K + 1)`. Activation counts are the elements of every
//! intermediate value the forward graph keeps for the backward pass.

mod report;

pub use report::{fit_loglog, scaling_report, CostRecord, CostReport, LogLogFit, ReferenceRow, TABLE_REFERENCE};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::anchor_masks::MaskStack;
use crate::autodiff::{Tape, Tensor};
use crate::error::{KatError, Result};
use crate::model::{forward_on_tape, init_params, self_attention_forward_on_tape, KatConfig, Mode};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Cost {
    pub flops: u64,
    pub activations: u64,
}

fn shape_config(d_e: usize, heads: usize, blocks: usize) -> KatConfig {
    KatConfig::new(1, d_e, blocks, heads, 2)
}

/// Kernel attention FLOPs of the block stack, feed-forward width `4·d_e`.
pub fn count_flops_ka(n_p: usize, k: usize, d_e: usize, heads: usize, blocks: usize) -> u64 {
    ka_cost(&shape_config(d_e, heads, blocks), n_p, k).flops
}

/// Self-attention FLOPs of the block stack, feed-forward width `4·d_e`.
pub fn count_flops_sa(n_p: usize, d_e: usize, heads: usize, blocks: usize) -> u64 {
    sa_cost(&shape_config(d_e, heads, blocks), n_p).flops
}

/// FLOPs of the attention module alone (projections, attention products and
/// output projection), summed over blocks.
pub fn ka_attention_flops(config: &KatConfig, n_p: usize, k: usize) -> u64 {
    let (n, k, d) = (n_p as u64, k as u64, config.d_e as u64);
    let r = n + k + 1;
    let proj_rows = if config.shared_projections {
        3 * n + 3 * k + 1
    } else {
        3 * n + 5 * k + 1
    };
    let per_block = 2 * d * d * proj_rows + 8 * k * n * d + 4 * k * d + 2 * r * d * d;
    per_block * config.n_blocks as u64
}

pub fn sa_attention_flops(config: &KatConfig, n_p: usize) -> u64 {
    let (t, d) = (n_p as u64 + 1, config.d_e as u64);
    (8 * t * d * d + 4 * t * t * d) * config.n_blocks as u64
}

pub fn ka_cost(config: &KatConfig, n_p: usize, k: usize) -> Cost {
    let (n, kk, d, f) = (n_p as u64, k as u64, config.d_e as u64, config.d_ff as u64);
    let h = config.n_heads as u64;
    let r = n + kk + 1;
    let ff = 4 * r * d * f * config.n_blocks as u64;

    // stacked-width values: both norms, queries, attention output, row
    // concat, output projection and bias, two residual sums, the
    // feed-forward output and bias
    let mut wide = 11 + u64::from(h > 1) + u64::from(!config.cls_residual);
    let (flow_vals, extra) = if config.shared_projections {
        // key/value input rows plus keys and values, then the seven flow slices
        (3 * n + 3 * kk + 1, 3 * (n + kk))
    } else {
        // one matmul per flow role on sliced rows; no stacked query
        wide -= 1;
        (3 * n + 5 * kk + 1, n + kk + 1)
    };
    let head_slices = if h > 1 { flow_vals } else { 0 };
    let per_block = wide * r * d + extra * d + (flow_vals + head_slices) * d + 6 * kk * n * h + 2 * kk * h + 3 * r * f;
    Cost {
        flops: ka_attention_flops(config, n_p, k) + ff,
        activations: per_block * config.n_blocks as u64,
    }
}

pub fn sa_cost(config: &KatConfig, n_p: usize) -> Cost {
    let (t, d, f) = (n_p as u64 + 1, config.d_e as u64, config.d_ff as u64);
    let h = config.n_heads as u64;
    let wide = 12 + if h > 1 { 4 } else { 0 };
    let per_block = wide * t * d + 2 * t * t * h + 3 * t * f;
    Cost {
        flops: sa_attention_flops(config, n_p) + 4 * t * d * f * config.n_blocks as u64,
        activations: per_block * config.n_blocks as u64,
    }
}

fn random_bag(n_p: usize, d_f: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    Tensor::matrix(n_p, d_f, (0..n_p * d_f).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn check_counts(n_p: usize, k: usize) -> Result<()> {
    if n_p == 0 || k == 0 {
        return Err(KatError::param("patch and kernel counts must be at least 1"));
    }
    Ok(())
}

/// Counts read off a real kernel attention forward graph.
pub fn instrumented_ka(config: &KatConfig, n_p: usize, k: usize, seed: u64) -> Result<Cost> {
    check_counts(n_p, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = init_params(config, seed)?;
    let features = random_bag(n_p, config.d_f, &mut rng)?;
    let masks = MaskStack {
        masks: (0..config.n_blocks)
            .map(|_| Tensor::matrix(k, n_p, (0..k * n_p).map(|_| rng.random_range(0.01..1.0)).collect()))
            .collect::<Result<_>>()?,
        deltas: (1..=config.n_blocks).map(|s| s as f64).collect(),
    };
    let mut tape = Tape::new();
    let w = params.bind(&mut tape, false);
    let out = forward_on_tape(&mut tape, &w, &features, &masks, config, &mut Mode::Eval)?;
    Ok(Cost {
        flops: out.block_flops,
        activations: out.block_activations,
    })
}

/// Counts read off a real self-attention forward graph.
pub fn instrumented_sa(config: &KatConfig, n_p: usize, seed: u64) -> Result<Cost> {
    check_counts(n_p, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = init_params(config, seed)?;
    let features = random_bag(n_p, config.d_f, &mut rng)?;
    let mut tape = Tape::new();
    let w = params.bind(&mut tape, false);
    let out = self_attention_forward_on_tape(&mut tape, &w, &features, config)?;
    Ok(Cost {
        flops: out.block_flops,
        activations: out.block_activations,
    })
}
