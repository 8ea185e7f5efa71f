use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::attention::{check_mask, multi_head_on_tape, split_rows};
use super::params::{BlockWeights, KatParams, KatWeights};
use super::KatConfig;
use crate::anchor_masks::MaskStack;
use crate::autodiff::{Tape, Tensor, Var};
use crate::bag_io::FeatureBag;
use crate::error::{KatError, Result};

pub const LN_EPS: f64 = 1e-6;

/// Evaluation, or training with a generator for dropout masks.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    /// Final stacked `[X; K; c]` token rows.
    pub tokens: Var,
    pub n_patches: usize,
    pub n_kernels: usize,
    /// Matmul FLOPs recorded inside the block stack.
    pub block_flops: u64,
    /// Elements of the intermediate values recorded inside the block stack.
    pub block_activations: u64,
}

fn dropout(tape: &mut Tape, v: Var, rate: f64, mode: &mut Mode) -> Result<Var> {
    let Mode::Train(rng) = mode else { return Ok(v) };
    if rate == 0.0 {
        return Ok(v);
    }
    let shape = tape.value(v).shape().to_vec();
    let n: usize = shape.iter().product();
    let keep = 1.0 / (1.0 - rate);
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let m = tape.constant(Tensor::new(shape, data)?);
    tape.mul(v, m)
}

/// One block over stacked `[X; K; c]` rows:
/// `u = s + MHKA(LN1(s))`, `out = u + FF(LN2(u))`.
#[allow(clippy::too_many_arguments)]
pub fn block_on_tape(
    tape: &mut Tape,
    stacked: Var,
    n_patches: usize,
    n_kernels: usize,
    mask: Var,
    mask_t: Var,
    block: &BlockWeights<Var>,
    config: &KatConfig,
    mode: &mut Mode,
) -> Result<Var> {
    let normed = tape.layer_norm(stacked, block.norm1.gamma, block.norm1.beta, LN_EPS)?;
    let attn = multi_head_on_tape(tape, normed, n_patches, n_kernels, mask, mask_t, block, config)?;
    let attn = dropout(tape, attn, config.dropout, mode)?;
    let residual = if config.cls_residual {
        stacked
    } else {
        let rows = n_patches + n_kernels + 1;
        let mut keep = Tensor::filled(&[rows, config.d_e], 1.0);
        keep.data_mut()[(rows - 1) * config.d_e..].fill(0.0);
        let keep = tape.constant(keep);
        tape.mul(stacked, keep)?
    };
    let u = tape.add(residual, attn)?;

    let h = tape.layer_norm(u, block.norm2.gamma, block.norm2.beta, LN_EPS)?;
    let h = tape.matmul(h, block.ff_in.weight)?;
    let h = tape.add_row(h, block.ff_in.bias)?;
    let h = tape.gelu(h)?;
    let h = tape.matmul(h, block.ff_out.weight)?;
    let h = tape.add_row(h, block.ff_out.bias)?;
    let h = dropout(tape, h, config.dropout, mode)?;
    tape.add(u, h)
}

pub(crate) fn check_inputs(features: &Tensor, masks: &MaskStack, config: &KatConfig) -> Result<()> {
    config.validate()?;
    let (n, d_f) = features.dims2()?;
    if d_f != config.d_f {
        return Err(KatError::dim(format!(
            "bag has {d_f} features per patch, model expects {}",
            config.d_f
        )));
    }
    if masks.n_scales() != config.n_blocks {
        return Err(KatError::Config(format!(
            "{} mask scales for {} blocks",
            masks.n_scales(),
            config.n_blocks
        )));
    }
    let k = masks.n_kernels();
    if k == 0 {
        return Err(KatError::dim("mask stack has no kernels"));
    }
    for m in &masks.masks {
        check_mask(m, k, n)?;
    }
    Ok(())
}

/// Embeds the patches, runs every block with its own mask scale and maps
/// the classification token through the head. No positional embedding is
/// added; spatial layout reaches the network only through the masks.
pub fn forward_on_tape(
    tape: &mut Tape,
    w: &KatWeights<Var>,
    features: &Tensor,
    masks: &MaskStack,
    config: &KatConfig,
    mode: &mut Mode,
) -> Result<ForwardOutput> {
    check_inputs(features, masks, config)?;
    let n = features.rows();
    let k = masks.n_kernels();

    let x = tape.constant(features.clone());
    let x = tape.matmul(x, w.embed.weight)?;
    let x = tape.add_row(x, w.embed.bias)?;
    let kernels = tape.broadcast_rows(w.kernel_seed, k)?;
    let mut s = tape.concat_rows(&[x, kernels, w.cls_token])?;

    let flops_before = tape.matmul_flops();
    let mark = tape.len();
    for (block, mask) in w.blocks.iter().zip(&masks.masks) {
        let m = tape.constant(mask.clone());
        let mt = tape.constant(mask.transpose()?);
        s = block_on_tape(tape, s, n, k, m, mt, block, config, mode)?;
    }
    let block_flops = tape.matmul_flops() - flops_before;
    let block_activations = tape.activation_elements_since(mark);

    let c = tape.slice_rows(s, n + k, n + k + 1)?;
    let logits = tape.matmul(c, w.head.weight)?;
    let logits = tape.add_row(logits, w.head.bias)?;
    Ok(ForwardOutput {
        logits,
        tokens: s,
        n_patches: n,
        n_kernels: k,
        block_flops,
        block_activations,
    })
}

/// Class logits for raw features.
pub fn logits(features: &Tensor, masks: &MaskStack, params: &KatParams, config: &KatConfig) -> Result<Tensor> {
    let mut tape = Tape::new();
    let w = params.bind(&mut tape, false);
    let out = forward_on_tape(&mut tape, &w, features, masks, config, &mut Mode::Eval)?;
    Ok(tape.value(out.logits).clone())
}

pub fn kat_forward(bag: &FeatureBag, masks: &MaskStack, params: &KatParams, config: &KatConfig) -> Result<Tensor> {
    logits(&bag.features, masks, params, config)
}

/// Applies one block to plain tensors; returns `(X, K, c)`.
pub fn kat_block(
    x: &Tensor,
    kernels: &Tensor,
    cls: &Tensor,
    mask: &Tensor,
    block: &BlockWeights<Tensor>,
    config: &KatConfig,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, k) = (x.rows(), kernels.rows());
    check_mask(mask, k, n)?;
    let mut tape = Tape::new();
    let parts = [x, kernels, cls].map(|t| tape.constant(t.clone()));
    let s = tape.concat_rows(&parts)?;
    let m = tape.constant(mask.clone());
    let mt = tape.constant(mask.transpose()?);
    let b = block.bind(&mut tape, false);
    let out = block_on_tape(&mut tape, s, n, k, m, mt, &b, config, &mut Mode::Eval)?;
    split_rows(&tape, out, n, k)
}

/// Cross-entropy loss of one bag and its gradient, flattened in parameter
/// enumeration order.
pub fn loss_and_gradient(
    params: &KatParams,
    features: &Tensor,
    masks: &MaskStack,
    label: usize,
    config: &KatConfig,
    mode: &mut Mode,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let w = params.bind(&mut tape, true);
    let out = forward_on_tape(&mut tape, &w, features, masks, config, mode)?;
    let loss = tape.cross_entropy(out.logits, label)?;
    let grads = tape.backward(loss)?;
    let mut flat = Vec::with_capacity(params.count());
    for v in w.iter() {
        flat.extend_from_slice(grads.get(*v).data());
    }
    Ok((tape.value(loss).item()?, flat))
}

/// Cross-entropy loss of one bag without gradients.
pub fn loss(params: &KatParams, features: &Tensor, masks: &MaskStack, label: usize, config: &KatConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let w = params.bind(&mut tape, false);
    let out = forward_on_tape(&mut tape, &w, features, masks, config, &mut Mode::Eval)?;
    let l = tape.cross_entropy(out.logits, label)?;
    tape.value(l).item()
}
