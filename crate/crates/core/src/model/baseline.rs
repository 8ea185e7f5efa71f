//! Token self-attention with the same block layout, for cost comparison.
//!
//! The classification token is appended after the patch tokens and all
//! `n_p + 1` tokens attend to each other; there are no kernels and no
//! masks. Only the shared projection set of each block is used.

use super::forward::LN_EPS;
use super::params::KatWeights;
use super::KatConfig;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{KatError, Result};

#[derive(Clone, Copy, Debug)]
pub struct BaselineOutput {
    pub logits: Var,
    pub block_flops: u64,
    pub block_activations: u64,
}

pub fn self_attention_forward_on_tape(
    tape: &mut Tape,
    w: &KatWeights<Var>,
    features: &Tensor,
    config: &KatConfig,
) -> Result<BaselineOutput> {
    config.validate()?;
    if features.cols() != config.d_f {
        return Err(KatError::dim(format!(
            "bag has {} features per patch, model expects {}",
            features.cols(),
            config.d_f
        )));
    }
    let n = features.rows();
    let tau = config.tau();
    let dh = config.head_dim();

    let x = tape.constant(features.clone());
    let x = tape.matmul(x, w.embed.weight)?;
    let x = tape.add_row(x, w.embed.bias)?;
    let mut s = tape.concat_rows(&[x, w.cls_token])?;

    let flops_before = tape.matmul_flops();
    let mark = tape.len();
    for block in &w.blocks {
        let p = &block.flows[0];
        let normed = tape.layer_norm(s, block.norm1.gamma, block.norm1.beta, LN_EPS)?;
        let q = tape.matmul(normed, p.query)?;
        let k = tape.matmul(normed, p.key)?;
        let v = tape.matmul(normed, p.value)?;
        let attn = if config.n_heads == 1 {
            let scores = tape.matmul_nt(q, k)?;
            let a = tape.softmax_scaled(scores, tau)?;
            tape.matmul(a, v)?
        } else {
            let mut heads = Vec::with_capacity(config.n_heads);
            for h in 0..config.n_heads {
                let (lo, hi) = (h * dh, (h + 1) * dh);
                let qh = tape.slice_cols(q, lo, hi)?;
                let kh = tape.slice_cols(k, lo, hi)?;
                let vh = tape.slice_cols(v, lo, hi)?;
                let scores = tape.matmul_nt(qh, kh)?;
                let a = tape.softmax_scaled(scores, tau)?;
                heads.push(tape.matmul(a, vh)?);
            }
            tape.concat_cols(&heads)?
        };
        let o = tape.matmul(attn, block.out.weight)?;
        let o = tape.add_row(o, block.out.bias)?;
        let u = tape.add(s, o)?;
        let h = tape.layer_norm(u, block.norm2.gamma, block.norm2.beta, LN_EPS)?;
        let h = tape.matmul(h, block.ff_in.weight)?;
        let h = tape.add_row(h, block.ff_in.bias)?;
        let h = tape.gelu(h)?;
        let h = tape.matmul(h, block.ff_out.weight)?;
        let h = tape.add_row(h, block.ff_out.bias)?;
        s = tape.add(u, h)?;
    }
    let block_flops = tape.matmul_flops() - flops_before;
    let block_activations = tape.activation_elements_since(mark);

    let c = tape.slice_rows(s, n, n + 1)?;
    let logits = tape.matmul(c, w.head.weight)?;
    let logits = tape.add_row(logits, w.head.bias)?;
    Ok(BaselineOutput {
        logits,
        block_flops,
        block_activations,
    })
}
