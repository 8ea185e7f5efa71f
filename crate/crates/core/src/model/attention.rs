//! Kernel attention: masked cross-attention between patch tokens and
//! kernel tokens, plus the classification token reading from the kernels.
//!
//! * summary flow: `K' = [softmax(Kq·Xkᵀ/τ) ⊙ M] · Xv`, softmax over patches
//! * distribution flow: `X' = [softmax(Xq·Kkᵀ/τ) ⊙ Mᵀ] · Kv`, softmax over kernels
//! * classification flow: `c' = softmax(cq·Kkᵀ/τ) · Kv`, unmasked
//!
//! Masks multiply the attention weights after the softmax and nothing is
//! renormalized afterwards.

use super::params::{BlockWeights, Projections};
use super::KatConfig;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{KatError, Result};

/// Projected query/key/value rows for one flow.
#[derive(Clone, Copy, Debug)]
pub struct FlowQkv {
    pub query: Var,
    pub key: Var,
    pub value: Var,
}

/// Inputs of the three flows. In the shared-projection model the
/// distribution and classification flows use the same kernel keys/values.
#[derive(Clone, Copy, Debug)]
pub struct FlowInputs {
    pub summary: FlowQkv,
    pub distribution: FlowQkv,
    pub classification: FlowQkv,
}

/// Outputs of one kernel attention pass: patches, kernels, classification.
#[derive(Clone, Copy, Debug)]
pub struct FlowOutputs {
    pub patches: Var,
    pub kernels: Var,
    pub cls: Var,
}

pub(crate) fn check_mask(mask: &Tensor, n_kernels: usize, n_patches: usize) -> Result<()> {
    let (k, n) = mask.dims2()?;
    if (k, n) != (n_kernels, n_patches) {
        return Err(KatError::dim(format!(
            "mask is {k}×{n} but there are {n_kernels} kernels and {n_patches} patches"
        )));
    }
    if let Some(v) = mask.data().iter().find(|&&v| !(v > 0.0)) {
        return Err(KatError::Contract(format!("mask entries must be positive, found {v}")));
    }
    Ok(())
}

/// The three flows for a single head. `mask` is `K×n_p`, `mask_t` its
/// transpose; both are constants on the tape.
pub fn attend(tape: &mut Tape, f: &FlowInputs, mask: Var, mask_t: Var, tau: f64) -> Result<FlowOutputs> {
    let s = tape.matmul_nt(f.summary.query, f.summary.key)?;
    let a = tape.softmax_scaled(s, tau)?;
    let a = tape.mul(a, mask)?;
    let kernels = tape.matmul(a, f.summary.value)?;

    let s = tape.matmul_nt(f.distribution.query, f.distribution.key)?;
    let a = tape.softmax_scaled(s, tau)?;
    let a = tape.mul(a, mask_t)?;
    let patches = tape.matmul(a, f.distribution.value)?;

    let s = tape.matmul_nt(f.classification.query, f.classification.key)?;
    let a = tape.softmax_scaled(s, tau)?;
    let cls = tape.matmul(a, f.classification.value)?;

    Ok(FlowOutputs { patches, kernels, cls })
}

/// Projects patch, kernel and classification rows for the three flows.
///
/// With a single shared projection set the queries are computed on the
/// stacked `[X; K; c]` rows and keys/values on `[X; K]`, then sliced.
pub fn project_flows(
    tape: &mut Tape,
    stacked: Var,
    n_patches: usize,
    n_kernels: usize,
    flows: &[Projections<Var>],
) -> Result<FlowInputs> {
    let (n, k) = (n_patches, n_kernels);
    if flows.len() == 1 {
        let p = &flows[0];
        let q = tape.matmul(stacked, p.query)?;
        let kv_rows = tape.slice_rows(stacked, 0, n + k)?;
        let keys = tape.matmul(kv_rows, p.key)?;
        let values = tape.matmul(kv_rows, p.value)?;
        let x_q = tape.slice_rows(q, 0, n)?;
        let k_q = tape.slice_rows(q, n, n + k)?;
        let c_q = tape.slice_rows(q, n + k, n + k + 1)?;
        let x_k = tape.slice_rows(keys, 0, n)?;
        let k_k = tape.slice_rows(keys, n, n + k)?;
        let x_v = tape.slice_rows(values, 0, n)?;
        let k_v = tape.slice_rows(values, n, n + k)?;
        let kernel_side = |query| FlowQkv {
            query,
            key: k_k,
            value: k_v,
        };
        return Ok(FlowInputs {
            summary: FlowQkv {
                query: k_q,
                key: x_k,
                value: x_v,
            },
            distribution: kernel_side(x_q),
            classification: kernel_side(c_q),
        });
    }
    if flows.len() != 3 {
        return Err(KatError::Config(format!(
            "expected 1 or 3 projection sets, got {}",
            flows.len()
        )));
    }
    let x = tape.slice_rows(stacked, 0, n)?;
    let kt = tape.slice_rows(stacked, n, n + k)?;
    let c = tape.slice_rows(stacked, n + k, n + k + 1)?;
    let (isf, idf, cls) = (&flows[0], &flows[1], &flows[2]);
    Ok(FlowInputs {
        summary: FlowQkv {
            query: tape.matmul(kt, isf.query)?,
            key: tape.matmul(x, isf.key)?,
            value: tape.matmul(x, isf.value)?,
        },
        distribution: FlowQkv {
            query: tape.matmul(x, idf.query)?,
            key: tape.matmul(kt, idf.key)?,
            value: tape.matmul(kt, idf.value)?,
        },
        classification: FlowQkv {
            query: tape.matmul(c, cls.query)?,
            key: tape.matmul(kt, cls.key)?,
            value: tape.matmul(kt, cls.value)?,
        },
    })
}

fn slice_head(tape: &mut Tape, f: &FlowInputs, start: usize, end: usize) -> Result<FlowInputs> {
    // the shared model reuses kernel keys/values across flows; slice each
    // distinct var once
    let mut cache: Vec<(Var, Var)> = Vec::with_capacity(9);
    let mut slice = |tape: &mut Tape, v: Var| -> Result<Var> {
        if let Some(&(_, s)) = cache.iter().find(|(src, _)| *src == v) {
            return Ok(s);
        }
        let s = tape.slice_cols(v, start, end)?;
        cache.push((v, s));
        Ok(s)
    };
    let mut qkv = |tape: &mut Tape, f: &FlowQkv| -> Result<FlowQkv> {
        Ok(FlowQkv {
            query: slice(tape, f.query)?,
            key: slice(tape, f.key)?,
            value: slice(tape, f.value)?,
        })
    };
    Ok(FlowInputs {
        summary: qkv(tape, &f.summary)?,
        distribution: qkv(tape, &f.distribution)?,
        classification: qkv(tape, &f.classification)?,
    })
}

/// Multi-head kernel attention over stacked `[X; K; c]` rows (already
/// normalized). Every head sees the same mask. Returns the stacked,
/// output-projected `(n+K+1) × d_e` result.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_on_tape(
    tape: &mut Tape,
    stacked: Var,
    n_patches: usize,
    n_kernels: usize,
    mask: Var,
    mask_t: Var,
    block: &BlockWeights<Var>,
    config: &KatConfig,
) -> Result<Var> {
    config.validate()?;
    let flows = project_flows(tape, stacked, n_patches, n_kernels, &block.flows)?;
    let tau = config.tau();
    let dh = config.head_dim();
    let merged = if config.n_heads == 1 {
        attend(tape, &flows, mask, mask_t, tau)?
    } else {
        let mut heads = Vec::with_capacity(config.n_heads);
        for h in 0..config.n_heads {
            let f = slice_head(tape, &flows, h * dh, (h + 1) * dh)?;
            heads.push(attend(tape, &f, mask, mask_t, tau)?);
        }
        let cat = |tape: &mut Tape, pick: fn(&FlowOutputs) -> Var| {
            let parts: Vec<Var> = heads.iter().map(pick).collect();
            tape.concat_cols(&parts)
        };
        FlowOutputs {
            patches: cat(tape, |o| o.patches)?,
            kernels: cat(tape, |o| o.kernels)?,
            cls: cat(tape, |o| o.cls)?,
        }
    };
    let rows = tape.concat_rows(&[merged.patches, merged.kernels, merged.cls])?;
    let projected = tape.matmul(rows, block.out.weight)?;
    tape.add_row(projected, block.out.bias)
}

/// Single-head kernel attention on plain tensors: projects with `proj` and
/// evaluates the three flows with temperature `tau`. Returns
/// `(X', K', c')`.
pub fn kernel_attention(
    x: &Tensor,
    kernels: &Tensor,
    cls: &Tensor,
    mask: &Tensor,
    proj: &Projections<Tensor>,
    tau: f64,
) -> Result<(Tensor, Tensor, Tensor)> {
    check_mask(mask, kernels.rows(), x.rows())?;
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let kv = tape.constant(kernels.clone());
    let cv = tape.constant(cls.clone());
    let m = tape.constant(mask.clone());
    let mt = tape.constant(mask.transpose()?);
    let p = proj.map_vars(&mut tape);
    let flows = FlowInputs {
        summary: FlowQkv {
            query: tape.matmul(kv, p.query)?,
            key: tape.matmul(xv, p.key)?,
            value: tape.matmul(xv, p.value)?,
        },
        distribution: FlowQkv {
            query: tape.matmul(xv, p.query)?,
            key: tape.matmul(kv, p.key)?,
            value: tape.matmul(kv, p.value)?,
        },
        classification: FlowQkv {
            query: tape.matmul(cv, p.query)?,
            key: tape.matmul(kv, p.key)?,
            value: tape.matmul(kv, p.value)?,
        },
    };
    let out = attend(&mut tape, &flows, m, mt, tau)?;
    Ok((
        tape.value(out.patches).clone(),
        tape.value(out.kernels).clone(),
        tape.value(out.cls).clone(),
    ))
}

/// Multi-head kernel attention on plain tensors, including the output
/// projection of `block`. Inputs are used as given (no normalization).
pub fn multi_head_ka(
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
    let stacked = tape.concat_rows(&parts)?;
    let m = tape.constant(mask.clone());
    let mt = tape.constant(mask.transpose()?);
    let b = block.bind(&mut tape, false);
    let out = multi_head_on_tape(&mut tape, stacked, n, k, m, mt, &b, config)?;
    split_rows(&tape, out, n, k)
}

pub(crate) fn split_rows(tape: &Tape, stacked: Var, n: usize, k: usize) -> Result<(Tensor, Tensor, Tensor)> {
    let t = tape.value(stacked);
    let d = t.cols();
    let data = t.data();
    Ok((
        Tensor::matrix(n, d, data[..n * d].to_vec())?,
        Tensor::matrix(k, d, data[n * d..(n + k) * d].to_vec())?,
        Tensor::matrix(1, d, data[(n + k) * d..(n + k + 1) * d].to_vec())?,
    ))
}

impl Projections<Tensor> {
    fn map_vars(&self, tape: &mut Tape) -> Projections<Var> {
        Projections {
            query: tape.constant(self.query.clone()),
            key: tape.constant(self.key.clone()),
            value: tape.constant(self.value.clone()),
        }
    }
}
