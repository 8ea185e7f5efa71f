//! Straight-line reference evaluations on nested vectors, sharing no code
//! with the tape.

#![allow(dead_code)]

pub mod golden;

use kat_core::anchor_masks::MaskStack;
use kat_core::autodiff::Tensor;
use kat_core::model::{BlockWeights, KatConfig, KatParams, Projections};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn tensor(m: &Mat) -> Tensor {
    Tensor::matrix(m.len(), m[0].len(), m.concat()).unwrap()
}

pub fn mm(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn cols(m: &Mat, lo: usize, hi: usize) -> Mat {
    m.iter().map(|r| r[lo..hi].to_vec()).collect()
}

fn softmax(row: &[f64], tau: f64) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| ((v - max) / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// `out[i] = sum_j (softmax_j(q_i·k_j / tau) * w(i, j)) v_j`
fn cross(q: &Mat, k: &Mat, v: &Mat, tau: f64, w: impl Fn(usize, usize) -> f64) -> Mat {
    let d = v[0].len();
    q.iter()
        .enumerate()
        .map(|(i, qi)| {
            let scores: Vec<f64> = k.iter().map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum()).collect();
            let a = softmax(&scores, tau);
            let mut out = vec![0.0; d];
            for (j, vj) in v.iter().enumerate() {
                let weight = a[j] * w(i, j);
                for c in 0..d {
                    out[c] += weight * vj[c];
                }
            }
            out
        })
        .collect()
}

pub struct FlowWeights<'a> {
    pub summary: &'a Projections<Tensor>,
    pub distribution: &'a Projections<Tensor>,
    pub classification: &'a Projections<Tensor>,
}

/// Single-head kernel attention: `(patches, kernels, cls)`.
pub fn kernel_attention_oracle(
    x: &Mat,
    kern: &Mat,
    cls: &Mat,
    mask: &Mat,
    w: &FlowWeights,
    tau: f64,
    head: Option<(usize, usize)>,
) -> (Mat, Mat, Mat) {
    let proj = |rows: &Mat, p: &Tensor| {
        let full = mm(rows, &mat(p));
        match head {
            Some((lo, hi)) => cols(&full, lo, hi),
            None => full,
        }
    };
    let s = w.summary;
    let kernels = cross(
        &proj(kern, &s.query),
        &proj(x, &s.key),
        &proj(x, &s.value),
        tau,
        |k, i| mask[k][i],
    );
    let d = w.distribution;
    let patches = cross(
        &proj(x, &d.query),
        &proj(kern, &d.key),
        &proj(kern, &d.value),
        tau,
        |i, k| mask[k][i],
    );
    let c = w.classification;
    let cls_out = cross(
        &proj(cls, &c.query),
        &proj(kern, &c.key),
        &proj(kern, &c.value),
        tau,
        |_, _| 1.0,
    );
    (patches, kernels, cls_out)
}

fn flow_weights(block: &BlockWeights<Tensor>) -> FlowWeights<'_> {
    if block.flows.len() == 1 {
        FlowWeights {
            summary: &block.flows[0],
            distribution: &block.flows[0],
            classification: &block.flows[0],
        }
    } else {
        FlowWeights {
            summary: &block.flows[0],
            distribution: &block.flows[1],
            classification: &block.flows[2],
        }
    }
}

fn affine(rows: &Mat, w: &Tensor, b: &Tensor) -> Mat {
    let mut out = mm(rows, &mat(w));
    for r in &mut out {
        for (v, bb) in r.iter_mut().zip(b.data()) {
            *v += bb;
        }
    }
    out
}

/// Heads concatenated, then the block's output projection.
pub fn multi_head_oracle(
    x: &Mat,
    kern: &Mat,
    cls: &Mat,
    mask: &Mat,
    block: &BlockWeights<Tensor>,
    config: &KatConfig,
) -> (Mat, Mat, Mat) {
    let w = flow_weights(block);
    let dh = config.d_e / config.n_heads;
    let tau = (dh as f64).sqrt();
    let (mut p, mut k, mut c) = (vec![vec![]; x.len()], vec![vec![]; kern.len()], vec![vec![]]);
    for h in 0..config.n_heads {
        let (hp, hk, hc) = kernel_attention_oracle(x, kern, cls, mask, &w, tau, Some((h * dh, (h + 1) * dh)));
        for (dst, src) in [(&mut p, hp), (&mut k, hk), (&mut c, hc)] {
            for (d, s) in dst.iter_mut().zip(src) {
                d.extend(s);
            }
        }
    }
    let o = |m: &Mat| affine(m, &block.out.weight, &block.out.bias);
    (o(&p), o(&k), o(&c))
}

fn layer_norm(rows: &Mat, gamma: &Tensor, beta: &Tensor) -> Mat {
    rows.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = (var + 1e-6).sqrt();
            r.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) / sd * gamma.data()[j] + beta.data()[j])
                .collect()
        })
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(u, v)| u + v).collect())
        .collect()
}

/// One block on separate streams; returns `(patches, kernels, cls)`.
pub fn block_oracle(
    x: &Mat,
    kern: &Mat,
    cls: &Mat,
    mask: &Mat,
    block: &BlockWeights<Tensor>,
    config: &KatConfig,
) -> (Mat, Mat, Mat) {
    let ln = |m: &Mat| layer_norm(m, &block.norm1.gamma, &block.norm1.beta);
    let (ap, ak, ac) = multi_head_oracle(&ln(x), &ln(kern), &ln(cls), mask, block, config);
    let cls_in = if config.cls_residual {
        cls.clone()
    } else {
        vec![vec![0.0; config.d_e]]
    };
    let ff = |m: &Mat| {
        let h = affine(
            &layer_norm(m, &block.norm2.gamma, &block.norm2.beta),
            &block.ff_in.weight,
            &block.ff_in.bias,
        );
        let h: Mat = h.iter().map(|r| r.iter().map(|&v| gelu(v)).collect()).collect();
        add(m, &affine(&h, &block.ff_out.weight, &block.ff_out.bias))
    };
    (ff(&add(x, &ap)), ff(&add(kern, &ak)), ff(&add(&cls_in, &ac)))
}

/// Logits and the final patch stream.
pub fn forward_oracle(features: &Tensor, masks: &MaskStack, params: &KatParams, config: &KatConfig) -> (Vec<f64>, Mat) {
    let mut x = affine(&mat(features), &params.embed.weight, &params.embed.bias);
    let mut kern = vec![params.kernel_seed.data().to_vec(); masks.n_kernels()];
    let mut cls = vec![params.cls_token.data().to_vec()];
    for (block, mask) in params.blocks.iter().zip(&masks.masks) {
        (x, kern, cls) = block_oracle(&x, &kern, &cls, &mat(mask), block, config);
    }
    let logits = affine(&cls, &params.head.weight, &params.head.bias).remove(0);
    (logits, x)
}

pub fn random_tensor(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| scale * rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

pub fn random_mask(k: usize, n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::matrix(k, n, (0..k * n).map(|_| rng.random_range(0.05..=1.0)).collect()).unwrap()
}

pub fn random_masks(k: usize, n: usize, scales: usize, rng: &mut ChaCha8Rng) -> MaskStack {
    MaskStack {
        masks: (0..scales).map(|_| random_mask(k, n, rng)).collect(),
        deltas: (1..=scales).map(|s| s as f64).collect(),
    }
}

/// Parameters drawn at a scale large enough for every path to matter.
pub fn random_params(config: &KatConfig, rng: &mut ChaCha8Rng) -> KatParams {
    let mut p = KatParams::zeros(config);
    let flat: Vec<f64> = (0..p.count()).map(|_| rng.random_range(-0.6..0.6)).collect();
    p.load_flat(&flat).unwrap();
    p
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random subset of an `side × side` grid with `n` cells.
pub fn random_coords(n: usize, side: i32, rng: &mut ChaCha8Rng) -> Vec<(i32, i32)> {
    use rand::seq::SliceRandom;
    let mut all: Vec<(i32, i32)> = (0..side).flat_map(|m| (0..side).map(move |c| (m, c))).collect();
    all.shuffle(rng);
    all.truncate(n);
    all
}

pub fn max_diff(a: &Mat, b: &Tensor) -> f64 {
    let mut worst: f64 = 0.0;
    for (r, row) in a.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            worst = worst.max((v - b.at(r, c)).abs());
        }
    }
    worst
}
