//! Anchor detection and hierarchical Gaussian masks over a patch grid.
//!
//! Anchors are k-means centers of the patch coordinates, snapped to real
//! patches. Each anchor owns one row of a mask matrix whose entry for patch
//! `i` is `exp(-|p_i - c_k|^2 / (2 delta^2))`; one matrix per scale.

mod kmeans;
mod text;

use std::collections::HashSet;

pub use kmeans::{inertia, kmeans_cluster, Point, MAX_ITERATIONS};
pub use text::{plot_points, read_mask_text, write_mask_text, PlotPoint};

use crate::autodiff::Tensor;
use crate::error::{KatError, Result};

/// Patch-wise integer coordinates of the tokens of one bag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    coords: Vec<(i32, i32)>,
}

impl PatchGrid {
    pub fn new(coords: Vec<(i32, i32)>) -> Result<Self> {
        if coords.is_empty() {
            return Err(KatError::param("patch grid is empty"));
        }
        let mut seen = HashSet::with_capacity(coords.len());
        for &(m, n) in &coords {
            if m < 0 || n < 0 {
                return Err(KatError::param(format!("negative patch coordinate ({m}, {n})")));
            }
            if !seen.insert((m, n)) {
                return Err(KatError::param(format!("duplicate patch coordinate ({m}, {n})")));
            }
        }
        Ok(PatchGrid { coords })
    }

    pub fn coords(&self) -> &[(i32, i32)] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn points(&self) -> Vec<Point> {
        self.coords.iter().map(|&(m, n)| (m as f64, n as f64)).collect()
    }

    /// Same patches in a new order: entry `j` of the result is `self[perm[j]]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        PatchGrid::new(perm.iter().map(|&i| self.coords[i]).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    pub anchors: Vec<(i32, i32)>,
    pub nk_bar: usize,
    pub seed: u64,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// One `K × n_p` mask per scale, scales in increasing `delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskStack {
    pub masks: Vec<Tensor>,
    pub deltas: Vec<f64>,
}

impl MaskStack {
    /// Masks of all ones, i.e. spatial gating switched off.
    pub fn all_ones(k: usize, n_p: usize, n_scales: usize) -> Self {
        MaskStack {
            masks: vec![Tensor::filled(&[k, n_p], 1.0); n_scales],
            deltas: vec![f64::INFINITY; n_scales],
        }
    }

    pub fn n_scales(&self) -> usize {
        self.masks.len()
    }

    pub fn n_kernels(&self) -> usize {
        self.masks.first().map_or(0, |m| m.rows())
    }

    pub fn n_patches(&self) -> usize {
        self.masks.first().map_or(0, |m| m.cols())
    }

    /// Reorders the patch columns of every mask: column `j` of the result
    /// is column `perm[j]` of `self`.
    pub fn permute_patches(&self, perm: &[usize]) -> Self {
        let masks = self
            .masks
            .iter()
            .map(|m| {
                let (k, n) = (m.rows(), m.cols());
                let mut data = Vec::with_capacity(k * n);
                for r in 0..k {
                    data.extend(perm.iter().map(|&i| m.at(r, i)));
                }
                Tensor::matrix(k, n, data).expect("same shape")
            })
            .collect();
        MaskStack {
            masks,
            deltas: self.deltas.clone(),
        }
    }
}

/// `K = max(1, round(n_p / nk_bar))`, halves rounded up.
pub fn kernel_count(n_p: usize, nk_bar: usize) -> usize {
    ((2 * n_p + nk_bar) / (2 * nk_bar)).max(1)
}

/// Squared-distance schedule `delta_s^2 = nk_bar^2 * 2^(s-1)` for `s = 1..=n`.
pub fn default_deltas(nk_bar: usize, n_scales: usize) -> Vec<f64> {
    (0..n_scales)
        .map(|s| nk_bar as f64 * 2f64.powi(s as i32).sqrt())
        .collect()
}

/// Clusters the coordinates and snaps each center to a distinct patch.
///
/// Snapping takes the nearest unused coordinate, ties broken by
/// lexicographic `(m, n)` order.
pub fn detect_anchors(grid: &PatchGrid, nk_bar: usize, seed: u64) -> Result<AnchorSet> {
    if nk_bar == 0 {
        return Err(KatError::param("patches per kernel must be at least 1"));
    }
    if grid.is_empty() {
        return Err(KatError::param("patch grid is empty"));
    }
    let k = kernel_count(grid.len(), nk_bar);
    let centers = kmeans_cluster(grid, k, seed)?;
    let mut used = vec![false; grid.len()];
    let mut anchors = Vec::with_capacity(k);
    for c in centers {
        let mut best: Option<(f64, (i32, i32), usize)> = None;
        for (i, &(m, n)) in grid.coords().iter().enumerate() {
            if used[i] {
                continue;
            }
            let d = (m as f64 - c.0).powi(2) + (n as f64 - c.1).powi(2);
            let better = match best {
                None => true,
                Some((bd, bc, _)) => d < bd || (d == bd && (m, n) < bc),
            };
            if better {
                best = Some((d, (m, n), i));
            }
        }
        let (_, coord, i) = best.expect("K never exceeds the number of patches");
        used[i] = true;
        anchors.push(coord);
    }
    Ok(AnchorSet { anchors, nk_bar, seed })
}

/// `K × n_p` Gaussian weights of every patch with respect to every anchor.
///
/// Weights that would underflow to zero are held at `f64::MIN_POSITIVE` so
/// that every entry stays strictly positive.
pub fn gaussian_mask(grid: &PatchGrid, anchors: &AnchorSet, delta: f64) -> Result<Tensor> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(KatError::param(format!("mask scale must be positive, got {delta}")));
    }
    let two_delta_sq = 2.0 * delta * delta;
    let mut data = Vec::with_capacity(anchors.len() * grid.len());
    for &(am, an) in &anchors.anchors {
        for &(m, n) in grid.coords() {
            let d2 = ((m - am) as f64).powi(2) + ((n - an) as f64).powi(2);
            data.push((-d2 / two_delta_sq).exp().max(f64::MIN_POSITIVE));
        }
    }
    Tensor::matrix(anchors.len(), grid.len(), data)
}

pub fn build_mask_stack(grid: &PatchGrid, nk_bar: usize, n_scales: usize, seed: u64) -> Result<(AnchorSet, MaskStack)> {
    if n_scales == 0 {
        return Err(KatError::param("at least one mask scale is required"));
    }
    build_mask_stack_with_deltas(grid, nk_bar, &default_deltas(nk_bar, n_scales), seed)
}

/// Like [`build_mask_stack`] with an explicit, strictly increasing scale list.
pub fn build_mask_stack_with_deltas(
    grid: &PatchGrid,
    nk_bar: usize,
    deltas: &[f64],
    seed: u64,
) -> Result<(AnchorSet, MaskStack)> {
    if deltas.is_empty() {
        return Err(KatError::param("at least one mask scale is required"));
    }
    if deltas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(KatError::param(format!(
            "mask scales must strictly increase, got {deltas:?}"
        )));
    }
    let anchors = detect_anchors(grid, nk_bar, seed)?;
    let masks = deltas
        .iter()
        .map(|&d| gaussian_mask(grid, &anchors, d))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        anchors,
        MaskStack {
            masks,
            deltas: deltas.to_vec(),
        },
    ))
}
