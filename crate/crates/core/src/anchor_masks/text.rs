//! Plain-text mask container.
//!
//! ```text
//! K n_p N
//! delta_1 ... delta_N
//! m_1 n_1 ... m_K n_K
//! <K lines of n_p values>      scale 1
//! ...
//! <K lines of n_p values>      scale N
//! ```
//!
//! Values are written in shortest round-trip form, so reading a written
//! file reproduces the masks exactly.

use std::io::{BufRead, Write};

use super::{AnchorSet, MaskStack, PatchGrid};
use crate::autodiff::Tensor;
use crate::error::{KatError, Result};

pub fn write_mask_text<W: Write>(mut w: W, anchors: &AnchorSet, stack: &MaskStack) -> Result<()> {
    let (k, n_p, n) = (stack.n_kernels(), stack.n_patches(), stack.n_scales());
    writeln!(w, "{k} {n_p} {n}")?;
    let deltas: Vec<String> = stack.deltas.iter().map(|d| format!("{d:e}")).collect();
    writeln!(w, "{}", deltas.join(" "))?;
    let coords: Vec<String> = anchors.anchors.iter().map(|(m, n)| format!("{m} {n}")).collect();
    writeln!(w, "{}", coords.join(" "))?;
    for mask in &stack.masks {
        for r in 0..k {
            let row: Vec<String> = mask.row(r).iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
    }
    Ok(())
}

fn parse_line<T: std::str::FromStr>(line: &str, lineno: usize, expected: usize) -> Result<Vec<T>> {
    let vals = line
        .split_whitespace()
        .map(|s| s.parse::<T>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| KatError::Data(format!("mask file line {lineno}: unparsable value")))?;
    if vals.len() != expected {
        return Err(KatError::Data(format!(
            "mask file line {lineno}: expected {expected} values, found {}",
            vals.len()
        )));
    }
    Ok(vals)
}

/// Returns the anchor coordinates and the mask stack.
pub fn read_mask_text<R: BufRead>(r: R) -> Result<(Vec<(i32, i32)>, MaskStack)> {
    let mut lines = r.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((i, l)) => Ok((i + 1, l?)),
            None => Err(KatError::Data(format!("mask file ends before {what}"))),
        }
    };
    let (ln, header) = next("header")?;
    let h: Vec<usize> = parse_line(&header, ln, 3)?;
    let (k, n_p, n) = (h[0], h[1], h[2]);
    let (ln, l) = next("scale list")?;
    let deltas: Vec<f64> = parse_line(&l, ln, n)?;
    let (ln, l) = next("anchor list")?;
    let flat: Vec<i32> = parse_line(&l, ln, 2 * k)?;
    let anchors = flat.chunks(2).map(|c| (c[0], c[1])).collect();
    let mut masks = Vec::with_capacity(n);
    for _ in 0..n {
        let mut data = Vec::with_capacity(k * n_p);
        for _ in 0..k {
            let (ln, l) = next("mask rows")?;
            data.extend(parse_line::<f64>(&l, ln, n_p)?);
        }
        masks.push(Tensor::matrix(k, n_p, data)?);
    }
    Ok((anchors, MaskStack { masks, deltas }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotPoint {
    pub scale: usize,
    pub m: i32,
    pub n: i32,
    /// Largest weight the patch receives from any anchor at this scale.
    pub value: f64,
    pub is_anchor: bool,
}

/// Heatmap coordinates for every scale: one point per patch.
pub fn plot_points(grid: &PatchGrid, anchors: &AnchorSet, stack: &MaskStack) -> Vec<PlotPoint> {
    let mut out = Vec::with_capacity(grid.len() * stack.n_scales());
    for (s, mask) in stack.masks.iter().enumerate() {
        for (i, &(m, n)) in grid.coords().iter().enumerate() {
            let value = (0..mask.rows()).map(|k| mask.at(k, i)).fold(0.0, f64::max);
            out.push(PlotPoint {
                scale: s + 1,
                m,
                n,
                value,
                is_anchor: anchors.anchors.contains(&(m, n)),
            });
        }
    }
    out
}
