use super::tensor::{matmul_into, matmul_nt_into, matmul_tn_into, Tensor};
use crate::error::{KatError, Result};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_COEF: f64 = 0.044_715;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Softmax {
        input: Var,
        tau: f64,
    },
    LayerNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
    Sum(Var),
    SliceCols {
        input: Var,
        start: usize,
    },
    SliceRows {
        input: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    BroadcastRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Linear record of evaluated operations; nodes are appended in evaluation
/// order, so the node list is always topologically sorted.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    matmul_flops: u64,
}

/// Result of [`Tape::backward`]: one optional gradient per recorded node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; zeros when `var` was not
    /// reached from the loss.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn wrt(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Matmul FLOPs recorded so far, counted as `2·a·b·c` per product.
    pub fn matmul_flops(&self) -> u64 {
        self.matmul_flops
    }

    /// Elements held by non-leaf nodes recorded at or after `mark`
    /// (a value previously returned by [`Tape::len`]).
    pub fn activation_elements_since(&self, mark: usize) -> u64 {
        self.nodes[mark..]
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .map(|n| n.value.len() as u64)
            .sum()
    }

    /// Registers a leaf; it is differentiable iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let requires_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad())
    }

    pub fn constant(&mut self, mut tensor: Tensor) -> Var {
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], name: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(KatError::NonFinite(name.to_string()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(KatError::dim(format!(
                "matmul of {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.matmul_flops += 2 * (m * k * n) as u64;
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), &[a, b], "matmul")
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (n, k2) = self.dims(b)?;
        if k != k2 {
            return Err(KatError::dim(format!(
                "matmul of {:?} and transpose of {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_nt_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.matmul_flops += 2 * (m * k * n) as u64;
        self.push(Tensor::matrix(m, n, out)?, Op::MatMulNt(a, b), &[a, b], "matmul_nt")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).transpose()?;
        self.push(t, Op::Transpose(a), &[a], "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(KatError::dim(format!("add of {:?} and {:?}", x.shape(), y.shape())));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(out, Op::Add(a, b), &[a, b], "add")
    }

    /// Adds a single row (`1×c` or `[c]`) to every row of an `r×c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        let (br, bc) = self.dims(row)?;
        if br != 1 || bc != c {
            return Err(KatError::dim(format!(
                "row broadcast of {:?} onto {:?}",
                self.value(row).shape(),
                self.value(a).shape()
            )));
        }
        let bias = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (x, b) in chunk.iter_mut().zip(bias) {
                *x += b;
            }
        }
        self.push(Tensor::matrix(r, c, data)?, Op::AddRow(a, row), &[a, row], "add_row")
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(KatError::dim(format!(
                "elementwise product of {:?} and {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(out, Op::Mul(a, b), &[a, b], "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let x = self.value(a);
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * s).collect())?;
        self.push(out, Op::Scale(a, s), &[a], "scale")
    }

    /// Row-wise softmax of `s / tau`, max-subtracted.
    pub fn softmax_scaled(&mut self, s: Var, tau: f64) -> Result<Var> {
        if !(tau > 0.0) {
            return Err(KatError::param(format!("softmax scale must be positive, got {tau}")));
        }
        let (r, c) = self.dims(s)?;
        let mut out = self.value(s).data().to_vec();
        for row in out.chunks_mut(c) {
            softmax_row(row, tau);
        }
        self.push(
            Tensor::matrix(r, c, out)?,
            Op::Softmax { input: s, tau },
            &[s],
            "softmax",
        )
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(KatError::param(format!("layer norm eps must be positive, got {eps}")));
        }
        let (r, d) = self.dims(x)?;
        for p in [gamma, beta] {
            if self.value(p).len() != d {
                return Err(KatError::dim(format!(
                    "layer norm over width {d} with affine parameter of shape {:?}",
                    self.value(p).shape()
                )));
            }
        }
        let xs = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut normalized = vec![0.0; r * d];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * d];
        for i in 0..r {
            let row = &xs[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                normalized[i * d + j] = h;
                out[i * d + j] = g[j] * h + b[j];
            }
        }
        self.push(
            Tensor::matrix(r, d, out)?,
            Op::LayerNorm {
                input: x,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            &[x, gamma, beta],
            "layer_norm",
        )
    }

    /// Tanh-form GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| gelu(v)).collect())?;
        self.push(out, Op::Gelu(x), &[x], "gelu")
    }

    /// `-log softmax(logits)[label]` for a single row of logits.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let (r, c) = self.dims(logits)?;
        if r != 1 {
            return Err(KatError::dim(format!(
                "cross entropy expects one row of logits, got {:?}",
                self.value(logits).shape()
            )));
        }
        if label >= c {
            return Err(KatError::Index(format!("label {label} with {c} classes")));
        }
        let z = self.value(logits).data();
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let probs = z.iter().map(|v| (v - lse).exp()).collect();
        let loss = lse - z[label];
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, label, probs },
            &[logits],
            "cross_entropy",
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a], "sum")
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        if start >= end || end > c {
            return Err(KatError::dim(format!("column slice {start}..{end} of width {c}")));
        }
        let src = self.value(a).data();
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + end]);
        }
        self.push(
            Tensor::matrix(r, w, out)?,
            Op::SliceCols { input: a, start },
            &[a],
            "slice_cols",
        )
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims(a)?;
        if start >= end || end > r {
            return Err(KatError::dim(format!("row slice {start}..{end} of height {r}")));
        }
        let out = self.value(a).data()[start * c..end * c].to_vec();
        self.push(
            Tensor::matrix(end - start, c, out)?,
            Op::SliceRows { input: a, start },
            &[a],
            "slice_rows",
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.dims(parts[0])?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims(p)?;
            if pr != r {
                return Err(KatError::dim(format!("column concat of {pr} rows onto {r} rows")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; r * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..r {
                out[i * total + offset..i * total + offset + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        self.push(
            Tensor::matrix(r, total, out)?,
            Op::ConcatCols(parts.to_vec()),
            parts,
            "concat_cols",
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.dims(parts[0])?.1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p)?;
            if pc != c {
                return Err(KatError::dim(format!("row concat of width {pc} onto width {c}")));
            }
            out.extend_from_slice(self.value(p).data());
            rows += pr;
        }
        self.push(
            Tensor::matrix(rows, c, out)?,
            Op::ConcatRows(parts.to_vec()),
            parts,
            "concat_rows",
        )
    }

    /// Repeats a single row `n` times.
    pub fn broadcast_rows(&mut self, row: Var, n: usize) -> Result<Var> {
        let (r, c) = self.dims(row)?;
        if r != 1 || n == 0 {
            return Err(KatError::dim(format!(
                "broadcast of {:?} to {n} rows",
                self.value(row).shape()
            )));
        }
        let src = self.value(row).data();
        let mut out = Vec::with_capacity(n * c);
        for _ in 0..n {
            out.extend_from_slice(src);
        }
        self.push(
            Tensor::matrix(n, c, out)?,
            Op::BroadcastRows(row),
            &[row],
            "broadcast_rows",
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(KatError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut seed = self.value(loss).clone();
        seed.data_mut()[0] = 1.0;
        grads[loss.0] = Some(seed);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        // Only differentiable leaves are reported; intermediates are dropped.
        for (i, n) in self.nodes.iter().enumerate() {
            if !(matches!(n.op, Op::Leaf) && n.requires_grad) {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: Var, g: Tensor) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a)?;
                let n = self.dims(*b)?.1;
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; m * k];
                    matmul_nt_into(gd, self.value(*b).data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, Tensor::new(self.value(*a).shape().to_vec(), da)?);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; k * n];
                    matmul_tn_into(self.value(*a).data(), gd, &mut db, k, m, n);
                    self.accumulate(grads, *b, Tensor::new(self.value(*b).shape().to_vec(), db)?);
                }
            }
            Op::MatMulNt(a, b) => {
                // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                let (m, k) = self.dims(*a)?;
                let n = self.dims(*b)?.0;
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; m * k];
                    matmul_into(gd, self.value(*b).data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, Tensor::new(self.value(*a).shape().to_vec(), da)?);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; n * k];
                    matmul_tn_into(gd, self.value(*a).data(), &mut db, n, m, k);
                    self.accumulate(grads, *b, Tensor::new(self.value(*b).shape().to_vec(), db)?);
                }
            }
            Op::Transpose(a) => {
                let t = g.transpose()?;
                let t = Tensor::new(self.value(*a).shape().to_vec(), t.into_data())?;
                self.accumulate(grads, *a, t);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                let c = g.cols();
                let mut db = vec![0.0; c];
                for chunk in gd.chunks(c) {
                    for (d, v) in db.iter_mut().zip(chunk) {
                        *d += v;
                    }
                }
                self.accumulate(grads, *row, Tensor::new(self.value(*row).shape().to_vec(), db)?);
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let da = gd.iter().zip(y.data()).map(|(p, q)| p * q).collect();
                let db = gd.iter().zip(x.data()).map(|(p, q)| p * q).collect();
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), da)?);
                self.accumulate(grads, *b, Tensor::new(y.shape().to_vec(), db)?);
            }
            Op::Scale(a, s) => {
                let d = gd.iter().map(|v| v * s).collect();
                self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Softmax { input, tau } => {
                let y = node.value.data();
                let c = node.value.cols();
                let mut ds = vec![0.0; y.len()];
                for ((dsr, yr), gr) in ds.chunks_mut(c).zip(y.chunks(c)).zip(gd.chunks(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        dsr[j] = yr[j] * (gr[j] - dot) / tau;
                    }
                }
                self.accumulate(grads, *input, Tensor::new(node.value.shape().to_vec(), ds)?);
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let d = node.value.cols();
                let gam = self.value(*gamma).data();
                let mut dx = vec![0.0; gd.len()];
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for (i, is) in inv_std.iter().enumerate() {
                    let gr = &gd[i * d..(i + 1) * d];
                    let hr = &normalized[i * d..(i + 1) * d];
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for j in 0..d {
                        dgamma[j] += gr[j] * hr[j];
                        dbeta[j] += gr[j];
                        let dh = gr[j] * gam[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                    }
                    let inv_d = 1.0 / d as f64;
                    for j in 0..d {
                        let dh = gr[j] * gam[j];
                        dx[i * d + j] = is * (dh - inv_d * sum_dh - hr[j] * inv_d * sum_dh_h);
                    }
                }
                self.accumulate(grads, *input, Tensor::new(node.value.shape().to_vec(), dx)?);
                self.accumulate(grads, *gamma, Tensor::new(self.value(*gamma).shape().to_vec(), dgamma)?);
                self.accumulate(grads, *beta, Tensor::new(self.value(*beta).shape().to_vec(), dbeta)?);
            }
            Op::Gelu(x) => {
                let xs = self.value(*x).data();
                let d = xs.iter().zip(gd).map(|(&v, &gv)| gv * gelu_grad(v)).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::CrossEntropy { logits, label, probs } => {
                let scale = gd[0];
                let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                d[*label] -= scale;
                self.accumulate(grads, *logits, Tensor::new(self.value(*logits).shape().to_vec(), d)?);
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape();
                self.accumulate(grads, *a, Tensor::filled(shape, gd[0]));
            }
            Op::SliceCols { input, start } => {
                let (r, c) = self.dims(*input)?;
                let w = g.cols();
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    d[i * c + start..i * c + start + w].copy_from_slice(&gd[i * w..(i + 1) * w]);
                }
                self.accumulate(grads, *input, Tensor::matrix(r, c, d)?);
            }
            Op::SliceRows { input, start } => {
                let (r, c) = self.dims(*input)?;
                let mut d = vec![0.0; r * c];
                d[start * c..start * c + gd.len()].copy_from_slice(gd);
                self.accumulate(grads, *input, Tensor::matrix(r, c, d)?);
            }
            Op::ConcatCols(parts) => {
                let (r, total) = g.dims2()?;
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims(p)?.1;
                    if self.nodes[p.0].requires_grad {
                        let mut d = Vec::with_capacity(r * w);
                        for i in 0..r {
                            d.extend_from_slice(&gd[i * total + offset..i * total + offset + w]);
                        }
                        self.accumulate(grads, p, Tensor::new(self.value(p).shape().to_vec(), d)?);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut row = 0;
                for &p in parts {
                    let pr = self.dims(p)?.0;
                    if self.nodes[p.0].requires_grad {
                        let d = gd[row * c..(row + pr) * c].to_vec();
                        self.accumulate(grads, p, Tensor::new(self.value(p).shape().to_vec(), d)?);
                    }
                    row += pr;
                }
            }
            Op::BroadcastRows(row) => {
                let c = g.cols();
                let mut d = vec![0.0; c];
                for chunk in gd.chunks(c) {
                    for (x, v) in d.iter_mut().zip(chunk) {
                        *x += v;
                    }
                }
                self.accumulate(grads, *row, Tensor::new(self.value(*row).shape().to_vec(), d)?);
            }
        }
        Ok(())
    }
}

pub(crate) fn softmax_row(row: &mut [f64], tau: f64) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = ((*v - max) / tau).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

pub fn gelu(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_COEF * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * x * x)
}
