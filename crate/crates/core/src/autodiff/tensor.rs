use crate::error::{KatError, Result};

/// Dense row-major array of `f64` values.
///
/// `requires_grad` only matters when the tensor is registered on a
/// [`Tape`](super::Tape); a tensor never carries gradient state itself.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(KatError::dim(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            requires_grad: false,
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().for_each(|x| *x = value);
        t
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
            requires_grad: false,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns of a matrix. A 1-D tensor is treated as one row.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            [c] => Ok((1, *c)),
            s => Err(KatError::dim(format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().map(|d| d.0).unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.dims2().map(|d| d.1).unwrap_or(self.data.len())
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(KatError::Contract(format!(
                "expected a single value, shape is {:?}",
                self.shape
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::matrix(c, r, out)
    }

    /// Plain matrix product, no recording.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = self.dims2()?;
        let (b2, c) = other.dims2()?;
        if b != b2 {
            return Err(KatError::dim(format!(
                "matmul of {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; a * c];
        matmul_into(&self.data, &other.data, &mut out, a, b, c);
        Tensor::matrix(a, c, out)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "shape mismatch in max_abs_diff");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += y;
        }
    }
}

/// `out += lhs (a×b) · rhs (b×c)`, row-major.
pub(crate) fn matmul_into(lhs: &[f64], rhs: &[f64], out: &mut [f64], a: usize, b: usize, c: usize) {
    for i in 0..a {
        let out_row = &mut out[i * c..(i + 1) * c];
        let lhs_row = &lhs[i * b..(i + 1) * b];
        for (k, &l) in lhs_row.iter().enumerate() {
            if l == 0.0 {
                continue;
            }
            let rhs_row = &rhs[k * c..(k + 1) * c];
            for (o, &r) in out_row.iter_mut().zip(rhs_row) {
                *o += l * r;
            }
        }
    }
}

/// `out += lhsᵀ · rhs` where lhs is b×a and rhs is b×c.
pub(crate) fn matmul_tn_into(lhs: &[f64], rhs: &[f64], out: &mut [f64], a: usize, b: usize, c: usize) {
    for k in 0..b {
        let lhs_row = &lhs[k * a..(k + 1) * a];
        let rhs_row = &rhs[k * c..(k + 1) * c];
        for (i, &l) in lhs_row.iter().enumerate() {
            if l == 0.0 {
                continue;
            }
            let out_row = &mut out[i * c..(i + 1) * c];
            for (o, &r) in out_row.iter_mut().zip(rhs_row) {
                *o += l * r;
            }
        }
    }
}

/// `out += lhs · rhsᵀ` where lhs is a×b and rhs is c×b.
pub(crate) fn matmul_nt_into(lhs: &[f64], rhs: &[f64], out: &mut [f64], a: usize, b: usize, c: usize) {
    for i in 0..a {
        let lhs_row = &lhs[i * b..(i + 1) * b];
        for j in 0..c {
            let rhs_row = &rhs[j * b..(j + 1) * b];
            let dot: f64 = lhs_row.iter().zip(rhs_row).map(|(x, y)| x * y).sum();
            out[i * c + j] += dot;
        }
    }
}
