use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major tensor of `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::config(format!(
                "tensor shape must have positive extents, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::config(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a 2-D tensor from nested rows. Panics on ragged or empty input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty() && !rows[0].is_empty(), "empty matrix");
        let cols = rows[0].len();
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Tensor {
            shape: vec![rows.len(), cols],
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "empty vector");
        Tensor {
            shape: vec![values.len()],
            data: values,
        }
    }

    pub fn row(values: Vec<f64>) -> Self {
        assert!(!values.is_empty(), "empty row");
        Tensor {
            shape: vec![1, values.len()],
            data: values,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(other.shape.clone())
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

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(rows, cols)` for a rank-2 tensor.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Some((r, c)),
            _ => None,
        }
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        let (_, c) = self.dims2().expect("row_slice on non-matrix");
        &self.data[i * c..(i + 1) * c]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        match self.dims2() {
            Some((_, c)) => self.data.chunks(c).map(<[f64]>::to_vec).collect(),
            None => vec![self.data.clone()],
        }
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn transposed(&self) -> Option<Tensor> {
        let (r, c) = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Some(Tensor {
            shape: vec![c, r],
            data: out,
        })
    }
}

/// `a (n×k) · b (k×m)`; rows of `a` that are zero are skipped, which keeps
/// sparse count inputs cheap.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `aᵀ · g` where `a` is n×k and `g` is n×m, giving k×m.
pub(crate) fn matmul_tn(a: &[f64], g: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let g_row = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * m..(p + 1) * m];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
    out
}

/// `g · bᵀ` where `g` is n×m and `b` is k×m, giving n×k.
pub(crate) fn matmul_nt(g: &[f64], b: &[f64], n: usize, m: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let g_row = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let b_row = &b[p * m..(p + 1) * m];
            out[i * k + p] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    out
}
