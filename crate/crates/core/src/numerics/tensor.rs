use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense tensor. Vectors have rank 1, matrices rank 2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_vec(&[rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1..].iter().product()
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out = M x`
pub fn matvec(m: &Tensor, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.cols(), x.len());
    debug_assert_eq!(m.rows(), out.len());
    for (o, row) in out.iter_mut().zip(m.data.chunks_exact(x.len().max(1))) {
        *o = dot(row, x);
    }
}

/// `out += M x`
pub fn matvec_add(m: &Tensor, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.cols(), x.len());
    debug_assert_eq!(m.rows(), out.len());
    for (o, row) in out.iter_mut().zip(m.data.chunks_exact(x.len().max(1))) {
        *o += dot(row, x);
    }
}

/// `out += Mᵀ y`
pub fn matvec_t_add(m: &Tensor, y: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.rows(), y.len());
    debug_assert_eq!(m.cols(), out.len());
    for (&yi, row) in y.iter().zip(m.data.chunks_exact(out.len().max(1))) {
        if yi != 0.0 {
            for (o, r) in out.iter_mut().zip(row) {
                *o += yi * r;
            }
        }
    }
}

/// `g += a bᵀ`
pub fn add_outer(g: &mut Tensor, a: &[f64], b: &[f64]) {
    debug_assert_eq!(g.rows(), a.len());
    debug_assert_eq!(g.cols(), b.len());
    for (&ai, row) in a.iter().zip(g.data.chunks_exact_mut(b.len().max(1))) {
        if ai != 0.0 {
            for (r, bj) in row.iter_mut().zip(b) {
                *r += ai * bj;
            }
        }
    }
}
