//! Dense f64 vector/matrix arithmetic and activations.
//!
//! Deliberately tiny: row-major matrices, a handful of elementwise helpers,
//! and the two activations the cells need. Every fallible operation checks
//! shapes and reports both sides of a mismatch; nothing broadcasts.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(Error::shape(
                    "from_rows",
                    format!("row of length {c}"),
                    format!("row {i} of length {}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    /// Identity, useful in tests and saturation setups.
    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn check_vec(&self, op: &'static str, expect: usize, got: usize) -> Result<()> {
        if expect != got {
            return Err(Error::shape(
                op,
                format!("{}x{} with vector of length {}", self.rows, self.cols, expect),
                format!("vector of length {got}"),
            ));
        }
        Ok(())
    }

    /// result[i] = sum_j self[i,j] * v[j]
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.rows];
        self.matvec_add(v, &mut out)?;
        Ok(out)
    }

    /// out[i] += sum_j self[i,j] * v[j]; avoids an allocation in hot loops.
    pub fn matvec_add(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_vec("matvec", self.cols, v.len())?;
        self.check_vec("matvec (output)", self.rows, out.len())?;
        for (i, row) in self.data.chunks_exact(self.cols.max(1)).enumerate() {
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(v) {
                acc += a * b;
            }
            out[i] += acc;
        }
        Ok(())
    }

    /// result[j] = sum_i self[i,j] * v[i] (transpose-matvec).
    pub fn matvec_t(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.cols];
        self.matvec_t_add(v, &mut out)?;
        Ok(out)
    }

    /// out[j] += sum_i self[i,j] * v[i]
    pub fn matvec_t_add(&self, v: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_vec("matvec_t", self.rows, v.len())?;
        self.check_vec("matvec_t (output)", self.cols, out.len())?;
        for (row, vi) in self.data.chunks_exact(self.cols.max(1)).zip(v) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vi;
            }
        }
        Ok(())
    }

    /// self += a * b^T (outer-product accumulation, the dW term of backprop).
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) -> Result<()> {
        self.check_vec("add_outer (rows)", self.rows, a.len())?;
        self.check_vec("add_outer (cols)", self.cols, b.len())?;
        for (row, ai) in self.data.chunks_exact_mut(self.cols.max(1)).zip(a) {
            for (x, bj) in row.iter_mut().zip(b) {
                *x += ai * bj;
            }
        }
        Ok(())
    }
}

fn check_len(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("length {a}"), format!("length {b}")));
    }
    Ok(())
}

pub fn add(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len("add", a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x + y).collect())
}

pub fn sub(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len("sub", a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len("hadamard", a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

pub fn scale(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| x * c).collect()
}

/// y += c * x
pub fn axpy(y: &mut [f64], c: f64, x: &[f64]) -> Result<()> {
    check_len("axpy", y.len(), x.len())?;
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
    Ok(())
}

/// Numerically stable logistic function; never produces NaN on finite input.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| sigmoid_scalar(x)).collect()
}

pub fn tanh_vec(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.tanh()).collect()
}

/// sigma'(x) written in terms of the forward output y = sigma(x).
pub fn sigmoid_deriv_from_output(y: &[f64]) -> Vec<f64> {
    y.iter().map(|&v| v * (1.0 - v)).collect()
}

/// tanh'(x) written in terms of the forward output y = tanh(x).
pub fn tanh_deriv_from_output(y: &[f64]) -> Vec<f64> {
    y.iter().map(|&v| 1.0 - v * v).collect()
}
