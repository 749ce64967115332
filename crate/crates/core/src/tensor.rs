//! Dense row-major matrices in 64-bit precision.
//!
//! Everything in this crate that looks like a batch, a weight matrix or an
//! embedding table is a [`Tensor2`]. Matrix products parallelize over output
//! rows, which keeps results bit-identical regardless of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Work threshold (multiply-accumulate count) below which matmuls stay serial.
const PAR_THRESHOLD: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Tensor2::from_vec",
                format!("{} values for {rows}x{cols}", rows * cols),
                format!("{}", data.len()),
            ));
        }
        Ok(Tensor2 { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(
                    "Tensor2::from_rows",
                    format!("row of length {cols}"),
                    format!("row {i} of length {}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor2 {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Single row vector (1 x n).
    pub fn row_vector(values: &[f64]) -> Self {
        Tensor2 {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    /// 1x1 tensor. Scalar nodes on the gradient tape use this shape.
    pub fn scalar(value: f64) -> Self {
        Tensor2 {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a 1x1 tensor.
    pub fn scalar_value(&self) -> f64 {
        debug_assert_eq!((self.rows, self.cols), (1, 1));
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Flat index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor2, f: impl Fn(f64, f64) -> f64) -> Result<Tensor2> {
        self.check_same_shape("Tensor2::zip_map", other)?;
        Ok(Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Tensor2, scale: f64) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    /// Column sums as a 1 x cols tensor.
    pub fn column_sums(&self) -> Tensor2 {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, &v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        Tensor2 {
            rows: 1,
            cols: self.cols,
            data: out,
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    fn check_same_shape(&self, op: &str, other: &Tensor2) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                op,
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows(), other.cols()),
            ));
        }
        Ok(())
    }

    /// `self * rhs` for (n x m) * (m x p).
    pub fn matmul(&self, rhs: &Tensor2) -> Result<Tensor2> {
        if self.cols != rhs.rows {
            return Err(Error::shape(
                "Tensor2::matmul",
                format!("lhs cols == rhs rows ({})", self.cols),
                format!("{}", rhs.rows),
            ));
        }
        let (n, m, p) = (self.rows, self.cols, rhs.cols);
        let mut out = Tensor2::zeros(n, p);
        let work = n * m * p;
        let body = |(i, out_row): (usize, &mut [f64])| {
            let a_row = self.row(i);
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = rhs.row(k);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        };
        if work >= PAR_THRESHOLD {
            out.data.par_chunks_mut(p).enumerate().for_each(body);
        } else {
            out.data.chunks_mut(p).enumerate().for_each(body);
        }
        Ok(out)
    }

    /// `self * rhsᵀ` for (n x m) * (p x m)ᵀ; each output entry is a row dot.
    pub fn matmul_transpose_rhs(&self, rhs: &Tensor2) -> Result<Tensor2> {
        if self.cols != rhs.cols {
            return Err(Error::shape(
                "Tensor2::matmul_transpose_rhs",
                format!("matching inner dim {}", self.cols),
                format!("{}", rhs.cols),
            ));
        }
        let (n, m, p) = (self.rows, self.cols, rhs.rows);
        let mut out = Tensor2::zeros(n, p);
        let work = n * m * p;
        let body = |(i, out_row): (usize, &mut [f64])| {
            let a_row = self.row(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                let b_row = rhs.row(j);
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                *o = acc;
            }
        };
        if work >= PAR_THRESHOLD {
            out.data.par_chunks_mut(p).enumerate().for_each(body);
        } else {
            out.data.chunks_mut(p).enumerate().for_each(body);
        }
        Ok(out)
    }

    /// `selfᵀ * rhs` for (n x m)ᵀ * (n x p).
    pub fn matmul_transpose_lhs(&self, rhs: &Tensor2) -> Result<Tensor2> {
        if self.rows != rhs.rows {
            return Err(Error::shape(
                "Tensor2::matmul_transpose_lhs",
                format!("matching row count {}", self.rows),
                format!("{}", rhs.rows),
            ));
        }
        let (n, m, p) = (self.rows, self.cols, rhs.cols);
        let mut out = Tensor2::zeros(m, p);
        let work = n * m * p;
        let body = |(j, out_row): (usize, &mut [f64])| {
            for i in 0..n {
                let a = self.get(i, j);
                if a == 0.0 {
                    continue;
                }
                let b_row = rhs.row(i);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        };
        if work >= PAR_THRESHOLD {
            out.data.par_chunks_mut(p).enumerate().for_each(body);
        } else {
            out.data.chunks_mut(p).enumerate().for_each(body);
        }
        Ok(out)
    }

    /// Squared Euclidean distance between a row of `self` and a row of `other`.
    pub fn row_sq_dist(&self, r: usize, other: &Tensor2, o: usize) -> f64 {
        self.row(r)
            .iter()
            .zip(other.row(o))
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum()
    }

    /// Copy of the selected rows, in order.
    pub fn gather_rows(&self, indices: &[usize]) -> Tensor2 {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor2 {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor2) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor2::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor2::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn matmul_transpose_variants_agree_with_explicit_transpose() {
        let a = Tensor2::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.5, 4.0, -1.0]).unwrap();
        let b = Tensor2::from_vec(4, 3, vec![2.0, 1.0, 0.0, -1.0, 3.0, 5.0, 0.0, 0.0, 1.0, 2.0, 2.0, 2.0]).unwrap();
        // a * bᵀ == a * transpose(b)
        let mut bt = Tensor2::zeros(3, 4);
        for i in 0..4 {
            for j in 0..3 {
                bt.set(j, i, b.get(i, j));
            }
        }
        let via_t = a.matmul(&bt).unwrap();
        let direct = a.matmul_transpose_rhs(&b).unwrap();
        assert_eq!(via_t, direct);

        // aᵀ * c
        let c = Tensor2::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut at = Tensor2::zeros(3, 2);
        for i in 0..2 {
            for j in 0..3 {
                at.set(j, i, a.get(i, j));
            }
        }
        assert_eq!(at.matmul(&c).unwrap(), a.matmul_transpose_lhs(&c).unwrap());
    }

    #[test]
    fn shape_errors_name_dims() {
        let a = Tensor2::zeros(2, 3);
        let b = Tensor2::zeros(2, 3);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul"), "{msg}");
        assert!(msg.contains('3') && msg.contains('2'), "{msg}");
    }

    #[test]
    fn gather_and_column_sums() {
        let a = Tensor2::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let g = a.gather_rows(&[2, 0, 2]);
        assert_eq!(g.data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        assert_eq!(a.column_sums().data(), &[9.0, 12.0]);
    }

    #[test]
    fn parallel_matmul_matches_serial() {
        // Force the parallel path and compare against a naive triple loop.
        let n = 64;
        let a = Tensor2::from_vec(n, n, (0..n * n).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let b = Tensor2::from_vec(n, n, (0..n * n).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
        let c = a.matmul(&b).unwrap();
        let mut naive = Tensor2::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += a.get(i, k) * b.get(k, j);
                }
                naive.set(i, j, acc);
            }
        }
        assert!(c.max_abs_diff(&naive) < 1e-12);
    }
}
