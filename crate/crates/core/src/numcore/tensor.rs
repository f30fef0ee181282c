use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::{Error, Result};

/// Row-major dense tensor of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        ensure!(
            expected == data.len(),
            Shape,
            "shape {:?} needs {} values, got {}",
            shape,
            expected,
            data.len()
        );
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        ensure!(!rows.is_empty(), Shape, "no rows");
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            ensure!(r.len() == cols, Shape, "row {} has {} columns, expected {}", i, r.len(), cols);
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    /// Number of rows of a 2-D tensor (length for 1-D).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of columns of a 2-D tensor (1 for 1-D).
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[1..].iter().product(),
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

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols().max(1))
    }

    /// Reinterprets the tensor as `[rows, rest]`.
    pub fn flatten_rows(self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        Self {
            shape: vec![r, c],
            data: self.data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Gathers the given rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let (r, c) = (self.rows(), self.cols());
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= r {
                return Err(Error::Bounds { index: i, len: r });
            }
            data.extend_from_slice(self.row(i));
        }
        Self::matrix(indices.len(), c, data)
    }

    /// `self [n×k] · rhs [k×m]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Self> {
        let (n, k) = (self.rows(), self.cols());
        let (k2, m) = (rhs.rows(), rhs.cols());
        ensure!(k == k2, Shape, "matmul {}x{} by {}x{}", n, k, k2, m);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a = &self.data[i * k..(i + 1) * k];
            let o = &mut out[i * m..(i + 1) * m];
            for (p, &av) in a.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let b = &rhs.data[p * m..(p + 1) * m];
                for (ov, &bv) in o.iter_mut().zip(b) {
                    *ov += av * bv;
                }
            }
        }
        Self::matrix(n, m, out)
    }

    /// `selfᵀ [k×n] · rhs [n×m]` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Tensor) -> Result<Self> {
        let (n, k) = (self.rows(), self.cols());
        let (n2, m) = (rhs.rows(), rhs.cols());
        ensure!(n == n2, Shape, "t_matmul {}x{} by {}x{}", n, k, n2, m);
        let mut out = vec![0.0; k * m];
        for r in 0..n {
            let a = &self.data[r * k..(r + 1) * k];
            let b = &rhs.data[r * m..(r + 1) * m];
            for (p, &av) in a.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let o = &mut out[p * m..(p + 1) * m];
                for (ov, &bv) in o.iter_mut().zip(b) {
                    *ov += av * bv;
                }
            }
        }
        Self::matrix(k, m, out)
    }

    /// `self [n×m] · rhsᵀ [m×k]`.
    pub fn matmul_t(&self, rhs: &Tensor) -> Result<Self> {
        let (n, m) = (self.rows(), self.cols());
        let (k, m2) = (rhs.rows(), rhs.cols());
        ensure!(m == m2, Shape, "matmul_t {}x{} by ({}x{})ᵀ", n, m, k, m2);
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            let a = &self.data[i * m..(i + 1) * m];
            for j in 0..k {
                let b = &rhs.data[j * m..(j + 1) * m];
                out[i * k + j] = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
        Self::matrix(n, k, out)
    }

    /// Adds `bias` to every row.
    pub fn add_row(&mut self, bias: &Tensor) -> Result<()> {
        let c = self.cols();
        ensure!(bias.len() == c, Shape, "bias length {} vs {} columns", bias.len(), c);
        for row in self.data.chunks_mut(c) {
            for (x, b) in row.iter_mut().zip(&bias.data) {
                *x += b;
            }
        }
        Ok(())
    }

    /// Column sums of a matrix.
    pub fn sum_rows(&self) -> Self {
        let c = self.cols();
        let mut out = vec![0.0; c];
        for row in self.data.chunks(c.max(1)) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        Self {
            shape: vec![c],
            data: out,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|x| x * s)
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Self> {
        ensure!(self.shape == rhs.shape, Shape, "add {:?} and {:?}", self.shape, rhs.shape);
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Self> {
        ensure!(self.shape == rhs.shape, Shape, "sub {:?} and {:?}", self.shape, rhs.shape);
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        })
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn hcat(parts: &[&Tensor]) -> Result<Self> {
        ensure!(!parts.is_empty(), Shape, "hcat of nothing");
        let n = parts[0].rows();
        for p in parts {
            ensure!(p.rows() == n, Shape, "hcat row counts {} vs {}", p.rows(), n);
        }
        let width: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(n * width);
        for i in 0..n {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Self::matrix(n, width, data)
    }

    /// Splits columns into consecutive blocks of the given widths.
    pub fn split_cols(&self, widths: &[usize]) -> Result<Vec<Self>> {
        let total: usize = widths.iter().sum();
        ensure!(total == self.cols(), Shape, "split widths sum {} vs {} columns", total, self.cols());
        let n = self.rows();
        let mut out: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(n * w)).collect();
        for i in 0..n {
            let row = self.row(i);
            let mut off = 0;
            for (o, &w) in out.iter_mut().zip(widths) {
                o.extend_from_slice(&row[off..off + w]);
                off += w;
            }
        }
        out.into_iter()
            .zip(widths)
            .map(|(d, &w)| Self::matrix(n, w, d))
            .collect()
    }

    /// Index of the largest entry in each row; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.iter_rows()
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_checked() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::zeros(vec![2, 3]).len(), 6);
    }

    #[test]
    fn transposed_products_agree() {
        let a = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::matrix(2, 2, vec![1., -1., 0.5, 2.]).unwrap();
        let atb = a.t_matmul(&b).unwrap();
        // aᵀ·b computed by hand
        assert_eq!(atb.data(), &[3., 7., 4.5, 8., 6., 9.]);
        let c = Tensor::matrix(2, 3, vec![1., 0., 1., 0., 1., 0.]).unwrap();
        assert_eq!(a.matmul_t(&c).unwrap().data(), &[4., 2., 10., 5.]);
    }

    #[test]
    fn hcat_then_split_is_lossless() {
        let a = Tensor::matrix(2, 1, vec![1., 2.]).unwrap();
        let b = Tensor::matrix(2, 2, vec![3., 4., 5., 6.]).unwrap();
        let h = Tensor::hcat(&[&a, &b]).unwrap();
        assert_eq!(h.data(), &[1., 3., 4., 2., 5., 6.]);
        let parts = h.split_cols(&[1, 2]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        let t = Tensor::matrix(2, 2, vec![0.1, 0.9, 0.5, 0.5]).unwrap();
        assert_eq!(t.argmax_rows(), vec![1, 0]);
    }

    #[test]
    fn select_rows_bounds() {
        let t = Tensor::matrix(2, 1, vec![1., 2.]).unwrap();
        assert!(matches!(t.select_rows(&[2]), Err(Error::Bounds { index: 2, len: 2 })));
    }
}
