//! Dense row-major matrix, sized for desk-scale models.
//!
//! All training state is 64-bit; determinism and accountant accuracy matter
//! more than speed at this scale.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "flat data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in &rows {
            if r.len() != ncols {
                return Err(Error::Shape("ragged row lengths".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: nrows, cols: ncols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `Aᵀ x` for x of length `rows`; returns a vector of length `cols`.
    pub fn transpose_vec_mul(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::Shape(format!(
                "transpose_vec_mul: vector length {} vs {} rows",
                x.len(),
                self.rows
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            let row = self.row(r);
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * xr;
            }
        }
        Ok(out)
    }

    /// `A h` for h of length `cols`; returns a vector of length `rows`.
    pub fn vec_mul(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.cols {
            return Err(Error::Shape(format!(
                "vec_mul: vector length {} vs {} cols",
                h.len(),
                self.cols
            )));
        }
        let mut out = vec![0.0; self.rows];
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.row(r).iter().zip(h).map(|(&w, &hv)| w * hv).sum();
        }
        Ok(out)
    }

    /// Maximum 1-norm over columns.
    pub fn max_col_l1(&self) -> f64 {
        let mut best = 0.0f64;
        for c in 0..self.cols {
            let mut s = 0.0;
            for r in 0..self.rows {
                s += self.get(r, c).abs();
            }
            best = best.max(s);
        }
        best
    }

    /// Maximum 1-norm over rows.
    pub fn max_row_l1(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|v| v.abs()).sum())
            .fold(0.0f64, f64::max)
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// `self += scale * other`, shapes must match.
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "add_scaled: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}

pub fn l_inf_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn clamp_unit(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_mul_matches_hand_calc() {
        // 2x3 matrix, rows (1,2,3) and (4,5,6); x = (1, 2)
        let m = Matrix::from_rows(vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let out = m.transpose_vec_mul(&[1.0, 2.0]).unwrap();
        assert_eq!(out, vec![9.0, 12.0, 15.0]);
    }

    #[test]
    fn vec_mul_matches_hand_calc() {
        let m = Matrix::from_rows(vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let out = m.vec_mul(&[1.0, 0.0, -1.0]).unwrap();
        assert_eq!(out, vec![-2.0, -2.0]);
    }

    #[test]
    fn norms() {
        let m = Matrix::from_rows(vec![vec![1.0, -2.0], vec![-3.0, 0.5]]).unwrap();
        assert_eq!(m.max_col_l1(), 4.0); // column 0: |1| + |-3|
        assert_eq!(m.max_row_l1(), 3.5); // row 1: 3 + 0.5
    }

    #[test]
    fn shape_errors() {
        let m = Matrix::zeros(2, 3);
        assert!(m.transpose_vec_mul(&[1.0]).is_err());
        assert!(m.vec_mul(&[1.0]).is_err());
        assert!(Matrix::from_flat(2, 2, vec![0.0; 3]).is_err());
    }
}
