//! Dense row-major grids and multivariate time series.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// A dense `rows x cols` matrix of `f64`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                what: "grid data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a grid from nested rows; every row must have the same length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension {
                    what: "grid row",
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Grid {
        Grid::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Frobenius inner product `<self, other>`.
    pub fn dot(&self, other: &Grid) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// `self + scale * other`, entrywise.
    pub fn axpy(&self, scale: f64, other: &Grid) -> Grid {
        debug_assert_eq!(self.shape(), other.shape());
        Grid {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + scale * b)
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Grid) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize)> for Grid {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Grid {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// A `dim x len` real sequence: `len` frames of `dim` features each.
///
/// Frames are stored contiguously, so `frame(m)` is a slice of length `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    dim: usize,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(domain("time series feature dimension must be >= 1"));
        }
        if !values.len().is_multiple_of(dim) {
            return Err(Error::Dimension {
                what: "time series values (multiple of dim)",
                expected: (values.len() / dim + 1) * dim,
                got: values.len(),
            });
        }
        Ok(Self { dim, values })
    }

    /// Scalar series: one feature per frame.
    pub fn univariate(values: Vec<f64>) -> Self {
        Self { dim: 1, values }
    }

    pub fn from_frames<F: AsRef<[f64]>>(frames: &[F]) -> Result<Self> {
        let dim = frames.first().map_or(1, |f| f.as_ref().len());
        let mut values = Vec::with_capacity(frames.len() * dim);
        for f in frames {
            let f = f.as_ref();
            if f.len() != dim {
                return Err(Error::Dimension {
                    what: "frame",
                    expected: dim,
                    got: f.len(),
                });
            }
            values.extend_from_slice(f);
        }
        Self::new(dim, values)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn frame(&self, m: usize) -> &[f64] {
        &self.values[m * self.dim..(m + 1) * self.dim]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Piecewise-linear resampling to `len` frames, endpoints preserved.
    pub fn resample(&self, len: usize) -> Result<TimeSeries> {
        if len == 0 {
            return Err(domain("resample target length must be >= 1"));
        }
        if self.is_empty() {
            return Err(domain("cannot resample an empty series"));
        }
        let src = self.len();
        if src == len {
            return Ok(self.clone());
        }
        let mut out = Vec::with_capacity(len * self.dim);
        for i in 0..len {
            let pos = if len == 1 {
                0.0
            } else {
                i as f64 * (src - 1) as f64 / (len - 1) as f64
            };
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            let t = pos - lo as f64;
            for k in 0..self.dim {
                let a = self.frame(lo)[k];
                let b = self.frame(hi)[k];
                out.push(a + t * (b - a));
            }
        }
        Ok(TimeSeries {
            dim: self.dim,
            values: out,
        })
    }

    /// Zero-mean, unit-variance per feature. Constant features are only centred.
    pub fn z_normalized(&self) -> TimeSeries {
        let n = self.len() as f64;
        let mut values = self.values.clone();
        for k in 0..self.dim {
            let mean = self.frames().map(|f| f[k]).sum::<f64>() / n;
            let var = self.frames().map(|f| (f[k] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            for m in 0..self.len() {
                let v = &mut values[m * self.dim + k];
                *v -= mean;
                if sd > 1e-12 {
                    *v /= sd;
                }
            }
        }
        TimeSeries {
            dim: self.dim,
            values,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_keeps_endpoints_and_midpoint() {
        let s = TimeSeries::univariate(vec![0.0, 2.0]);
        let r = s.resample(3).unwrap();
        assert_eq!(r.values(), &[0.0, 1.0, 2.0]);
        let one = s.resample(1).unwrap();
        assert_eq!(one.values(), &[0.0]);
    }

    #[test]
    fn transpose_and_dot() {
        let g = Grid::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        let t = g.transpose();
        assert_eq!(t.shape(), (3, 2));
        assert_eq!(t[(2, 1)], 6.0);
        assert_eq!(g.dot(&g), 91.0);
    }

    #[test]
    fn ragged_rows_rejected() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0, 2.0], vec![3.0]];
        assert!(Grid::from_rows(&rows).is_err());
        assert!(TimeSeries::new(2, vec![1.0, 2.0, 3.0]).is_err());
    }
}
