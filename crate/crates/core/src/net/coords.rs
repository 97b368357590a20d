use ndarray::Array2;

use crate::error::{param_err, Result};

/// Pixel centres mapped onto `[-c, c]` per axis, row-major `(y, x)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateGrid {
    rows: usize,
    cols: usize,
    scale: f64,
    coords: Vec<[f64; 2]>,
}

fn axis(n: usize, i: usize, scale: f64) -> f64 {
    if n <= 1 {
        0.0
    } else {
        // integer numerator keeps mirrored pixels exact negations
        let k = 2 * i as i64 - (n as i64 - 1);
        scale * (k as f64 / (n - 1) as f64)
    }
}

pub fn make_coordinates(rows: usize, cols: usize, scale: f64) -> Result<CoordinateGrid> {
    if !(scale > 0.0) || !scale.is_finite() {
        return param_err(format!("coordinate scale must be positive, got {scale}"));
    }
    if rows == 0 || cols == 0 {
        return param_err("coordinate grid must be non-empty");
    }
    let mut coords = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let y = axis(rows, i, scale);
        for j in 0..cols {
            coords.push([y, axis(cols, j, scale)]);
        }
    }
    Ok(CoordinateGrid {
        rows,
        cols,
        scale,
        coords,
    })
}

impl CoordinateGrid {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn at(&self, row: usize, col: usize) -> [f64; 2] {
        self.coords[row * self.cols + col]
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    /// Rows `start..end` of the coordinate list as an `n × 2` matrix.
    pub(crate) fn batch(&self, start: usize, end: usize) -> Array2<f64> {
        Array2::from_shape_fn((end - start, 2), |(r, k)| self.coords[start + r][k])
    }
}
