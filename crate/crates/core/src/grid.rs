//! Row-major 2D grids and the support geometry used by every solver.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};

/// A dense `height × width` grid stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

pub type RealGrid = Grid<f64>;
pub type ComplexGrid = Grid<Complex64>;

impl<T> Grid<T> {
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return dim_err(format!("data length {} does not match {height}x{width}", data.len()));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.width + col]
    }

    pub fn get_mut(&mut self, row: usize, col: usize) -> &mut T {
        &mut self.data[row * self.width + col]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn zip_map<U, V>(&self, other: &Grid<U>, mut f: impl FnMut(&T, &U) -> V) -> Result<Grid<V>> {
        self.ensure_same_shape(other)?;
        Ok(Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(a, b)).collect(),
        })
    }

    pub fn ensure_same_shape<U>(&self, other: &Grid<U>) -> Result<()> {
        if self.shape() != other.shape() {
            return dim_err(format!("shape mismatch: {:?} vs {:?}", self.shape(), other.shape()));
        }
        Ok(())
    }

    pub fn ensure_shape(&self, height: usize, width: usize) -> Result<()> {
        if self.shape() != (height, width) {
            return dim_err(format!("expected {height}x{width}, got {}x{}", self.height, self.width));
        }
        Ok(())
    }
}

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    /// Copies the `height × width` window whose top-left corner is `(row, col)`.
    pub fn window(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if row + height > self.height || col + width > self.width {
            return dim_err(format!(
                "window {height}x{width} at ({row},{col}) exceeds {}x{}",
                self.height, self.width
            ));
        }
        let mut data = Vec::with_capacity(height * width);
        for r in row..row + height {
            let start = r * self.width + col;
            data.extend_from_slice(&self.data[start..start + width]);
        }
        Ok(Self { height, width, data })
    }
}

impl<T: Clone + Default> Grid<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::default())
    }
}

impl RealGrid {
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Min-max normalization onto `[0, 1]`; constant grids map to zero.
    pub fn normalized(&self) -> Self {
        let (lo, hi) = (self.min(), self.max());
        let span = hi - lo;
        self.map(|&v| if span > 0.0 { (v - lo) / span } else { 0.0 })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl ComplexGrid {
    pub fn from_polar(amplitude: &RealGrid, phase: &RealGrid) -> Result<Self> {
        amplitude.zip_map(phase, |&a, &p| Complex64::from_polar(a, p))
    }

    pub fn abs(&self) -> RealGrid {
        self.map(|z| z.norm())
    }

    pub fn abs_sqr(&self) -> RealGrid {
        self.map(|z| z.norm_sqr())
    }

    pub fn arg(&self) -> RealGrid {
        self.map(|z| z.arg())
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Axis-aligned object rectangle inside a detector-plane canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportMask {
    pub height: usize,
    pub width: usize,
    pub origin_row: usize,
    pub origin_col: usize,
    pub object_height: usize,
    pub object_width: usize,
}

impl SupportMask {
    /// Centered placement with floor rounding for odd size differences.
    pub fn centered(height: usize, width: usize, object_height: usize, object_width: usize) -> Result<Self> {
        if object_height > height || object_width > width {
            return dim_err(format!(
                "object {object_height}x{object_width} does not fit in {height}x{width}"
            ));
        }
        if object_height == 0 || object_width == 0 {
            return dim_err("object must be non-empty");
        }
        Ok(Self {
            height,
            width,
            origin_row: (height - object_height) / 2,
            origin_col: (width - object_width) / 2,
            object_height,
            object_width,
        })
    }

    pub fn full(height: usize, width: usize) -> Result<Self> {
        Self::centered(height, width, height, width)
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.origin_row
            && row < self.origin_row + self.object_height
            && col >= self.origin_col
            && col < self.origin_col + self.object_width
    }

    pub fn count(&self) -> usize {
        self.object_height * self.object_width
    }

    pub fn to_bool_grid(&self) -> Grid<bool> {
        Grid::from_fn(self.height, self.width, |r, c| self.contains(r, c))
    }

    /// Extracts the object rectangle from a canvas of detector size.
    pub fn crop<T: Clone>(&self, canvas: &Grid<T>) -> Result<Grid<T>> {
        canvas.ensure_shape(self.height, self.width)?;
        canvas.window(self.origin_row, self.origin_col, self.object_height, self.object_width)
    }

    /// Embeds an object-size grid into a zero canvas; the adjoint of [`SupportMask::crop`].
    pub fn embed<T: Clone + Default>(&self, object: &Grid<T>) -> Result<Grid<T>> {
        object.ensure_shape(self.object_height, self.object_width)?;
        let mut canvas = Grid::zeros(self.height, self.width);
        for r in 0..self.object_height {
            let dst = (r + self.origin_row) * self.width + self.origin_col;
            let src = r * self.object_width;
            canvas.data[dst..dst + self.object_width].clone_from_slice(&object.data[src..src + self.object_width]);
        }
        Ok(canvas)
    }
}

/// Centered zero padding of `obj` onto a `det_h × det_w` canvas.
pub fn zero_pad(obj: &ComplexGrid, det_h: usize, det_w: usize) -> Result<(ComplexGrid, SupportMask)> {
    let mask = SupportMask::centered(det_h, det_w, obj.height(), obj.width())?;
    Ok((mask.embed(obj)?, mask))
}

/// Zeroes every value outside the support rectangle.
pub fn apply_support(grid: &ComplexGrid, mask: &SupportMask) -> Result<ComplexGrid> {
    grid.ensure_shape(mask.height, mask.width)?;
    let mut out = grid.clone();
    for r in 0..mask.height {
        for c in 0..mask.width {
            if !mask.contains(r, c) {
                *out.get_mut(r, c) = Complex64::new(0.0, 0.0);
            }
        }
    }
    Ok(out)
}
