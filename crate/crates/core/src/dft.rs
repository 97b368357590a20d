//! Unitary 2D discrete Fourier transform pair.
//!
//! Both directions are scaled by `1/sqrt(H*W)`, so the inverse is also the
//! adjoint of the forward transform. Arbitrary sizes are supported.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{dim_err, Result};
use crate::grid::ComplexGrid;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

fn transpose(src: &[Complex64], rows: usize, cols: usize, dst: &mut [Complex64]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

fn transform(grid: &ComplexGrid, direction: FftDirection) -> Result<ComplexGrid> {
    if grid.is_empty() {
        return dim_err("cannot transform an empty grid");
    }
    let (h, w) = grid.shape();
    let mut buf = grid.data().to_vec();
    let mut tmp = vec![Complex64::new(0.0, 0.0); h * w];

    let row_fft = plan(w, direction);
    let mut scratch = vec![Complex64::new(0.0, 0.0); row_fft.get_inplace_scratch_len()];
    row_fft.process_with_scratch(&mut buf, &mut scratch);

    transpose(&buf, h, w, &mut tmp);
    let col_fft = plan(h, direction);
    scratch.resize(col_fft.get_inplace_scratch_len(), Complex64::new(0.0, 0.0));
    col_fft.process_with_scratch(&mut tmp, &mut scratch);
    transpose(&tmp, w, h, &mut buf);

    let scale = 1.0 / ((h * w) as f64).sqrt();
    for z in &mut buf {
        *z *= scale;
    }
    ComplexGrid::from_vec(h, w, buf)
}

pub fn dft2_forward(grid: &ComplexGrid) -> Result<ComplexGrid> {
    transform(grid, FftDirection::Forward)
}

pub fn dft2_inverse(grid: &ComplexGrid) -> Result<ComplexGrid> {
    transform(grid, FftDirection::Inverse)
}
