//! Deterministic stand-in textures for test objects.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dft::{dft2_forward, dft2_inverse};
use crate::error::{param_err, Result};
use crate::grid::{ComplexGrid, RealGrid};
use crate::object::ObjectEstimate;

/// White Gaussian noise low-passed to frequencies with
/// `sqrt(fy^2 + fx^2) <= cutoff` (cycles per pixel), min-max normalised to `[0, 1]`.
pub fn band_limited_noise(height: usize, width: usize, cutoff: f64, seed: u64) -> Result<RealGrid> {
    if !(cutoff > 0.0) {
        return param_err(format!("cutoff must be positive, got {cutoff}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = ComplexGrid::from_fn(height, width, |_, _| {
        Complex64::new(StandardNormal.sample(&mut rng), 0.0)
    });
    let mut spec = dft2_forward(&noise)?;
    let freq = |k: usize, n: usize| {
        let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        k / n as f64
    };
    for r in 0..height {
        for c in 0..width {
            if freq(r, height).hypot(freq(c, width)) > cutoff {
                *spec.get_mut(r, c) = Complex64::new(0.0, 0.0);
            }
        }
    }
    Ok(dft2_inverse(&spec)?.map(|z| z.re).normalized())
}

/// Diagonal ramp from 0 at the top-left corner to 1 at the bottom-right.
pub fn gradient_ramp(height: usize, width: usize) -> RealGrid {
    let span = (height + width).saturating_sub(2).max(1) as f64;
    RealGrid::from_fn(height, width, |r, c| (r + c) as f64 / span)
}

/// Maps a `[0, 1]` image onto phases in `[-pi/2, pi/2]`.
pub fn phase_from_unit(image: &RealGrid) -> RealGrid {
    image.map(|&v| PI * (v - 0.5))
}

/// Band-limited noise amplitude with a ramp phase.
pub fn synthetic_object(height: usize, width: usize, seed: u64) -> Result<ObjectEstimate> {
    ObjectEstimate::new(
        band_limited_noise(height, width, 0.15, seed)?,
        phase_from_unit(&gradient_ramp(height, width)),
    )
}
