//! CDI forward model: oversampled far-field intensity and detector noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dft::dft2_forward;
use crate::error::{param_err, Result};
use crate::grid::{zero_pad, ComplexGrid, RealGrid, SupportMask};

/// Detector extent for an object axis of `n` pixels at oversampling `ratio`.
pub fn detector_len(n: usize, ratio: f64) -> usize {
    (n as f64 * ratio).round() as usize
}

/// Squared magnitude of the unitary DFT of the zero-padded object.
pub fn intensity_from_object(obj: &ComplexGrid, oversample: f64) -> Result<(RealGrid, SupportMask)> {
    if !(oversample >= 1.0) || !oversample.is_finite() {
        return param_err(format!("oversample must be >= 1, got {oversample}"));
    }
    let det_h = detector_len(obj.height(), oversample);
    let det_w = detector_len(obj.width(), oversample);
    let (padded, mask) = zero_pad(obj, det_h, det_w)?;
    Ok((dft2_forward(&padded)?.abs_sqr(), mask))
}

/// Adds i.i.d. `N(0, sigma^2)` to every intensity and clamps at zero.
pub fn add_intensity_noise(intensity: &RealGrid, sigma: f64, seed: u64) -> Result<RealGrid> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return param_err(format!("sigma must be a finite value >= 0, got {sigma}"));
    }
    if sigma == 0.0 {
        return Ok(intensity.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| crate::Error::Parameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(intensity.map(|&v| (v + normal.sample(&mut rng)).max(0.0)))
}

/// Noise with `sigma` in raw detector counts: the unitary intensity is
/// rescaled to unnormalised-FFT units (`x HW`), noised, and scaled back.
pub fn add_detector_noise(intensity: &RealGrid, sigma: f64, seed: u64) -> Result<RealGrid> {
    let counts = intensity.len() as f64;
    let raw = intensity.map(|&v| v * counts);
    Ok(add_intensity_noise(&raw, sigma, seed)?.map(|&v| v / counts))
}

/// Fourier magnitude `sqrt(I)` of an intensity grid.
pub fn magnitude(intensity: &RealGrid) -> RealGrid {
    intensity.map(|&v| v.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_complex_grid;
    use num_complex::Complex64;

    #[test]
    fn fifty_at_five_gives_250() {
        let obj = ComplexGrid::filled(50, 50, Complex64::new(0.5, 0.0));
        let (i, mask) = intensity_from_object(&obj, 5.0).unwrap();
        assert_eq!(i.shape(), (250, 250));
        assert_eq!(mask.count(), 2500);
    }

    #[test]
    fn single_pixel_gives_flat_intensity() {
        let mut obj = ComplexGrid::zeros(3, 3);
        *obj.get_mut(1, 2) = Complex64::from_polar(1.0, 0.4);
        let (i, _) = intensity_from_object(&obj, 2.0).unwrap();
        let expect = 1.0 / 36.0;
        assert!(i.data().iter().all(|v| (v - expect).abs() < 1e-15));
    }

    #[test]
    fn total_intensity_equals_object_energy() {
        let obj = random_complex_grid(8, 8, 5);
        let (i, _) = intensity_from_object(&obj, 2.5).unwrap();
        let direct: f64 = obj.data().iter().map(|z| z.re * z.re + z.im * z.im).sum();
        assert!((i.sum() - direct).abs() / direct < 1e-12);
        assert!(i.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn oversample_below_one_is_rejected() {
        let obj = ComplexGrid::zeros(4, 4);
        assert!(matches!(
            intensity_from_object(&obj, 0.9),
            Err(crate::Error::Parameter(_))
        ));
    }

    #[test]
    fn zero_sigma_is_identity() {
        let i = RealGrid::from_fn(5, 5, |r, c| (r * 5 + c) as f64 * 0.37);
        let out = add_intensity_noise(&i, 0.0, 1).unwrap();
        assert_eq!(out.data(), i.data());
    }

    #[test]
    fn noise_is_deterministic_and_nonnegative() {
        let i = RealGrid::filled(16, 16, 3.0);
        let a = add_intensity_noise(&i, 10.0, 42).unwrap();
        let b = add_intensity_noise(&i, 10.0, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| v >= 0.0));
        assert_ne!(a, add_intensity_noise(&i, 10.0, 43).unwrap());
    }

    #[test]
    fn negative_sigma_is_rejected() {
        let i = RealGrid::filled(2, 2, 1.0);
        assert!(add_intensity_noise(&i, -1.0, 0).is_err());
    }

    #[test]
    fn detector_noise_is_sigma_over_pixel_count() {
        let clean = RealGrid::filled(20, 20, 50.0);
        let noisy = add_detector_noise(&clean, 4.0, 3).unwrap();
        let raw = add_intensity_noise(&RealGrid::filled(20, 20, 50.0 * 400.0), 4.0, 3).unwrap();
        for (a, b) in noisy.data().iter().zip(raw.data()) {
            assert!((a - b / 400.0).abs() < 1e-12);
        }
        assert_eq!(add_detector_noise(&clean, 0.0, 3).unwrap(), clean);
    }

    #[test]
    fn empirical_sigma_matches() {
        let sigma = 10.0;
        let clean = RealGrid::filled(250, 250, 1e6);
        let noisy = add_intensity_noise(&clean, sigma, 7).unwrap();
        let n = clean.len() as f64;
        let diffs: Vec<f64> = noisy.data().iter().map(|v| v - 1e6).collect();
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var.sqrt() - sigma).abs() / sigma < 0.05);
    }
}
