//! PSNR / SSIM with global-phase and twin-image alignment.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Result};
use crate::grid::RealGrid;
use crate::object::ObjectEstimate;

/// Reported in place of an infinite PSNR.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const AMPLITUDE_PEAK: f64 = 1.0;
pub const PHASE_PEAK: f64 = 2.0 * PI;

/// Side of the SSIM window; smaller images cannot be scored.
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub fn mse(reference: &RealGrid, test: &RealGrid) -> Result<f64> {
    reference.ensure_same_shape(test)?;
    if reference.is_empty() {
        return dim_err("cannot compare empty grids");
    }
    let sum: f64 = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / reference.len() as f64)
}

pub fn psnr(reference: &RealGrid, test: &RealGrid, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return param_err(format!("peak must be positive, got {peak}"));
    }
    let err = mse(reference, test)?;
    if err == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / err).log10()).min(PSNR_CAP_DB))
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let centre = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - centre;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable Gaussian filter, "valid" region only.
fn filter_valid(values: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = taps.iter().enumerate().map(|(t, wt)| wt * values[r * w + c + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps.iter().enumerate().map(|(t, wt)| wt * rows[(r + t) * ow + c]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM over all 11×11 Gaussian windows (σ = 1.5) fully inside the grid.
pub fn ssim(reference: &RealGrid, test: &RealGrid, peak: f64) -> Result<f64> {
    reference.ensure_same_shape(test)?;
    if !(peak > 0.0) {
        return param_err(format!("peak must be positive, got {peak}"));
    }
    let (h, w) = reference.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return dim_err(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"));
    }
    let taps = gaussian_taps();
    let x = reference.data();
    let y = test.data();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (mu_x, _, _) = filter_valid(x, h, w, &taps);
    let (mu_y, _, _) = filter_valid(y, h, w, &taps);
    let (e_xx, _, _) = filter_valid(&xx, h, w, &taps);
    let (e_yy, _, _) = filter_valid(&yy, h, w, &taps);
    let (e_xy, _, _) = filter_valid(&xy, h, w, &taps);
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let n = mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// Constant phase the estimate carried relative to the truth (removed).
    pub global_phase_offset: f64,
    pub conjugate_flip_applied: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub amp_psnr_db: f64,
    pub amp_ssim: f64,
    pub phase_psnr_db: f64,
    pub phase_ssim: f64,
    pub aligned: bool,
    pub alignment: Alignment,
}

/// Raw and aligned scores of one estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub raw: EvalResult,
    pub aligned: EvalResult,
}

/// Wraps onto `(-pi, pi]`.
pub fn wrap_phase(p: f64) -> f64 {
    let w = (p + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// 180° rotation with negated phase: the twin image.
pub fn conjugate_flip(est: &ObjectEstimate) -> ObjectEstimate {
    let (h, w) = est.shape();
    ObjectEstimate {
        amplitude: RealGrid::from_fn(h, w, |r, c| *est.amplitude.get(h - 1 - r, w - 1 - c)),
        phase: RealGrid::from_fn(h, w, |r, c| -*est.phase.get(h - 1 - r, w - 1 - c)),
    }
}

fn circular_offset(est: &RealGrid, truth: &RealGrid) -> f64 {
    let s: Complex64 = est
        .data()
        .iter()
        .zip(truth.data())
        .map(|(e, t)| Complex64::from_polar(1.0, e - t))
        .sum();
    s.arg()
}

fn shift_phase(est: &ObjectEstimate, offset: f64) -> ObjectEstimate {
    ObjectEstimate {
        amplitude: est.amplitude.clone(),
        phase: est.phase.map(|&p| wrap_phase(p - offset)),
    }
}

fn combined_mse(est: &ObjectEstimate, truth: &ObjectEstimate) -> Result<f64> {
    Ok(mse(&truth.amplitude, &est.amplitude)? + mse(&truth.phase, &est.phase)?)
}

/// Removes the global phase offset and, if it fits better, the twin flip.
///
/// The unmodified estimate is also a candidate, so alignment never increases
/// the combined amplitude + phase MSE.
pub fn align_estimate(est: &ObjectEstimate, truth: &ObjectEstimate) -> Result<(ObjectEstimate, Alignment)> {
    est.amplitude.ensure_same_shape(&truth.amplitude)?;
    est.phase.ensure_same_shape(&truth.phase)?;
    let mut best = (est.clone(), Alignment::default());
    let mut best_err = combined_mse(est, truth)?;
    let flipped = conjugate_flip(est);
    for (candidate, flip) in [(est, false), (&flipped, true)] {
        let offset = circular_offset(&candidate.phase, &truth.phase);
        let shifted = shift_phase(candidate, offset);
        let err = combined_mse(&shifted, truth)?;
        if err < best_err {
            best_err = err;
            best = (
                shifted,
                Alignment {
                    global_phase_offset: offset,
                    conjugate_flip_applied: flip,
                },
            );
        }
    }
    Ok(best)
}

/// Amplitude scored with peak 1, phase with peak `2 pi`.
pub fn evaluate(est: &ObjectEstimate, truth: &ObjectEstimate, align: bool) -> Result<EvalResult> {
    let (scored, alignment) = if align {
        align_estimate(est, truth)?
    } else {
        (est.clone(), Alignment::default())
    };
    Ok(EvalResult {
        amp_psnr_db: psnr(&truth.amplitude, &scored.amplitude, AMPLITUDE_PEAK)?,
        amp_ssim: ssim(&truth.amplitude, &scored.amplitude, AMPLITUDE_PEAK)?,
        phase_psnr_db: psnr(&truth.phase, &scored.phase, PHASE_PEAK)?,
        phase_ssim: ssim(&truth.phase, &scored.phase, PHASE_PEAK)?,
        aligned: align,
        alignment,
    })
}

pub fn evaluate_both(est: &ObjectEstimate, truth: &ObjectEstimate) -> Result<Metrics> {
    Ok(Metrics {
        raw: evaluate(est, truth, false)?,
        aligned: evaluate(est, truth, true)?,
    })
}
