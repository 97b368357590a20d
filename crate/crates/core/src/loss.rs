//! Training losses and their exact cotangents.
//!
//! Complex cotangents follow the convention `dL/dRe + i dL/dIm`, so a unitary
//! map `y = A x` pulls back as `A^H`: the adjoint of [`dft2_forward`] is
//! [`dft2_inverse`] and vice versa.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dft::{dft2_forward, dft2_inverse};
use crate::error::{param_err, Result};
use crate::grid::{ComplexGrid, RealGrid, SupportMask};
use crate::object::ObjectEstimate;

/// Guard for divisions by `|z|` in magnitude and angle derivatives.
pub const EPS: f64 = 1e-12;

/// What multiplies the predicted Fourier phase when stepping back to real space.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recombine {
    /// Measured magnitude `sqrt(I)`.
    #[default]
    Magnitude,
    /// Measured intensity `I`.
    Intensity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub w1: f64,
    pub w2: f64,
    pub lambda_tv: f64,
    #[serde(default)]
    pub recombine: Recombine,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            w1: 0.3,
            w2: 0.7,
            lambda_tv: 0.0,
            recombine: Recombine::Magnitude,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w1", self.w1), ("w2", self.w2), ("lambda_tv", self.lambda_tv)] {
            if !(v >= 0.0) || !v.is_finite() {
                return param_err(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_m: f64,
    pub l_p: f64,
    pub l_tv: f64,
    pub total: f64,
    pub w1: f64,
    pub w2: f64,
    pub lambda_tv: f64,
}

impl LossBreakdown {
    fn new(l_m: f64, l_p: f64, l_tv: f64, cfg: &LossConfig) -> Self {
        Self {
            l_m,
            l_p,
            l_tv,
            total: cfg.w1 * l_m + cfg.w2 * l_p + cfg.lambda_tv * l_tv,
            w1: cfg.w1,
            w2: cfg.w2,
            lambda_tv: cfg.lambda_tv,
        }
    }
}

#[inline]
fn unit(z: Complex64) -> Complex64 {
    let r = z.norm();
    if r < EPS {
        Complex64::new(1.0, 0.0)
    } else {
        z / r
    }
}

/// Gradient direction of `angle(z)`: `(-Im z, Re z) / |z|^2`.
#[inline]
fn angle_grad(z: Complex64) -> Complex64 {
    Complex64::new(-z.im, z.re) / z.norm_sqr().max(EPS * EPS)
}

/// `sum (|W| - m)^2` and its cotangent with respect to the spectrum `W`.
fn spectral_residual(spec: &ComplexGrid, meas: &RealGrid) -> Result<(f64, ComplexGrid)> {
    let mut loss = 0.0;
    let grad = spec.zip_map(meas, |&w, &m| {
        let r = w.norm();
        let d = r - m;
        loss += d * d;
        w * (2.0 * d / r.max(EPS))
    })?;
    Ok((loss, grad))
}

/// Fourier magnitude loss on a detector-size field.
pub fn magnitude_loss_field(field: &ComplexGrid, meas: &RealGrid) -> Result<(f64, ComplexGrid)> {
    field.ensure_same_shape(meas)?;
    let spec = dft2_forward(field)?;
    let (loss, g_spec) = spectral_residual(&spec, meas)?;
    Ok((loss, dft2_inverse(&g_spec)?))
}

/// Distilled Fourier phase loss on a detector-size field.
///
/// The predicted Fourier phase is recombined with the measurement, brought
/// back to real space, projected onto the support and onto amplitudes in
/// `[0, 1]`, and the result is compared with the measurement again. The
/// cotangent flows through every step, including both angle operations.
pub fn distilled_phase_loss_field(
    field: &ComplexGrid,
    meas: &RealGrid,
    mask: &SupportMask,
    recombine: Recombine,
) -> Result<(f64, ComplexGrid)> {
    field.ensure_same_shape(meas)?;
    field.ensure_shape(mask.height, mask.width)?;
    let spec = dft2_forward(field)?;
    let recombined = spec.zip_map(meas, |&f, &m| {
        let scale = match recombine {
            Recombine::Magnitude => m,
            Recombine::Intensity => m * m,
        };
        unit(f) * scale
    })?;
    let back = dft2_inverse(&recombined)?;

    let width = mask.width;
    let mut projected = back.clone();
    for (i, g) in projected.data_mut().iter_mut().enumerate() {
        *g = if mask.contains(i / width, i % width) {
            unit(*g) * g.norm().clamp(0.0, 1.0)
        } else {
            Complex64::new(0.0, 0.0)
        };
    }
    let (loss, g_spec2) = spectral_residual(&dft2_forward(&projected)?, meas)?;

    // back through the real-space projection
    let mut g_proj = dft2_inverse(&g_spec2)?;
    for (i, (gw, &g)) in g_proj.data_mut().iter_mut().zip(back.data()).enumerate() {
        if !mask.contains(i / width, i % width) {
            *gw = Complex64::new(0.0, 0.0);
            continue;
        }
        let r = g.norm();
        let e = unit(g);
        let s = r.min(1.0);
        let d_r = if r < 1.0 { (gw.conj() * e).re } else { 0.0 };
        let d_theta = (gw.conj() * Complex64::i() * e * s).re;
        *gw = e * d_r + angle_grad(g) * d_theta;
    }

    // back through the recombination, which only depends on angle(F)
    let g_recomb = dft2_forward(&g_proj)?;
    let mut g_spec = spec.clone();
    for (((gs, &f), &gh), &m) in g_spec
        .data_mut()
        .iter_mut()
        .zip(spec.data())
        .zip(g_recomb.data())
        .zip(meas.data())
    {
        let scale = match recombine {
            Recombine::Magnitude => m,
            Recombine::Intensity => m * m,
        };
        let d_u = (gh.conj() * Complex64::i() * unit(f) * scale).re;
        *gs = angle_grad(f) * d_u;
    }
    Ok((loss, dft2_inverse(&g_spec)?))
}

/// Pulls a complex cotangent back onto amplitude and phase planes.
pub fn polar_cotangents(est: &ObjectEstimate, grad: &ComplexGrid) -> Result<(RealGrid, RealGrid)> {
    grad.ensure_same_shape(&est.amplitude)?;
    let n = grad.len();
    let mut d_amp = Vec::with_capacity(n);
    let mut d_phase = Vec::with_capacity(n);
    for ((g, &a), &p) in grad.data().iter().zip(est.amplitude.data()).zip(est.phase.data()) {
        let (s, c) = p.sin_cos();
        d_amp.push(g.re * c + g.im * s);
        d_phase.push(a * (g.im * c - g.re * s));
    }
    let (h, w) = grad.shape();
    Ok((RealGrid::from_vec(h, w, d_amp)?, RealGrid::from_vec(h, w, d_phase)?))
}

fn check_inputs(est: &ObjectEstimate, meas: &RealGrid, mask: &SupportMask) -> Result<ComplexGrid> {
    est.amplitude.ensure_same_shape(&est.phase)?;
    est.amplitude.ensure_shape(mask.object_height, mask.object_width)?;
    meas.ensure_shape(mask.height, mask.width)?;
    mask.embed(&est.to_complex())
}

pub fn loss_magnitude(est: &ObjectEstimate, meas: &RealGrid, mask: &SupportMask) -> Result<(f64, RealGrid, RealGrid)> {
    let field = check_inputs(est, meas, mask)?;
    let (loss, grad) = magnitude_loss_field(&field, meas)?;
    let (da, dp) = polar_cotangents(est, &mask.crop(&grad)?)?;
    Ok((loss, da, dp))
}

pub fn loss_distilled_phase(
    est: &ObjectEstimate,
    meas: &RealGrid,
    mask: &SupportMask,
    recombine: Recombine,
) -> Result<(f64, RealGrid, RealGrid)> {
    let field = check_inputs(est, meas, mask)?;
    let (loss, grad) = distilled_phase_loss_field(&field, meas, mask, recombine)?;
    let (da, dp) = polar_cotangents(est, &mask.crop(&grad)?)?;
    Ok((loss, da, dp))
}

/// Anisotropic total variation with zero subgradient at ties.
pub fn loss_tv(phase: &RealGrid) -> (f64, RealGrid) {
    let (h, w) = phase.shape();
    let mut grad = RealGrid::zeros(h, w);
    let mut total = 0.0;
    let mut visit = |a: (usize, usize), b: (usize, usize), grad: &mut RealGrid| {
        let d = phase.get(b.0, b.1) - phase.get(a.0, a.1);
        total += d.abs();
        let s = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        *grad.get_mut(b.0, b.1) += s;
        *grad.get_mut(a.0, a.1) -= s;
    };
    for r in 0..h {
        for c in 0..w {
            if r + 1 < h {
                visit((r, c), (r + 1, c), &mut grad);
            }
            if c + 1 < w {
                visit((r, c), (r, c + 1), &mut grad);
            }
        }
    }
    (total, grad)
}

/// Weighted sum of the magnitude, distilled phase and TV terms.
pub fn loss_total(
    est: &ObjectEstimate,
    meas: &RealGrid,
    mask: &SupportMask,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, RealGrid, RealGrid)> {
    cfg.validate()?;
    let field = check_inputs(est, meas, mask)?;
    let (l_m, g_m) = magnitude_loss_field(&field, meas)?;
    let (l_p, g_p) = distilled_phase_loss_field(&field, meas, mask, cfg.recombine)?;
    let grad = g_m.zip_map(&g_p, |a, b| a * cfg.w1 + b * cfg.w2)?;
    let (d_amp, mut d_phase) = polar_cotangents(est, &mask.crop(&grad)?)?;
    let (l_tv, g_tv) = loss_tv(&est.phase);
    if cfg.lambda_tv != 0.0 {
        for (d, g) in d_phase.data_mut().iter_mut().zip(g_tv.data()) {
            *d += cfg.lambda_tv * g;
        }
    }
    Ok((LossBreakdown::new(l_m, l_p, l_tv, cfg), d_amp, d_phase))
}
