//! Ptychography: scan geometry, synthetic probe, forward simulation and ePIE.

use std::time::Instant;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cdi::{add_detector_noise, magnitude};
use crate::classical::magnitude_only;
use crate::dft::{dft2_forward, dft2_inverse};
use crate::error::{dim_err, param_err, Error, Result};
use crate::grid::{ComplexGrid, Grid, RealGrid, SupportMask};
use crate::loss::{
    distilled_phase_loss_field, loss_tv, magnitude_loss_field, polar_cotangents, LossBreakdown, LossConfig,
};
use crate::measurement::{Geometry, MeasurementSet};
use crate::object::ObjectEstimate;
use crate::record::{EpieConfig, HistoryEntry, Method, MethodConfig, RunRecord};
use crate::seed::derive_seed;

/// Complex probe transmission.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    grid: ComplexGrid,
    norm_max: f64,
}

impl Probe {
    pub fn new(grid: ComplexGrid) -> Result<Self> {
        if grid.is_empty() {
            return dim_err("probe must be non-empty");
        }
        let norm_max = grid.data().iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
        if !norm_max.is_finite() {
            return param_err("probe must be finite");
        }
        Ok(Self { grid, norm_max })
    }

    pub fn grid(&self) -> &ComplexGrid {
        &self.grid
    }

    /// `max |P|^2`.
    pub fn norm_max(&self) -> f64 {
        self.norm_max
    }

    pub fn shape(&self) -> (usize, usize) {
        self.grid.shape()
    }
}

/// Circular aperture with a raised-cosine edge and quadratic phase.
///
/// Amplitude is 1 up to `0.3 * size` from the centre and falls to 0 at
/// `0.5 * size`, so the half-amplitude radius is `0.4 * size`. The phase is
/// `8 r^2 / size^2`.
pub fn make_probe(size: usize) -> Result<Probe> {
    if size == 0 {
        return param_err("probe size must be >= 1");
    }
    let s = size as f64;
    let centre = (s - 1.0) / 2.0;
    let (inner, outer) = (0.3 * s, 0.5 * s);
    let gamma = 8.0 / (s * s);
    let grid = ComplexGrid::from_fn(size, size, |r, c| {
        let (dy, dx) = (r as f64 - centre, c as f64 - centre);
        let rho2 = dy * dy + dx * dx;
        let rho = rho2.sqrt();
        let amp = if rho <= inner {
            1.0
        } else if rho < outer {
            0.5 * (1.0 + (std::f64::consts::PI * (rho - inner) / (outer - inner)).cos())
        } else {
            0.0
        };
        Complex64::from_polar(amp, gamma * rho2)
    });
    Probe::new(grid)
}

/// Raster of probe positions (top-left corners) over the object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPlan {
    pub positions: Vec<(usize, usize)>,
    pub step: usize,
    pub overlap: f64,
    pub probe_shape: (usize, usize),
    pub object_shape: (usize, usize),
}

fn axis_positions(len: usize, probe: usize, step: usize) -> Vec<usize> {
    let span = len - probe;
    let mut out: Vec<usize> = (0..span).step_by(step).collect();
    // final position clamped inward so the far edge is covered
    out.push(span);
    out
}

pub fn make_scan_plan(obj_h: usize, obj_w: usize, probe_h: usize, probe_w: usize, overlap: f64) -> Result<ScanPlan> {
    if probe_h == 0 || probe_w == 0 || probe_h > obj_h || probe_w > obj_w {
        return dim_err(format!("probe {probe_h}x{probe_w} does not fit object {obj_h}x{obj_w}"));
    }
    if !(0.0..1.0).contains(&overlap) {
        return param_err(format!("overlap must lie in [0, 1), got {overlap}"));
    }
    let step = ((probe_h as f64 * (1.0 - overlap)).round() as usize).max(1);
    let rows = axis_positions(obj_h, probe_h, step);
    let cols = axis_positions(obj_w, probe_w, step);
    let positions = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
    Ok(ScanPlan {
        positions,
        step,
        overlap,
        probe_shape: (probe_h, probe_w),
        object_shape: (obj_h, obj_w),
    })
}

impl ScanPlan {
    pub fn validate(&self) -> Result<()> {
        let (ph, pw) = self.probe_shape;
        let (oh, ow) = self.object_shape;
        if self.positions.is_empty() {
            return dim_err("scan plan has no positions");
        }
        if self.positions.iter().any(|&(r, c)| r + ph > oh || c + pw > ow) {
            return dim_err("scan position leaves the object");
        }
        Ok(())
    }

    /// Number of patches covering each object pixel.
    pub fn coverage(&self) -> Grid<u32> {
        let (ph, pw) = self.probe_shape;
        let (oh, ow) = self.object_shape;
        let mut counts = Grid::zeros(oh, ow);
        for &(r0, c0) in &self.positions {
            for r in r0..r0 + ph {
                for c in c0..c0 + pw {
                    *counts.get_mut(r, c) += 1;
                }
            }
        }
        counts
    }
}

/// Copies the probe-sized patch at `pos`.
pub fn extract_patch(obj: &ComplexGrid, pos: (usize, usize), shape: (usize, usize)) -> Result<ComplexGrid> {
    obj.window(pos.0, pos.1, shape.0, shape.1)
}

/// Adds `patch` into `target` at `pos`; the adjoint of [`extract_patch`].
pub fn embed_patch_add(target: &mut ComplexGrid, patch: &ComplexGrid, pos: (usize, usize)) -> Result<()> {
    let (ph, pw) = patch.shape();
    if pos.0 + ph > target.height() || pos.1 + pw > target.width() {
        return dim_err("patch leaves the target grid");
    }
    for r in 0..ph {
        for c in 0..pw {
            *target.get_mut(pos.0 + r, pos.1 + c) += patch.get(r, c);
        }
    }
    Ok(())
}

fn exit_wave(obj: &ComplexGrid, probe: &Probe, pos: (usize, usize)) -> Result<ComplexGrid> {
    extract_patch(obj, pos, probe.shape())?.zip_map(probe.grid(), |o, p| o * p)
}

/// Far-field magnitudes `sqrt(|F{P * O_j}|^2)` for every scan position.
pub fn simulate_ptycho(
    obj: &ComplexGrid,
    probe: &Probe,
    plan: &ScanPlan,
    sigma: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    plan.validate()?;
    obj.ensure_shape(plan.object_shape.0, plan.object_shape.1)?;
    if plan.probe_shape != probe.shape() {
        return dim_err("scan plan and probe disagree on probe shape");
    }
    let magnitudes = plan
        .positions
        .par_iter()
        .enumerate()
        .map(|(j, &pos)| {
            let intensity = dft2_forward(&exit_wave(obj, probe, pos)?)?.abs_sqr();
            let noisy = add_detector_noise(&intensity, sigma, derive_seed(seed, j as u64))?;
            Ok(magnitude(&noisy))
        })
        .collect::<Result<Vec<_>>>()?;
    MeasurementSet::new(
        magnitudes,
        Geometry::Ptycho {
            probe: probe.clone(),
            plan: plan.clone(),
        },
        sigma,
        seed,
    )
}

fn ptycho_parts(meas: &MeasurementSet) -> Result<(&Probe, &ScanPlan)> {
    match &meas.geometry {
        Geometry::Ptycho { probe, plan } => Ok((probe, plan)),
        Geometry::Cdi { .. } => Err(Error::Measurement("expected a ptychography measurement".into())),
    }
}

/// Summed per-position loss over the whole object, with cotangents on the
/// object's amplitude and phase planes.
///
/// Each position contributes `w1 * L_m + w2 * L_p` on its exit wave (the
/// distilled phase term uses only the amplitude clamp, there is no padding);
/// TV acts once on the full phase plane.
pub fn ptycho_loss_total(
    est: &ObjectEstimate,
    meas: &MeasurementSet,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, RealGrid, RealGrid)> {
    cfg.validate()?;
    let (probe, plan) = ptycho_parts(meas)?;
    est.amplitude.ensure_shape(plan.object_shape.0, plan.object_shape.1)?;
    let obj = est.to_complex();
    let (ph, pw) = probe.shape();
    let mask = SupportMask::full(ph, pw)?;

    let per_position = plan
        .positions
        .par_iter()
        .zip(&meas.magnitudes)
        .map(|(&pos, m)| {
            let psi = exit_wave(&obj, probe, pos)?;
            let (lm, gm) = magnitude_loss_field(&psi, m)?;
            let (lp, gp) = distilled_phase_loss_field(&psi, m, &mask, cfg.recombine)?;
            let g_psi = gm.zip_map(&gp, |a, b| a * cfg.w1 + b * cfg.w2)?;
            let g_patch = g_psi.zip_map(probe.grid(), |g, p| g * p.conj())?;
            Ok((lm, lp, g_patch))
        })
        .collect::<Result<Vec<_>>>()?;

    // gather-then-sum in position order
    let mut grad = ComplexGrid::zeros(obj.height(), obj.width());
    let (mut l_m, mut l_p) = (0.0, 0.0);
    for ((lm, lp, g), &pos) in per_position.iter().zip(&plan.positions) {
        l_m += lm;
        l_p += lp;
        embed_patch_add(&mut grad, g, pos)?;
    }
    let (d_amp, mut d_phase) = polar_cotangents(est, &grad)?;
    let (l_tv, g_tv) = loss_tv(&est.phase);
    if cfg.lambda_tv != 0.0 {
        for (d, g) in d_phase.data_mut().iter_mut().zip(g_tv.data()) {
            *d += cfg.lambda_tv * g;
        }
    }
    let breakdown = LossBreakdown {
        l_m,
        l_p,
        l_tv,
        total: cfg.w1 * l_m + cfg.w2 * l_p + cfg.lambda_tv * l_tv,
        w1: cfg.w1,
        w2: cfg.w2,
        lambda_tv: cfg.lambda_tv,
    };
    Ok((breakdown, d_amp, d_phase))
}

/// One ePIE position update on `obj`, probe held fixed.
fn epie_update(obj: &mut ComplexGrid, probe: &Probe, pos: (usize, usize), meas: &RealGrid, alpha: f64) -> Result<()> {
    let psi = exit_wave(obj, probe, pos)?;
    let spec = dft2_forward(&psi)?;
    let corrected = spec.zip_map(meas, |&f, &m| {
        let r = f.norm();
        if r < crate::loss::EPS {
            Complex64::new(m, 0.0)
        } else {
            f * (m / r)
        }
    })?;
    let psi_new = dft2_inverse(&corrected)?;
    let scale = alpha / probe.norm_max();
    let (ph, pw) = probe.shape();
    for r in 0..ph {
        for c in 0..pw {
            let delta = psi_new.get(r, c) - psi.get(r, c);
            *obj.get_mut(pos.0 + r, pos.1 + c) += probe.grid().get(r, c).conj() * scale * delta;
        }
    }
    Ok(())
}

/// Summed magnitude misfit `sum_j sum (|DFT(P O_j)| - m_j)^2` of a full object.
pub fn ptycho_residual(obj: &ComplexGrid, meas: &MeasurementSet) -> Result<f64> {
    let (probe, plan) = ptycho_parts(meas)?;
    let per_position = plan
        .positions
        .par_iter()
        .zip(&meas.magnitudes)
        .map(|(&pos, m)| Ok(magnitude_loss_field(&exit_wave(obj, probe, pos)?, m)?.0))
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_position.iter().sum())
}

fn epie_iterate(
    meas: &MeasurementSet,
    iterations: usize,
    alpha: f64,
    seed: u64,
    initial: Option<&ComplexGrid>,
    log_every: Option<usize>,
) -> Result<(ComplexGrid, Vec<(usize, f64)>)> {
    let (probe, plan) = ptycho_parts(meas)?;
    if !(alpha > 0.0) {
        return param_err(format!("ePIE step must be positive, got {alpha}"));
    }
    if !(probe.norm_max() > 0.0) {
        return param_err("ePIE needs a probe with nonzero intensity");
    }
    let (oh, ow) = plan.object_shape;
    let mut obj = match initial {
        Some(init) => {
            init.ensure_shape(oh, ow)?;
            init.clone()
        }
        None => ComplexGrid::filled(oh, ow, Complex64::new(1.0, 0.0)),
    };
    let mut order: Vec<usize> = (0..plan.positions.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = Vec::new();
    for it in 1..=iterations {
        if let Some(every) = log_every {
            if it == 1 || it % every == 0 {
                log.push((it, ptycho_residual(&obj, meas)?));
            }
        }
        order.shuffle(&mut rng);
        for &j in &order {
            epie_update(&mut obj, probe, plan.positions[j], &meas.magnitudes[j], alpha)?;
        }
    }
    if log_every.is_some() {
        log.push((iterations + 1, ptycho_residual(&obj, meas)?));
    }
    Ok((obj, log))
}

/// ePIE from an all-ones object (`initial` overrides the start point).
/// Positions are visited in a fresh seeded random order every iteration.
pub fn epie_run(
    meas: &MeasurementSet,
    iterations: usize,
    alpha: f64,
    seed: u64,
    initial: Option<&ComplexGrid>,
) -> Result<ComplexGrid> {
    Ok(epie_iterate(meas, iterations, alpha, seed, initial, None)?.0)
}

fn clamped_estimate(obj: &ComplexGrid) -> ObjectEstimate {
    let mut est = ObjectEstimate::from_complex(obj);
    for a in est.amplitude.data_mut() {
        *a = a.clamp(0.0, 1.0);
    }
    est
}

/// ePIE reconstruction with amplitudes clamped to `[0, 1]` at the end.
pub fn epie_reconstruct(meas: &MeasurementSet, iterations: usize, alpha: f64, seed: u64) -> Result<ObjectEstimate> {
    Ok(clamped_estimate(&epie_run(meas, iterations, alpha, seed, None)?))
}

/// ePIE packaged as a [`RunRecord`]; the logged loss is the summed magnitude misfit.
pub fn run_epie(meas: &MeasurementSet, cfg: &EpieConfig) -> Result<RunRecord> {
    let started = Instant::now();
    if cfg.log_every == 0 {
        return param_err("log_every must be positive");
    }
    let (obj, log) = epie_iterate(meas, cfg.iterations, cfg.alpha, cfg.seed, None, Some(cfg.log_every))?;
    let mut record = RunRecord::start(
        Method::Epie,
        cfg.seed,
        meas,
        MethodConfig::Epie(*cfg),
        clamped_estimate(&obj),
    );
    record.loss_history = log
        .into_iter()
        .map(|(iteration, l)| HistoryEntry {
            iteration,
            breakdown: magnitude_only(l),
        })
        .collect();
    record.wall_time_s = started.elapsed().as_secs_f64();
    record.evaluate_if_possible(meas.truth.as_ref())?;
    Ok(record)
}
