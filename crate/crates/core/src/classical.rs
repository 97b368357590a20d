//! Alternating-projection baselines: ER, HIO and shrinkwrap.
//!
//! Iterates live on the full detector canvas. The real-space constraint set
//! is "zero outside the support, amplitude at most 1 inside".

use std::f64::consts::PI;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dft::{dft2_forward, dft2_inverse};
use crate::error::{param_err, Error, Result};
use crate::grid::{ComplexGrid, Grid, RealGrid, SupportMask};
use crate::loss::{LossBreakdown, EPS};
use crate::measurement::{Geometry, MeasurementSet};
use crate::object::ObjectEstimate;
use crate::record::{HistoryEntry, Method, MethodConfig, RunRecord};

pub type BoolGrid = Grid<bool>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMethod {
    Er,
    Hio,
}

/// One block of a schedule: `iterations` steps of `method`, optionally with
/// shrinkwrap support updates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleStage {
    pub method: ApMethod,
    pub iterations: usize,
    #[serde(default)]
    pub shrinkwrap: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShrinkwrapConfig {
    pub sigma: f64,
    /// Fraction of the blurred maximum below which pixels leave the support.
    pub threshold: f64,
    pub every: usize,
}

impl Default for ShrinkwrapConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            threshold: 0.04,
            every: 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalConfig {
    pub schedule: Vec<ScheduleStage>,
    pub beta: f64,
    pub shrinkwrap: ShrinkwrapConfig,
    pub seed: u64,
    pub log_every: usize,
}

impl ClassicalConfig {
    pub fn new(schedule: Vec<ScheduleStage>, seed: u64) -> Self {
        Self {
            schedule,
            beta: 0.9,
            shrinkwrap: ShrinkwrapConfig::default(),
            seed,
            log_every: 10,
        }
    }

    /// Standard schedule for a named baseline with `iterations` steps in total;
    /// the composite schedules split 9:1 between HIO and a closing ER stage.
    pub fn for_method(method: Method, iterations: usize, seed: u64) -> Result<Self> {
        let main = iterations * 9 / 10;
        let stage = |method, iterations, shrinkwrap| ScheduleStage {
            method,
            iterations,
            shrinkwrap,
        };
        let schedule = match method {
            Method::Er => vec![stage(ApMethod::Er, iterations, false)],
            Method::Hio => vec![stage(ApMethod::Hio, iterations, false)],
            Method::HioEr => vec![
                stage(ApMethod::Hio, main, false),
                stage(ApMethod::Er, iterations - main, false),
            ],
            Method::Hes => vec![
                stage(ApMethod::Hio, main, true),
                stage(ApMethod::Er, iterations - main, false),
            ],
            Method::Scan | Method::Epie => {
                return Err(Error::UnknownMethod(format!("{method} is not a projection baseline")))
            }
        };
        Ok(Self::new(
            schedule.into_iter().filter(|s| s.iterations > 0).collect(),
            seed,
        ))
    }

    pub fn total_iterations(&self) -> usize {
        self.schedule.iter().map(|s| s.iterations).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schedule.is_empty() {
            return param_err("schedule must not be empty");
        }
        if !(self.beta > 0.0) || self.beta > 1.0 {
            return param_err(format!("HIO beta must lie in (0, 1], got {}", self.beta));
        }
        let sw = &self.shrinkwrap;
        if !(sw.sigma > 0.0) || !(0.0..1.0).contains(&sw.threshold) || sw.every == 0 {
            return param_err("shrinkwrap needs sigma > 0, threshold in [0, 1) and a positive period");
        }
        if self.log_every == 0 {
            return param_err("log_every must be positive");
        }
        Ok(())
    }
}

/// Replaces Fourier magnitudes by `meas`, keeping the phases.
pub fn fourier_magnitude_project(g: &ComplexGrid, meas: &RealGrid) -> Result<ComplexGrid> {
    let spec = dft2_forward(g)?;
    let projected = spec.zip_map(meas, |&f, &m| {
        let r = f.norm();
        if r < EPS {
            Complex64::new(m, 0.0)
        } else {
            f * (m / r)
        }
    })?;
    dft2_inverse(&projected)
}

/// `|| |DFT(g)| - m ||_2`, the Fourier-space distance to the magnitude set.
pub fn fourier_residual(g: &ComplexGrid, meas: &RealGrid) -> Result<f64> {
    let spec = dft2_forward(g)?;
    spec.ensure_same_shape(meas)?;
    let sum: f64 = spec
        .data()
        .iter()
        .zip(meas.data())
        .map(|(f, m)| (f.norm() - m).powi(2))
        .sum();
    Ok(sum.sqrt())
}

fn clamp_amplitude(z: Complex64) -> Complex64 {
    let r = z.norm();
    if r > 1.0 {
        z / r
    } else {
        z
    }
}

/// Projection onto the real-space constraint set.
pub fn support_project(g: &ComplexGrid, support: &BoolGrid) -> Result<ComplexGrid> {
    g.zip_map(support, |&z, &inside| {
        if inside {
            clamp_amplitude(z)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

pub fn er_step(g: &ComplexGrid, meas: &RealGrid, support: &BoolGrid) -> Result<ComplexGrid> {
    support_project(&fourier_magnitude_project(g, meas)?, support)
}

/// Fienup's hybrid input-output step; feedback `g - beta g'` outside the support.
pub fn hio_step(g: &ComplexGrid, meas: &RealGrid, support: &BoolGrid, beta: f64) -> Result<ComplexGrid> {
    let gp = fourier_magnitude_project(g, meas)?;
    let mut out = gp.zip_map(support, |&z, &inside| if inside { z } else { Complex64::new(0.0, 0.0) })?;
    for ((o, &z), (&zp, &inside)) in out
        .data_mut()
        .iter_mut()
        .zip(g.data())
        .zip(gp.data().iter().zip(support.data()))
    {
        if !inside {
            *o = z - zp * beta;
        }
    }
    Ok(out)
}

fn gaussian_blur(values: &RealGrid, sigma: f64) -> RealGrid {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();
    let (h, w) = values.shape();
    let pass = |src: &RealGrid, horizontal: bool| {
        RealGrid::from_fn(h, w, |r, c| {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let d = k as isize - radius;
                let (rr, cc) = if horizontal {
                    (r as isize, c as isize + d)
                } else {
                    (r as isize + d, c as isize)
                };
                if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                    acc += t * src.get(rr as usize, cc as usize);
                }
            }
            acc
        })
    };
    pass(&pass(values, true), false)
}

/// New support: blurred magnitude above `threshold * max`, intersected with `known`.
pub fn shrinkwrap(g: &ComplexGrid, known: &BoolGrid, cfg: &ShrinkwrapConfig) -> Result<BoolGrid> {
    let blurred = gaussian_blur(&g.abs(), cfg.sigma);
    let cut = cfg.threshold * blurred.max();
    blurred.zip_map(known, |&v, &k| k && v > cut)
}

/// Random start: uniform amplitude in `[0, 1]` and phase in `[-pi, pi)` on the support.
pub fn random_start(mask: &SupportMask, seed: u64) -> ComplexGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ComplexGrid::from_fn(mask.height, mask.width, |r, c| {
        if mask.contains(r, c) {
            let a: f64 = rng.random_range(0.0..=1.0);
            let p: f64 = rng.random_range(-PI..PI);
            Complex64::from_polar(a, p)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// Outcome of a schedule run.
#[derive(Clone, Debug, PartialEq)]
pub struct ApRun {
    pub estimate: ObjectEstimate,
    /// `(iteration, fourier residual)` before the step with that 1-based index,
    /// plus one entry for the final iterate.
    pub residuals: Vec<(usize, f64)>,
    pub support: BoolGrid,
}

/// Runs `cfg.schedule` from a random start on a CDI measurement.
pub fn run_schedule(meas: &MeasurementSet, cfg: &ClassicalConfig) -> Result<ApRun> {
    cfg.validate()?;
    let mask = match &meas.geometry {
        Geometry::Cdi { mask } => *mask,
        Geometry::Ptycho { .. } => return Err(Error::Measurement("classical baselines need a CDI measurement".into())),
    };
    let m = &meas.magnitudes[0];
    let known = mask.to_bool_grid();
    let mut support = known.clone();
    let mut g = random_start(&mask, cfg.seed);
    let total = cfg.total_iterations();
    let mut residuals = Vec::new();
    let mut it = 0;
    for stage in &cfg.schedule {
        for _ in 0..stage.iterations {
            it += 1;
            if it == 1 || it % cfg.log_every == 0 {
                residuals.push((it, fourier_residual(&g, m)?));
            }
            g = match stage.method {
                ApMethod::Er => er_step(&g, m, &support)?,
                ApMethod::Hio => hio_step(&g, m, &support, cfg.beta)?,
            };
            if stage.shrinkwrap && it % cfg.shrinkwrap.every == 0 {
                support = shrinkwrap(&g, &known, &cfg.shrinkwrap)?;
            }
        }
    }
    residuals.push((total + 1, fourier_residual(&g, m)?));
    let obj = mask.crop(&support_project(&g, &support)?)?;
    Ok(ApRun {
        estimate: ObjectEstimate::from_complex(&obj),
        residuals,
        support,
    })
}

/// Runs a baseline and packages it as a [`RunRecord`]; the logged loss is
/// the squared Fourier residual.
pub fn run_classical(meas: &MeasurementSet, method: Method, cfg: &ClassicalConfig) -> Result<RunRecord> {
    let started = Instant::now();
    let run = run_schedule(meas, cfg)?;
    let mut record = RunRecord::start(
        method,
        cfg.seed,
        meas,
        MethodConfig::Classical(cfg.clone()),
        run.estimate,
    );
    record.loss_history = run
        .residuals
        .iter()
        .map(|&(iteration, r)| HistoryEntry {
            iteration,
            breakdown: magnitude_only(r * r),
        })
        .collect();
    record.wall_time_s = started.elapsed().as_secs_f64();
    record.evaluate_if_possible(meas.truth.as_ref())?;
    Ok(record)
}

pub(crate) fn magnitude_only(l_m: f64) -> LossBreakdown {
    LossBreakdown {
        l_m,
        l_p: 0.0,
        l_tv: 0.0,
        total: l_m,
        w1: 1.0,
        w2: 0.0,
        lambda_tv: 0.0,
    }
}
