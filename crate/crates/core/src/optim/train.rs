use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::grid::RealGrid;
use crate::loss::{loss_total, LossBreakdown, LossConfig};
use crate::measurement::{Geometry, MeasurementSet};
use crate::net::{
    init_network, init_twin_network, make_coordinates, Head, NetworkParams, DEFAULT_HIDDEN, DEFAULT_OMEGA0,
};
use crate::object::ObjectEstimate;
use crate::ptycho::ptycho_loss_total;
use crate::record::{HistoryEntry, Method, MethodConfig, RunRecord};

use super::adam::{adam_step, AdamConfig, AdamMoments};

/// Stops when the total loss has not improved by a relative `min_delta`
/// for `patience` consecutive iterations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub patience: usize,
    pub min_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    #[serde(flatten)]
    pub loss: LossConfig,
    pub seed: u64,
    pub head: Head,
    /// Separate amplitude and phase networks.
    #[serde(default)]
    pub twin: bool,
    pub hidden: Vec<usize>,
    /// Coordinates span `[-c, c]` along each axis.
    pub c: f64,
    pub omega0: f64,
    pub log_every: usize,
    #[serde(default)]
    pub early_stop: Option<EarlyStop>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.8e-4,
            iterations: 5000,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            loss: LossConfig::default(),
            seed: 0,
            head: Head::TanhAbs,
            twin: false,
            hidden: DEFAULT_HIDDEN.to_vec(),
            c: 0.1,
            omega0: DEFAULT_OMEGA0,
            log_every: 10,
            early_stop: None,
        }
    }
}

impl TrainConfig {
    /// Defaults with the shorter ptychography iteration budget.
    pub fn ptycho_default() -> Self {
        Self {
            iterations: 3000,
            ..Self::default()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps_adam,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam().validate()?;
        self.loss.validate()?;
        if self.iterations == 0 {
            return param_err("iterations must be at least 1");
        }
        if self.log_every == 0 {
            return param_err("log_every must be positive");
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return param_err(format!("coordinate scale must be positive, got {}", self.c));
        }
        if let Some(es) = self.early_stop {
            if es.patience == 0 || !(es.min_delta >= 0.0) {
                return param_err("early stop needs positive patience and nonnegative min_delta");
            }
        }
        Ok(())
    }

    pub fn init_params(&self) -> Result<NetworkParams> {
        if self.twin {
            init_twin_network(self.seed, &self.hidden, self.omega0, self.head)
        } else {
            init_network(self.seed, &self.hidden, self.omega0, self.head)
        }
    }
}

/// Generic loop: forward, loss, backward, Adam; logs at iteration 1, every
/// `log_every`, and the last executed iteration.
fn train_loop(
    cfg: &TrainConfig,
    shape: (usize, usize),
    mut loss: impl FnMut(&ObjectEstimate) -> Result<(LossBreakdown, RealGrid, RealGrid)>,
) -> Result<(Vec<HistoryEntry>, ObjectEstimate, NetworkParams)> {
    cfg.validate()?;
    let coords = make_coordinates(shape.0, shape.1, cfg.c)?;
    let mut params = cfg.init_params()?;
    let adam = cfg.adam();
    let mut moments = AdamMoments::zeros(params.param_count());
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for it in 1..=cfg.iterations {
        let (est, cache) = params.forward(&coords)?;
        let (breakdown, da, dp) = loss(&est)?;
        if !breakdown.total.is_finite() {
            return Err(Error::Parameter(format!("loss diverged at iteration {it}")));
        }
        let stop = match cfg.early_stop {
            Some(es) => {
                if breakdown.total < best * (1.0 - es.min_delta) {
                    best = breakdown.total;
                    stale = 0;
                } else {
                    stale += 1;
                }
                stale >= es.patience
            }
            None => false,
        };
        if it == 1 || it % cfg.log_every == 0 || it == cfg.iterations || stop {
            history.push(HistoryEntry {
                iteration: it,
                breakdown,
            });
        }
        let grads = params.backward(&cache, &da, &dp)?;
        adam_step(&mut params, &grads, &mut moments, it as u64, &adam)?;
        if stop {
            break;
        }
    }
    let (est, _) = params.forward(&coords)?;
    Ok((history, est, params))
}

fn finish(
    meas: &MeasurementSet,
    cfg: &TrainConfig,
    started: Instant,
    history: Vec<HistoryEntry>,
    est: ObjectEstimate,
) -> Result<RunRecord> {
    let mut record = RunRecord::start(Method::Scan, cfg.seed, meas, MethodConfig::Scan(cfg.clone()), est);
    record.loss_history = history;
    record.wall_time_s = started.elapsed().as_secs_f64();
    record.evaluate_if_possible(meas.truth.as_ref())?;
    Ok(record)
}

/// Trains the coordinate network on a CDI measurement; also returns the final weights.
pub fn train_cdi_with_params(meas: &MeasurementSet, cfg: &TrainConfig) -> Result<(RunRecord, NetworkParams)> {
    let started = Instant::now();
    meas.validate()?;
    let mask = match &meas.geometry {
        Geometry::Cdi { mask } => *mask,
        Geometry::Ptycho { .. } => return Err(Error::Measurement("train_cdi needs a CDI measurement".into())),
    };
    let m = &meas.magnitudes[0];
    let (history, est, params) = train_loop(cfg, meas.object_shape(), |est| loss_total(est, m, &mask, &cfg.loss))?;
    Ok((finish(meas, cfg, started, history, est)?, params))
}

pub fn train_cdi(meas: &MeasurementSet, cfg: &TrainConfig) -> Result<RunRecord> {
    Ok(train_cdi_with_params(meas, cfg)?.0)
}

/// Trains one network spanning the whole object against every scan position.
pub fn train_ptycho_with_params(meas: &MeasurementSet, cfg: &TrainConfig) -> Result<(RunRecord, NetworkParams)> {
    let started = Instant::now();
    meas.validate()?;
    if !meas.is_ptycho() {
        return Err(Error::Measurement(
            "train_ptycho needs a ptychography measurement".into(),
        ));
    }
    let (history, est, params) = train_loop(cfg, meas.object_shape(), |est| ptycho_loss_total(est, meas, &cfg.loss))?;
    Ok((finish(meas, cfg, started, history, est)?, params))
}

pub fn train_ptycho(meas: &MeasurementSet, cfg: &TrainConfig) -> Result<RunRecord> {
    Ok(train_ptycho_with_params(meas, cfg)?.0)
}
