//! Per-run provenance: method, resolved configuration, history and scores.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::classical::ClassicalConfig;
use crate::error::{Error, Result};
use crate::loss::LossBreakdown;
use crate::measurement::MeasurementSet;
use crate::metrics::{evaluate_both, Metrics, SSIM_WINDOW};
use crate::object::ObjectEstimate;
use crate::optim::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Scan,
    Er,
    Hio,
    HioEr,
    Hes,
    Epie,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Scan,
        Method::Er,
        Method::Hio,
        Method::HioEr,
        Method::Hes,
        Method::Epie,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Scan => "scan",
            Method::Er => "er",
            Method::Hio => "hio",
            Method::HioEr => "hio_er",
            Method::Hes => "hes",
            Method::Epie => "epie",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['-', '+'], "_");
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpieConfig {
    pub iterations: usize,
    pub alpha: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for EpieConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            alpha: 1.0,
            seed: 0,
            log_every: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodConfig {
    Scan(TrainConfig),
    Classical(ClassicalConfig),
    Epie(EpieConfig),
}

/// Loss terms logged at one iteration (1-based; the loss of the iterate the
/// step with that index starts from).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    #[serde(flatten)]
    pub breakdown: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    /// Distinguishes configurations of one method, e.g. ablation variants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub seed: u64,
    pub sigma: f64,
    pub measurement_seed: u64,
    pub overlap: Option<f64>,
    pub config: MethodConfig,
    pub loss_history: Vec<HistoryEntry>,
    pub final_estimate: ObjectEstimate,
    pub wall_time_s: f64,
    pub metrics: Option<Metrics>,
}

impl RunRecord {
    pub(crate) fn start(
        method: Method,
        seed: u64,
        meas: &MeasurementSet,
        config: MethodConfig,
        estimate: ObjectEstimate,
    ) -> Self {
        let overlap = match &meas.geometry {
            crate::measurement::Geometry::Ptycho { plan, .. } => Some(plan.overlap),
            crate::measurement::Geometry::Cdi { .. } => None,
        };
        Self {
            method,
            label: None,
            seed,
            sigma: meas.sigma,
            measurement_seed: meas.seed,
            overlap,
            config,
            loss_history: Vec::new(),
            final_estimate: estimate,
            wall_time_s: 0.0,
            metrics: None,
        }
    }

    /// Attaches scores when the object is large enough for SSIM.
    pub(crate) fn evaluate_if_possible(&mut self, truth: Option<&ObjectEstimate>) -> Result<()> {
        match truth {
            Some(t) if t.shape().0 >= SSIM_WINDOW && t.shape().1 >= SSIM_WINDOW => self.evaluate(t),
            _ => Ok(()),
        }
    }

    /// Scores the final estimate against `truth` (raw and aligned).
    pub fn evaluate(&mut self, truth: &ObjectEstimate) -> Result<()> {
        self.metrics = Some(evaluate_both(&self.final_estimate, truth)?);
        Ok(())
    }

    /// Copy with the wall-clock field zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert_eq!("HIO+ER".parse::<Method>().unwrap(), Method::HioEr);
        assert!(matches!("sgd".parse::<Method>(), Err(Error::UnknownMethod(_))));
    }
}
