//! Measured Fourier magnitudes plus the geometry needed to invert them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cdi::{add_detector_noise, intensity_from_object, magnitude};
use crate::container;
use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, RealGrid, SupportMask};
use crate::object::ObjectEstimate;
use crate::ptycho::{Probe, ScanPlan};

#[derive(Clone, Debug, PartialEq)]
pub enum Geometry {
    Cdi { mask: SupportMask },
    Ptycho { probe: Probe, plan: ScanPlan },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    /// `sqrt(I)`: one detector grid for CDI, one per scan position for ptychography.
    pub magnitudes: Vec<RealGrid>,
    pub geometry: Geometry,
    pub sigma: f64,
    pub seed: u64,
    /// Ground truth, kept alongside simulated data for evaluation.
    pub truth: Option<ObjectEstimate>,
}

impl MeasurementSet {
    pub fn new(magnitudes: Vec<RealGrid>, geometry: Geometry, sigma: f64, seed: u64) -> Result<Self> {
        let set = Self {
            magnitudes,
            geometry,
            sigma,
            seed,
            truth: None,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn cdi(magnitude: RealGrid, mask: SupportMask, sigma: f64, seed: u64) -> Result<Self> {
        Self::new(vec![magnitude], Geometry::Cdi { mask }, sigma, seed)
    }

    pub fn with_truth(mut self, truth: ObjectEstimate) -> Result<Self> {
        if truth.shape() != self.object_shape() {
            return Err(Error::Dimension(format!(
                "truth {:?} does not match object {:?}",
                truth.shape(),
                self.object_shape()
            )));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn object_shape(&self) -> (usize, usize) {
        match &self.geometry {
            Geometry::Cdi { mask } => (mask.object_height, mask.object_width),
            Geometry::Ptycho { plan, .. } => plan.object_shape,
        }
    }

    pub fn is_ptycho(&self) -> bool {
        matches!(self.geometry, Geometry::Ptycho { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Measurement(msg));
        match &self.geometry {
            Geometry::Cdi { mask } => {
                if self.magnitudes.len() != 1 {
                    return bad(format!(
                        "CDI expects one magnitude grid, found {}",
                        self.magnitudes.len()
                    ));
                }
                self.magnitudes[0].ensure_shape(mask.height, mask.width)?;
            }
            Geometry::Ptycho { probe, plan } => {
                plan.validate()?;
                if plan.probe_shape != probe.shape() {
                    return bad("scan plan and probe disagree on probe shape".into());
                }
                if self.magnitudes.len() != plan.positions.len() {
                    return bad(format!(
                        "{} magnitude grids for {} positions",
                        self.magnitudes.len(),
                        plan.positions.len()
                    ));
                }
                for m in &self.magnitudes {
                    m.ensure_shape(probe.shape().0, probe.shape().1)?;
                }
            }
        }
        if self
            .magnitudes
            .iter()
            .any(|m| m.data().iter().any(|v| !(*v >= 0.0) || !v.is_finite()))
        {
            return bad("magnitudes must be finite and nonnegative".into());
        }
        Ok(())
    }

    pub fn write(&self, w: impl Write) -> Result<()> {
        let (mask, probe_shape, plan, mut payload) = match &self.geometry {
            Geometry::Cdi { mask } => (Some(*mask), None, None, Vec::new()),
            Geometry::Ptycho { probe, plan } => {
                let p: Vec<f64> = probe.grid().data().iter().flat_map(|z| [z.re, z.im]).collect();
                (None, Some(probe.shape()), Some(plan.clone()), p)
            }
        };
        for m in &self.magnitudes {
            payload.extend_from_slice(m.data());
        }
        if let Some(t) = &self.truth {
            payload.extend_from_slice(t.amplitude.data());
            payload.extend_from_slice(t.phase.data());
        }
        let header = Header {
            geometry: if self.is_ptycho() { "ptycho" } else { "cdi" }.into(),
            magnitude_shape: self.magnitudes[0].shape(),
            count: self.magnitudes.len(),
            mask,
            probe_shape,
            plan,
            sigma: self.sigma,
            seed: self.seed,
            truth_shape: self.truth.as_ref().map(ObjectEstimate::shape),
        };
        container::write(w, "measurement", &header, &payload)
    }

    pub fn read(r: impl Read) -> Result<Self> {
        let (h, payload): (Header, Vec<f64>) = container::read(r, "measurement")?;
        let mut values = payload.as_slice();
        let mut take = |n: usize| -> Result<Vec<f64>> {
            if values.len() < n {
                return Err(Error::Format("measurement payload too short".into()));
            }
            let (head, rest) = values.split_at(n);
            values = rest;
            Ok(head.to_vec())
        };
        let geometry = match h.geometry.as_str() {
            "cdi" => Geometry::Cdi {
                mask: h.mask.ok_or_else(|| Error::Format("CDI file without mask".into()))?,
            },
            "ptycho" => {
                let (ph, pw) = h
                    .probe_shape
                    .ok_or_else(|| Error::Format("ptycho file without probe".into()))?;
                let raw = take(2 * ph * pw)?;
                let probe = Probe::new(ComplexGrid::from_vec(
                    ph,
                    pw,
                    raw.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect(),
                )?)?;
                let plan = h
                    .plan
                    .ok_or_else(|| Error::Format("ptycho file without scan plan".into()))?;
                Geometry::Ptycho { probe, plan }
            }
            other => return Err(Error::Format(format!("unknown geometry `{other}`"))),
        };
        let (mh, mw) = h.magnitude_shape;
        let magnitudes = (0..h.count)
            .map(|_| RealGrid::from_vec(mh, mw, take(mh * mw)?))
            .collect::<Result<Vec<_>>>()?;
        let truth = match h.truth_shape {
            Some((th, tw)) => {
                let amp = RealGrid::from_vec(th, tw, take(th * tw)?)?;
                let phase = RealGrid::from_vec(th, tw, take(th * tw)?)?;
                Some(ObjectEstimate::new(amp, phase)?)
            }
            None => None,
        };
        if !values.is_empty() {
            return Err(Error::Format("measurement payload has trailing values".into()));
        }
        let set = Self {
            magnitudes,
            geometry,
            sigma: h.sigma,
            seed: h.seed,
            truth,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    geometry: String,
    magnitude_shape: (usize, usize),
    count: usize,
    mask: Option<SupportMask>,
    probe_shape: Option<(usize, usize)>,
    plan: Option<ScanPlan>,
    sigma: f64,
    seed: u64,
    truth_shape: Option<(usize, usize)>,
}

/// Simulates an oversampled CDI measurement of `truth` with optional noise.
pub fn simulate_cdi(truth: &ObjectEstimate, oversample: f64, sigma: f64, seed: u64) -> Result<MeasurementSet> {
    let (intensity, mask) = intensity_from_object(&truth.to_complex(), oversample)?;
    let noisy = add_detector_noise(&intensity, sigma, seed)?;
    MeasurementSet::cdi(magnitude(&noisy), mask, sigma, seed)?.with_truth(truth.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ptycho::{make_probe, make_scan_plan, simulate_ptycho};
    use crate::testutil::{random_complex_grid, random_real_grid};

    #[test]
    fn cdi_round_trip() {
        let truth = ObjectEstimate::new(
            random_real_grid(5, 4, 0.0, 1.0, 1),
            random_real_grid(5, 4, -3.0, 3.0, 2),
        )
        .unwrap();
        let set = simulate_cdi(&truth, 3.0, 0.5, 11).unwrap();
        let mut buf = Vec::new();
        set.write(&mut buf).unwrap();
        assert_eq!(MeasurementSet::read(buf.as_slice()).unwrap(), set);
    }

    #[test]
    fn ptycho_round_trip() {
        let probe = make_probe(6).unwrap();
        let plan = make_scan_plan(14, 14, 6, 6, 0.5).unwrap();
        let set = simulate_ptycho(&random_complex_grid(14, 14, 3), &probe, &plan, 0.0, 1).unwrap();
        let mut buf = Vec::new();
        set.write(&mut buf).unwrap();
        assert_eq!(MeasurementSet::read(buf.as_slice()).unwrap(), set);
    }

    #[test]
    fn wrong_count_is_invalid() {
        let mask = SupportMask::centered(4, 4, 2, 2).unwrap();
        let err = MeasurementSet::new(vec![], Geometry::Cdi { mask }, 0.0, 0);
        assert!(matches!(err, Err(Error::Measurement(_))));
    }

    #[test]
    fn negative_magnitude_is_invalid() {
        let mask = SupportMask::centered(4, 4, 2, 2).unwrap();
        assert!(MeasurementSet::cdi(RealGrid::filled(4, 4, -1.0), mask, 0.0, 0).is_err());
    }

    #[test]
    fn corrupted_file_is_rejected() {
        let mask = SupportMask::centered(4, 4, 2, 2).unwrap();
        let set = MeasurementSet::cdi(RealGrid::filled(4, 4, 1.0), mask, 0.0, 0).unwrap();
        let mut buf = Vec::new();
        set.write(&mut buf).unwrap();
        buf[0] = b'X';
        assert!(MeasurementSet::read(buf.as_slice()).is_err());
    }
}
