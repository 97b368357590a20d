use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{ComplexGrid, RealGrid};

/// Amplitude and phase planes of a reconstructed (or true) object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectEstimate {
    pub amplitude: RealGrid,
    pub phase: RealGrid,
}

impl ObjectEstimate {
    pub fn new(amplitude: RealGrid, phase: RealGrid) -> Result<Self> {
        amplitude.ensure_same_shape(&phase)?;
        Ok(Self { amplitude, phase })
    }

    pub fn from_complex(obj: &ComplexGrid) -> Self {
        Self {
            amplitude: obj.abs(),
            phase: obj.arg(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.amplitude.shape()
    }

    pub fn to_complex(&self) -> ComplexGrid {
        ComplexGrid::from_polar(&self.amplitude, &self.phase).expect("planes share a shape")
    }
}
