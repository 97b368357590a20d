//! Shared fixtures for the benchmarks.

use phaseforge::measurement::simulate_cdi;
use phaseforge::ptycho::{make_probe, make_scan_plan, simulate_ptycho};
use phaseforge::synth::synthetic_object;
use phaseforge::{MeasurementSet, ObjectEstimate};

/// Noise-free CDI measurement of an `n x n` synthetic object.
pub fn cdi_fixture(n: usize, oversample: f64) -> (ObjectEstimate, MeasurementSet) {
    let truth = synthetic_object(n, n, 0).expect("synthetic object");
    let meas = simulate_cdi(&truth, oversample, 0.0, 0).expect("cdi simulation");
    (truth, meas)
}

/// Noise-free ptychography measurement with a square probe.
pub fn ptycho_fixture(n: usize, probe: usize, overlap: f64) -> (ObjectEstimate, MeasurementSet) {
    let truth = synthetic_object(n, n, 0).expect("synthetic object");
    let p = make_probe(probe).expect("probe");
    let plan = make_scan_plan(n, n, probe, probe, overlap).expect("scan plan");
    let meas = simulate_ptycho(&truth.to_complex(), &p, &plan, 0.0, 0)
        .and_then(|m| m.with_truth(truth.clone()))
        .expect("ptycho simulation");
    (truth, meas)
}
