//! Central finite-difference checks of every hand-written gradient.

use phaseforge::grid::{RealGrid, SupportMask};
use phaseforge::loss::{loss_distilled_phase, loss_magnitude, loss_total, loss_tv, LossConfig, Recombine};
use phaseforge::net::{
    init_network, init_twin_network, make_coordinates, net_backward, net_forward, Head, NetworkParams,
};
use phaseforge::ObjectEstimate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / scale.max(1e-300)
}

/// Central differences of `f` over every entry of `x`.
fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            work[i] = x[i] + STEP;
            let up = f(&work);
            work[i] = x[i] - STEP;
            let down = f(&work);
            work[i] = x[i];
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64) -> RealGrid {
    RealGrid::from_fn(h, w, |_, _| rng.random_range(lo..hi))
}

struct Instance {
    est: ObjectEstimate,
    meas: RealGrid,
    mask: SupportMask,
}

fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = SupportMask::centered(12, 12, 6, 6).unwrap();
    let est = ObjectEstimate::new(
        random_grid(&mut rng, 6, 6, 0.05, 0.95),
        random_grid(&mut rng, 6, 6, -3.0, 3.0),
    )
    .unwrap();
    let meas = random_grid(&mut rng, 12, 12, 0.05, 0.6);
    Instance { est, meas, mask }
}

fn with_planes(est: &ObjectEstimate, x: &[f64]) -> ObjectEstimate {
    let n = est.amplitude.len();
    let (h, w) = est.shape();
    ObjectEstimate::new(
        RealGrid::from_vec(h, w, x[..n].to_vec()).unwrap(),
        RealGrid::from_vec(h, w, x[n..].to_vec()).unwrap(),
    )
    .unwrap()
}

fn planes(est: &ObjectEstimate) -> Vec<f64> {
    est.amplitude.data().iter().chain(est.phase.data()).copied().collect()
}

fn concat(a: &RealGrid, b: &RealGrid) -> Vec<f64> {
    a.data().iter().chain(b.data()).copied().collect()
}

#[test]
fn magnitude_loss_matches_finite_differences() {
    for seed in 0..3 {
        let inst = instance(seed);
        let (_, da, dp) = loss_magnitude(&inst.est, &inst.meas, &inst.mask).unwrap();
        let numeric = central_diff(&planes(&inst.est), |x| {
            loss_magnitude(&with_planes(&inst.est, x), &inst.meas, &inst.mask)
                .unwrap()
                .0
        });
        let err = rel_err(&concat(&da, &dp), &numeric);
        assert!(err <= 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn distilled_phase_loss_matches_finite_differences() {
    for recombine in [Recombine::Magnitude, Recombine::Intensity] {
        for seed in 0..3 {
            let mut inst = instance(seed + 10);
            if recombine == Recombine::Intensity {
                // larger magnitudes so that some recombined amplitudes exceed the clamp
                inst.meas = inst.meas.map(|v| 2.0 * v);
            }
            let (_, da, dp) = loss_distilled_phase(&inst.est, &inst.meas, &inst.mask, recombine).unwrap();
            let numeric = central_diff(&planes(&inst.est), |x| {
                loss_distilled_phase(&with_planes(&inst.est, x), &inst.meas, &inst.mask, recombine)
                    .unwrap()
                    .0
            });
            let err = rel_err(&concat(&da, &dp), &numeric);
            assert!(err <= 1e-4, "{recombine:?} seed {seed}: {err}");
        }
    }
}

#[test]
fn tv_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let phase = random_grid(&mut rng, 5, 5, -3.0, 3.0);
    let (_, grad) = loss_tv(&phase);
    let numeric = central_diff(phase.data(), |x| {
        loss_tv(&RealGrid::from_vec(5, 5, x.to_vec()).unwrap()).0
    });
    assert!(rel_err(grad.data(), &numeric) <= 1e-6);
}

#[test]
fn total_loss_matches_finite_differences() {
    let inst = instance(21);
    let cfg = LossConfig {
        w1: 0.3,
        w2: 0.7,
        lambda_tv: 0.05,
        recombine: Recombine::Magnitude,
    };
    let (_, da, dp) = loss_total(&inst.est, &inst.meas, &inst.mask, &cfg).unwrap();
    let numeric = central_diff(&planes(&inst.est), |x| {
        loss_total(&with_planes(&inst.est, x), &inst.meas, &inst.mask, &cfg)
            .unwrap()
            .0
            .total
    });
    assert!(rel_err(&concat(&da, &dp), &numeric) <= 1e-4);
}

fn flat(params: &NetworkParams) -> Vec<f64> {
    params.tensors().flatten().copied().collect()
}

fn with_flat(params: &NetworkParams, x: &[f64]) -> NetworkParams {
    let mut p = params.clone();
    let mut it = x.iter();
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v = *it.next().unwrap();
        }
    }
    p
}

fn networks() -> Vec<(String, NetworkParams)> {
    let mut out = Vec::new();
    for head in [Head::TanhAbs, Head::TanhShift, Head::ClampAbs] {
        out.push((format!("{head:?}"), init_network(11, &[8, 8], 30.0, head).unwrap()));
    }
    out.push((
        "twin".into(),
        init_twin_network(12, &[8, 8], 30.0, Head::TanhAbs).unwrap(),
    ));
    out
}

#[test]
fn network_backward_matches_finite_differences() {
    let coords = make_coordinates(6, 6, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let ca = random_grid(&mut rng, 6, 6, -1.0, 1.0);
    let cp = random_grid(&mut rng, 6, 6, -1.0, 1.0);
    let functional = |p: &NetworkParams| {
        let est = net_forward(p, &coords).unwrap();
        let a: f64 = est.amplitude.data().iter().zip(ca.data()).map(|(x, y)| x * y).sum();
        let b: f64 = est.phase.data().iter().zip(cp.data()).map(|(x, y)| x * y).sum();
        a + b
    };
    for (name, params) in networks() {
        let grads = net_backward(&params, &coords, &ca, &cp).unwrap();
        let analytic: Vec<f64> = grads.tensors().flatten().copied().collect();
        let x0 = flat(&params);
        let numeric = central_diff(&x0, |x| functional(&with_flat(&params, x)));
        let err = rel_err(&analytic, &numeric);
        assert!(err <= 1e-6, "{name}: {err}");
    }
}

#[test]
fn end_to_end_chain_matches_finite_differences() {
    let coords = make_coordinates(6, 6, 0.5).unwrap();
    let inst = instance(33);
    let cfg = LossConfig {
        lambda_tv: 0.01,
        ..LossConfig::default()
    };
    let objective = |p: &NetworkParams| {
        let est = net_forward(p, &coords).unwrap();
        loss_total(&est, &inst.meas, &inst.mask, &cfg).unwrap().0.total
    };
    for (name, params) in networks() {
        let (est, cache) = params.forward(&coords).unwrap();
        let (_, da, dp) = loss_total(&est, &inst.meas, &inst.mask, &cfg).unwrap();
        let grads = params.backward(&cache, &da, &dp).unwrap();
        let analytic: Vec<f64> = grads.tensors().flatten().copied().collect();
        let x0 = flat(&params);
        let numeric = central_diff(&x0, |x| objective(&with_flat(&params, x)));
        let err = rel_err(&analytic, &numeric);
        assert!(err <= 1e-4, "{name}: {err}");
    }
}
