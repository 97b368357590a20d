//! Training-loop contracts for the coordinate network.

use num_complex::Complex64;
use phaseforge::grid::ComplexGrid;
use phaseforge::loss::{loss_total, LossConfig};
use phaseforge::measurement::{simulate_cdi, Geometry, MeasurementSet};
use phaseforge::net::{make_coordinates, Head};
use phaseforge::optim::{
    adam_step, train_cdi, train_cdi_with_params, train_ptycho, train_ptycho_with_params, AdamMoments, EarlyStop,
    TrainConfig,
};
use phaseforge::ptycho::{make_probe, make_scan_plan, ptycho_loss_total, simulate_ptycho, Probe};
use phaseforge::synth::synthetic_object;
use phaseforge::{ObjectEstimate, RealGrid, RunRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(iterations: usize) -> TrainConfig {
    TrainConfig {
        iterations,
        hidden: vec![32, 32, 32],
        ..TrainConfig::default()
    }
}

fn random_object(n: usize, seed: u64) -> ObjectEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ObjectEstimate::new(
        RealGrid::from_fn(n, n, |_, _| rng.random_range(0.05..0.95)),
        RealGrid::from_fn(n, n, |_, _| rng.random_range(-1.5..1.5)),
    )
    .unwrap()
}

#[test]
fn eight_by_eight_loss_drops_below_one_percent() {
    let meas = simulate_cdi(&synthetic_object(8, 8, 3).unwrap(), 4.0, 0.0, 0).unwrap();
    let cfg = TrainConfig {
        iterations: 500,
        ..TrainConfig::default()
    };
    let rec = train_cdi(&meas, &cfg).unwrap();
    let first = rec.loss_history.first().unwrap().breakdown.total;
    let last = rec.loss_history.last().unwrap().breakdown.total;
    assert!(last < 0.01 * first, "{last} vs {first}");
}

#[test]
fn single_iteration_is_one_adam_step() {
    let meas = simulate_cdi(&random_object(6, 1), 2.0, 0.0, 0).unwrap();
    let cfg = small_config(1);
    let (rec, params) = train_cdi_with_params(&meas, &cfg).unwrap();
    assert_eq!(rec.loss_history.len(), 1);
    assert_eq!(rec.loss_history[0].iteration, 1);

    let Geometry::Cdi { mask } = meas.geometry else {
        unreachable!()
    };
    let coords = make_coordinates(6, 6, cfg.c).unwrap();
    let mut p = cfg.init_params().unwrap();
    let (est, cache) = p.forward(&coords).unwrap();
    let (breakdown, da, dp) = loss_total(&est, &meas.magnitudes[0], &mask, &cfg.loss).unwrap();
    let grads = p.backward(&cache, &da, &dp).unwrap();
    let mut moments = AdamMoments::zeros(p.param_count());
    adam_step(&mut p, &grads, &mut moments, 1, &cfg.adam()).unwrap();
    assert_eq!(rec.loss_history[0].breakdown, breakdown);
    assert_eq!(params, p);
    assert_eq!(rec.final_estimate, p.forward(&coords).unwrap().0);
}

#[test]
fn logging_cadence() {
    let meas = simulate_cdi(&random_object(4, 2), 2.0, 0.0, 0).unwrap();
    let cfg = TrainConfig {
        log_every: 4,
        ..small_config(10)
    };
    let its: Vec<usize> = train_cdi(&meas, &cfg)
        .unwrap()
        .loss_history
        .iter()
        .map(|h| h.iteration)
        .collect();
    assert_eq!(its, vec![1, 4, 8, 10]);
}

#[test]
fn same_seed_is_bit_identical_across_thread_counts() {
    let meas = simulate_cdi(&random_object(12, 3), 3.0, 10.0, 5).unwrap();
    let cfg = small_config(15);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train_cdi(&meas, &cfg).unwrap().without_timing())
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(a, run(4));
    let other = TrainConfig { seed: 1, ..cfg.clone() };
    assert_ne!(a.loss_history, train_cdi(&meas, &other).unwrap().loss_history);
}

#[test]
fn ptycho_is_bit_identical_across_thread_counts() {
    let probe = make_probe(8).unwrap();
    let plan = make_scan_plan(16, 16, 8, 8, 0.5).unwrap();
    let meas = simulate_ptycho(&random_object(16, 4).to_complex(), &probe, &plan, 0.0, 0).unwrap();
    let cfg = small_config(5);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train_ptycho(&meas, &cfg).unwrap().without_timing())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn one_pixel_object_converges() {
    let truth = ObjectEstimate::new(RealGrid::filled(1, 1, 0.62), RealGrid::filled(1, 1, 0.4)).unwrap();
    let meas = simulate_cdi(&truth, 4.0, 0.0, 0).unwrap();
    // The lone coordinate is 0 and biases start at 0, so the raw output is
    // exactly 0; under the |tanh| head that is the kink with zero subgradient.
    let cfg = TrainConfig {
        head: Head::TanhShift,
        ..small_config(2000)
    };
    let rec = train_cdi(&meas, &cfg).unwrap();
    let a = rec.final_estimate.amplitude.data()[0];
    assert!((a - 0.62).abs() < 1e-2, "{a}");
}

#[test]
fn one_pixel_tanh_abs_starts_on_the_kink() {
    let truth = ObjectEstimate::new(RealGrid::filled(1, 1, 0.62), RealGrid::filled(1, 1, 0.4)).unwrap();
    let meas = simulate_cdi(&truth, 4.0, 0.0, 0).unwrap();
    let rec = train_cdi(&meas, &small_config(50)).unwrap();
    assert_eq!(rec.final_estimate.amplitude.data()[0], 0.0);
}

#[test]
fn ptycho_single_flat_position_matches_cdi() {
    let obj = random_object(6, 5);
    let cdi = simulate_cdi(&obj, 1.0, 0.0, 0).unwrap();
    let probe = Probe::new(ComplexGrid::filled(6, 6, Complex64::new(1.0, 0.0))).unwrap();
    let plan = make_scan_plan(6, 6, 6, 6, 0.5).unwrap();
    assert_eq!(plan.positions.len(), 1);
    let ptycho = simulate_ptycho(&obj.to_complex(), &probe, &plan, 0.0, 0).unwrap();
    assert_eq!(ptycho.magnitudes[0], cdi.magnitudes[0]);
    let cfg = small_config(20);
    let (a, pa) = train_cdi_with_params(&cdi, &cfg).unwrap();
    let (b, pb) = train_ptycho_with_params(&ptycho, &cfg).unwrap();
    assert_eq!(a.loss_history, b.loss_history);
    assert_eq!(pa, pb);
}

#[test]
fn zero_probe_leaves_parameters_unchanged() {
    let probe = Probe::new(ComplexGrid::zeros(4, 4)).unwrap();
    let plan = make_scan_plan(6, 6, 4, 4, 0.5).unwrap();
    assert_eq!(plan.positions.len(), 4);
    let mut meas = simulate_ptycho(&random_object(6, 6).to_complex(), &probe, &plan, 0.0, 0).unwrap();
    // nonzero measurements, so only the probe can zero the gradient
    for m in &mut meas.magnitudes {
        *m = RealGrid::filled(4, 4, 0.3);
    }
    let cfg = TrainConfig {
        loss: LossConfig {
            lambda_tv: 0.0,
            ..LossConfig::default()
        },
        ..small_config(3)
    };
    let (_, params) = train_ptycho_with_params(&meas, &cfg).unwrap();
    assert_eq!(params, cfg.init_params().unwrap());
}

#[test]
fn ptycho_gradient_matches_finite_differences() {
    let probe = make_probe(4).unwrap();
    let plan = make_scan_plan(6, 4, 4, 4, 0.5).unwrap();
    assert_eq!(plan.positions.len(), 2);
    let mut meas = simulate_ptycho(
        &random_object(6, 7).to_complex().window(0, 0, 6, 4).unwrap(),
        &probe,
        &plan,
        0.0,
        0,
    )
    .unwrap();
    // perturb the data so the estimate is not at a fixed point
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for m in &mut meas.magnitudes {
        *m = m.map(|v| v + rng.random_range(0.01..0.1));
    }
    let est = {
        let o = random_object(6, 9);
        ObjectEstimate::new(
            o.amplitude.window(0, 0, 6, 4).unwrap(),
            o.phase.window(0, 0, 6, 4).unwrap(),
        )
        .unwrap()
    };
    let cfg = LossConfig {
        lambda_tv: 0.02,
        ..LossConfig::default()
    };
    let (_, da, dp) = ptycho_loss_total(&est, &meas, &cfg).unwrap();
    let analytic: Vec<f64> = da.data().iter().chain(dp.data()).copied().collect();
    let x0: Vec<f64> = est.amplitude.data().iter().chain(est.phase.data()).copied().collect();
    let n = est.amplitude.len();
    let f = |x: &[f64]| {
        let e = ObjectEstimate::new(
            RealGrid::from_vec(6, 4, x[..n].to_vec()).unwrap(),
            RealGrid::from_vec(6, 4, x[n..].to_vec()).unwrap(),
        )
        .unwrap();
        ptycho_loss_total(&e, &meas, &cfg).unwrap().0.total
    };
    let h = 1e-6;
    let mut x = x0.clone();
    let numeric: Vec<f64> = (0..x0.len())
        .map(|i| {
            x[i] = x0[i] + h;
            let up = f(&x);
            x[i] = x0[i] - h;
            let down = f(&x);
            x[i] = x0[i];
            (up - down) / (2.0 * h)
        })
        .collect();
    let diff: f64 = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    assert!(diff / scale <= 1e-4, "{}", diff / scale);
}

#[test]
fn ptycho_smoke_run_reduces_loss() {
    let probe = make_probe(8).unwrap();
    let plan = make_scan_plan(32, 32, 8, 8, 0.5).unwrap();
    let obj = synthetic_object(32, 32, 2).unwrap();
    let meas = simulate_ptycho(&obj.to_complex(), &probe, &plan, 0.0, 0).unwrap();
    let cfg = TrainConfig {
        iterations: 1000,
        log_every: 100,
        ..TrainConfig::ptycho_default()
    };
    let rec = train_ptycho(&meas, &cfg).unwrap();
    let first = rec.loss_history.first().unwrap().breakdown.total;
    let last = rec.loss_history.last().unwrap().breakdown.total;
    assert!(last < 0.05 * first, "{last} vs {first}");
}

#[test]
fn early_stop_ends_on_plateau() {
    let meas = simulate_cdi(&random_object(4, 10), 2.0, 0.0, 0).unwrap();
    let cfg = TrainConfig {
        early_stop: Some(EarlyStop {
            patience: 3,
            min_delta: 0.5,
        }),
        ..small_config(200)
    };
    let rec = train_cdi(&meas, &cfg).unwrap();
    let last = rec.loss_history.last().unwrap().iteration;
    assert!(last < 200, "{last}");
}

#[test]
fn record_json_round_trip() {
    let meas = simulate_cdi(&random_object(4, 11), 2.0, 0.0, 0).unwrap();
    let rec = train_cdi(&meas, &small_config(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    rec.save(&path).unwrap();
    assert_eq!(RunRecord::load(&path).unwrap(), rec);
}

#[test]
fn invalid_inputs_are_rejected() {
    let probe = make_probe(4).unwrap();
    let plan = make_scan_plan(8, 8, 4, 4, 0.5).unwrap();
    let ptycho = simulate_ptycho(&random_object(8, 12).to_complex(), &probe, &plan, 0.0, 0).unwrap();
    assert!(train_cdi(&ptycho, &small_config(1)).is_err());
    let cdi: MeasurementSet = simulate_cdi(&random_object(4, 13), 2.0, 0.0, 0).unwrap();
    assert!(train_ptycho(&cdi, &small_config(1)).is_err());
    assert!(train_cdi(
        &cdi,
        &TrainConfig {
            learning_rate: 0.0,
            ..small_config(1)
        }
    )
    .is_err());
    assert!(train_cdi(&cdi, &small_config(0)).is_err());
}
