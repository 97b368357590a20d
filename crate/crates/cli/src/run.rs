//! Executes a resolved experiment.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use phaseforge::classical::{run_classical, ClassicalConfig};
use phaseforge::measurement::simulate_cdi;
use phaseforge::optim::{train_cdi, train_ptycho};
use phaseforge::ptycho::{make_probe, make_scan_plan, run_epie, simulate_ptycho};
use phaseforge::record::EpieConfig;
use phaseforge::report::{emit_report, read_pgm, record_stem};
use phaseforge::synth::{phase_from_unit, synthetic_object};
use phaseforge::{MeasurementSet, Method, ObjectEstimate, RealGrid, RunRecord, TrainConfig};

use crate::spec::{ExperimentSpec, HeadChoice, Mode};

pub const EXPERIMENT_JSON: &str = "experiment.json";
pub const RUNS_DIR: &str = "runs";

/// TV weight used on noisy data when none is given.
const NOISY_TV: f64 = 1e-4;
const CLASSICAL_ITERS: usize = 1000;

/// Everything loaded or simulated up front, so bad inputs fail before any output exists.
pub struct Prepared {
    spec: ExperimentSpec,
    measurements: Vec<MeasurementSet>,
    records: Vec<RunRecord>,
}

fn center_crop_unit(img: &RealGrid, n: usize, path: &Path) -> Result<RealGrid> {
    let (h, w) = img.shape();
    ensure!(
        h >= n && w >= n,
        "{} is {h}x{w}, smaller than --size {n}",
        path.display()
    );
    let crop = img.window((h - n) / 2, (w - n) / 2, n, n)?;
    Ok(crop.normalized())
}

fn build_object(spec: &ExperimentSpec) -> Result<ObjectEstimate> {
    let n = spec.size;
    let synth = synthetic_object(n, n, 0)?;
    let amplitude = match &spec.object_amp {
        Some(p) => center_crop_unit(&read_pgm(p).with_context(|| format!("reading {}", p.display()))?, n, p)?,
        None => synth.amplitude.clone(),
    };
    let phase = match &spec.object_phase {
        Some(p) => phase_from_unit(&center_crop_unit(
            &read_pgm(p).with_context(|| format!("reading {}", p.display()))?,
            n,
            p,
        )?),
        None => synth.phase.clone(),
    };
    Ok(ObjectEstimate::new(amplitude, phase)?)
}

fn simulate_all(spec: &ExperimentSpec, ptycho: bool) -> Result<Vec<MeasurementSet>> {
    let truth = build_object(spec)?;
    let obj = truth.to_complex();
    let mut out = Vec::new();
    for &sigma in &spec.sigma {
        if ptycho {
            let probe = make_probe(spec.probe_size)?;
            for &overlap in &spec.overlap {
                let plan = make_scan_plan(spec.size, spec.size, spec.probe_size, spec.probe_size, overlap)?;
                out.push(simulate_ptycho(&obj, &probe, &plan, sigma, spec.noise_seed)?.with_truth(truth.clone())?);
            }
        } else {
            let os = spec.oversample.unwrap_or(5.0);
            out.push(simulate_cdi(&truth, os, sigma, spec.noise_seed)?);
        }
    }
    Ok(out)
}

fn scan_config(spec: &ExperimentSpec, ptycho: bool, sigma: f64, seed: u64) -> TrainConfig {
    let mut cfg = if ptycho {
        TrainConfig::ptycho_default()
    } else {
        TrainConfig::default()
    };
    let t = &spec.train;
    if let Some(v) = t.iters {
        cfg.iterations = v;
    }
    if let Some(v) = t.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = t.w1 {
        cfg.loss.w1 = v;
    }
    if let Some(v) = t.w2 {
        cfg.loss.w2 = v;
    }
    cfg.loss.lambda_tv = t.tv.unwrap_or(if sigma > 0.0 { NOISY_TV } else { 0.0 });
    if let Some(h) = t.head {
        cfg.head = h.head();
        cfg.twin = h.twin();
    }
    if let Some(v) = t.c {
        cfg.c = v;
    }
    if let Some(v) = t.omega0 {
        cfg.omega0 = v;
    }
    cfg.seed = seed;
    cfg
}

/// Ablation variants: loss terms with the default head, then heads with the combined loss.
fn ablation_variants(base: &TrainConfig, tv: f64) -> Vec<(String, TrainConfig)> {
    let mut out = Vec::new();
    let mut plain = base.clone();
    plain.loss.lambda_tv = 0.0;
    plain.head = HeadChoice::TanhAbs.head();
    plain.twin = false;
    for (name, w1, w2, lambda) in [
        ("lm", 1.0, 0.0, 0.0),
        ("lp", 0.0, 1.0, 0.0),
        ("l", base.loss.w1, base.loss.w2, 0.0),
        ("l+tv", base.loss.w1, base.loss.w2, tv),
    ] {
        let mut cfg = plain.clone();
        cfg.loss.w1 = w1;
        cfg.loss.w2 = w2;
        cfg.loss.lambda_tv = lambda;
        out.push((format!("loss-{name}"), cfg));
    }
    for (name, head) in [
        ("double-siren", HeadChoice::DoubleSiren),
        ("tanh-shift", HeadChoice::TanhShift),
        ("clamp-abs", HeadChoice::ClampAbs),
    ] {
        let mut cfg = plain.clone();
        cfg.head = head.head();
        cfg.twin = head.twin();
        out.push((format!("head-{name}"), cfg));
    }
    out
}

fn run_method(spec: &ExperimentSpec, meas: &MeasurementSet, method: Method, seed: u64) -> Result<RunRecord> {
    let rec = match method {
        Method::Scan if meas.is_ptycho() => train_ptycho(meas, &scan_config(spec, true, meas.sigma, seed))?,
        Method::Scan => train_cdi(meas, &scan_config(spec, false, meas.sigma, seed))?,
        Method::Epie => {
            let cfg = EpieConfig {
                iterations: spec.train.iters.unwrap_or(EpieConfig::default().iterations),
                seed,
                ..EpieConfig::default()
            };
            run_epie(meas, &cfg)?
        }
        Method::Er | Method::Hio | Method::HioEr | Method::Hes => {
            let cfg = ClassicalConfig::for_method(method, spec.train.iters.unwrap_or(CLASSICAL_ITERS), seed)?;
            run_classical(meas, method, &cfg)?
        }
    };
    Ok(rec)
}

fn check_geometry(meas: &MeasurementSet, mode: Mode) -> Result<()> {
    match mode {
        Mode::ReconPtycho if !meas.is_ptycho() => bail!("recon-ptycho needs a ptychography measurement"),
        Mode::ReconCdi | Mode::Baseline | Mode::Ablate if meas.is_ptycho() => bail!("{mode:?} needs a CDI measurement"),
        _ => Ok(()),
    }
}

pub fn prepare(spec: ExperimentSpec) -> Result<Prepared> {
    let mut records = Vec::new();
    let measurements = match spec.mode {
        Mode::Report => {
            let dir = spec.input.as_ref().expect("validated");
            let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
            paths.sort();
            for p in paths {
                // Other JSON files (experiment spec, summaries) are skipped.
                if let Ok(r) = RunRecord::load(&p) {
                    records.push(r);
                }
            }
            ensure!(!records.is_empty(), "no run records found in {}", dir.display());
            Vec::new()
        }
        _ => match &spec.input {
            Some(p) => {
                let meas = MeasurementSet::load(p).with_context(|| format!("loading {}", p.display()))?;
                check_geometry(&meas, spec.mode)?;
                vec![meas]
            }
            None => simulate_all(&spec, spec.mode == Mode::ReconPtycho || !spec.overlap.is_empty())?,
        },
    };
    if spec.mode != Mode::Simulate && spec.mode != Mode::Report {
        // Cheap config checks so a bad override fails before hours of training.
        for meas in &measurements {
            scan_config(&spec, meas.is_ptycho(), meas.sigma, 0).validate()?;
        }
    }
    Ok(Prepared {
        spec,
        measurements,
        records,
    })
}

fn measurement_name(meas: &MeasurementSet) -> String {
    let mut name = format!("measurement_sigma{}", meas.sigma);
    if let phaseforge::Geometry::Ptycho { plan, .. } = &meas.geometry {
        name.push_str(&format!("_overlap{}", plan.overlap));
    }
    name + ".phf"
}

pub fn execute(prep: Prepared) -> Result<()> {
    let Prepared {
        spec,
        measurements,
        mut records,
    } = prep;
    fs::create_dir_all(&spec.out).with_context(|| format!("creating {}", spec.out.display()))?;
    fs::write(spec.out.join(EXPERIMENT_JSON), serde_json::to_string_pretty(&spec)?)?;

    match spec.mode {
        Mode::Simulate => {
            for meas in &measurements {
                let path = spec.out.join(measurement_name(meas));
                meas.save(&path)?;
                println!("wrote {}", path.display());
            }
            return Ok(());
        }
        Mode::Report => {}
        Mode::Ablate => {
            let runs = spec.out.join(RUNS_DIR);
            fs::create_dir_all(&runs)?;
            for meas in &measurements {
                let base = scan_config(&spec, false, meas.sigma, 0);
                for (label, cfg) in ablation_variants(&base, spec.train.tv.unwrap_or(NOISY_TV)) {
                    for &seed in &spec.seeds {
                        let mut rec = train_cdi(meas, &TrainConfig { seed, ..cfg.clone() })?;
                        rec.label = Some(label.clone());
                        finish_run(&runs, &rec)?;
                        records.push(rec);
                    }
                }
            }
        }
        Mode::ReconCdi | Mode::ReconPtycho | Mode::Baseline => {
            let runs = spec.out.join(RUNS_DIR);
            fs::create_dir_all(&runs)?;
            for meas in &measurements {
                for &method in &spec.method {
                    for &seed in &spec.seeds {
                        let rec = run_method(&spec, meas, method, seed)?;
                        finish_run(&runs, &rec)?;
                        records.push(rec);
                    }
                }
            }
        }
    }
    sort_records(&mut records);
    emit_report(&records, &spec.out)?;
    println!("report written to {}", spec.out.display());
    Ok(())
}

/// Canonical row order, independent of how the records were gathered.
fn sort_records(records: &mut [RunRecord]) {
    let method_rank = |m: Method| Method::ALL.iter().position(|&x| x == m);
    records.sort_by(|a, b| {
        a.sigma
            .total_cmp(&b.sigma)
            .then(a.overlap.unwrap_or(0.0).total_cmp(&b.overlap.unwrap_or(0.0)))
            .then(method_rank(a.method).cmp(&method_rank(b.method)))
            .then(a.label.cmp(&b.label))
            .then(a.seed.cmp(&b.seed))
    });
}

fn finish_run(dir: &Path, rec: &RunRecord) -> Result<()> {
    let stem = record_stem(rec);
    rec.save(dir.join(format!("{stem}.json")))?;
    let last = rec.loss_history.last().map_or(f64::NAN, |h| h.breakdown.total);
    match &rec.metrics {
        Some(m) => println!(
            "{stem}: loss {last:.4e}, amp {:.2} dB, phase {:.2} dB (aligned), {:.1} s",
            m.aligned.amp_psnr_db, m.aligned.phase_psnr_db, rec.wall_time_s
        ),
        None => println!("{stem}: loss {last:.4e}, {:.1} s", rec.wall_time_s),
    }
    Ok(())
}
