//! Metrics tables, seed summaries and grayscale image output.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::grid::RealGrid;
use crate::metrics::EvalResult;
use crate::record::{Method, RunRecord};

pub const METRICS_CSV: &str = "metrics.csv";
pub const SUMMARY_JSON: &str = "summary.json";

/// One row of the metrics table; `None` where a run carries no metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: Method,
    pub label: Option<String>,
    pub seed: u64,
    pub sigma: f64,
    pub overlap: Option<f64>,
    pub amp_psnr_db: Option<f64>,
    pub amp_ssim: Option<f64>,
    pub phase_psnr_db: Option<f64>,
    pub phase_ssim: Option<f64>,
    pub aligned_amp_psnr_db: Option<f64>,
    pub aligned_amp_ssim: Option<f64>,
    pub aligned_phase_psnr_db: Option<f64>,
    pub aligned_phase_ssim: Option<f64>,
    pub wall_time_s: f64,
}

const HEADER: [&str; 14] = [
    "method",
    "label",
    "seed",
    "sigma",
    "overlap",
    "amp_psnr_db",
    "amp_ssim",
    "phase_psnr_db",
    "phase_ssim",
    "aligned_amp_psnr_db",
    "aligned_amp_ssim",
    "aligned_phase_psnr_db",
    "aligned_phase_ssim",
    "wall_time_s",
];

fn fixed(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn eval_cells(e: Option<&EvalResult>) -> [String; 4] {
    [
        fixed(e.map(|e| e.amp_psnr_db)),
        fixed(e.map(|e| e.amp_ssim)),
        fixed(e.map(|e| e.phase_psnr_db)),
        fixed(e.map(|e| e.phase_ssim)),
    ]
}

pub fn write_metrics_csv(records: &[RunRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HEADER)?;
    for r in records {
        let mut row = vec![
            r.method.to_string(),
            r.label.clone().unwrap_or_default(),
            r.seed.to_string(),
            r.sigma.to_string(),
            r.overlap.map(|o| o.to_string()).unwrap_or_default(),
        ];
        row.extend(eval_cells(r.metrics.as_ref().map(|m| &m.raw)));
        row.extend(eval_cells(r.metrics.as_ref().map(|m| &m.aligned)));
        row.push(format!("{:.6}", r.wall_time_s));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?)
}

/// Best (maximum), mean and population standard deviation over seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub best: f64,
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            best: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub amp_psnr_db: Stat,
    pub amp_ssim: Stat,
    pub phase_psnr_db: Stat,
    pub phase_ssim: Stat,
}

impl EvalStats {
    fn of(evals: &[&EvalResult]) -> Option<Self> {
        let col = |f: fn(&EvalResult) -> f64| Stat::of(&evals.iter().map(|e| f(e)).collect::<Vec<_>>());
        Some(Self {
            amp_psnr_db: col(|e| e.amp_psnr_db)?,
            amp_ssim: col(|e| e.amp_ssim)?,
            phase_psnr_db: col(|e| e.phase_psnr_db)?,
            phase_ssim: col(|e| e.phase_ssim)?,
        })
    }
}

/// Aggregate over the seeds of one (method, label, sigma, overlap) setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub label: Option<String>,
    pub sigma: f64,
    pub overlap: Option<f64>,
    pub seeds: Vec<u64>,
    pub raw: Option<EvalStats>,
    pub aligned: Option<EvalStats>,
    pub wall_time_s: Stat,
}

/// Method, label, sigma bits and overlap bits.
type GroupKey = (Method, Option<String>, u64, Option<u64>);

pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    // f64 keys as bit patterns keep the grouping exact and ordered
    let mut groups: BTreeMap<GroupKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((
                r.method,
                r.label.clone(),
                r.sigma.to_bits(),
                r.overlap.map(f64::to_bits),
            ))
            .or_default()
            .push(r);
    }
    groups
        .into_values()
        .map(|runs| {
            let scored: Vec<_> = runs.iter().filter_map(|r| r.metrics.as_ref()).collect();
            SummaryRow {
                method: runs[0].method,
                label: runs[0].label.clone(),
                sigma: runs[0].sigma,
                overlap: runs[0].overlap,
                seeds: runs.iter().map(|r| r.seed).collect(),
                raw: EvalStats::of(&scored.iter().map(|m| &m.raw).collect::<Vec<_>>()),
                aligned: EvalStats::of(&scored.iter().map(|m| &m.aligned).collect::<Vec<_>>()),
                wall_time_s: Stat::of(&runs.iter().map(|r| r.wall_time_s).collect::<Vec<_>>())
                    .expect("groups are non-empty"),
            }
        })
        .collect()
}

/// File stem shared by a record's files, e.g. `scan_seed0_sigma10`; labels
/// are appended with characters outside `[A-Za-z0-9.-]` replaced by `-`.
pub fn record_stem(r: &RunRecord) -> String {
    let mut stem = r.method.to_string();
    if let Some(label) = &r.label {
        let clean: String = label
            .chars()
            .map(|ch| {
                if ch.is_ascii_alphanumeric() || ch == '.' || ch == '-' {
                    ch
                } else {
                    '-'
                }
            })
            .collect();
        stem.push_str(&format!("_{clean}"));
    }
    stem.push_str(&format!("_seed{}_sigma{}", r.seed, r.sigma));
    if let Some(o) = r.overlap {
        stem.push_str(&format!("_overlap{o}"));
    }
    stem
}

fn to_bytes(grid: &RealGrid, lo: f64, hi: f64) -> Vec<u8> {
    grid.data()
        .iter()
        .map(|&v| ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// 8-bit binary PGM of `grid`, mapping `[lo, hi]` linearly onto `[0, 255]`.
pub fn write_pgm(grid: &RealGrid, lo: f64, hi: f64, path: impl AsRef<Path>) -> Result<()> {
    if !(hi > lo) {
        return param_err("image range must satisfy lo < hi");
    }
    let file = BufWriter::new(File::create(path)?);
    let enc = PnmEncoder::new(file).with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
    enc.write_image(
        &to_bytes(grid, lo, hi),
        grid.width() as u32,
        grid.height() as u32,
        ExtendedColorType::L8,
    )?;
    Ok(())
}

/// Reads an 8- or 16-bit grayscale PGM as values in `[0, 1]` of the format's range.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<RealGrid> {
    let img = image::open(path)?.into_luma16();
    let (w, h) = img.dimensions();
    RealGrid::from_vec(
        h as usize,
        w as usize,
        img.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub metrics_csv: PathBuf,
    pub summary_json: PathBuf,
    pub images: Vec<PathBuf>,
}

/// Writes `metrics.csv`, `summary.json` and amplitude / phase PGMs into `dir`.
pub fn emit_report(records: &[RunRecord], dir: impl AsRef<Path>) -> Result<ReportFiles> {
    if records.is_empty() {
        return param_err("report needs at least one run record");
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let metrics_csv = dir.join(METRICS_CSV);
    write_metrics_csv(records, &metrics_csv)?;
    let summary_json = dir.join(SUMMARY_JSON);
    serde_json::to_writer_pretty(BufWriter::new(File::create(&summary_json)?), &summarize(records))?;
    let mut images = Vec::new();
    for r in records {
        let stem = record_stem(r);
        let amp = dir.join(format!("{stem}_amp.pgm"));
        write_pgm(&r.final_estimate.amplitude, 0.0, 1.0, &amp)?;
        let phase = dir.join(format!("{stem}_phase.pgm"));
        write_pgm(&r.final_estimate.phase, -PI, PI, &phase)?;
        images.extend([amp, phase]);
    }
    Ok(ReportFiles {
        metrics_csv,
        summary_json,
        images,
    })
}
