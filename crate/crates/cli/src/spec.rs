//! Experiment specification: defaults, JSON config file and flags merged
//! into one resolved, validated spec before anything is written.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, ValueEnum};
use phaseforge::net::Head;
use phaseforge::Method;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    #[serde(alias = "recon_cdi")]
    ReconCdi,
    #[serde(alias = "recon_ptycho")]
    ReconPtycho,
    Baseline,
    Ablate,
    Report,
}

impl Mode {
    fn is_ptycho(self) -> bool {
        self == Mode::ReconPtycho
    }
}

/// Output head, including the two-network variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadChoice {
    TanhAbs,
    TanhShift,
    ClampAbs,
    DoubleSiren,
}

impl HeadChoice {
    pub fn head(self) -> Head {
        match self {
            HeadChoice::TanhAbs | HeadChoice::DoubleSiren => Head::TanhAbs,
            HeadChoice::TanhShift => Head::TanhShift,
            HeadChoice::ClampAbs => Head::ClampAbs,
        }
    }

    pub fn twin(self) -> bool {
        self == HeadChoice::DoubleSiren
    }
}

#[derive(Debug, Parser)]
#[command(name = "phaseforge", version, about = "Fourier phase retrieval experiments")]
pub struct Cli {
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Reconstruction methods (comma separated): scan, er, hio, hio_er, hes, epie.
    #[arg(long, value_delimiter = ',')]
    pub method: Option<Vec<String>>,
    /// Measurement file for recon modes, or a directory of run records for `report`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// 8/16-bit PGM used as the object amplitude.
    #[arg(long)]
    pub object_amp: Option<PathBuf>,
    /// 8/16-bit PGM used as the object phase.
    #[arg(long)]
    pub object_phase: Option<PathBuf>,
    /// Object side length in pixels (images are centre-cropped to it).
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub probe_size: Option<usize>,
    #[arg(long)]
    pub oversample: Option<f64>,
    /// Noise levels in raw detector counts (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub sigma: Option<Vec<f64>>,
    /// Ptychographic overlap fractions (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub overlap: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub noise_seed: Option<u64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub w1: Option<f64>,
    #[arg(long)]
    pub w2: Option<f64>,
    #[arg(long)]
    pub tv: Option<f64>,
    #[arg(long, value_enum)]
    pub head: Option<HeadChoice>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub omega0: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file with any of the fields above; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Optional training overrides shared by the config file and the flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tv: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<HeadChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega0: Option<f64>,
}

/// Config-file layer; every field optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    mode: Option<Mode>,
    #[serde(alias = "methods")]
    method: Option<Vec<Method>>,
    input: Option<PathBuf>,
    object_amp: Option<PathBuf>,
    object_phase: Option<PathBuf>,
    size: Option<usize>,
    probe_size: Option<usize>,
    oversample: Option<f64>,
    sigma: Option<Vec<f64>>,
    overlap: Option<Vec<f64>>,
    seeds: Option<Vec<u64>>,
    noise_seed: Option<u64>,
    out: Option<PathBuf>,
    #[serde(default, alias = "overrides")]
    train: TrainOverrides,
}

/// Fully resolved experiment, written as `experiment.json` and accepted back by `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub mode: Mode,
    pub method: Vec<Method>,
    pub input: Option<PathBuf>,
    pub object_amp: Option<PathBuf>,
    pub object_phase: Option<PathBuf>,
    pub size: usize,
    pub probe_size: usize,
    pub oversample: Option<f64>,
    pub sigma: Vec<f64>,
    pub overlap: Vec<f64>,
    pub seeds: Vec<u64>,
    pub noise_seed: u64,
    pub out: PathBuf,
    pub train: TrainOverrides,
}

const CLASSICAL: [Method; 4] = [Method::Er, Method::Hio, Method::HioEr, Method::Hes];

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    names.iter().map(|n| n.parse::<Method>().map_err(Into::into)).collect()
}

impl ExperimentSpec {
    pub fn resolve(cli: Cli) -> Result<Self> {
        let file: SpecFile = match &cli.config {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
            }
            None => SpecFile::default(),
        };
        let Some(mode) = cli.mode.or(file.mode) else {
            bail!("--mode is required (simulate, recon-cdi, recon-ptycho, baseline, ablate, report)");
        };
        let method = match cli.method {
            Some(names) => Some(parse_methods(&names)?),
            None => file.method,
        };
        let t = file.train;
        let train = TrainOverrides {
            iters: cli.iters.or(t.iters),
            lr: cli.lr.or(t.lr),
            w1: cli.w1.or(t.w1),
            w2: cli.w2.or(t.w2),
            tv: cli.tv.or(t.tv),
            head: cli.head.or(t.head),
            c: cli.c.or(t.c),
            omega0: cli.omega0.or(t.omega0),
        };
        let overlap = cli.overlap.or(file.overlap).filter(|o| !o.is_empty());
        let oversample = cli.oversample.or(file.oversample);
        let input = cli.input.or(file.input);
        let object_amp = cli.object_amp.or(file.object_amp);
        let object_phase = cli.object_phase.or(file.object_phase);
        let sigma = cli.sigma.or(file.sigma);
        let size = cli.size.or(file.size);
        let ptycho_sim = mode.is_ptycho() || (mode == Mode::Simulate && overlap.is_some());

        if overlap.is_some() && !(mode.is_ptycho() || mode == Mode::Simulate) {
            bail!("--overlap only applies to ptychography (recon-ptycho or simulate)");
        }
        if oversample.is_some() && ptycho_sim {
            bail!("--oversample only applies to CDI; ptychography uses --overlap");
        }
        if input.is_some() {
            if mode == Mode::Simulate {
                bail!("simulate builds its own objects; --input is not accepted");
            }
            if object_amp.is_some()
                || object_phase.is_some()
                || sigma.is_some()
                || size.is_some()
                || overlap.is_some()
                || oversample.is_some()
            {
                bail!("--input fixes the measurement; object, size, sigma, overlap and oversample options conflict with it");
            }
        }

        let method = match (mode, method) {
            (Mode::ReconCdi, m) => m.unwrap_or(vec![Method::Scan]),
            (Mode::Baseline, m) => m.unwrap_or(CLASSICAL.to_vec()),
            (Mode::ReconPtycho, m) => m.unwrap_or(vec![Method::Scan, Method::Epie]),
            (Mode::Ablate, m) => m.unwrap_or(vec![Method::Scan]),
            (Mode::Simulate | Mode::Report, Some(_)) => bail!("--method is not used by {mode:?} mode"),
            (Mode::Simulate | Mode::Report, None) => Vec::new(),
        };
        let allowed: &[Method] = match mode {
            Mode::ReconCdi => &[Method::Scan, Method::Er, Method::Hio, Method::HioEr, Method::Hes],
            Mode::Baseline => &CLASSICAL,
            Mode::ReconPtycho => &[Method::Scan, Method::Epie],
            Mode::Ablate => &[Method::Scan],
            Mode::Simulate | Mode::Report => &[],
        };
        if let Some(bad) = method.iter().find(|m| !allowed.contains(m)) {
            bail!("method {bad} is not available in {mode:?} mode");
        }

        let spec = ExperimentSpec {
            mode,
            method,
            input,
            object_amp,
            object_phase,
            size: size.unwrap_or(if ptycho_sim { 128 } else { 50 }),
            probe_size: cli.probe_size.or(file.probe_size).unwrap_or(28),
            oversample: if ptycho_sim {
                None
            } else {
                Some(oversample.unwrap_or(5.0))
            },
            sigma: sigma.unwrap_or(if mode == Mode::Ablate {
                vec![0.0, 10.0, 100.0, 1000.0]
            } else {
                vec![0.0]
            }),
            overlap: overlap.unwrap_or(if ptycho_sim { vec![0.7] } else { Vec::new() }),
            seeds: cli.seeds.or(file.seeds).unwrap_or(vec![0]),
            noise_seed: cli.noise_seed.or(file.noise_seed).unwrap_or(0),
            out: cli.out.or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            train,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        ensure!(!self.seeds.is_empty(), "--seeds must list at least one seed");
        ensure!(!self.sigma.is_empty(), "--sigma must list at least one value");
        for &s in &self.sigma {
            ensure!(s >= 0.0 && s.is_finite(), "sigma must be finite and >= 0, got {s}");
        }
        for &o in &self.overlap {
            ensure!((0.0..1.0).contains(&o), "overlap must lie in [0, 1), got {o}");
        }
        if let Some(os) = self.oversample {
            ensure!(os >= 1.0 && os.is_finite(), "oversample must be >= 1, got {os}");
        }
        ensure!(self.size > 0 && self.probe_size > 0, "sizes must be positive");
        if !self.overlap.is_empty() {
            ensure!(
                self.probe_size <= self.size,
                "probe ({}) larger than object ({})",
                self.probe_size,
                self.size
            );
        }
        for path in [&self.object_amp, &self.object_phase, &self.input]
            .into_iter()
            .flatten()
        {
            ensure!(path.exists(), "{} does not exist", path.display());
        }
        match self.mode {
            Mode::Report => ensure!(
                self.input.as_deref().is_some_and(Path::is_dir),
                "report needs --input pointing at a directory of run records"
            ),
            Mode::ReconCdi | Mode::ReconPtycho | Mode::Baseline | Mode::Ablate | Mode::Simulate => {}
        }
        if let Some(it) = self.train.iters {
            ensure!(it > 0, "--iters must be at least 1");
        }
        Ok(())
    }
}
