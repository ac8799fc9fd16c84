//! Versioned JSON job descriptions for the command-line tool. Every file is
//! an object with a `version` key and one section named after the job;
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bench::BenchOp;
use crate::diffusion::sampler::ReverseMode;
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Result, SgfmError};
use crate::field::{gaussian_field, Field, Grid};
use crate::flow::{AnalyticForcing, ForcingSpec, SpdeParams};
use crate::training::{taylor_green, TrainConfig};
use crate::wavelet::WaveletFamily;

pub const CONFIG_VERSION: u32 = 1;

fn check_version(v: u32) -> Result<()> {
    if v != CONFIG_VERSION {
        return Err(SgfmError::Config(format!(
            "config version {v} is not supported (expected {CONFIG_VERSION})"
        )));
    }
    Ok(())
}

/// Parses a config file, mapping every failure to a configuration error.
pub fn load<T: DeserializeOwned + Versioned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| SgfmError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse<T: DeserializeOwned + Versioned>(text: &str) -> Result<T> {
    let cfg: T = serde_json::from_str(text).map_err(|e| SgfmError::Config(e.to_string()))?;
    check_version(cfg.version())?;
    Ok(cfg)
}

pub trait Versioned {
    fn version(&self) -> u32;
}

macro_rules! versioned {
    ($($t:ty),*) => {
        $(impl Versioned for $t {
            fn version(&self) -> u32 {
                self.version
            }
        })*
    };
}

versioned!(TransformFile, ProjectFile, SimulateFile, SampleFile, TrainFile, BenchFile);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformSection {
    #[serde(default)]
    pub family: WaveletFamily,
    pub levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformFile {
    pub version: u32,
    pub transform: TransformSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ProjectSection {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectFile {
    pub version: u32,
    #[serde(default)]
    pub project: ProjectSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialCondition {
    TaylorGreen,
    /// Unit white noise from the run seed.
    Gaussian,
    Zero,
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingConfig {
    #[default]
    Zero,
    Analytic {
        which: AnalyticForcing,
        #[serde(default)]
        lambda: Vec<f64>,
    },
}

impl ForcingConfig {
    pub fn spec(&self) -> ForcingSpec {
        match self {
            ForcingConfig::Zero => ForcingSpec::zero(),
            ForcingConfig::Analytic { which, lambda } => ForcingSpec::analytic(*which, lambda.clone()),
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub ndim: usize,
    pub n: usize,
    pub viscosity: f64,
    #[serde(default)]
    pub noise_amplitude: f64,
    pub dt: f64,
    pub steps: usize,
    #[serde(default = "default_true")]
    pub project_each_step: bool,
    pub initial: InitialCondition,
    #[serde(default)]
    pub forcing: ForcingConfig,
}

impl SimulateSection {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.ndim, self.n).map_err(|e| SgfmError::Config(e.to_string()))
    }

    pub fn params(&self) -> Result<SpdeParams> {
        let mut p = SpdeParams::new(self.viscosity, self.noise_amplitude, self.dt)
            .map_err(|e| SgfmError::Config(e.to_string()))?
            .with_forcing(self.forcing.spec());
        p.project_each_step = self.project_each_step;
        Ok(p)
    }

    pub fn initial_field(&self, seed: u64) -> Result<Field> {
        let grid = self.grid()?;
        let u = match &self.initial {
            InitialCondition::TaylorGreen => taylor_green(&grid, self.viscosity, 0.0)?,
            InitialCondition::Gaussian => gaussian_field(grid, self.ndim, seed),
            InitialCondition::Zero => Field::zeros(grid, self.ndim),
            InitialCondition::File { path } => crate::io::read_field(path)?,
        };
        if u.grid() != &grid {
            return Err(SgfmError::Config("initial field does not match the configured grid".into()));
        }
        Ok(u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFile {
    pub version: u32,
    pub simulate: SimulateSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScoreSource {
    /// A trained network checkpoint.
    Checkpoint { path: PathBuf },
    /// Exact predictor for data with no fine-scale content.
    PointMass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub ndim: usize,
    pub n: usize,
    pub steps: usize,
    #[serde(default)]
    pub correction_strength: f64,
    #[serde(default)]
    pub corrections_per_step: usize,
    pub j_split: usize,
    pub levels: usize,
    #[serde(default)]
    pub family: WaveletFamily,
    #[serde(default)]
    pub mode: ReverseMode,
    pub score: ScoreSource,
    #[serde(default)]
    pub schedule: NoiseSchedule,
    #[serde(default)]
    pub lambda: Vec<f64>,
    /// Field whose coarse coefficients condition the sample; defaults to the
    /// smooth point-mass field.
    #[serde(default)]
    pub condition: Option<PathBuf>,
    /// Previous snapshot for physics corrections.
    #[serde(default)]
    pub previous: Option<PathBuf>,
    #[serde(default = "default_viscosity")]
    pub viscosity: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
}

fn default_viscosity() -> f64 {
    0.1
}
fn default_dt() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleFile {
    pub version: u32,
    pub sample: SampleSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub version: u32,
    pub train: TrainConfig,
}

fn default_reps() -> usize {
    crate::bench::MIN_REPS
}
fn default_warmup() -> usize {
    crate::bench::MIN_WARMUP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub ops: Vec<BenchOp>,
    /// Grid sides; each op's defaults when absent.
    #[serde(default)]
    pub sides: Option<Vec<usize>>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchFile {
    pub version: u32,
    pub bench: BenchSection,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_simulate_config() {
        let cfg: SimulateFile = parse(
            r#"{"version": 1, "simulate": {"ndim": 2, "n": 32, "viscosity": 0.1, "dt": 0.001,
                "steps": 100, "initial": {"kind": "taylor_green"}}}"#,
        )
        .unwrap();
        assert!(cfg.simulate.project_each_step);
        assert_eq!(cfg.simulate.forcing, ForcingConfig::Zero);
        assert_eq!(cfg.simulate.initial_field(0).unwrap().channels(), 2);
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        let bad_key = r#"{"version": 1, "simulate": {"ndim": 2, "n": 32, "viscosity": 0.1, "dt": 0.001,
                "steps": 100, "initial": {"kind": "zero"}, "colour": "red"}}"#;
        assert!(matches!(parse::<SimulateFile>(bad_key), Err(SgfmError::Config(_))));
        let bad_version = r#"{"version": 2, "transform": {"levels": 2}}"#;
        assert!(matches!(parse::<TransformFile>(bad_version), Err(SgfmError::Config(_))));
        let ok: TransformFile = parse(r#"{"version": 1, "transform": {"levels": 2, "family": "db4"}}"#).unwrap();
        assert_eq!(ok.transform.family, WaveletFamily::Daubechies4);
    }

    #[test]
    fn parses_bench_and_train() {
        let b: BenchFile = parse(r#"{"version": 1, "bench": {"ops": ["dwt", "sgfm_step"]}}"#).unwrap();
        assert_eq!(b.bench.ops, vec![BenchOp::Dwt, BenchOp::SgfmStep]);
        let t: TrainFile = parse(
            r#"{"version": 1, "train": {"epochs": 2, "batch_size": 4, "learning_rate": 0.001,
                "dataset": {"kind": "point_mass", "count": 8}, "ndim": 2, "n": 8, "j_split": 1}}"#,
        )
        .unwrap();
        t.train.validate().unwrap();
    }
}
