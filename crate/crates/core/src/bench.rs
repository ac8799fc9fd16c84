//! Scaling benchmarks: median wall time against problem size and a log-log
//! slope fit.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diffusion::model::{LocalScoreArch, LocalScoreNet};
use crate::diffusion::sampler::{physics_correction_backtracking, reverse_step, ReverseMode};
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Result, SgfmError};
use crate::field::{gaussian_field, Field, Grid};
use crate::flow::{advection, step_euler_maruyama, SpdeParams};
use crate::rng::derive_seed;
use crate::spectral::SpectralWorkspace;
use crate::wavelet::{forward_dwt, merge_scales, split_scales, WaveletFamily};

/// Medians below this are dominated by timer and dispatch overhead and are
/// left out of the fit.
pub const TIMING_FLOOR_SECS: f64 = 50e-6;
pub const MIN_REPS: usize = 7;
pub const MIN_WARMUP: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchOp {
    Dwt,
    Projection,
    Advection,
    SpdeStep,
    DiffusionStep,
    SgfmStep,
    /// All-pairs coefficient interaction, quadratic by construction.
    Quadratic,
}

impl BenchOp {
    pub const ALL: [BenchOp; 7] = [
        BenchOp::Dwt,
        BenchOp::Projection,
        BenchOp::Advection,
        BenchOp::SpdeStep,
        BenchOp::DiffusionStep,
        BenchOp::SgfmStep,
        BenchOp::Quadratic,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BenchOp::Dwt => "dwt",
            BenchOp::Projection => "projection",
            BenchOp::Advection => "advection",
            BenchOp::SpdeStep => "spde_step",
            BenchOp::DiffusionStep => "diffusion_step",
            BenchOp::SgfmStep => "sgfm_step",
            BenchOp::Quadratic => "quadratic",
        }
    }

    /// Default grid side lengths (2D, so `N = n²`).
    pub fn default_sides(&self) -> Vec<usize> {
        match self {
            BenchOp::Quadratic => vec![8, 16, 32, 64, 128],
            _ => vec![32, 64, 128, 256, 512],
        }
    }
}

impl fmt::Display for BenchOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchOp {
    type Err = SgfmError;

    fn from_str(s: &str) -> Result<Self> {
        BenchOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| SgfmError::InvalidArgument(format!("unknown benchmark op {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub op: BenchOp,
    /// Grid side lengths.
    pub sides: Vec<usize>,
    /// Total grid points `N` per size.
    pub sizes: Vec<usize>,
    pub medians: Vec<f64>,
    /// Raw per-repetition wall times in seconds.
    pub samples: Vec<Vec<f64>>,
    /// Sizes whose median fell under the timing floor.
    pub excluded: Vec<bool>,
    pub slope: f64,
    pub intercept: f64,
    pub reps: usize,
    pub warmup: usize,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("op,side,n_points,median_s,excluded,samples_s\n");
        for i in 0..self.sizes.len() {
            let raw: Vec<String> = self.samples[i].iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&format!(
                "{},{},{},{:e},{},{}\n",
                self.op,
                self.sides[i],
                self.sizes[i],
                self.medians[i],
                self.excluded[i],
                raw.join(";")
            ));
        }
        s
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Least-squares slope of `ln t` against `ln N` over the sizes not excluded.
pub fn fit_loglog(sizes: &[usize], medians: &[f64], excluded: &[bool]) -> Result<(f64, f64)> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = sizes
        .iter()
        .zip(medians)
        .zip(excluded)
        .filter(|(_, e)| !**e)
        .map(|((n, t), _)| ((*n as f64).ln(), t.ln()))
        .unzip();
    if xs.len() < 2 {
        return Err(SgfmError::InvalidArgument(
            "fewer than two sizes above the timing floor".into(),
        ));
    }
    Ok(crate::flow::linear_fit(&xs, &ys))
}

/// Prepared state for one size; `run` performs one timed repetition.
trait Kernel {
    fn run(&mut self) -> Result<()>;
}

struct Dwt(Field);
impl Kernel for Dwt {
    fn run(&mut self) -> Result<()> {
        let levels = self.0.grid().levels_max();
        std::hint::black_box(forward_dwt(&self.0, WaveletFamily::Daubechies4, levels)?);
        Ok(())
    }
}

struct Projection(SpectralWorkspace, Field);
impl Kernel for Projection {
    fn run(&mut self) -> Result<()> {
        std::hint::black_box(self.0.helmholtz_project(&self.1)?);
        Ok(())
    }
}

struct Advect(SpectralWorkspace, Field);
impl Kernel for Advect {
    fn run(&mut self) -> Result<()> {
        std::hint::black_box(advection(&self.0, &self.1)?);
        Ok(())
    }
}

struct Spde {
    ws: SpectralWorkspace,
    u: Field,
    p: SpdeParams,
    seed: u64,
    step: usize,
}
impl Kernel for Spde {
    fn run(&mut self) -> Result<()> {
        std::hint::black_box(step_euler_maruyama(&self.ws, &self.u, &self.p, self.seed, self.step)?);
        self.step += 1;
        Ok(())
    }
}

const BENCH_LEVELS: usize = 3;
const BENCH_SPLIT: usize = 1;

struct Diffusion {
    net: LocalScoreNet,
    schedule: NoiseSchedule,
    state: crate::wavelet::ScaleSplit,
    seed: u64,
}
impl Kernel for Diffusion {
    fn run(&mut self) -> Result<()> {
        std::hint::black_box(reverse_step(
            &self.state,
            0.5,
            0.01,
            &self.net,
            &[],
            &self.schedule,
            ReverseMode::Sde,
            self.seed,
        )?);
        Ok(())
    }
}

/// One hybrid step: reverse diffusion on the fine scales, then one physics
/// correction through the inverse transform and the residual gradient.
struct Sgfm {
    inner: Diffusion,
    ws: SpectralWorkspace,
    u_prev: Field,
    p: SpdeParams,
}
impl Kernel for Sgfm {
    fn run(&mut self) -> Result<()> {
        let d = &self.inner;
        let next = reverse_step(&d.state, 0.5, 0.01, &d.net, &[], &d.schedule, ReverseMode::Sde, d.seed)?;
        let c = merge_scales(&next)?;
        let out = physics_correction_backtracking(&self.ws, &c, &self.u_prev, self.p.dt, &self.p, 1e-4, Some(BENCH_SPLIT))?;
        std::hint::black_box(out);
        Ok(())
    }
}

struct Quadratic(Vec<f64>);
impl Kernel for Quadratic {
    fn run(&mut self) -> Result<()> {
        let c = &self.0;
        let n = c.len();
        let out: Vec<f64> = (0..n)
            .map(|i| {
                let ci = c[i];
                c.iter().map(|cj| ci * cj / (1.0 + (ci - cj) * (ci - cj))).sum::<f64>()
            })
            .collect();
        std::hint::black_box(out);
        Ok(())
    }
}

fn kernel(op: BenchOp, grid: Grid, seed: u64) -> Result<Box<dyn Kernel>> {
    let u = || gaussian_field(grid, 2, seed);
    let ws = || SpectralWorkspace::new(grid);
    let params = || SpdeParams::new(0.1, 0.01, 1e-3);
    let diffusion = || -> Result<Diffusion> {
        let schedule = NoiseSchedule::default();
        let arch = LocalScoreArch {
            ndim: 2,
            hidden: 8,
            lambda_dim: 0,
        };
        let levels = BENCH_LEVELS.min(grid.levels_max());
        let c = forward_dwt(&u(), WaveletFamily::Haar, levels)?;
        Ok(Diffusion {
            net: LocalScoreNet::new(arch, schedule, seed)?,
            schedule,
            state: split_scales(&c, BENCH_SPLIT)?,
            seed,
        })
    };
    Ok(match op {
        BenchOp::Dwt => Box::new(Dwt(u())),
        BenchOp::Projection => Box::new(Projection(ws(), u())),
        BenchOp::Advection => Box::new(Advect(ws(), u())),
        BenchOp::SpdeStep => Box::new(Spde {
            ws: ws(),
            u: u(),
            p: params()?,
            seed,
            step: 0,
        }),
        BenchOp::DiffusionStep => Box::new(diffusion()?),
        BenchOp::SgfmStep => Box::new(Sgfm {
            inner: diffusion()?,
            ws: ws(),
            u_prev: gaussian_field(grid, 2, derive_seed(seed, 1)),
            p: params()?,
        }),
        BenchOp::Quadratic => Box::new(Quadratic(u().channel(0).to_vec())),
    })
}

/// Times `op` at each 2D grid side in `sides` (strictly increasing powers of
/// two) on a single thread.
pub fn bench_scaling(op: BenchOp, sides: &[usize], reps: usize, warmup: usize, seed: u64) -> Result<BenchReport> {
    if sides.len() < 2 || sides.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SgfmError::InvalidArgument("sizes must be strictly increasing with at least two entries".into()));
    }
    if reps < MIN_REPS || warmup < MIN_WARMUP {
        return Err(SgfmError::InvalidArgument(format!(
            "need at least {MIN_REPS} repetitions and {MIN_WARMUP} warmups"
        )));
    }
    let grids = sides.iter().map(|&n| Grid::new(2, n)).collect::<Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| SgfmError::InvalidArgument(e.to_string()))?;
    let samples = pool.install(|| -> Result<Vec<Vec<f64>>> {
        grids
            .iter()
            .map(|g| {
                let mut k = kernel(op, *g, seed)?;
                for _ in 0..warmup {
                    k.run()?;
                }
                (0..reps)
                    .map(|_| {
                        let t = Instant::now();
                        k.run()?;
                        Ok(t.elapsed().as_secs_f64())
                    })
                    .collect()
            })
            .collect()
    })?;
    let sizes: Vec<usize> = grids.iter().map(|g| g.len()).collect();
    let medians: Vec<f64> = samples.iter().map(|s| median(s)).collect();
    let excluded: Vec<bool> = medians.iter().map(|m| *m < TIMING_FLOOR_SECS).collect();
    let (slope, intercept) = fit_loglog(&sizes, &medians, &excluded)?;
    Ok(BenchReport {
        op,
        sides: sides.to_vec(),
        sizes,
        medians,
        samples,
        excluded,
        slope,
        intercept,
        reps,
        warmup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_fit() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let sizes = [100, 200, 400, 800];
        let t: Vec<f64> = sizes.iter().map(|n| 1e-6 * (*n as f64).powf(1.5)).collect();
        let (slope, _) = fit_loglog(&sizes, &t, &[false; 4]).unwrap();
        assert!((slope - 1.5).abs() < 1e-12);
        assert!(fit_loglog(&sizes, &t, &[true, true, true, false]).is_err());
    }

    #[test]
    fn op_names_round_trip() {
        for op in BenchOp::ALL {
            assert_eq!(op.name().parse::<BenchOp>().unwrap(), op);
        }
        assert!("fft".parse::<BenchOp>().is_err());
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(bench_scaling(BenchOp::Dwt, &[16, 8], 7, 2, 0).is_err());
        assert!(bench_scaling(BenchOp::Dwt, &[8, 16], 3, 2, 0).is_err());
        assert!(bench_scaling(BenchOp::Dwt, &[8, 12], 7, 2, 0).is_err());
    }

    #[test]
    fn small_run_reports_all_fields() {
        let r = bench_scaling(BenchOp::Projection, &[16, 32, 64], 7, 2, 1);
        // tiny sizes may all sit under the floor on a fast machine
        if let Ok(r) = r {
            assert_eq!(r.samples.len(), 3);
            assert!(r.samples.iter().all(|s| s.len() == 7));
            assert!(r.to_csv().lines().count() == 4);
        }
    }
}
