//! Composite training objective, boundary losses, synthetic datasets and a
//! small SGD loop for the local score network.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::model::{AnalyticGaussianScore, LocalScoreArch, LocalScoreNet, ScoreModel, TrainableScoreModel};
use crate::diffusion::sampler::{corrupt, item_hash, item_seeds};
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Result, SgfmError};
use crate::field::{gaussian_field, l2_norm, Field, Grid, Trajectory};
use crate::flow::{advection, residual, ForcingSpec, SpdeParams};
use crate::rng::{derive_seed, rng_from_seed};
use crate::spectral::SpectralWorkspace;
use crate::wavelet::{forward_dwt, inverse_dwt, merge_scales, split_scales, WaveletFamily};

/// Weights of the physics-residual and boundary terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub residual: f64,
    pub boundary: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            residual: 0.1,
            boundary: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(residual: f64, boundary: f64) -> Result<Self> {
        let w = Self { residual, boundary };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("residual", self.residual), ("boundary", self.boundary)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SgfmError::InvalidArgument(format!("{name} weight must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Prescribed values `target` on the entries selected by `mask`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCondition {
    target: Field,
    mask: Vec<bool>,
    count: usize,
}

impl BoundaryCondition {
    pub fn from_mask(target: Field, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != target.data().len() {
            return Err(SgfmError::Shape(format!(
                "mask has {} entries, target has {}",
                mask.len(),
                target.data().len()
            )));
        }
        let count = mask.iter().filter(|m| **m).count();
        if count == 0 {
            return Err(SgfmError::InvalidArgument("boundary mask selects nothing".into()));
        }
        Ok(Self { target, mask, count })
    }

    /// Every entry of every channel.
    pub fn full(target: Field) -> Result<Self> {
        let mask = vec![true; target.data().len()];
        Self::from_mask(target, mask)
    }

    /// The hyperplane `x_axis = index` in every channel.
    pub fn hyperplane(target: Field, axis: usize, index: usize) -> Result<Self> {
        let g = *target.grid();
        if axis >= g.ndim() || index >= g.n() {
            return Err(SgfmError::InvalidArgument(format!("no hyperplane {axis}={index} on this grid")));
        }
        let mask = (0..target.data().len())
            .map(|i| g.axis_index(i % g.len(), axis) == index)
            .collect();
        Self::from_mask(target, mask)
    }

    pub fn target(&self) -> &Field {
        &self.target
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

/// Mean squared deviation from the target over the mask.
pub fn boundary_loss(u: &Field, bc: &BoundaryCondition) -> Result<f64> {
    Ok(boundary_loss_grad(u, bc)?.0)
}

/// Loss and its gradient with respect to the grid values of `u`.
pub fn boundary_loss_grad(u: &Field, bc: &BoundaryCondition) -> Result<(f64, Field)> {
    u.check_same_shape(&bc.target)?;
    let inv = 1.0 / bc.count as f64;
    let mut grad = Field::zeros(*u.grid(), u.channels());
    let mut sum = 0.0;
    for (((g, x), t), m) in grad
        .data_mut()
        .iter_mut()
        .zip(u.data())
        .zip(bc.target.data())
        .zip(&bc.mask)
    {
        if *m {
            let d = x - t;
            sum += d * d;
            *g = 2.0 * d * inv;
        }
    }
    Ok((sum * inv, grad))
}

/// Boundary loss of a trajectory against an initial-time condition.
pub fn boundary_loss_trajectory(traj: &Trajectory, bc: &BoundaryCondition) -> Result<f64> {
    boundary_loss(traj.first(), bc)
}

/// Exact Taylor–Green vortex `e^{-2νt}(sin x cos y, -cos x sin y)`.
pub fn taylor_green(grid: &Grid, viscosity: f64, t: f64) -> Result<Field> {
    if grid.ndim() != 2 {
        return Err(SgfmError::InvalidArgument("the Taylor–Green vortex is two-dimensional".into()));
    }
    let decay = (-2.0 * viscosity * t).exp();
    Ok(Field::from_fn(*grid, 2, |c, x| {
        if c == 0 {
            decay * x[0].sin() * x[1].cos()
        } else {
            -decay * x[0].cos() * x[1].sin()
        }
    }))
}

/// A snapshot pair and the source that makes it an exact discrete solution.
#[derive(Debug, Clone)]
pub struct ManufacturedSample {
    pub u_prev: Field,
    pub u_next: Field,
    pub forcing: Field,
    pub viscosity: f64,
    pub dt: f64,
}

impl ManufacturedSample {
    pub fn params(&self) -> Result<SpdeParams> {
        Ok(SpdeParams::new(self.viscosity, 0.0, self.dt)?.with_forcing(ForcingSpec::prescribed(self.forcing.clone())))
    }
}

/// Step used by [`manufactured_dataset`].
pub const MANUFACTURED_DT: f64 = 1e-2;

pub fn manufactured_dataset(count: usize, grid: Grid, viscosity: f64, seed: u64) -> Result<Vec<ManufacturedSample>> {
    manufactured_dataset_with(count, grid, viscosity, MANUFACTURED_DT, seed)
}

/// Random smooth divergence-free fields band-limited to `|k|∞ ≤ n/4`, each
/// advanced by one explicit viscous step. The forcing is defined so that the
/// discrete residual vanishes:
/// `f = (u_next - u_prev)/dt + (u_prev·∇)u_prev - νΔu_prev`.
pub fn manufactured_dataset_with(
    count: usize,
    grid: Grid,
    viscosity: f64,
    dt: f64,
    seed: u64,
) -> Result<Vec<ManufacturedSample>> {
    if count == 0 {
        return Err(SgfmError::InvalidArgument("dataset needs at least one sample".into()));
    }
    if !(dt > 0.0 && viscosity > 0.0) {
        return Err(SgfmError::InvalidArgument("dataset needs dt > 0 and viscosity > 0".into()));
    }
    let ws = SpectralWorkspace::new(grid);
    let d = grid.ndim();
    (0..count as u64)
        .map(|i| {
            let raw = gaussian_field(grid, d, derive_seed(seed, i));
            let smooth = ws.helmholtz_project(&ws.band_limit(&raw, grid.n() / 4)?)?;
            // unit RMS per entry
            let rms = smooth.grid_norm() / (smooth.data().len() as f64).sqrt();
            let u_prev = smooth.scaled(1.0 / rms.max(f64::MIN_POSITIVE));
            let lap = ws.laplacian(&u_prev)?;
            let mut u_next = u_prev.clone();
            u_next.axpy(dt * viscosity, &lap);
            let mut forcing = u_next.sub(&u_prev);
            forcing.scale(1.0 / dt);
            forcing.axpy(1.0, &advection(&ws, &u_prev)?);
            forcing.axpy(-viscosity, &lap);
            Ok(ManufacturedSample {
                u_prev,
                u_next,
                forcing,
                viscosity,
                dt,
            })
        })
        .collect()
}

/// One training example: the target snapshot, optionally the previous
/// snapshot and source for the physics term, conditioning parameters and an
/// optional per-item boundary condition.
#[derive(Debug, Clone)]
pub struct TrainingItem {
    pub u_next: Field,
    pub u_prev: Option<Field>,
    pub forcing: Option<Field>,
    pub lambda: Vec<f64>,
    pub bc: Option<BoundaryCondition>,
}

impl TrainingItem {
    pub fn from_manufactured(s: &ManufacturedSample) -> Self {
        Self {
            u_next: s.u_next.clone(),
            u_prev: Some(s.u_prev.clone()),
            forcing: Some(s.forcing.clone()),
            lambda: vec![s.viscosity],
            bc: None,
        }
    }
}

/// Transform and corruption settings shared by every loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSetup {
    pub schedule: NoiseSchedule,
    pub family: WaveletFamily,
    pub levels: usize,
    pub j_split: usize,
    /// Relative noise on the coarse context; zero trains on fine scales only.
    pub coarse_noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub diff: f64,
    pub phys: f64,
    pub bc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeLoss {
    pub total: f64,
    pub parts: LossParts,
}

impl CompositeLoss {
    fn from_parts(parts: LossParts, w: &LossWeights) -> Self {
        Self {
            total: parts.diff + w.residual * parts.phys + w.boundary * parts.bc,
            parts,
        }
    }
}

struct ItemEval {
    parts: LossParts,
    grad: Option<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn eval_item(
    model: &dyn ScoreModel,
    trainable: Option<&dyn TrainableScoreModel>,
    ws: &SpectralWorkspace,
    item: &TrainingItem,
    weights: &LossWeights,
    p: &SpdeParams,
    bc: Option<&BoundaryCondition>,
    setup: &LossSetup,
    seed: u64,
) -> Result<ItemEval> {
    let c0 = forward_dwt(&item.u_next, setup.family, setup.levels)?;
    let cor = corrupt(&c0, setup.j_split, &setup.schedule, setup.coarse_noise, seed)?;
    let eps_hat = model.predict_eps(&cor.noisy, &item.lambda, cor.tau)?;
    let diff: f64 = cor.eps.iter().zip(&eps_hat).map(|(e, p)| (e - p).powi(2)).sum();
    let mut upstream: Vec<f64> = cor.eps.iter().zip(&eps_hat).map(|(e, p)| -2.0 * (e - p)).collect();

    let bc = item.bc.as_ref().or(bc);
    if item.u_prev.is_none() && bc.is_none() {
        let grad = match trainable {
            Some(m) => Some(m.param_vjp(&cor.noisy, &item.lambda, cor.tau, &upstream)?),
            None => None,
        };
        return Ok(ItemEval {
            parts: LossParts { diff, phys: 0.0, bc: 0.0 },
            grad,
        });
    }

    // denoised estimate ĉ0 = (c_τ - σ ε̂)/√ᾱ on the fine scales
    let sa = setup.schedule.alpha_bar(cor.tau).sqrt();
    let sig = setup.schedule.sigma(cor.tau);
    let mut denoised = cor.noisy.clone();
    let fine: Vec<f64> = cor
        .noisy
        .fine_vec()
        .iter()
        .zip(&eps_hat)
        .map(|(c, e)| (c - sig * e) / sa)
        .collect();
    denoised.set_fine(&fine)?;
    let u_hat = inverse_dwt(&merge_scales(&denoised)?)?;
    let mut g_u = Field::zeros(*u_hat.grid(), u_hat.channels());

    let mut phys = 0.0;
    if let Some(u_prev) = &item.u_prev {
        let local;
        let params = match &item.forcing {
            Some(f) => {
                local = p.clone().with_forcing(ForcingSpec::prescribed(f.clone()));
                &local
            }
            None => p,
        };
        let r = residual(ws, u_prev, &u_hat, params.dt, params)?;
        let pr = ws.helmholtz_project(&r)?;
        phys = l2_norm(&pr).powi(2);
        // the residual is affine in û with slope 1/dt
        g_u.axpy(weights.residual * 2.0 * u_hat.grid().cell_volume() / params.dt, &pr);
    }
    let mut bc_loss = 0.0;
    if let Some(bc) = bc {
        let (l, g) = boundary_loss_grad(&u_hat, bc)?;
        bc_loss = l;
        g_u.axpy(weights.boundary, &g);
    }

    let grad = match trainable {
        Some(m) => {
            let g_c = split_scales(&forward_dwt(&g_u, setup.family, setup.levels)?, setup.j_split)?.fine_vec();
            let k = -sig / sa;
            upstream.iter_mut().zip(&g_c).for_each(|(u, g)| *u += k * g);
            Some(m.param_vjp(&cor.noisy, &item.lambda, cor.tau, &upstream)?)
        }
        None => None,
    };
    Ok(ItemEval {
        parts: LossParts {
            diff,
            phys,
            bc: bc_loss,
        },
        grad,
    })
}

#[allow(clippy::too_many_arguments)]
fn composite_impl(
    model: &dyn ScoreModel,
    trainable: Option<&dyn TrainableScoreModel>,
    batch: &[TrainingItem],
    weights: &LossWeights,
    p: &SpdeParams,
    bc: Option<&BoundaryCondition>,
    setup: &LossSetup,
    seed: u64,
) -> Result<(CompositeLoss, Option<Vec<f64>>)> {
    if batch.is_empty() {
        return Err(SgfmError::InvalidArgument("composite loss needs a non-empty batch".into()));
    }
    weights.validate()?;
    let ws = SpectralWorkspace::new(*batch[0].u_next.grid());
    let hashes: Vec<u64> = batch
        .iter()
        .map(|it| Ok(item_hash(&forward_dwt(&it.u_next, setup.family, setup.levels)?, &it.lambda)))
        .collect::<Result<_>>()?;
    let seeds = item_seeds(seed, hashes.into_iter());
    let evals: Vec<ItemEval> = batch
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(item, &s)| eval_item(model, trainable, &ws, item, weights, p, bc, setup, s))
        .collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let mut parts = LossParts::default();
    for e in &evals {
        parts.diff += e.parts.diff;
        parts.phys += e.parts.phys;
        parts.bc += e.parts.bc;
    }
    parts.diff /= n;
    parts.phys /= n;
    parts.bc /= n;
    let grad = trainable.map(|m| {
        let mut g = vec![0.0; m.params().len()];
        for e in &evals {
            if let Some(ge) = &e.grad {
                g.iter_mut().zip(ge).for_each(|(a, b)| *a += b / n);
            }
        }
        g
    });
    Ok((CompositeLoss::from_parts(parts, weights), grad))
}

/// `diff + λ_R·phys + λ_B·bc`, each part a batch mean.
///
/// `diff` is the denoising loss on the fine coefficients; `phys` is
/// `‖P R‖²` of the field reconstructed from the denoised estimate against
/// the item's previous snapshot; `bc` is the boundary loss of that field.
#[allow(clippy::too_many_arguments)]
pub fn composite_loss(
    model: &dyn ScoreModel,
    batch: &[TrainingItem],
    weights: &LossWeights,
    p: &SpdeParams,
    bc: Option<&BoundaryCondition>,
    setup: &LossSetup,
    seed: u64,
) -> Result<CompositeLoss> {
    Ok(composite_impl(model, None, batch, weights, p, bc, setup, seed)?.0)
}

/// [`composite_loss`] together with its gradient in parameter space.
#[allow(clippy::too_many_arguments)]
pub fn composite_loss_grad<M: TrainableScoreModel>(
    model: &M,
    batch: &[TrainingItem],
    weights: &LossWeights,
    p: &SpdeParams,
    bc: Option<&BoundaryCondition>,
    setup: &LossSetup,
    seed: u64,
) -> Result<(CompositeLoss, Vec<f64>)> {
    let (loss, grad) = composite_impl(model, Some(model), batch, weights, p, bc, setup, seed)?;
    Ok((loss, grad.unwrap_or_default()))
}

/// Training data selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Every item is the same coarse-only field.
    PointMass { count: usize },
    Manufactured { count: usize, viscosity: f64, dt: f64 },
}

fn default_levels() -> usize {
    2
}
fn default_hidden() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub weights: LossWeights,
    pub ndim: usize,
    pub n: usize,
    #[serde(default)]
    pub family: WaveletFamily,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default)]
    pub j_split: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default)]
    pub coarse_noise: f64,
    #[serde(default)]
    pub schedule: NoiseSchedule,
    /// Rescales each mini-batch gradient to at most this Euclidean norm.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(SgfmError::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SgfmError::Config("learning_rate must be positive".into()));
        }
        let count = match self.dataset {
            DatasetSpec::PointMass { count } | DatasetSpec::Manufactured { count, .. } => count,
        };
        if count == 0 {
            return Err(SgfmError::Config("dataset count must be positive".into()));
        }
        if self.j_split >= self.levels {
            return Err(SgfmError::Config("j_split must be below levels so fine scales exist".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(SgfmError::Config("clip_norm must be positive".into()));
            }
        }
        if !(self.coarse_noise >= 0.0 && self.coarse_noise.is_finite()) {
            return Err(SgfmError::Config("coarse_noise must be >= 0".into()));
        }
        self.weights
            .validate()
            .map_err(|e| SgfmError::Config(e.to_string()))?;
        self.schedule
            .validate()
            .map_err(|e| SgfmError::Config(e.to_string()))?;
        Grid::new(self.ndim, self.n).map_err(|e| SgfmError::Config(e.to_string()))?;
        if self.levels == 0 || self.levels > Grid::new(self.ndim, self.n)?.levels_max() {
            return Err(SgfmError::Config("levels out of range for the grid".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.ndim, self.n)
    }

    pub fn setup(&self) -> LossSetup {
        LossSetup {
            schedule: self.schedule,
            family: self.family,
            levels: self.levels,
            j_split: self.j_split,
            coarse_noise: self.coarse_noise,
        }
    }

    pub fn arch(&self) -> LocalScoreArch {
        LocalScoreArch {
            ndim: self.ndim,
            hidden: self.hidden,
            lambda_dim: match self.dataset {
                DatasetSpec::PointMass { .. } => 0,
                DatasetSpec::Manufactured { .. } => 1,
            },
        }
    }
}

/// Smooth divergence-free field with every wavelet coefficient above
/// `j_split` removed.
pub fn point_mass_field(grid: Grid, family: WaveletFamily, levels: usize, j_split: usize) -> Result<Field> {
    let smooth = match grid.ndim() {
        2 => taylor_green(&grid, 0.0, 0.0)?,
        _ => Field::from_fn(grid, 3, |c, x| match c {
            0 => x[1].sin(),
            1 => x[2].sin(),
            _ => x[0].sin(),
        }),
    };
    let mut split = split_scales(&forward_dwt(&smooth, family, levels)?, j_split)?;
    let zeros = vec![0.0; split.fine_len()];
    split.set_fine(&zeros)?;
    inverse_dwt(&merge_scales(&split)?)
}

/// Items described by `cfg.dataset`, plus the dynamics parameters their
/// physics term is evaluated with.
pub fn build_dataset(cfg: &TrainConfig) -> Result<(Vec<TrainingItem>, SpdeParams)> {
    let grid = cfg.grid()?;
    match cfg.dataset {
        DatasetSpec::PointMass { count } => {
            let u = point_mass_field(grid, cfg.family, cfg.levels, cfg.j_split)?;
            let item = TrainingItem {
                u_next: u,
                u_prev: None,
                forcing: None,
                lambda: Vec::new(),
                bc: None,
            };
            Ok((vec![item; count], SpdeParams::new(1.0, 0.0, 1.0)?))
        }
        DatasetSpec::Manufactured { count, viscosity, dt } => {
            let data = manufactured_dataset_with(count, grid, viscosity, dt, derive_seed(cfg.seed, 0xDA7A))?;
            let items = data.iter().map(TrainingItem::from_manufactured).collect();
            Ok((items, SpdeParams::new(viscosity, 0.0, dt)?))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub total: f64,
    pub diff: f64,
    pub phys: f64,
    pub bc: f64,
}

pub fn history_csv(history: &[LossRecord]) -> String {
    let mut s = String::from("epoch,total,diff,phys,bc\n");
    for r in history {
        s.push_str(&format!("{},{:e},{:e},{:e},{:e}\n", r.epoch, r.total, r.diff, r.phys, r.bc));
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LocalScoreNet,
    pub history: Vec<LossRecord>,
}

/// Plain SGD on the composite loss. Each epoch visits a seeded permutation of
/// the dataset in mini-batches; the recorded losses are the epoch means.
pub fn train_toy(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (items, p) = build_dataset(cfg)?;
    let mut model = LocalScoreNet::new(cfg.arch(), cfg.schedule, derive_seed(cfg.seed, 0x1417))?;
    let setup = cfg.setup();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..items.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, 2 * epoch as u64 + 1)));
        let mut acc = LossRecord {
            epoch,
            total: 0.0,
            diff: 0.0,
            phys: 0.0,
            bc: 0.0,
        };
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        for (b, idx) in batches.iter().enumerate() {
            let batch: Vec<TrainingItem> = idx.iter().map(|&i| items[i].clone()).collect();
            let seed = derive_seed(derive_seed(cfg.seed, 2 * epoch as u64 + 2), b as u64);
            let (loss, mut grad) = composite_loss_grad(&model, &batch, &cfg.weights, &p, None, &setup, seed)?;
            if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(SgfmError::DivergentLoss { epoch });
            }
            if let Some(max) = cfg.clip_norm {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > max {
                    grad.iter_mut().for_each(|g| *g *= max / norm);
                }
            }
            let w = idx.len() as f64 / items.len() as f64;
            acc.total += w * loss.total;
            acc.diff += w * loss.parts.diff;
            acc.phys += w * loss.parts.phys;
            acc.bc += w * loss.parts.bc;
            let next: Vec<f64> = model
                .params()
                .iter()
                .zip(&grad)
                .map(|(t, g)| t - cfg.learning_rate * g)
                .collect();
            model.set_params(&next)?;
        }
        history.push(acc);
    }
    Ok(TrainOutcome { model, history })
}

/// Mean squared per-coefficient gap between `model` and the exact predictor
/// for a point mass at `data`, over corruptions at `samples` stratified
/// diffusion times.
pub fn point_mass_gap(
    model: &dyn ScoreModel,
    data: &Field,
    lambda: &[f64],
    setup: &LossSetup,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples == 0 {
        return Err(SgfmError::InvalidArgument("need at least one sample".into()));
    }
    let c0 = split_scales(&forward_dwt(data, setup.family, setup.levels)?, setup.j_split)?;
    let oracle = AnalyticGaussianScore {
        schedule: setup.schedule,
        target: c0.fine_vec(),
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for s in 0..samples {
        let tau = (s as f64 + 0.5) / samples as f64;
        let (noisy, _) =
            crate::diffusion::sampler::forward_noise_fine(&c0, tau, &setup.schedule, derive_seed(seed, s as u64))?;
        let a = model.predict_eps(&noisy, lambda, tau)?;
        let b = oracle.predict_eps(&noisy, lambda, tau)?;
        total += a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        count += a.len();
    }
    Ok(total / count as f64)
}
