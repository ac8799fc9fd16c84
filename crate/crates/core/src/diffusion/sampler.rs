//! Forward corruption, denoising score matching, reverse-time stepping,
//! physics-guided correction and the hybrid spectral/physical sampler.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::ScoreModel;
use super::schedule::NoiseSchedule;
use crate::error::{Result, SgfmError};
use crate::field::{Field, Grid};
use crate::flow::{physics_energy_and_grad, SpdeParams};
use crate::rng::{content_hash, derive_seed, rng_from_seed};
use crate::spectral::SpectralWorkspace;
use crate::wavelet::{
    forward_dwt, inverse_dwt, merge_scales, split_scales, ScaleSplit, WaveletCoefficients, WaveletFamily,
};

/// Lower end of the diffusion times drawn for training; `1/√(1-ᾱ)` is
/// singular at zero.
pub const TAU_MIN: f64 = 1e-3;

fn gaussian_vec(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// `c_τ = √ᾱ c0 + √(1-ᾱ) ε` over every coefficient; returns `(c_τ, ε)`.
pub fn forward_noise(
    c0: &WaveletCoefficients,
    tau: f64,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<(WaveletCoefficients, Vec<f64>)> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(SgfmError::InvalidArgument(format!("τ must lie in [0, 1], got {tau}")));
    }
    let eps = gaussian_vec(c0.len(), seed);
    let (sa, sig) = (schedule.alpha_bar(tau).sqrt(), schedule.sigma(tau));
    let v: Vec<f64> = c0.to_vec().iter().zip(&eps).map(|(c, e)| sa * c + sig * e).collect();
    let mut out = c0.clone();
    out.set_from_slice(&v)?;
    Ok((out, eps))
}

/// Corrupts only the fine part of `split`, leaving the coarse context clean.
pub fn forward_noise_fine(split: &ScaleSplit, tau: f64, schedule: &NoiseSchedule, seed: u64) -> Result<(ScaleSplit, Vec<f64>)> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(SgfmError::InvalidArgument(format!("τ must lie in [0, 1], got {tau}")));
    }
    let eps = gaussian_vec(split.fine_len(), seed);
    let (sa, sig) = (schedule.alpha_bar(tau).sqrt(), schedule.sigma(tau));
    let v: Vec<f64> = split.fine_vec().iter().zip(&eps).map(|(c, e)| sa * c + sig * e).collect();
    let mut out = split.clone();
    out.set_fine(&v)?;
    Ok((out, eps))
}

/// One training example for the diffusion loss: clean coefficients and the
/// physical parameters they were generated under.
#[derive(Debug, Clone)]
pub struct DsmItem {
    pub c0: WaveletCoefficients,
    pub lambda: Vec<f64>,
}

/// A drawn corruption of one item.
#[derive(Debug, Clone)]
pub struct Corruption {
    pub tau: f64,
    pub noisy: ScaleSplit,
    pub eps: Vec<f64>,
}

/// Per-item seeds keyed on item content plus the occurrence count of that
/// content, so a batch's loss does not depend on its order while identical
/// items still receive independent noise.
pub fn item_seeds(seed: u64, items: impl Iterator<Item = u64>) -> Vec<u64> {
    let mut seen: HashMap<u64, u64> = HashMap::new();
    items
        .map(|h| {
            let k = seen.entry(h).or_insert(0);
            let s = derive_seed(derive_seed(seed, h), *k);
            *k += 1;
            s
        })
        .collect()
}

pub fn item_hash(c0: &WaveletCoefficients, lambda: &[f64]) -> u64 {
    content_hash(&c0.to_vec()) ^ content_hash(lambda).rotate_left(17)
}

/// Draws `τ ~ U[TAU_MIN, 1]` and `ε`, and corrupts the fine coefficients.
/// `coarse_noise > 0` additionally perturbs the coarse context by
/// `coarse_noise · √(1-ᾱ)` white noise.
pub fn corrupt(
    c0: &WaveletCoefficients,
    j_split: usize,
    schedule: &NoiseSchedule,
    coarse_noise: f64,
    seed: u64,
) -> Result<Corruption> {
    let mut rng = rng_from_seed(derive_seed(seed, 0));
    let tau = TAU_MIN + (1.0 - TAU_MIN) * rng.random::<f64>();
    let split = split_scales(c0, j_split)?;
    let (mut noisy, eps) = forward_noise_fine(&split, tau, schedule, derive_seed(seed, 1))?;
    if coarse_noise > 0.0 {
        let scale = coarse_noise * schedule.sigma(tau);
        let z = gaussian_vec(noisy.coarse_len(), derive_seed(seed, 2));
        let v: Vec<f64> = noisy.coarse_vec().iter().zip(&z).map(|(c, e)| c + scale * e).collect();
        noisy.set_coarse(&v)?;
    }
    Ok(Corruption { tau, noisy, eps })
}

/// Mean over the batch of `‖ε - ε̂(c_τ, τ)‖²` on the fine coefficients.
pub fn dsm_loss(
    model: &dyn ScoreModel,
    batch: &[DsmItem],
    schedule: &NoiseSchedule,
    j_split: usize,
    seed: u64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(SgfmError::InvalidArgument("dsm_loss needs a non-empty batch".into()));
    }
    let seeds = item_seeds(seed, batch.iter().map(|it| item_hash(&it.c0, &it.lambda)));
    let losses: Vec<f64> = batch
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(item, &s)| {
            let cor = corrupt(&item.c0, j_split, schedule, 0.0, s)?;
            let pred = model.predict_eps(&cor.noisy, &item.lambda, cor.tau)?;
            Ok(cor.eps.iter().zip(&pred).map(|(e, p)| (e - p).powi(2)).sum())
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / batch.len() as f64)
}

/// Score estimate `-ε̂ / √(1-ᾱ(τ))`.
pub fn score_from_eps(eps_pred: &[f64], tau: f64, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(SgfmError::InvalidArgument(format!("score needs τ in (0, 1], got {tau}")));
    }
    let sig = schedule.sigma(tau);
    Ok(eps_pred.iter().map(|e| -e / sig).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReverseMode {
    /// Reverse-time SDE with Euler–Maruyama noise.
    Sde,
    /// Deterministic probability-flow ODE.
    #[default]
    Ode,
}

/// Coarse context and physical parameters held fixed while sampling.
#[derive(Debug, Clone, Default)]
pub struct Conditioning {
    pub lambda: Vec<f64>,
}

/// One step of the variance-preserving reverse dynamics from `τ` to `τ - dτ`
/// on the fine coefficients of `state`.
///
/// SDE: `c ← c + dτ (½β c + β s) + √(β dτ) z`.
/// ODE: `c ← c + dτ ½β (c + s)`.
#[allow(clippy::too_many_arguments)]
pub fn reverse_step(
    state: &ScaleSplit,
    tau: f64,
    dtau: f64,
    model: &dyn ScoreModel,
    lambda: &[f64],
    schedule: &NoiseSchedule,
    mode: ReverseMode,
    seed: u64,
) -> Result<ScaleSplit> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(SgfmError::InvalidArgument(format!("τ must lie in (0, 1], got {tau}")));
    }
    if !(dtau > 0.0) || dtau > tau {
        return Err(SgfmError::InvalidArgument(format!(
            "need 0 < dτ <= τ, got dτ = {dtau}, τ = {tau}"
        )));
    }
    let eps = model.predict_eps(state, lambda, tau)?;
    let score = score_from_eps(&eps, tau, schedule)?;
    let beta = schedule.beta(tau);
    let c = state.fine_vec();
    let next: Vec<f64> = match mode {
        ReverseMode::Ode => c
            .iter()
            .zip(&score)
            .map(|(x, s)| x + dtau * 0.5 * beta * (x + s))
            .collect(),
        ReverseMode::Sde => {
            let z = gaussian_vec(c.len(), seed);
            let amp = (beta * dtau).sqrt();
            c.iter()
                .zip(&score)
                .zip(&z)
                .map(|((x, s), z)| x + dtau * (0.5 * beta * x + beta * s) + amp * z)
                .collect()
        }
    };
    let mut out = state.clone();
    out.set_fine(&next)?;
    Ok(out)
}

/// Energy `E(c) = ‖P R(W⁻¹c)‖²` of the sampled state against `u_prev`, and
/// its gradient in coefficient space.
pub fn physics_energy_grad(
    ws: &SpectralWorkspace,
    c: &WaveletCoefficients,
    u_prev: &Field,
    dt: f64,
    p: &SpdeParams,
) -> Result<(f64, WaveletCoefficients)> {
    let u = inverse_dwt(c)?;
    let (e, gu) = physics_energy_and_grad(ws, u_prev, &u, dt, p)?;
    // W is orthogonal, so ∇_c = W ∇_u
    Ok((e, forward_dwt(&gu, c.family(), c.levels())?))
}

pub fn physics_energy(ws: &SpectralWorkspace, c: &WaveletCoefficients, u_prev: &Field, dt: f64, p: &SpdeParams) -> Result<f64> {
    let u = inverse_dwt(c)?;
    let r = crate::flow::state_residual(ws, u_prev, &u, dt, p)?;
    crate::flow::residual_energy(ws, &r)
}

/// Plain correction step `c ← c - η ∇_c E(W⁻¹[c])`.
pub fn physics_correction(
    c: &WaveletCoefficients,
    u_prev: &Field,
    dt: f64,
    p: &SpdeParams,
    eta: f64,
) -> Result<WaveletCoefficients> {
    if !(eta >= 0.0) {
        return Err(SgfmError::InvalidArgument(format!("η must be >= 0, got {eta}")));
    }
    if eta == 0.0 {
        return Ok(c.clone());
    }
    let ws = SpectralWorkspace::new(*c.grid());
    let (_, g) = physics_energy_grad(&ws, c, u_prev, dt, p)?;
    let mut out = c.clone();
    out.axpy(-eta, &g)?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct CorrectionOutcome {
    pub coeffs: WaveletCoefficients,
    pub energy_before: f64,
    pub energy_after: f64,
    /// Step actually taken; zero when no decrease was found.
    pub step: f64,
}

/// Number of times η may be halved before the correction is skipped.
pub const MAX_HALVINGS: usize = 40;

/// Correction with backtracking: η is halved until `E` decreases, so the
/// energy never increases. With `fine_only = Some(j)` the update is restricted
/// to scales above `j`.
#[allow(clippy::too_many_arguments)]
pub fn physics_correction_backtracking(
    ws: &SpectralWorkspace,
    c: &WaveletCoefficients,
    u_prev: &Field,
    dt: f64,
    p: &SpdeParams,
    eta: f64,
    fine_only: Option<usize>,
) -> Result<CorrectionOutcome> {
    if !(eta >= 0.0) {
        return Err(SgfmError::InvalidArgument(format!("η must be >= 0, got {eta}")));
    }
    let (e0, mut g) = physics_energy_grad(ws, c, u_prev, dt, p)?;
    if let Some(j) = fine_only {
        for b in g.bands_mut() {
            if b.scale <= j {
                b.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    let mut step = eta;
    for _ in 0..=MAX_HALVINGS {
        if step == 0.0 {
            break;
        }
        let mut trial = c.clone();
        trial.axpy(-step, &g)?;
        let e1 = physics_energy(ws, &trial, u_prev, dt, p)?;
        if e1.is_finite() && e1 < e0 {
            return Ok(CorrectionOutcome {
                coeffs: trial,
                energy_before: e0,
                energy_after: e1,
                step,
            });
        }
        step *= 0.5;
    }
    Ok(CorrectionOutcome {
        coeffs: c.clone(),
        energy_before: e0,
        energy_after: e0,
        step: 0.0,
    })
}

/// Settings of the hybrid sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    #[serde(default)]
    pub correction_strength: f64,
    #[serde(default)]
    pub corrections_per_step: usize,
    pub j_split: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: ReverseMode,
    #[serde(default)]
    pub family: WaveletFamily,
    pub levels: usize,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(SgfmError::Config("sampler needs at least one step".into()));
        }
        if !(self.correction_strength >= 0.0 && self.correction_strength.is_finite()) {
            return Err(SgfmError::Config("correction_strength must be >= 0".into()));
        }
        if self.j_split > self.levels {
            return Err(SgfmError::Config("j_split exceeds levels".into()));
        }
        Ok(())
    }
}

/// What the sampler is conditioned on: teacher-forced coarse coefficients,
/// physical parameters and (for physics corrections) the previous snapshot.
#[derive(Debug, Clone, Default)]
pub struct SamplingContext {
    /// Canonical coarse coefficients; empty means all zero.
    pub coarse: Vec<f64>,
    pub lambda: Vec<f64>,
    pub u_prev: Option<Field>,
}

impl SamplingContext {
    /// Coarse part of `field`'s transform; the coarse predictor is the
    /// identity on the conditioning input.
    pub fn from_field(field: &Field, family: WaveletFamily, levels: usize, j_split: usize) -> Result<Self> {
        let c = forward_dwt(field, family, levels)?;
        Ok(Self {
            coarse: split_scales(&c, j_split)?.coarse_vec(),
            lambda: Vec::new(),
            u_prev: None,
        })
    }
}

/// Alternates reverse diffusion on the fine coefficients with physics
/// corrections, then reconstructs and projects the final state.
pub fn hybrid_sample(
    model: &dyn ScoreModel,
    cfg: &SamplerConfig,
    p: &SpdeParams,
    schedule: &NoiseSchedule,
    grid: Grid,
    channels: usize,
    ctx: &SamplingContext,
) -> Result<Field> {
    cfg.validate()?;
    let ws = SpectralWorkspace::new(grid);
    let template = WaveletCoefficients::zeros(grid, channels, cfg.family, cfg.levels)?;
    let mut state = split_scales(&template, cfg.j_split)?;
    if !ctx.coarse.is_empty() {
        state.set_coarse(&ctx.coarse)?;
    }
    let init = gaussian_vec(state.fine_len(), derive_seed(cfg.seed, 0));
    state.set_fine(&init)?;

    let u_prev = match (&ctx.u_prev, cfg.corrections_per_step) {
        (_, 0) => None,
        (Some(u), _) => {
            u.check_same_shape(&Field::zeros(grid, channels))?;
            Some(u)
        }
        (None, _) => {
            return Err(SgfmError::InvalidArgument(
                "physics corrections need a previous snapshot".into(),
            ))
        }
    };

    let dtau = 1.0 / cfg.steps as f64;
    for k in 0..cfg.steps {
        let tau = 1.0 - k as f64 * dtau;
        let step = dtau.min(tau);
        state = reverse_step(
            &state,
            tau,
            step,
            model,
            &ctx.lambda,
            schedule,
            cfg.mode,
            derive_seed(cfg.seed, k as u64 + 1),
        )?;
        if let Some(u_prev) = u_prev {
            let mut c = merge_scales(&state)?;
            for _ in 0..cfg.corrections_per_step {
                let out = physics_correction_backtracking(
                    &ws,
                    &c,
                    u_prev,
                    p.dt,
                    p,
                    cfg.correction_strength,
                    Some(cfg.j_split),
                )
                .map_err(|e| match e {
                    SgfmError::Instability { detail, .. } => SgfmError::Instability { step: k, detail },
                    other => other,
                })?;
                c = out.coeffs;
            }
            state = split_scales(&c, cfg.j_split)?;
        }
        if state.fine.iter().any(|b| b.data.iter().any(|v| !v.is_finite())) {
            return Err(SgfmError::Instability {
                step: k,
                detail: "sampler state became non-finite".into(),
            });
        }
    }
    let u = inverse_dwt(&merge_scales(&state)?)?;
    ws.helmholtz_project(&u)
}
