//! Score models: the ε-prediction interface, a small trainable local network,
//! and closed-form references.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::schedule::NoiseSchedule;
use crate::error::{Result, SgfmError};
use crate::rng::rng_from_seed;
use crate::wavelet::{Band, ScaleSplit};

/// Predicts the injected noise `ε` on the fine coefficients of `state`,
/// conditioned on its coarse coefficients, physical parameters `λ` and the
/// diffusion time `τ`. Output is in canonical fine order.
pub trait ScoreModel: Sync {
    fn predict_eps(&self, state: &ScaleSplit, lambda: &[f64], tau: f64) -> Result<Vec<f64>>;
}

/// A score model with a flat parameter vector and a parameter-space
/// vector–Jacobian product.
pub trait TrainableScoreModel: ScoreModel {
    fn params(&self) -> &[f64];
    fn set_params(&mut self, params: &[f64]) -> Result<()>;
    /// `J_θ(ε̂)ᵀ upstream`.
    fn param_vjp(&self, state: &ScaleSplit, lambda: &[f64], tau: f64, upstream: &[f64]) -> Result<Vec<f64>>;
}

/// Always predicts zero noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroScore;

impl ScoreModel for ZeroScore {
    fn predict_eps(&self, state: &ScaleSplit, _lambda: &[f64], _tau: f64) -> Result<Vec<f64>> {
        Ok(vec![0.0; state.fine_len()])
    }
}

/// Exact ε-predictor when the data distribution is a point mass whose fine
/// coefficients are `target`: `ε = (c - √ᾱ target) / √(1 - ᾱ)`.
#[derive(Debug, Clone)]
pub struct AnalyticGaussianScore {
    pub schedule: NoiseSchedule,
    pub target: Vec<f64>,
}

impl AnalyticGaussianScore {
    /// Point mass at the origin.
    pub fn origin(schedule: NoiseSchedule, fine_len: usize) -> Self {
        Self {
            schedule,
            target: vec![0.0; fine_len],
        }
    }
}

impl ScoreModel for AnalyticGaussianScore {
    fn predict_eps(&self, state: &ScaleSplit, _lambda: &[f64], tau: f64) -> Result<Vec<f64>> {
        let c = state.fine_vec();
        if c.len() != self.target.len() {
            return Err(SgfmError::Shape(format!(
                "analytic score built for {} fine coefficients, got {}",
                self.target.len(),
                c.len()
            )));
        }
        let sa = self.schedule.alpha_bar(tau).sqrt();
        let sig = self.schedule.sigma(tau);
        if sig == 0.0 {
            return Err(SgfmError::InvalidArgument("τ = 0 has no noise to predict".into()));
        }
        Ok(c.iter().zip(&self.target).map(|(x, t)| (x - sa * t) / sig).collect())
    }
}

/// Shape of a [`LocalScoreNet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalScoreArch {
    pub ndim: usize,
    pub hidden: usize,
    pub lambda_dim: usize,
}

/// Number of τ features: `[1, τ, √(1-ᾱ(τ))]`.
pub const TAU_FEATURES: usize = 3;
/// Floor on `1 - ᾱ` used for input normalisation.
const MIN_VARIANCE: f64 = 1e-10;

impl LocalScoreArch {
    pub fn stencil(&self) -> usize {
        3usize.pow(self.ndim as u32)
    }

    /// Per-coefficient input width: stencil, parent coarse value, λ.
    pub fn input_dim(&self) -> usize {
        self.stencil() + 1 + self.lambda_dim
    }

    pub fn param_count(&self) -> usize {
        let d = self.input_dim();
        let (m, h) = (TAU_FEATURES, self.hidden);
        m * d + m + h * d + h * m + h + h
    }
}

/// Shift-invariant local ε-predictor over fine wavelet bands.
///
/// Every fine coefficient sees its `3^ndim` periodic neighbourhood in its own
/// band divided by the noise level `√(1-ᾱ)`, the value of the deepest
/// approximation band at the same location, and `λ` as constant inputs. The prediction is a τ-modulated linear map of
/// those inputs plus a one-hidden-layer `tanh` correction:
///
/// `ε̂ = Σ_m φ_m(τ) (A_m·z + b_m) + Σ_k v_k tanh(U_k·z + E_k·φ(τ) + c_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalScoreNet {
    arch: LocalScoreArch,
    schedule: NoiseSchedule,
    params: Vec<f64>,
}

struct Offsets {
    a: usize,
    b: usize,
    u: usize,
    e: usize,
    c: usize,
    v: usize,
}

impl LocalScoreNet {
    /// Linear part zero, hidden layer small random.
    pub fn new(arch: LocalScoreArch, schedule: NoiseSchedule, seed: u64) -> Result<Self> {
        if !(arch.ndim == 2 || arch.ndim == 3) {
            return Err(SgfmError::InvalidArgument("score net ndim must be 2 or 3".into()));
        }
        let mut net = Self {
            arch,
            schedule,
            params: vec![0.0; arch.param_count()],
        };
        let o = net.offsets();
        let mut rng = rng_from_seed(seed);
        let d = arch.input_dim() as f64;
        for p in &mut net.params[o.u..o.e] {
            *p = rng.sample::<f64, _>(StandardNormal) / d.sqrt();
        }
        for p in &mut net.params[o.v..] {
            *p = 0.01 * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(net)
    }

    pub fn from_params(arch: LocalScoreArch, schedule: NoiseSchedule, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(SgfmError::Shape(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        Ok(Self {
            arch,
            schedule,
            params,
        })
    }

    pub fn arch(&self) -> LocalScoreArch {
        self.arch
    }

    pub fn schedule(&self) -> NoiseSchedule {
        self.schedule
    }

    fn offsets(&self) -> Offsets {
        let d = self.arch.input_dim();
        let (m, h) = (TAU_FEATURES, self.arch.hidden);
        let a = 0;
        let b = a + m * d;
        let u = b + m;
        let e = u + h * d;
        let c = e + h * m;
        let v = c + h;
        Offsets { a, b, u, e, c, v }
    }

    fn noise_level(&self, tau: f64) -> f64 {
        self.schedule.one_minus_alpha_bar(tau).max(MIN_VARIANCE).sqrt()
    }

    fn tau_features(&self, tau: f64) -> [f64; TAU_FEATURES] {
        [1.0, tau, self.noise_level(tau)]
    }

    fn check_state(&self, state: &ScaleSplit, lambda: &[f64]) -> Result<()> {
        if state.grid().ndim() != self.arch.ndim {
            return Err(SgfmError::Shape(format!(
                "score net is {}D, state is {}D",
                self.arch.ndim,
                state.grid().ndim()
            )));
        }
        if lambda.len() != self.arch.lambda_dim {
            return Err(SgfmError::Shape(format!(
                "score net expects {} physical parameters, got {}",
                self.arch.lambda_dim,
                lambda.len()
            )));
        }
        Ok(())
    }

    /// Walks every fine coefficient with its input vector.
    fn for_each_input(&self, state: &ScaleSplit, lambda: &[f64], tau: f64, mut f: impl FnMut(usize, &[f64])) {
        let inv_sigma = 1.0 / self.noise_level(tau);
        let d = self.arch.ndim;
        let stencil = self.arch.stencil();
        let mut z = vec![0.0; self.arch.input_dim()];
        z[stencil + 1..].copy_from_slice(lambda);
        let mut out_index = 0;
        for band in &state.fine {
            let parent = state
                .coarse
                .iter()
                .find(|b| b.scale == 0 && b.channel == band.channel);
            let side = band.side;
            let count = band.data.len();
            let mut idx = [0usize; 3];
            for p in 0..count {
                let mut rem = p;
                for a in (0..d).rev() {
                    idx[a] = rem % side;
                    rem /= side;
                }
                for (t, zt) in z.iter_mut().enumerate().take(stencil) {
                    let mut tr = t;
                    let mut flat = 0;
                    for a in 0..d {
                        let off = (tr % 3) as isize - 1;
                        tr /= 3;
                        let i = (idx[a] as isize + off).rem_euclid(side as isize) as usize;
                        flat = flat * side + i;
                    }
                    *zt = band.data[flat] * inv_sigma;
                }
                z[stencil] = parent.map_or(0.0, |pb| parent_value(pb, &idx, side, d));
                f(out_index, &z);
                out_index += 1;
            }
        }
    }
}

fn parent_value(parent: &Band, idx: &[usize; 3], side: usize, d: usize) -> f64 {
    let ps = parent.side;
    let mut flat = 0;
    for &i in idx.iter().take(d) {
        flat = flat * ps + i * ps / side;
    }
    parent.data[flat]
}

impl ScoreModel for LocalScoreNet {
    fn predict_eps(&self, state: &ScaleSplit, lambda: &[f64], tau: f64) -> Result<Vec<f64>> {
        self.check_state(state, lambda)?;
        let phi = self.tau_features(tau);
        let o = self.offsets();
        let dim = self.arch.input_dim();
        let h = self.arch.hidden;
        let p = &self.params;
        // τ-dependent pieces are shared by every coefficient
        let mut wlin = vec![0.0; dim];
        let mut blin = 0.0;
        for (m, ph) in phi.iter().enumerate() {
            for i in 0..dim {
                wlin[i] += ph * p[o.a + m * dim + i];
            }
            blin += ph * p[o.b + m];
        }
        let hbias: Vec<f64> = (0..h)
            .map(|k| {
                p[o.c + k]
                    + phi
                        .iter()
                        .enumerate()
                        .map(|(m, ph)| ph * p[o.e + k * TAU_FEATURES + m])
                        .sum::<f64>()
            })
            .collect();
        let mut out = vec![0.0; state.fine_len()];
        self.for_each_input(state, lambda, tau, |j, z| {
            let mut y = blin + wlin.iter().zip(z).map(|(w, x)| w * x).sum::<f64>();
            for k in 0..h {
                let u = &p[o.u + k * dim..o.u + (k + 1) * dim];
                let pre = hbias[k] + u.iter().zip(z).map(|(w, x)| w * x).sum::<f64>();
                y += p[o.v + k] * pre.tanh();
            }
            out[j] = y;
        });
        Ok(out)
    }
}

impl TrainableScoreModel for LocalScoreNet {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(SgfmError::Shape(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn param_vjp(&self, state: &ScaleSplit, lambda: &[f64], tau: f64, upstream: &[f64]) -> Result<Vec<f64>> {
        self.check_state(state, lambda)?;
        if upstream.len() != state.fine_len() {
            return Err(SgfmError::Shape("upstream gradient has the wrong length".into()));
        }
        let phi = self.tau_features(tau);
        let o = self.offsets();
        let dim = self.arch.input_dim();
        let h = self.arch.hidden;
        let p = &self.params;
        let hbias: Vec<f64> = (0..h)
            .map(|k| {
                p[o.c + k]
                    + phi
                        .iter()
                        .enumerate()
                        .map(|(m, ph)| ph * p[o.e + k * TAU_FEATURES + m])
                        .sum::<f64>()
            })
            .collect();
        // accumulate Σ g z and Σ g first, then expand by φ
        let mut gz = vec![0.0; dim];
        let mut gsum = 0.0;
        let mut du = vec![0.0; h * dim];
        let mut dpre_sum = vec![0.0; h];
        let mut dv = vec![0.0; h];
        self.for_each_input(state, lambda, tau, |j, z| {
            let g = upstream[j];
            if g == 0.0 {
                return;
            }
            gsum += g;
            gz.iter_mut().zip(z).for_each(|(a, x)| *a += g * x);
            for k in 0..h {
                let u = &p[o.u + k * dim..o.u + (k + 1) * dim];
                let act = (hbias[k] + u.iter().zip(z).map(|(w, x)| w * x).sum::<f64>()).tanh();
                dv[k] += g * act;
                let dpre = g * p[o.v + k] * (1.0 - act * act);
                dpre_sum[k] += dpre;
                du[k * dim..(k + 1) * dim]
                    .iter_mut()
                    .zip(z)
                    .for_each(|(a, x)| *a += dpre * x);
            }
        });
        let mut grad = vec![0.0; p.len()];
        for (m, ph) in phi.iter().enumerate() {
            for i in 0..dim {
                grad[o.a + m * dim + i] = ph * gz[i];
            }
            grad[o.b + m] = ph * gsum;
        }
        grad[o.u..o.e].copy_from_slice(&du);
        for k in 0..h {
            for (m, ph) in phi.iter().enumerate() {
                grad[o.e + k * TAU_FEATURES + m] = ph * dpre_sum[k];
            }
            grad[o.c + k] = dpre_sum[k];
            grad[o.v + k] = dv[k];
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{gaussian_field, make_grid};
    use crate::wavelet::{forward_dwt, split_scales, WaveletFamily};

    fn state(seed: u64) -> ScaleSplit {
        let g = make_grid(2, 8).unwrap();
        let c = forward_dwt(&gaussian_field(g, 2, seed), WaveletFamily::Haar, 3).unwrap();
        split_scales(&c, 1).unwrap()
    }

    fn arch() -> LocalScoreArch {
        LocalScoreArch {
            ndim: 2,
            hidden: 4,
            lambda_dim: 2,
        }
    }

    fn perturbed(net: &LocalScoreNet) -> LocalScoreNet {
        let mut n = net.clone();
        let mut rng = rng_from_seed(77);
        let p: Vec<f64> = n
            .params()
            .iter()
            .map(|v| v + 0.3 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        n.set_params(&p).unwrap();
        n
    }

    #[test]
    fn parameter_budget() {
        assert!(arch().param_count() <= 10_000);
        let big = LocalScoreArch {
            ndim: 3,
            hidden: 32,
            lambda_dim: 4,
        };
        assert!(big.param_count() <= 10_000);
    }

    #[test]
    fn output_shape_and_determinism() {
        let net = perturbed(&LocalScoreNet::new(arch(), NoiseSchedule::default(), 1).unwrap());
        let s = state(3);
        let a = net.predict_eps(&s, &[0.1, 1.0], 0.4).unwrap();
        let b = net.predict_eps(&s, &[0.1, 1.0], 0.4).unwrap();
        assert_eq!(a.len(), s.fine_len());
        assert_eq!(a, b);
        assert!(net.predict_eps(&s, &[0.1], 0.4).is_err());
    }

    #[test]
    fn shift_invariant_within_a_band() {
        // a constant band gives a constant prediction on that band
        let net = perturbed(&LocalScoreNet::new(arch(), NoiseSchedule::default(), 1).unwrap());
        let mut s = state(3);
        for b in s.fine.iter_mut().chain(s.coarse.iter_mut()) {
            b.data.iter_mut().for_each(|v| *v = 0.7);
        }
        let out = net.predict_eps(&s, &[0.0, 0.0], 0.5).unwrap();
        assert!(out.iter().all(|v| (v - out[0]).abs() < 1e-14));
    }

    #[test]
    fn param_vjp_matches_finite_differences() {
        let net = perturbed(&LocalScoreNet::new(arch(), NoiseSchedule::default(), 5).unwrap());
        let s = state(4);
        let lambda = [0.3, -0.2];
        let tau = 0.35;
        let up: Vec<f64> = gaussian_field(make_grid(2, 8).unwrap(), 2, 9).data()[..s.fine_len()].to_vec();
        let grad = net.param_vjp(&s, &lambda, tau, &up).unwrap();
        let f = |m: &LocalScoreNet| -> f64 {
            m.predict_eps(&s, &lambda, tau)
                .unwrap()
                .iter()
                .zip(&up)
                .map(|(a, b)| a * b)
                .sum()
        };
        let h = 1e-6;
        for i in 0..net.params().len() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            let mut p = net.params().to_vec();
            p[i] += h;
            plus.set_params(&p).unwrap();
            p[i] -= 2.0 * h;
            minus.set_params(&p).unwrap();
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-6 * fd.abs().max(1.0), "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn analytic_score_cases() {
        let sched = NoiseSchedule::default();
        let s = state(1);
        let m = AnalyticGaussianScore::origin(sched, s.fine_len());
        let eps = m.predict_eps(&s, &[], 0.5).unwrap();
        let sig = sched.sigma(0.5);
        for (e, c) in eps.iter().zip(s.fine_vec()) {
            assert!((e - c / sig).abs() < 1e-14);
        }
        assert!(m.predict_eps(&s, &[], 0.0).is_err());
    }
}
