//! Projected stochastic Navier–Stokes-type dynamics on the periodic box:
//! advection, forcing, the governing residual, Euler–Maruyama integration
//! and energy / vorticity / stability diagnostics.

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SgfmError};
use crate::field::{gaussian_field, l2_norm, Field, Grid, Trajectory};
use crate::rng::derive_seed;
use crate::spectral::SpectralWorkspace;

/// A state-dependent forcing term with a vector–Jacobian product, so it can
/// take part in residual gradients.
pub trait ForcingModel: Send + Sync + Debug {
    fn eval(&self, u: &Field, lambda: &[f64]) -> Result<Field>;
    /// `J_f(u)ᵀ g` in the grid-sum inner product.
    fn vjp(&self, u: &Field, lambda: &[f64], g: &Field) -> Result<Field>;
}

/// Pointwise affine channel mixing `f(u)_c = Σ_c' M[c][c'] u_c' + b_c`.
///
/// The smallest learnable forcing with an exact Lipschitz constant (the
/// spectral norm of `M`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearForcing {
    pub matrix: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl LinearForcing {
    fn check(&self, u: &Field) -> Result<()> {
        let c = u.channels();
        if self.matrix.len() != c || self.matrix.iter().any(|r| r.len() != c) || self.bias.len() != c {
            return Err(SgfmError::Shape(format!(
                "linear forcing is not {c}x{c}"
            )));
        }
        Ok(())
    }

    fn mix(&self, u: &Field, transpose: bool) -> Field {
        let c = u.channels();
        let mut out = Field::zeros(*u.grid(), c);
        for i in 0..c {
            for j in 0..c {
                let m = if transpose { self.matrix[j][i] } else { self.matrix[i][j] };
                if m == 0.0 {
                    continue;
                }
                let src = u.channel(j).to_vec();
                out.channel_mut(i)
                    .iter_mut()
                    .zip(&src)
                    .for_each(|(o, s)| *o += m * s);
            }
        }
        out
    }
}

impl ForcingModel for LinearForcing {
    fn eval(&self, u: &Field, _lambda: &[f64]) -> Result<Field> {
        self.check(u)?;
        let mut out = self.mix(u, false);
        for (c, b) in self.bias.iter().enumerate() {
            out.channel_mut(c).iter_mut().for_each(|v| *v += b);
        }
        Ok(out)
    }

    fn vjp(&self, u: &Field, _lambda: &[f64], g: &Field) -> Result<Field> {
        self.check(u)?;
        Ok(self.mix(g, true))
    }
}

/// Closed-form forcings selected by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalyticForcing {
    /// `(λ₀ sin(λ₁ y), 0[, 0])`, a shear drive.
    Kolmogorov,
    /// `λ₀ (sin x cos y, -cos x sin y)`, which feeds the Taylor–Green mode (2D).
    TaylorGreen,
}

#[derive(Debug, Clone)]
pub enum ForcingKind {
    Zero,
    Analytic(AnalyticForcing),
    /// A fixed field, e.g. a manufactured-solution source.
    Prescribed(Arc<Field>),
    Learned(Arc<dyn ForcingModel>),
}

#[derive(Debug, Clone)]
pub struct ForcingSpec {
    pub kind: ForcingKind,
    pub lambda: Vec<f64>,
}

impl Default for ForcingSpec {
    fn default() -> Self {
        Self::zero()
    }
}

impl ForcingSpec {
    pub fn zero() -> Self {
        Self {
            kind: ForcingKind::Zero,
            lambda: Vec::new(),
        }
    }

    pub fn prescribed(f: Field) -> Self {
        Self {
            kind: ForcingKind::Prescribed(Arc::new(f)),
            lambda: Vec::new(),
        }
    }

    pub fn analytic(which: AnalyticForcing, lambda: Vec<f64>) -> Self {
        Self {
            kind: ForcingKind::Analytic(which),
            lambda,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, ForcingKind::Zero)
    }

    pub fn eval(&self, u: &Field) -> Result<Field> {
        match &self.kind {
            ForcingKind::Zero => Ok(Field::zeros(*u.grid(), u.channels())),
            ForcingKind::Prescribed(f) => {
                f.check_same_shape(u)?;
                Ok((**f).clone())
            }
            ForcingKind::Learned(m) => m.eval(u, &self.lambda),
            ForcingKind::Analytic(which) => analytic_forcing(*which, &self.lambda, u),
        }
    }

    /// `J_f(u)ᵀ g`; zero for forcings that do not depend on the state.
    pub fn vjp(&self, u: &Field, g: &Field) -> Result<Field> {
        match &self.kind {
            ForcingKind::Learned(m) => m.vjp(u, &self.lambda, g),
            _ => Ok(Field::zeros(*u.grid(), u.channels())),
        }
    }
}

fn analytic_forcing(which: AnalyticForcing, lambda: &[f64], u: &Field) -> Result<Field> {
    let grid = *u.grid();
    let d = grid.ndim();
    u.vector_groups()?;
    let amp = lambda.first().copied().unwrap_or(1.0);
    match which {
        AnalyticForcing::Kolmogorov => {
            let k = lambda.get(1).copied().unwrap_or(1.0);
            Ok(Field::from_fn(grid, u.channels(), |c, x| {
                if c % d == 0 {
                    amp * (k * x[1]).sin()
                } else {
                    0.0
                }
            }))
        }
        AnalyticForcing::TaylorGreen => {
            if d != 2 {
                return Err(SgfmError::InvalidArgument(
                    "taylor_green forcing is two-dimensional".into(),
                ));
            }
            Ok(Field::from_fn(grid, u.channels(), |c, x| {
                if c % 2 == 0 {
                    amp * x[0].sin() * x[1].cos()
                } else {
                    -amp * x[0].cos() * x[1].sin()
                }
            }))
        }
    }
}

/// Largest observed `‖f(u) - f(v)‖ / ‖u - v‖` over random probe pairs.
pub fn probe_lipschitz(forcing: &ForcingSpec, grid: Grid, channels: usize, probes: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..probes as u64 {
        let u = gaussian_field(grid, channels, derive_seed(seed, 2 * i));
        let v = gaussian_field(grid, channels, derive_seed(seed, 2 * i + 1));
        let df = forcing.eval(&u)?.sub(&forcing.eval(&v)?);
        let ratio = l2_norm(&df) / l2_norm(&u.sub(&v));
        if !ratio.is_finite() {
            return Err(SgfmError::InvalidArgument("forcing produced non-finite output".into()));
        }
        worst = worst.max(ratio);
    }
    Ok(worst)
}

/// Viscosity, noise, step size and forcing of the constrained SPDE.
#[derive(Debug, Clone)]
pub struct SpdeParams {
    pub viscosity: f64,
    pub noise_amplitude: f64,
    pub dt: f64,
    pub forcing: ForcingSpec,
    pub project_each_step: bool,
}

impl SpdeParams {
    pub fn new(viscosity: f64, noise_amplitude: f64, dt: f64) -> Result<Self> {
        let p = Self {
            viscosity,
            noise_amplitude,
            dt,
            forcing: ForcingSpec::zero(),
            project_each_step: true,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_forcing(mut self, forcing: ForcingSpec) -> Self {
        self.forcing = forcing;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.viscosity > 0.0 && self.viscosity.is_finite()) {
            return Err(SgfmError::InvalidArgument(format!(
                "viscosity must be positive, got {}",
                self.viscosity
            )));
        }
        if !(self.noise_amplitude >= 0.0 && self.noise_amplitude.is_finite()) {
            return Err(SgfmError::InvalidArgument(format!(
                "noise amplitude must be non-negative, got {}",
                self.noise_amplitude
            )));
        }
        if !(self.dt >= 0.0 && self.dt.is_finite()) {
            return Err(SgfmError::InvalidArgument(format!("bad time step {}", self.dt)));
        }
        Ok(())
    }
}

/// `(v·∇)v` for every vector group, with spectral gradients.
pub fn advection(ws: &SpectralWorkspace, v: &Field) -> Result<Field> {
    let groups = v.vector_groups()?;
    let d = v.grid().ndim();
    let grad = ws.gradient(v)?; // channel (g*d + i)*d + a = ∂_a v_{g,i}
    let mut out = Field::zeros(*v.grid(), v.channels());
    for g in 0..groups {
        for i in 0..d {
            let dst = out.channel_mut(g * d + i);
            for a in 0..d {
                let va = v.channel(g * d + a);
                let dv = grad.channel((g * d + i) * d + a);
                dst.iter_mut()
                    .zip(va.iter().zip(dv))
                    .for_each(|(o, (x, y))| *o += x * y);
            }
        }
    }
    Ok(out)
}

/// `[J_A(u)]ᵀ g` for the advection map `A(u) = (u·∇)u`.
///
/// With the skew-symmetric spectral derivative this is
/// `(Σ_i g_i ∂_a u_i)_a - Σ_a ∂_a(u_a g_i)`.
pub fn advection_vjp(ws: &SpectralWorkspace, u: &Field, g: &Field) -> Result<Field> {
    let groups = u.vector_groups()?;
    u.check_same_shape(g)?;
    let d = u.grid().ndim();
    let grid = *u.grid();
    let grad = ws.gradient(u)?;
    let mut out = Field::zeros(grid, u.channels());
    for grp in 0..groups {
        for a in 0..d {
            let dst = out.channel_mut(grp * d + a);
            for i in 0..d {
                let gi = g.channel(grp * d + i);
                let dui = grad.channel((grp * d + i) * d + a);
                dst.iter_mut()
                    .zip(gi.iter().zip(dui))
                    .for_each(|(o, (x, y))| *o += x * y);
            }
        }
        for i in 0..d {
            let mut acc = vec![0.0; grid.len()];
            for a in 0..d {
                let prod: Vec<f64> = u
                    .channel(grp * d + a)
                    .iter()
                    .zip(g.channel(grp * d + i))
                    .map(|(x, y)| x * y)
                    .collect();
                let pf = Field::from_raw(grid, 1, prod);
                let dp = ws.partial(&pf, a)?;
                acc.iter_mut().zip(dp.data()).for_each(|(o, v)| *o += v);
            }
            out.channel_mut(grp * d + i)
                .iter_mut()
                .zip(&acc)
                .for_each(|(o, v)| *o -= v);
        }
    }
    Ok(out)
}

/// `P[-(u·∇)u + νΔu + f(u)]`, unprojected when `project_each_step` is off.
pub fn spde_rhs(ws: &SpectralWorkspace, u: &Field, p: &SpdeParams) -> Result<Field> {
    let mut rhs = advection(ws, u)?;
    rhs.scale(-1.0);
    if p.viscosity != 0.0 {
        rhs.axpy(p.viscosity, &ws.laplacian(u)?);
    }
    if !p.forcing.is_zero() {
        rhs.axpy(1.0, &p.forcing.eval(u)?);
    }
    if p.project_each_step {
        ws.helmholtz_project(&rhs)
    } else {
        Ok(rhs)
    }
}

/// Governing residual `(u_next - u_prev)/dt + (u·∇)u - νΔu - f(u)` with the
/// spatial terms taken at `u_prev`.
pub fn residual(ws: &SpectralWorkspace, u_prev: &Field, u_next: &Field, dt: f64, p: &SpdeParams) -> Result<Field> {
    if !(dt > 0.0) {
        return Err(SgfmError::InvalidArgument(format!("residual needs dt > 0, got {dt}")));
    }
    u_prev.check_same_shape(u_next)?;
    let mut r = u_next.sub(u_prev);
    r.scale(1.0 / dt);
    r.axpy(1.0, &advection(ws, u_prev)?);
    r.axpy(-p.viscosity, &ws.laplacian(u_prev)?);
    if !p.forcing.is_zero() {
        r.axpy(-1.0, &p.forcing.eval(u_prev)?);
    }
    Ok(r)
}

/// `‖P r‖²` in the weighted L² norm.
pub fn residual_energy(ws: &SpectralWorkspace, r: &Field) -> Result<f64> {
    Ok(l2_norm(&ws.helmholtz_project(r)?).powi(2))
}

/// Residual of the sampled state `u` against a previous snapshot, with the
/// spatial terms evaluated at `u` itself:
/// `(u - u_prev)/dt + (u·∇)u - νΔu - f(u)`.
pub fn state_residual(ws: &SpectralWorkspace, u_prev: &Field, u: &Field, dt: f64, p: &SpdeParams) -> Result<Field> {
    if !(dt > 0.0) {
        return Err(SgfmError::InvalidArgument(format!("residual needs dt > 0, got {dt}")));
    }
    u_prev.check_same_shape(u)?;
    let mut r = u.sub(u_prev);
    r.scale(1.0 / dt);
    r.axpy(1.0, &advection(ws, u)?);
    r.axpy(-p.viscosity, &ws.laplacian(u)?);
    if !p.forcing.is_zero() {
        r.axpy(-1.0, &p.forcing.eval(u)?);
    }
    Ok(r)
}

/// Physics energy `E(u) = ‖P R(u)‖²` of [`state_residual`] together with its
/// gradient with respect to the grid values of `u`.
pub fn physics_energy_and_grad(
    ws: &SpectralWorkspace,
    u_prev: &Field,
    u: &Field,
    dt: f64,
    p: &SpdeParams,
) -> Result<(f64, Field)> {
    let r = state_residual(ws, u_prev, u, dt, p)?;
    let pr = ws.helmholtz_project(&r)?;
    let energy = l2_norm(&pr).powi(2);
    // dE/dr = 2 w P r  (P symmetric and idempotent, w the cell volume)
    let g = pr.scaled(2.0 * u.grid().cell_volume());
    let mut grad = g.scaled(1.0 / dt);
    grad.axpy(1.0, &advection_vjp(ws, u, &g)?);
    grad.axpy(-p.viscosity, &ws.laplacian(&g)?);
    if !p.forcing.is_zero() {
        grad.axpy(-1.0, &p.forcing.vjp(u, &g)?);
    }
    Ok((energy, grad))
}

/// One Euler–Maruyama step
/// `u' = u + dt·rhs(u) + σ₀·√dt·ξ`, with `ξ` projected when the constraint
/// is active. The noise depends only on `(seed, step_index)`.
pub fn step_euler_maruyama(
    ws: &SpectralWorkspace,
    u: &Field,
    p: &SpdeParams,
    seed: u64,
    step_index: usize,
) -> Result<Field> {
    let mut next = u.clone();
    if p.dt > 0.0 {
        next.axpy(p.dt, &spde_rhs(ws, u, p)?);
    }
    if p.noise_amplitude > 0.0 && p.dt > 0.0 {
        let mut xi = gaussian_field(*u.grid(), u.channels(), derive_seed(seed, step_index as u64));
        if p.project_each_step {
            xi = ws.helmholtz_project(&xi)?;
        }
        next.axpy(p.noise_amplitude * p.dt.sqrt(), &xi);
    }
    if !next.is_finite() {
        return Err(SgfmError::Instability {
            step: step_index,
            detail: "state became non-finite".into(),
        });
    }
    Ok(next)
}

/// Relative divergence below which a state counts as already projected.
pub const SOLENOIDAL_TOL: f64 = 1e-11;

fn is_solenoidal(ws: &SpectralWorkspace, u: &Field) -> Result<bool> {
    let div = ws.divergence(u)?.max_abs();
    Ok(div <= SOLENOIDAL_TOL * u.max_abs().max(1.0))
}

/// Integrates `steps` Euler–Maruyama steps from `u0`.
///
/// With the constraint active a divergent initial state is projected first,
/// so every stored snapshot is divergence-free. Restarting from any stored
/// snapshot continues the same trajectory bit for bit.
pub fn simulate(u0: &Field, p: &SpdeParams, steps: usize, seed: u64) -> Result<Trajectory> {
    let ws = SpectralWorkspace::new(*u0.grid());
    simulate_with(&ws, u0, p, steps, seed)
}

pub fn simulate_with(ws: &SpectralWorkspace, u0: &Field, p: &SpdeParams, steps: usize, seed: u64) -> Result<Trajectory> {
    p.validate()?;
    if steps == 0 {
        return Err(SgfmError::InvalidArgument("simulate needs at least one step".into()));
    }
    if !(p.dt > 0.0) {
        return Err(SgfmError::InvalidArgument("simulate needs dt > 0".into()));
    }
    u0.vector_groups()?;
    // re-projecting an already solenoidal state would perturb it at round-off
    // level and break restartability
    let start = if p.project_each_step && !is_solenoidal(ws, u0)? {
        ws.helmholtz_project(u0)?
    } else {
        u0.clone()
    };
    let mut traj = Trajectory::new(p.dt, 0.0, start)?;
    for k in 0..steps {
        let next = step_euler_maruyama(ws, traj.last(), p, seed, k)?;
        traj.push(next)?;
    }
    Ok(traj)
}

/// Terms of the energy inequality
/// `‖u(t)‖² + 2ν∫‖∇u‖² ≤ ‖u0‖² + C t + ‖σ‖²_HS t` along one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub times: Vec<f64>,
    pub kinetic_energy: Vec<f64>,
    pub enstrophy: Vec<f64>,
    /// Trapezoid-rule `∫₀ᵗ ‖∇u‖²`.
    pub enstrophy_integral: Vec<f64>,
    pub lhs: Vec<f64>,
    pub bound_rhs: Vec<f64>,
    /// Surrogate `C = 2 sup_t ‖f(u)‖ ‖u‖`.
    pub forcing_constant: f64,
    /// `σ₀² · N · channels · cell volume`.
    pub noise_hs_sq: f64,
}

impl EnergyReport {
    /// Times at which `lhs > rhs (1 + rtol)`.
    pub fn violations(&self, rtol: f64) -> Vec<f64> {
        self.times
            .iter()
            .zip(self.lhs.iter().zip(&self.bound_rhs))
            .filter(|(_, (l, r))| **l > **r * (1.0 + rtol))
            .map(|(t, _)| *t)
            .collect()
    }

    /// Entry-wise mean of reports on a common time grid (Monte-Carlo estimate
    /// of the expectations).
    pub fn mean(reports: &[EnergyReport]) -> Result<EnergyReport> {
        let first = reports
            .first()
            .ok_or_else(|| SgfmError::InvalidArgument("no reports to average".into()))?;
        if reports.iter().any(|r| r.times != first.times) {
            return Err(SgfmError::Shape("reports use different time grids".into()));
        }
        let k = reports.len() as f64;
        let avg = |sel: fn(&EnergyReport) -> &Vec<f64>| -> Vec<f64> {
            (0..first.times.len())
                .map(|i| reports.iter().map(|r| sel(r)[i]).sum::<f64>() / k)
                .collect()
        };
        Ok(EnergyReport {
            times: first.times.clone(),
            kinetic_energy: avg(|r| &r.kinetic_energy),
            enstrophy: avg(|r| &r.enstrophy),
            enstrophy_integral: avg(|r| &r.enstrophy_integral),
            lhs: avg(|r| &r.lhs),
            bound_rhs: avg(|r| &r.bound_rhs),
            forcing_constant: reports.iter().map(|r| r.forcing_constant).sum::<f64>() / k,
            noise_hs_sq: first.noise_hs_sq,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,kinetic_energy,enstrophy,enstrophy_integral,lhs,bound_rhs\n");
        for i in 0..self.times.len() {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.times[i],
                self.kinetic_energy[i],
                self.enstrophy[i],
                self.enstrophy_integral[i],
                self.lhs[i],
                self.bound_rhs[i]
            ));
        }
        s
    }
}

pub fn energy_diagnostics(traj: &Trajectory, p: &SpdeParams) -> Result<EnergyReport> {
    let grid = *traj.first().grid();
    let ws = SpectralWorkspace::new(grid);
    let mut kinetic = Vec::with_capacity(traj.len());
    let mut enstrophy = Vec::with_capacity(traj.len());
    let mut sup: f64 = 0.0;
    for u in traj.snapshots() {
        let e = l2_norm(u).powi(2);
        kinetic.push(e);
        enstrophy.push(l2_norm(&ws.gradient(u)?).powi(2));
        if !p.forcing.is_zero() {
            sup = sup.max(l2_norm(&p.forcing.eval(u)?) * e.sqrt());
        }
    }
    let c = 2.0 * sup;
    let channels = traj.first().channels();
    let hs = p.noise_amplitude.powi(2) * (grid.len() * channels) as f64 * grid.cell_volume();
    let times = traj.times().to_vec();
    let mut integral = vec![0.0; times.len()];
    for i in 1..times.len() {
        integral[i] = integral[i - 1] + 0.5 * (times[i] - times[i - 1]) * (enstrophy[i] + enstrophy[i - 1]);
    }
    let t0 = times[0];
    let lhs = kinetic
        .iter()
        .zip(&integral)
        .map(|(k, i)| k + 2.0 * p.viscosity * i)
        .collect();
    let rhs = times
        .iter()
        .map(|t| kinetic[0] + (c + hs) * (t - t0))
        .collect();
    Ok(EnergyReport {
        times,
        kinetic_energy: kinetic,
        enstrophy,
        enstrophy_integral: integral,
        lhs,
        bound_rhs: rhs,
        forcing_constant: c,
        noise_hs_sq: hs,
    })
}

/// Weighted L² norms of `∂_t ω + u·∇ω - νΔω - curl f` between consecutive
/// snapshots of a 2D trajectory: forward difference in time, spatial terms at
/// the mean of the two snapshots.
pub fn vorticity_transport_residual(traj: &Trajectory, p: &SpdeParams) -> Result<Vec<f64>> {
    let grid = *traj.first().grid();
    if grid.ndim() != 2 {
        return Err(SgfmError::InvalidArgument("vorticity transport is 2D only".into()));
    }
    let ws = SpectralWorkspace::new(grid);
    let dt = traj.dt();
    let snaps = traj.snapshots();
    let mut out = Vec::with_capacity(snaps.len().saturating_sub(1));
    let mut w_prev = ws.vorticity2d(&snaps[0])?;
    for k in 0..snaps.len() - 1 {
        let u = snaps[k].add(&snaps[k + 1]).scaled(0.5);
        let u = &u;
        let w_next = ws.vorticity2d(&snaps[k + 1])?;
        let mut r = w_next.sub(&w_prev);
        r.scale(1.0 / dt);
        let w_mid = w_prev.add(&w_next).scaled(0.5);
        let gw = ws.gradient(&w_mid)?;
        let groups = u.vector_groups()?;
        for g in 0..groups {
            let dst = r.channel_mut(g);
            for a in 0..2 {
                dst.iter_mut()
                    .zip(u.channel(2 * g + a).iter().zip(gw.channel(2 * g + a)))
                    .for_each(|(o, (x, y))| *o += x * y);
            }
        }
        r.axpy(-p.viscosity, &ws.laplacian(&w_mid)?);
        if !p.forcing.is_zero() {
            r.axpy(-1.0, &ws.vorticity2d(&p.forcing.eval(u)?)?);
        }
        out.push(l2_norm(&r));
        w_prev = w_next;
    }
    Ok(out)
}

/// Least-squares fit of `ln d(t) = ln C + λ t`; returns `(C, λ)`.
pub fn fit_exponential_rate(times: &[f64], distances: &[f64]) -> Result<(f64, f64)> {
    if times.len() != distances.len() || times.len() < 2 {
        return Err(SgfmError::InvalidArgument("need at least two matching samples".into()));
    }
    if distances.iter().any(|d| !(*d > 0.0)) {
        return Err(SgfmError::InvalidArgument("distances must be positive".into()));
    }
    let ys: Vec<f64> = distances.iter().map(|d| d.ln()).collect();
    let (slope, intercept) = linear_fit(times, &ys);
    Ok((intercept.exp(), slope))
}

/// Ordinary least squares `y ≈ slope x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Distance `‖u_t - v_t‖` between two trajectories driven by the same noise
/// from `u0` and `u0 + delta`, and the fitted exponential rate.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    pub prefactor: f64,
    pub rate: f64,
}

pub fn stability_rate(u0: &Field, delta: &Field, p: &SpdeParams, steps: usize, seed: u64) -> Result<StabilityReport> {
    let ws = SpectralWorkspace::new(*u0.grid());
    let a = simulate_with(&ws, u0, p, steps, seed)?;
    let b = simulate_with(&ws, &u0.add(delta), p, steps, seed)?;
    let distances: Vec<f64> = a
        .snapshots()
        .iter()
        .zip(b.snapshots())
        .map(|(x, y)| l2_norm(&x.sub(y)))
        .collect();
    let (prefactor, rate) = fit_exponential_rate(a.times(), &distances)?;
    Ok(StabilityReport {
        times: a.times().to_vec(),
        distances,
        prefactor,
        rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::make_grid;
    use crate::training::taylor_green;

    fn ws(n: usize) -> SpectralWorkspace {
        SpectralWorkspace::new(make_grid(2, n).unwrap())
    }

    #[test]
    fn advection_cases() {
        let w = ws(32);
        let g = *w.grid();
        let c = Field::from_fn(g, 2, |c, _| 1.0 + c as f64);
        assert!(advection(&w, &c).unwrap().max_abs() < 1e-12);

        let tg = taylor_green(&g, 0.1, 0.0).unwrap();
        let adv = advection(&w, &tg).unwrap();
        assert!(w.helmholtz_project(&adv).unwrap().max_abs() < 1e-8);
        // (u·∇)u = ½(sin 2x, sin 2y) for Taylor–Green
        let expect = Field::from_fn(g, 2, |c, x| 0.5 * (2.0 * x[c]).sin());
        assert!(adv.sub(&expect).max_abs() < 1e-10);

        let v = gaussian_field(g, 2, 3);
        let a = 2.5;
        let lhs = advection(&w, &v.scaled(a)).unwrap();
        let rhs = advection(&w, &v).unwrap().scaled(a * a);
        assert!(lhs.sub(&rhs).grid_norm() / rhs.grid_norm() < 1e-10);
        assert!(advection(&w, &Field::zeros(g, 3)).is_err());
    }

    #[test]
    fn rhs_cases() {
        let w = ws(32);
        let g = *w.grid();
        let nu = 0.1;
        let p = SpdeParams::new(nu, 0.0, 1e-3).unwrap();
        let tg = taylor_green(&g, nu, 0.0).unwrap();
        let rhs = spde_rhs(&w, &tg, &p).unwrap();
        assert!(rhs.sub(&tg.scaled(-2.0 * nu)).max_abs() < 1e-8);
        assert!(spde_rhs(&w, &Field::zeros(g, 2), &p).unwrap().max_abs() == 0.0);

        let mut q = p.clone();
        q.project_each_step = false;
        q.viscosity = 0.0;
        let u = Field::from_fn(g, 2, |c, x| if c == 0 { x[0].cos() } else { 0.0 });
        let rhs = spde_rhs(&w, &u, &q).unwrap();
        assert_eq!(rhs, advection(&w, &u).unwrap().scaled(-1.0));

        let noisy = gaussian_field(g, 2, 8);
        let f = p.clone().with_forcing(ForcingSpec::analytic(AnalyticForcing::Kolmogorov, vec![1.0, 2.0]));
        assert!(w.divergence(&spde_rhs(&w, &noisy, &f).unwrap()).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn residual_cases() {
        let w = ws(32);
        let g = *w.grid();
        let nu = 0.1;
        let p = SpdeParams::new(nu, 0.0, 1e-3).unwrap();
        let rel = |dt: f64| {
            let a = taylor_green(&g, nu, 0.3).unwrap();
            let b = taylor_green(&g, nu, 0.3 + dt).unwrap();
            let r = residual(&w, &a, &b, dt, &p).unwrap();
            residual_energy(&w, &r).unwrap().sqrt() / l2_norm(&a)
        };
        let (r1, r2) = (rel(1e-2), rel(5e-3));
        let ratio = r1 / r2;
        assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
        assert!(r1 < 2.0 * 1e-2 * nu * nu * 4.0);

        let c = Field::from_fn(g, 2, |c, _| c as f64 - 0.5);
        assert!(residual(&w, &c, &c, 0.1, &p).unwrap().max_abs() < 1e-12);
        assert!(residual(&w, &c, &c, 0.0, &p).is_err());

        // manufactured source cancels the residual
        let u0 = w.helmholtz_project(&w.band_limit(&gaussian_field(g, 2, 1), 4).unwrap()).unwrap();
        let u1 = u0.scaled(0.98);
        let mut f = u1.sub(&u0).scaled(1.0 / 0.01);
        f.axpy(1.0, &advection(&w, &u0).unwrap());
        f.axpy(-nu, &w.laplacian(&u0).unwrap());
        let q = p.clone().with_forcing(ForcingSpec::prescribed(f));
        assert!(residual(&w, &u0, &u1, 0.01, &q).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn euler_maruyama_cases() {
        let w = ws(32);
        let g = *w.grid();
        let nu = 0.1;
        let dt = 1e-3;
        let p = SpdeParams::new(nu, 0.0, dt).unwrap();
        let tg = taylor_green(&g, nu, 0.0).unwrap();
        let next = step_euler_maruyama(&w, &tg, &p, 0, 0).unwrap();
        assert!(next.sub(&tg.scaled(1.0 - 2.0 * nu * dt)).max_abs() < 1e-8);

        let mut z = p.clone();
        z.dt = 0.0;
        assert_eq!(step_euler_maruyama(&w, &tg, &z, 0, 0).unwrap(), tg);

        let mut s = p.clone();
        s.noise_amplitude = 0.05;
        let a = step_euler_maruyama(&w, &tg, &s, 9, 4).unwrap();
        let b = step_euler_maruyama(&w, &tg, &s, 9, 4).unwrap();
        assert_eq!(a.data(), b.data());
        let c = step_euler_maruyama(&w, &tg, &s, 9, 5).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn blow_up_names_the_step() {
        let w = ws(16);
        let g = *w.grid();
        let p = SpdeParams::new(0.1, 0.0, 10.0).unwrap();
        let u = gaussian_field(g, 2, 1).scaled(50.0);
        match simulate_with(&w, &u, &p, 200, 0) {
            Err(SgfmError::Instability { step, .. }) => assert!(step < 200),
            other => panic!("expected instability, got {other:?}"),
        }
    }

    #[test]
    fn simulate_cases() {
        let g = make_grid(2, 32).unwrap();
        let nu = 0.1;
        let p = SpdeParams::new(nu, 0.0, 1e-3).unwrap();
        let tg = taylor_green(&g, nu, 0.0).unwrap();
        let traj = simulate(&tg, &p, 100, 0).unwrap();
        assert_eq!(traj.len(), 101);
        let ratio = l2_norm(traj.last()) / l2_norm(&tg);
        let expect = (-2.0 * nu * 0.1f64).exp();
        assert!((ratio - expect).abs() / expect < 0.01);

        let zero = simulate(&Field::zeros(g, 2), &p, 10, 0).unwrap();
        assert!(zero.snapshots().iter().all(|s| s.max_abs() == 0.0));
        assert!(simulate(&tg, &p, 0, 0).is_err());

        let report = energy_diagnostics(&traj, &p).unwrap();
        assert!(report.kinetic_energy.windows(2).all(|w| w[1] <= w[0]));
        let e_ratio = report.kinetic_energy.last().unwrap() / report.kinetic_energy[0];
        let e_expect = (-4.0 * nu * 0.1f64).exp();
        assert!((e_ratio - e_expect).abs() / e_expect < 0.01);
        assert!(report.violations(1e-12).is_empty());
    }

    #[test]
    fn semigroup_is_bit_exact() {
        let g = make_grid(2, 16).unwrap();
        let p = SpdeParams::new(0.05, 0.0, 2e-3).unwrap();
        let u0 = w_project(&gaussian_field(g, 2, 4));
        let full = simulate(&u0, &p, 20, 1).unwrap();
        let half = simulate(&u0, &p, 10, 1).unwrap();
        let rest = simulate(half.last(), &p, 10, 1).unwrap();
        assert_eq!(full.last().data(), rest.last().data());
    }

    fn w_project(f: &Field) -> Field {
        SpectralWorkspace::new(*f.grid()).helmholtz_project(f).unwrap()
    }

    #[test]
    fn projected_trajectories_stay_divergence_free() {
        let g = make_grid(2, 16).unwrap();
        let w = SpectralWorkspace::new(g);
        let p = SpdeParams::new(0.1, 0.2, 1e-3)
            .unwrap()
            .with_forcing(ForcingSpec::analytic(AnalyticForcing::Kolmogorov, vec![0.5, 1.0]));
        let traj = simulate(&gaussian_field(g, 2, 2), &p, 50, 3).unwrap();
        for s in traj.snapshots() {
            assert!(w.divergence(s).unwrap().max_abs() < 1e-8);
        }
    }

    #[test]
    fn vorticity_transport_is_first_order() {
        let g = make_grid(2, 32).unwrap();
        let nu = 0.1;
        let run = |dt: f64, steps: usize| {
            let p = SpdeParams::new(nu, 0.0, dt).unwrap();
            let u0 = taylor_green(&g, nu, 0.0).unwrap().add(&w_project(
                &SpectralWorkspace::new(g).band_limit(&gaussian_field(g, 2, 5), 3).unwrap(),
            ).scaled(0.05));
            let traj = simulate(&u0, &p, steps, 0).unwrap();
            let r = vorticity_transport_residual(&traj, &p).unwrap();
            r.iter().cloned().fold(0.0, f64::max)
        };
        let a = run(2e-3, 25);
        let b = run(1e-3, 50);
        let ratio = a / b;
        assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn linear_forcing_vjp_matches_adjoint() {
        let g = make_grid(2, 8).unwrap();
        let lf = LinearForcing {
            matrix: vec![vec![0.3, -1.0], vec![0.5, 0.2]],
            bias: vec![0.1, -0.2],
        };
        let spec = ForcingSpec {
            kind: ForcingKind::Learned(Arc::new(lf)),
            lambda: vec![],
        };
        let u = gaussian_field(g, 2, 1);
        let x = gaussian_field(g, 2, 2);
        let y = gaussian_field(g, 2, 3);
        let zero = Field::zeros(g, 2);
        let jx = spec.eval(&x).unwrap().sub(&spec.eval(&zero).unwrap());
        let lhs = jx.dot(&y);
        let rhs = x.dot(&spec.vjp(&u, &y).unwrap());
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
        let lip = probe_lipschitz(&spec, g, 2, 8, 0).unwrap();
        assert!(lip.is_finite() && lip < 1.5);
    }

    #[test]
    fn advection_vjp_matches_finite_differences() {
        let w = ws(8);
        let g = *w.grid();
        let u = gaussian_field(g, 2, 1);
        let dir = gaussian_field(g, 2, 2);
        let cot = gaussian_field(g, 2, 3);
        let h = 1e-6;
        let fd = advection(&w, &u.add(&dir.scaled(h)))
            .unwrap()
            .sub(&advection(&w, &u.sub(&dir.scaled(h))).unwrap())
            .scaled(0.5 / h);
        let lhs: f64 = fd.data().iter().zip(cot.data()).map(|(a, b)| a * b).sum();
        let vjp = advection_vjp(&w, &u, &cot).unwrap();
        let rhs: f64 = vjp.data().iter().zip(dir.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() / lhs.abs() < 1e-6, "{lhs} vs {rhs}");
    }

    #[test]
    fn exponential_fit_recovers_rate() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let d: Vec<f64> = t.iter().map(|t| 3.0 * (-1.5 * t).exp()).collect();
        let (c, l) = fit_exponential_rate(&t, &d).unwrap();
        assert!((c - 3.0).abs() < 1e-10 && (l + 1.5).abs() < 1e-10);
        assert!(fit_exponential_rate(&t, &[0.0; 20]).is_err());
    }
}
