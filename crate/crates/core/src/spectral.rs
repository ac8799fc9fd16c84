//! Spectral differential operators, the Helmholtz–Hodge projection and
//! power-iteration operator norms.
//!
//! First derivatives use the wavenumber lattice with the Nyquist entry zeroed
//! so real fields stay real; the Laplacian keeps the full `-|k|²` multiplier.
//! The projection is built from the same zero-Nyquist lattice as the
//! divergence, which makes `div ∘ P` vanish to round-off.

use rustfft::num_complex::Complex64;

use crate::error::{Result, SgfmError};
use crate::fft::FftNd;
use crate::field::{gaussian_field, Field, Grid};
use crate::rng::derive_seed;
use crate::wavelet::{forward_pyramid, inverse_pyramid, WaveletFamily};

/// Cached FFT plans and wavenumber tables for one grid.
#[derive(Debug, Clone)]
pub struct SpectralWorkspace {
    grid: Grid,
    fft: FftNd,
    /// Derivative wavenumbers, `ndim` per mode, Nyquist zeroed.
    kd: Vec<f64>,
    /// `|kd|²` per mode.
    kd_sq: Vec<f64>,
    /// Full `|k|²` per mode (Nyquist kept as `-n/2`).
    k_sq: Vec<f64>,
}

/// Signed integer wavenumber of FFT index `i` on an `n`-point axis.
pub fn wavenumber(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

impl SpectralWorkspace {
    pub fn new(grid: Grid) -> Self {
        let d = grid.ndim();
        let n = grid.n();
        let len = grid.len();
        let mut kd = vec![0.0; len * d];
        let mut kd_sq = vec![0.0; len];
        let mut k_sq = vec![0.0; len];
        for i in 0..len {
            for a in 0..d {
                let ia = grid.axis_index(i, a);
                let k = wavenumber(ia, n) as f64;
                k_sq[i] += k * k;
                let kdv = if ia == n / 2 { 0.0 } else { k };
                kd[i * d + a] = kdv;
                kd_sq[i] += kdv * kdv;
            }
        }
        Self {
            grid,
            fft: FftNd::new(grid),
            kd,
            kd_sq,
            k_sq,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn fft(&self) -> &FftNd {
        &self.fft
    }

    fn check_grid(&self, f: &Field) -> Result<()> {
        if *f.grid() != self.grid {
            return Err(SgfmError::Shape(format!(
                "field grid {:?} does not match workspace grid {:?}",
                f.grid(),
                self.grid
            )));
        }
        Ok(())
    }

    fn spectra(&self, f: &Field) -> Vec<Vec<Complex64>> {
        (0..f.channels())
            .map(|c| self.fft.forward_real(f.channel(c)))
            .collect()
    }

    fn assemble(&self, spectra: Vec<Vec<Complex64>>) -> Field {
        let len = self.grid.len();
        let channels = spectra.len();
        let mut data = Vec::with_capacity(channels * len);
        for s in spectra {
            data.extend(self.fft.inverse_real(s));
        }
        Field::from_raw(self.grid, channels, data)
    }

    /// Per-channel gradient; output channel `c * ndim + a` holds `∂_a f_c`.
    pub fn gradient(&self, f: &Field) -> Result<Field> {
        self.check_grid(f)?;
        let d = self.grid.ndim();
        let mut out = Vec::with_capacity(f.channels() * d);
        for s in self.spectra(f) {
            for a in 0..d {
                let g = s
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v * Complex64::new(0.0, self.kd[i * d + a]))
                    .collect();
                out.push(g);
            }
        }
        Ok(self.assemble(out))
    }

    /// `∂_axis` of every channel.
    pub fn partial(&self, f: &Field, axis: usize) -> Result<Field> {
        self.check_grid(f)?;
        let d = self.grid.ndim();
        let out = self
            .spectra(f)
            .into_iter()
            .map(|s| {
                s.iter()
                    .enumerate()
                    .map(|(i, v)| v * Complex64::new(0.0, self.kd[i * d + axis]))
                    .collect()
            })
            .collect();
        Ok(self.assemble(out))
    }

    pub fn laplacian(&self, f: &Field) -> Result<Field> {
        self.check_grid(f)?;
        let out = self
            .spectra(f)
            .into_iter()
            .map(|s| s.iter().zip(&self.k_sq).map(|(v, k2)| v * -k2).collect())
            .collect();
        Ok(self.assemble(out))
    }

    /// Divergence of each vector group; one scalar channel per group.
    pub fn divergence(&self, v: &Field) -> Result<Field> {
        self.check_grid(v)?;
        let groups = v.vector_groups()?;
        let d = self.grid.ndim();
        let len = self.grid.len();
        let spectra = self.spectra(v);
        let out = (0..groups)
            .map(|g| {
                let mut acc = vec![Complex64::default(); len];
                for a in 0..d {
                    for (i, (o, s)) in acc.iter_mut().zip(&spectra[g * d + a]).enumerate() {
                        *o += s * Complex64::new(0.0, self.kd[i * d + a]);
                    }
                }
                acc
            })
            .collect();
        Ok(self.assemble(out))
    }

    /// Scalar curl `∂_x v_y - ∂_y v_x` of each 2D vector group.
    pub fn vorticity2d(&self, v: &Field) -> Result<Field> {
        self.check_grid(v)?;
        if self.grid.ndim() != 2 {
            return Err(SgfmError::InvalidArgument(
                "vorticity2d needs a 2D grid".into(),
            ));
        }
        let groups = v.vector_groups()?;
        let spectra = self.spectra(v);
        let out = (0..groups)
            .map(|g| {
                let (vx, vy) = (&spectra[2 * g], &spectra[2 * g + 1]);
                (0..self.grid.len())
                    .map(|i| {
                        let (kx, ky) = (self.kd[2 * i], self.kd[2 * i + 1]);
                        Complex64::new(0.0, kx) * vy[i] - Complex64::new(0.0, ky) * vx[i]
                    })
                    .collect()
            })
            .collect();
        Ok(self.assemble(out))
    }

    /// Leray projection `(I - k kᵀ/|k|²) v̂(k)`; modes with `|k| = 0` pass through.
    pub fn helmholtz_project(&self, v: &Field) -> Result<Field> {
        self.check_grid(v)?;
        let groups = v.vector_groups()?;
        let d = self.grid.ndim();
        let mut spectra = self.spectra(v);
        for g in 0..groups {
            let comps = &mut spectra[g * d..(g + 1) * d];
            for i in 0..self.grid.len() {
                let k2 = self.kd_sq[i];
                if k2 == 0.0 {
                    continue;
                }
                let k = &self.kd[i * d..(i + 1) * d];
                let mut kv = Complex64::default();
                for a in 0..d {
                    kv += comps[a][i] * k[a];
                }
                let kv = kv / k2;
                for a in 0..d {
                    comps[a][i] -= kv * k[a];
                }
            }
        }
        Ok(self.assemble(spectra))
    }

    /// Zeros every Fourier mode whose largest axis wavenumber exceeds `kmax`.
    pub fn band_limit(&self, f: &Field, kmax: usize) -> Result<Field> {
        self.check_grid(f)?;
        let d = self.grid.ndim();
        let n = self.grid.n();
        let out = self
            .spectra(f)
            .into_iter()
            .map(|mut s| {
                for (i, v) in s.iter_mut().enumerate() {
                    let over = (0..d).any(|a| {
                        wavenumber(self.grid.axis_index(i, a), n).unsigned_abs() as usize > kmax
                    });
                    if over {
                        *v = Complex64::default();
                    }
                }
                s
            })
            .collect();
        Ok(self.assemble(out))
    }

    /// Fraction of spectral energy in modes with max axis wavenumber above `kmax`.
    pub fn energy_above(&self, f: &Field, kmax: usize) -> Result<f64> {
        self.check_grid(f)?;
        let d = self.grid.ndim();
        let n = self.grid.n();
        let (mut hi, mut total) = (0.0, 0.0);
        for s in self.spectra(f) {
            for (i, v) in s.iter().enumerate() {
                let e = v.norm_sqr();
                total += e;
                if (0..d).any(|a| wavenumber(self.grid.axis_index(i, a), n).unsigned_abs() as usize > kmax) {
                    hi += e;
                }
            }
        }
        Ok(if total > 0.0 { hi / total } else { 0.0 })
    }
}

pub fn gradient(f: &Field) -> Result<Field> {
    SpectralWorkspace::new(*f.grid()).gradient(f)
}

pub fn laplacian(f: &Field) -> Result<Field> {
    SpectralWorkspace::new(*f.grid()).laplacian(f)
}

pub fn divergence(v: &Field) -> Result<Field> {
    SpectralWorkspace::new(*v.grid()).divergence(v)
}

pub fn vorticity2d(v: &Field) -> Result<Field> {
    SpectralWorkspace::new(*v.grid()).vorticity2d(v)
}

pub fn helmholtz_project(v: &Field) -> Result<Field> {
    SpectralWorkspace::new(*v.grid()).helmholtz_project(v)
}

/// Linear map between fields with a known adjoint (in the grid-sum inner
/// product), as needed by power iteration.
pub trait LinearOperator: Sync {
    fn name(&self) -> &str;
    fn grid(&self) -> &Grid;
    fn input_channels(&self) -> usize;
    fn apply(&self, x: &Field) -> Result<Field>;
    fn apply_adjoint(&self, y: &Field) -> Result<Field>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralOperatorKind {
    /// Scalar → vector gradient.
    Gradient,
    /// Scalar Laplacian.
    Laplacian,
    /// Helmholtz–Hodge projection of one vector field.
    Projection,
}

/// One of the spectral operators bound to a workspace.
pub struct SpectralOperator {
    kind: SpectralOperatorKind,
    ws: SpectralWorkspace,
}

impl SpectralOperator {
    pub fn new(kind: SpectralOperatorKind, grid: Grid) -> Self {
        Self {
            kind,
            ws: SpectralWorkspace::new(grid),
        }
    }
}

impl LinearOperator for SpectralOperator {
    fn name(&self) -> &str {
        match self.kind {
            SpectralOperatorKind::Gradient => "gradient",
            SpectralOperatorKind::Laplacian => "laplacian",
            SpectralOperatorKind::Projection => "projection",
        }
    }

    fn grid(&self) -> &Grid {
        self.ws.grid()
    }

    fn input_channels(&self) -> usize {
        match self.kind {
            SpectralOperatorKind::Projection => self.ws.grid().ndim(),
            _ => 1,
        }
    }

    fn apply(&self, x: &Field) -> Result<Field> {
        match self.kind {
            SpectralOperatorKind::Gradient => self.ws.gradient(x),
            SpectralOperatorKind::Laplacian => self.ws.laplacian(x),
            SpectralOperatorKind::Projection => self.ws.helmholtz_project(x),
        }
    }

    fn apply_adjoint(&self, y: &Field) -> Result<Field> {
        match self.kind {
            // the zero-Nyquist derivative is skew-symmetric
            SpectralOperatorKind::Gradient => Ok(self.ws.divergence(y)?.scaled(-1.0)),
            SpectralOperatorKind::Laplacian => self.ws.laplacian(y),
            SpectralOperatorKind::Projection => self.ws.helmholtz_project(y),
        }
    }
}

/// `W · op · W⁻¹`: an operator expressed in wavelet coordinates, with
/// coefficients carried in the in-place pyramid layout.
pub struct WaveletConjugated<'a> {
    op: &'a dyn LinearOperator,
    family: WaveletFamily,
    levels: usize,
}

impl<'a> WaveletConjugated<'a> {
    pub fn new(op: &'a dyn LinearOperator, family: WaveletFamily, levels: usize) -> Self {
        Self { op, family, levels }
    }
}

impl LinearOperator for WaveletConjugated<'_> {
    fn name(&self) -> &str {
        self.op.name()
    }

    fn grid(&self) -> &Grid {
        self.op.grid()
    }

    fn input_channels(&self) -> usize {
        self.op.input_channels()
    }

    fn apply(&self, c: &Field) -> Result<Field> {
        let u = inverse_pyramid(c, self.family, self.levels)?;
        forward_pyramid(&self.op.apply(&u)?, self.family, self.levels)
    }

    fn apply_adjoint(&self, c: &Field) -> Result<Field> {
        let u = inverse_pyramid(c, self.family, self.levels)?;
        forward_pyramid(&self.op.apply_adjoint(&u)?, self.family, self.levels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Relative tolerance on successive estimates for early termination.
pub const POWER_ITERATION_TOL: f64 = 1e-6;
pub const POWER_ITERATION_CAP: usize = 200;

/// Largest singular value of `op` by power iteration on `opᵀ op`.
///
/// Linearity is probed first on random inputs; an operator that fails the
/// probe is rejected. Hitting the iteration cap returns the last estimate
/// with `converged = false`.
pub fn estimate_operator_norm(
    op: &dyn LinearOperator,
    iterations: usize,
    seed: u64,
) -> Result<NormEstimate> {
    let grid = *op.grid();
    let ch = op.input_channels();

    let x = gaussian_field(grid, ch, derive_seed(seed, 1));
    let y = gaussian_field(grid, ch, derive_seed(seed, 2));
    let (a, b) = (0.7, -1.3);
    let mut comb = x.scaled(a);
    comb.axpy(b, &y);
    let lhs = op.apply(&comb)?;
    let mut rhs = op.apply(&x)?.scaled(a);
    rhs.axpy(b, &op.apply(&y)?);
    let defect = lhs.sub(&rhs).grid_norm() / rhs.grid_norm().max(lhs.grid_norm()).max(1e-300);
    if defect > 1e-8 {
        return Err(SgfmError::InvalidArgument(format!(
            "operator {} failed the linearity probe (defect {defect:e})",
            op.name()
        )));
    }

    let mut v = gaussian_field(grid, ch, derive_seed(seed, 0));
    v.scale(1.0 / v.grid_norm());
    let mut estimate = 0.0;
    for it in 1..=iterations {
        let w = op.apply_adjoint(&op.apply(&v)?)?;
        let wn = w.grid_norm();
        let next = wn.sqrt();
        if wn == 0.0 {
            return Ok(NormEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            });
        }
        v = w.scaled(1.0 / wn);
        let change = (next - estimate).abs() / next;
        estimate = next;
        if change < POWER_ITERATION_TOL {
            return Ok(NormEstimate {
                value: estimate,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(NormEstimate {
        value: estimate,
        iterations,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{l2_norm, make_grid};
    use proptest::prelude::*;

    fn tg(g: Grid) -> Field {
        Field::from_fn(g, 2, |c, x| {
            if c == 0 {
                x[0].sin() * x[1].cos()
            } else {
                -x[0].cos() * x[1].sin()
            }
        })
    }

    fn max_diff(a: &Field, b: &Field) -> f64 {
        a.sub(b).max_abs()
    }

    #[test]
    fn gradient_of_analytic_fields() {
        let g = make_grid(2, 32).unwrap();
        let ws = SpectralWorkspace::new(g);
        let s = Field::from_fn(g, 1, |_, x| x[0].sin());
        let grad = ws.gradient(&s).unwrap();
        let cos = Field::from_fn(g, 1, |_, x| x[0].cos());
        assert!(max_diff(&Field::from_vec(g, 1, grad.channel(0).to_vec()).unwrap(), &cos) < 1e-10);
        assert!(grad.channel(1).iter().all(|v| v.abs() < 1e-10));

        let f = Field::from_fn(g, 1, |_, x| (3.0 * x[0]).sin() * (2.0 * x[1]).cos());
        let dx = ws.partial(&f, 0).unwrap();
        let expect = Field::from_fn(g, 1, |_, x| 3.0 * (3.0 * x[0]).cos() * (2.0 * x[1]).cos());
        assert!(max_diff(&dx, &expect) < 1e-10);

        let c = Field::from_fn(g, 1, |_, _| 4.2);
        assert!(ws.gradient(&c).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn laplacian_eigenfunctions() {
        let g = make_grid(2, 16).unwrap();
        let s = Field::from_fn(g, 1, |_, x| x[0].sin());
        assert!(max_diff(&laplacian(&s).unwrap(), &s.scaled(-1.0)) < 1e-10);
        let sc = Field::from_fn(g, 1, |_, x| x[0].sin() * x[1].cos());
        assert!(max_diff(&laplacian(&sc).unwrap(), &sc.scaled(-2.0)) < 1e-10);
        let c = Field::from_fn(g, 1, |_, _| 1.0);
        assert!(laplacian(&c).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn divergence_cases() {
        let g = make_grid(2, 32).unwrap();
        assert!(divergence(&tg(g)).unwrap().max_abs() < 1e-10);
        let v = Field::from_fn(g, 2, |c, x| if c == 0 { x[0].cos() } else { 0.0 });
        let expect = Field::from_fn(g, 1, |_, x| -x[0].sin());
        assert!(max_diff(&divergence(&v).unwrap(), &expect) < 1e-10);
        let k = Field::from_fn(g, 2, |c, _| c as f64 + 1.0);
        assert!(divergence(&k).unwrap().max_abs() < 1e-12);
        assert!(divergence(&Field::zeros(g, 3)).is_err());
    }

    #[test]
    fn vorticity_cases() {
        let g = make_grid(2, 32).unwrap();
        let w = vorticity2d(&tg(g)).unwrap();
        let expect = Field::from_fn(g, 1, |_, x| 2.0 * x[0].sin() * x[1].sin());
        assert!(max_diff(&w, &expect) < 1e-10);
        let v = Field::from_fn(g, 2, |c, x| if c == 0 { x[0].cos() } else { 0.0 });
        assert!(vorticity2d(&v).unwrap().max_abs() < 1e-10);
        let k = Field::from_fn(g, 2, |_, _| 3.0);
        assert!(vorticity2d(&k).unwrap().max_abs() < 1e-12);
        let g3 = make_grid(3, 4).unwrap();
        assert!(vorticity2d(&Field::zeros(g3, 3)).is_err());
    }

    #[test]
    fn projection_cases() {
        let g = make_grid(2, 32).unwrap();
        let t = tg(g);
        assert!(max_diff(&helmholtz_project(&t).unwrap(), &t) < 1e-10);
        let v = Field::from_fn(g, 2, |c, x| if c == 0 { x[0].cos() } else { 0.0 });
        assert!(helmholtz_project(&v).unwrap().max_abs() < 1e-10);
        let k = Field::from_fn(g, 2, |c, _| if c == 0 { 1.0 } else { 0.0 });
        assert!(max_diff(&helmholtz_project(&k).unwrap(), &k) < 1e-12);
        assert!(helmholtz_project(&Field::zeros(g, 1)).is_err());
    }

    #[test]
    fn band_limit_removes_high_modes() {
        let g = make_grid(2, 16).unwrap();
        let ws = SpectralWorkspace::new(g);
        let f = gaussian_field(g, 1, 4);
        let low = ws.band_limit(&f, 4).unwrap();
        assert!(ws.energy_above(&low, 4).unwrap() < 1e-28);
        assert!(ws.energy_above(&f, 4).unwrap() > 0.1);
    }

    #[test]
    fn norm_estimates() {
        let g = make_grid(2, 16).unwrap();
        let p = SpectralOperator::new(SpectralOperatorKind::Projection, g);
        let est = estimate_operator_norm(&p, POWER_ITERATION_CAP, 1).unwrap();
        assert!(est.value <= 1.0 + 1e-8);
        assert!(est.value > 0.99);

        // a nonlinear map must be refused
        struct Square(Grid);
        impl LinearOperator for Square {
            fn name(&self) -> &str {
                "square"
            }
            fn grid(&self) -> &Grid {
                &self.0
            }
            fn input_channels(&self) -> usize {
                1
            }
            fn apply(&self, x: &Field) -> Result<Field> {
                let mut y = x.clone();
                y.data_mut().iter_mut().for_each(|v| *v *= *v);
                Ok(y)
            }
            fn apply_adjoint(&self, y: &Field) -> Result<Field> {
                Ok(y.clone())
            }
        }
        assert!(estimate_operator_norm(&Square(g), 10, 1).is_err());
    }

    #[test]
    fn gradient_adjoint_identity() {
        let g = make_grid(3, 8).unwrap();
        let op = SpectralOperator::new(SpectralOperatorKind::Gradient, g);
        let x = gaussian_field(g, 1, 1);
        let y = gaussian_field(g, 3, 2);
        let lhs = op.apply(&x).unwrap().dot(&y);
        let rhs = x.dot(&op.apply_adjoint(&y).unwrap());
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn projection_properties(seed in 0u64..10_000, three in proptest::bool::ANY) {
            let g = if three { make_grid(3, 8).unwrap() } else { make_grid(2, 16).unwrap() };
            let ws = SpectralWorkspace::new(g);
            let v = gaussian_field(g, g.ndim(), seed);
            let pv = ws.helmholtz_project(&v).unwrap();
            let ppv = ws.helmholtz_project(&pv).unwrap();
            prop_assert!(ppv.sub(&pv).grid_norm() / pv.grid_norm() < 1e-10);
            prop_assert!(l2_norm(&pv) <= l2_norm(&v) * (1.0 + 1e-12));
            prop_assert!(pv.dot(&v.sub(&pv)).abs() < 1e-8 * l2_norm(&v).powi(2));
            prop_assert!(ws.divergence(&pv).unwrap().max_abs() < 1e-10);
        }

        #[test]
        fn curl_of_gradient_vanishes(seed in 0u64..10_000) {
            let g = make_grid(2, 16).unwrap();
            let ws = SpectralWorkspace::new(g);
            let f = gaussian_field(g, 1, seed);
            prop_assert!(ws.vorticity2d(&ws.gradient(&f).unwrap()).unwrap().max_abs() < 1e-10);
        }
    }
}
