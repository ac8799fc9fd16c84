//! Periodic grids, multi-channel fields and trajectories.

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SgfmError};
use crate::rng::rng_from_seed;

/// Uniform periodic grid on `[0, 2π)^ndim` with `n` points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    ndim: usize,
    n: usize,
}

impl Grid {
    pub fn new(ndim: usize, n: usize) -> Result<Self> {
        if !(ndim == 2 || ndim == 3) {
            return Err(SgfmError::InvalidGrid(format!(
                "ndim must be 2 or 3, got {ndim}"
            )));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(SgfmError::InvalidGrid(format!(
                "points per dimension must be a power of two >= 4, got {n}"
            )));
        }
        Ok(Self { ndim, n })
    }

    pub fn ndim(&self) -> usize {
        self.ndim
    }

    /// Points per dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of grid points `n^ndim`.
    pub fn len(&self) -> usize {
        self.n.pow(self.ndim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.ndim as i32)
    }

    pub fn levels_max(&self) -> usize {
        self.n.trailing_zeros() as usize
    }

    /// Row-major stride of `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.ndim - 1 - axis) as u32)
    }

    /// Integer index of `flat` along `axis`.
    #[inline]
    pub fn axis_index(&self, flat: usize, axis: usize) -> usize {
        (flat / self.stride(axis)) % self.n
    }

    /// Physical coordinates of grid point `flat`.
    pub fn coords(&self, flat: usize) -> [f64; 3] {
        let h = self.spacing();
        let mut x = [0.0; 3];
        for (a, xa) in x.iter_mut().enumerate().take(self.ndim) {
            *xa = self.axis_index(flat, a) as f64 * h;
        }
        x
    }
}

pub fn make_grid(ndim: usize, n: usize) -> Result<Grid> {
    Grid::new(ndim, n)
}

/// Real field with `channels` components on a [`Grid`], channel-major and
/// row-major within each channel.
///
/// Vector fields store their `ndim` components as consecutive channels, so a
/// field with `C` vector channels has `C * ndim` channels in total.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    channels: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid, channels: usize) -> Self {
        assert!(channels >= 1, "a field needs at least one channel");
        Self {
            grid,
            channels,
            data: vec![0.0; channels * grid.len()],
        }
    }

    pub fn from_vec(grid: Grid, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(SgfmError::Shape("a field needs at least one channel".into()));
        }
        if data.len() != channels * grid.len() {
            return Err(SgfmError::Shape(format!(
                "expected {} values for {channels} channel(s), got {}",
                channels * grid.len(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(SgfmError::InvalidArgument(format!(
                "non-finite value at index {i}"
            )));
        }
        Ok(Self {
            grid,
            channels,
            data,
        })
    }

    /// Samples `f(channel, x)` at every grid point.
    pub fn from_fn(grid: Grid, channels: usize, f: impl Fn(usize, &[f64]) -> f64) -> Self {
        let mut out = Self::zeros(grid, channels);
        let len = grid.len();
        for c in 0..channels {
            for i in 0..len {
                let x = grid.coords(i);
                out.data[c * len + i] = f(c, &x[..grid.ndim()]);
            }
        }
        out
    }

    pub(crate) fn from_raw(grid: Grid, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), channels * grid.len());
        Self {
            grid,
            channels,
            data,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let len = self.grid.len();
        &self.data[c * len..(c + 1) * len]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let len = self.grid.len();
        &mut self.data[c * len..(c + 1) * len]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Field) -> bool {
        self.grid == other.grid && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &Field) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(SgfmError::Shape(format!(
                "fields differ: {:?}/{} vs {:?}/{}",
                self.grid, self.channels, other.grid, other.channels
            )))
        }
    }

    /// Number of vector fields stored, requiring `channels % ndim == 0`.
    pub fn vector_groups(&self) -> Result<usize> {
        let d = self.grid.ndim();
        if !self.channels.is_multiple_of(d) {
            return Err(SgfmError::Shape(format!(
                "{} channels is not a multiple of the {d} vector components",
                self.channels
            )));
        }
        Ok(self.channels / d)
    }

    pub fn scaled(&self, a: f64) -> Field {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|v| *v *= a);
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &Field) {
        debug_assert!(self.same_shape(other));
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(s, o)| *s += a * o);
    }

    pub fn add(&self, other: &Field) -> Field {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Field) -> Field {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// L² inner product with cell-volume weighting.
    pub fn dot(&self, other: &Field) -> f64 {
        debug_assert!(self.same_shape(other));
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum();
        s * self.grid.cell_volume()
    }

    /// Plain Euclidean norm of the samples, without the cell volume.
    pub fn grid_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Subtracts the per-channel mean.
    pub fn remove_mean(&mut self) {
        let len = self.grid.len();
        for c in 0..self.channels {
            let ch = self.channel_mut(c);
            let mean = ch.iter().sum::<f64>() / len as f64;
            ch.iter_mut().for_each(|v| *v -= mean);
        }
    }
}

/// `sqrt(Σ f² · cell volume)`, the discrete L² norm on the periodic box.
pub fn l2_norm(f: &Field) -> f64 {
    f.data.iter().map(|v| v * v).sum::<f64>().sqrt() * f.grid.cell_volume().sqrt()
}

/// Field of i.i.d. standard-normal samples.
pub fn gaussian_field(grid: Grid, channels: usize, seed: u64) -> Field {
    let mut rng = rng_from_seed(seed);
    let data = (0..channels * grid.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Field::from_raw(grid, channels, data)
}

/// Time-indexed sequence of fields with uniform spacing.
#[derive(Debug, Clone)]
pub struct Trajectory {
    dt: f64,
    times: Vec<f64>,
    snapshots: Vec<Field>,
}

impl Trajectory {
    pub fn new(dt: f64, t0: f64, u0: Field) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SgfmError::InvalidArgument(format!(
                "trajectory dt must be positive, got {dt}"
            )));
        }
        Ok(Self {
            dt,
            times: vec![t0],
            snapshots: vec![u0],
        })
    }

    /// Appends the snapshot one `dt` after the last one.
    pub fn push(&mut self, u: Field) -> Result<()> {
        let last = self.snapshots.last().expect("trajectory is never empty");
        last.check_same_shape(&u)?;
        let t0 = self.times[0];
        self.times.push(t0 + self.dt * self.snapshots.len() as f64);
        self.snapshots.push(u);
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn snapshots(&self) -> &[Field] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn first(&self) -> &Field {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &Field {
        self.snapshots.last().expect("trajectory is never empty")
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &Field)> {
        self.times.iter().copied().zip(self.snapshots.iter())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_arithmetic() {
        let g = make_grid(2, 8).unwrap();
        assert_eq!(g.len(), 64);
        assert!((g.spacing() - PI / 4.0).abs() < 1e-15);
        let g = make_grid(3, 4).unwrap();
        assert_eq!(g.len(), 64);
        assert!((g.spacing() - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn grid_rejects_bad_shapes() {
        assert!(matches!(make_grid(2, 6), Err(SgfmError::InvalidGrid(_))));
        assert!(matches!(make_grid(1, 8), Err(SgfmError::InvalidGrid(_))));
        assert!(matches!(make_grid(4, 8), Err(SgfmError::InvalidGrid(_))));
        assert!(matches!(make_grid(2, 2), Err(SgfmError::InvalidGrid(_))));
    }

    #[test]
    fn norms_of_simple_fields() {
        let g = make_grid(2, 16).unwrap();
        let one = Field::from_fn(g, 1, |_, _| 1.0);
        assert!((l2_norm(&one) - 2.0 * PI).abs() < 1e-12);
        assert_eq!(l2_norm(&Field::zeros(g, 1)), 0.0);

        let g = make_grid(2, 32).unwrap();
        let s = Field::from_fn(g, 1, |_, x| x[0].sin());
        assert!((l2_norm(&s) - (2.0 * PI * PI).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn gaussian_field_moments_and_determinism() {
        let g = make_grid(2, 64).unwrap();
        let a = gaussian_field(g, 1, 42);
        let b = gaussian_field(g, 1, 42);
        let c = gaussian_field(g, 1, 43);
        assert_eq!(a.data(), b.data());
        assert_ne!(a.data(), c.data());
        let n = a.data().len() as f64;
        let mean = a.data().iter().sum::<f64>() / n;
        let var = a.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 0.05, "mean {mean}");
        assert!((0.93..=1.07).contains(&var), "var {var}");
    }

    #[test]
    fn from_vec_validates() {
        let g = make_grid(2, 4).unwrap();
        assert!(Field::from_vec(g, 1, vec![0.0; 15]).is_err());
        let mut v = vec![0.0; 16];
        v[3] = f64::NAN;
        assert!(Field::from_vec(g, 1, v).is_err());
    }

    #[test]
    fn trajectory_spacing_and_shape() {
        let g = make_grid(2, 4).unwrap();
        let mut t = Trajectory::new(0.5, 0.0, Field::zeros(g, 2)).unwrap();
        t.push(Field::zeros(g, 2)).unwrap();
        t.push(Field::zeros(g, 2)).unwrap();
        assert_eq!(t.times(), &[0.0, 0.5, 1.0]);
        assert!(t.push(Field::zeros(g, 1)).is_err());
        assert!(Trajectory::new(0.0, 0.0, Field::zeros(g, 1)).is_err());
    }

    proptest! {
        #[test]
        fn norm_is_homogeneous(seed in 0u64..1000, a in -50.0f64..50.0) {
            let g = make_grid(2, 8).unwrap();
            let f = gaussian_field(g, 2, seed);
            let lhs = l2_norm(&f.scaled(a));
            let rhs = a.abs() * l2_norm(&f);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
        }

        #[test]
        fn triangle_inequality(s1 in 0u64..1000, s2 in 1000u64..2000) {
            let g = make_grid(3, 4).unwrap();
            let f = gaussian_field(g, 1, s1);
            let h = gaussian_field(g, 1, s2);
            prop_assert!(l2_norm(&f.add(&h)) <= l2_norm(&f) + l2_norm(&h) + 1e-12);
        }
    }
}
