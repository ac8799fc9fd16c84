//! Orthonormal periodic discrete wavelet transform over multi-channel fields,
//! with the coarse/fine scale partition used by the diffusion sampler.
//!
//! Scale indices run from `j = 0` (the deepest approximation band) to
//! `j = levels` (the finest detail level). Each detail level carries
//! `2^ndim - 1` orientation bands; bit `a` of the orientation marks a
//! high-pass filter along axis `a`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SgfmError};
use crate::field::{Field, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletFamily {
    #[default]
    Haar,
    #[serde(alias = "db4", alias = "daubechies-4")]
    Daubechies4,
}

impl std::str::FromStr for WaveletFamily {
    type Err = SgfmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "haar" => Ok(WaveletFamily::Haar),
            "daubechies4" | "db4" | "daubechies-4" => Ok(WaveletFamily::Daubechies4),
            _ => Err(SgfmError::InvalidArgument(format!("unknown wavelet family {s:?}"))),
        }
    }
}

impl WaveletFamily {
    /// Analysis low-pass taps.
    pub fn lowpass(&self) -> Vec<f64> {
        match self {
            WaveletFamily::Haar => vec![std::f64::consts::FRAC_1_SQRT_2; 2],
            WaveletFamily::Daubechies4 => {
                let s3 = 3f64.sqrt();
                let norm = 4.0 * std::f64::consts::SQRT_2;
                vec![
                    (1.0 + s3) / norm,
                    (3.0 + s3) / norm,
                    (3.0 - s3) / norm,
                    (1.0 - s3) / norm,
                ]
            }
        }
    }

    /// Quadrature mirror of the low-pass: `g[i] = (-1)^i h[L-1-i]`.
    pub fn highpass(&self) -> Vec<f64> {
        let h = self.lowpass();
        let l = h.len();
        (0..l)
            .map(|i| if i % 2 == 0 { h[l - 1 - i] } else { -h[l - 1 - i] })
            .collect()
    }

    pub fn name(&self) -> &'static str {
        match self {
            WaveletFamily::Haar => "haar",
            WaveletFamily::Daubechies4 => "daubechies4",
        }
    }
}

/// One sub-band of one channel: a `side^ndim` cube stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub scale: usize,
    pub orientation: usize,
    pub channel: usize,
    pub side: usize,
    pub data: Vec<f64>,
}

/// Critically sampled multiscale coefficients of a field.
///
/// Bands are kept in canonical order: ascending scale, then orientation,
/// then channel. [`WaveletCoefficients::to_vec`] flattens in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletCoefficients {
    family: WaveletFamily,
    levels: usize,
    grid: Grid,
    channels: usize,
    bands: Vec<Band>,
}

/// Band shapes `(scale, orientation, channel, side)` in canonical order.
fn band_layout(grid: &Grid, levels: usize, channels: usize) -> Vec<(usize, usize, usize, usize)> {
    let n = grid.n();
    let orientations = (1usize << grid.ndim()) - 1;
    let mut out = Vec::new();
    for c in 0..channels {
        out.push((0, 0, c, n >> levels));
    }
    for j in 1..=levels {
        let side = n >> (levels - j + 1);
        for o in 1..=orientations {
            for c in 0..channels {
                out.push((j, o, c, side));
            }
        }
    }
    out
}

/// Offset of band `(scale, orientation)` inside the in-place pyramid.
fn band_origin(scale: usize, orientation: usize, side: usize, ndim: usize) -> [usize; 3] {
    let mut o = [0; 3];
    if scale > 0 {
        for (a, oa) in o.iter_mut().enumerate().take(ndim) {
            if orientation & (1 << a) != 0 {
                *oa = side;
            }
        }
    }
    o
}

/// Calls `f(base)` for the first element of every lane along `axis` inside
/// the sub-cube `[0, m)^ndim` of an `n^ndim` row-major array.
fn for_each_lane(n: usize, ndim: usize, m: usize, axis: usize, mut f: impl FnMut(usize)) {
    let mut idx = [0usize; 3];
    let others: Vec<usize> = (0..ndim).filter(|&a| a != axis).collect();
    let count = m.pow(others.len() as u32);
    for _ in 0..count {
        let mut base = 0;
        for a in 0..ndim {
            base = base * n + if a == axis { 0 } else { idx[a] };
        }
        f(base);
        // odometer over the non-lane axes
        for &a in others.iter().rev() {
            idx[a] += 1;
            if idx[a] < m {
                break;
            }
            idx[a] = 0;
        }
    }
}

struct FilterBank {
    h: Vec<f64>,
    g: Vec<f64>,
}

impl FilterBank {
    fn new(family: WaveletFamily) -> Self {
        Self {
            h: family.lowpass(),
            g: family.highpass(),
        }
    }

    fn analyze(&self, x: &[f64], out: &mut [f64]) {
        let m = x.len();
        let half = m / 2;
        for k in 0..half {
            let (mut a, mut d) = (0.0, 0.0);
            for (i, (h, g)) in self.h.iter().zip(&self.g).enumerate() {
                let v = x[(2 * k + i) % m];
                a += h * v;
                d += g * v;
            }
            out[k] = a;
            out[half + k] = d;
        }
    }

    fn synthesize(&self, c: &[f64], out: &mut [f64]) {
        let m = c.len();
        let half = m / 2;
        out.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..half {
            let (a, d) = (c[k], c[half + k]);
            for (i, (h, g)) in self.h.iter().zip(&self.g).enumerate() {
                out[(2 * k + i) % m] += h * a + g * d;
            }
        }
    }
}

fn transform_pyramid(buf: &mut [f64], grid: &Grid, levels: usize, family: WaveletFamily, inverse: bool) {
    let n = grid.n();
    let d = grid.ndim();
    let bank = FilterBank::new(family);
    let mut lane = vec![0.0; n];
    let mut out = vec![0.0; n];
    let level_order: Vec<usize> = if inverse {
        (0..levels).rev().collect()
    } else {
        (0..levels).collect()
    };
    for l in level_order {
        let m = n >> l;
        for axis in 0..d {
            let stride = grid.stride(axis);
            for_each_lane(n, d, m, axis, |base| {
                for i in 0..m {
                    lane[i] = buf[base + i * stride];
                }
                if inverse {
                    bank.synthesize(&lane[..m], &mut out[..m]);
                } else {
                    bank.analyze(&lane[..m], &mut out[..m]);
                }
                for i in 0..m {
                    buf[base + i * stride] = out[i];
                }
            });
        }
    }
}

fn check_levels(grid: &Grid, levels: usize) -> Result<()> {
    if levels == 0 || levels > grid.levels_max() {
        return Err(SgfmError::InvalidArgument(format!(
            "levels must be in 1..={} for n={}, got {levels}",
            grid.levels_max(),
            grid.n()
        )));
    }
    Ok(())
}

/// Copies between a pyramid-layout channel and its bands.
fn gather_band(pyr: &[f64], grid: &Grid, scale: usize, orientation: usize, side: usize) -> Vec<f64> {
    let n = grid.n();
    let d = grid.ndim();
    let origin = band_origin(scale, orientation, side, d);
    let count = side.pow(d as u32);
    (0..count)
        .map(|i| {
            let mut flat = 0;
            let mut rem = i;
            let mut idx = [0; 3];
            for a in (0..d).rev() {
                idx[a] = rem % side;
                rem /= side;
            }
            for a in 0..d {
                flat = flat * n + origin[a] + idx[a];
            }
            pyr[flat]
        })
        .collect()
}

fn scatter_band(pyr: &mut [f64], grid: &Grid, band: &Band) {
    let n = grid.n();
    let d = grid.ndim();
    let origin = band_origin(band.scale, band.orientation, band.side, d);
    for (i, &v) in band.data.iter().enumerate() {
        let mut rem = i;
        let mut idx = [0; 3];
        for a in (0..d).rev() {
            idx[a] = rem % band.side;
            rem /= band.side;
        }
        let mut flat = 0;
        for a in 0..d {
            flat = flat * n + origin[a] + idx[a];
        }
        pyr[flat] = v;
    }
}

/// Separable multi-level DWT of every channel of `f`.
pub fn forward_dwt(f: &Field, family: WaveletFamily, levels: usize) -> Result<WaveletCoefficients> {
    let pyr = forward_pyramid(f, family, levels)?;
    WaveletCoefficients::from_pyramid(&pyr, family, levels)
}

/// Forward transform leaving the result in the in-place pyramid layout.
pub fn forward_pyramid(f: &Field, family: WaveletFamily, levels: usize) -> Result<Field> {
    let grid = *f.grid();
    check_levels(&grid, levels)?;
    let mut out = f.clone();
    for c in 0..f.channels() {
        transform_pyramid(out.channel_mut(c), &grid, levels, family, false);
    }
    Ok(out)
}

/// Inverse of [`forward_pyramid`].
pub fn inverse_pyramid(pyr: &Field, family: WaveletFamily, levels: usize) -> Result<Field> {
    let grid = *pyr.grid();
    check_levels(&grid, levels)?;
    let mut out = pyr.clone();
    for c in 0..pyr.channels() {
        transform_pyramid(out.channel_mut(c), &grid, levels, family, true);
    }
    Ok(out)
}

pub fn inverse_dwt(c: &WaveletCoefficients) -> Result<Field> {
    c.validate()?;
    inverse_pyramid(&c.to_pyramid(), c.family, c.levels)
}

impl WaveletCoefficients {
    pub fn zeros(grid: Grid, channels: usize, family: WaveletFamily, levels: usize) -> Result<Self> {
        check_levels(&grid, levels)?;
        let d = grid.ndim() as u32;
        let bands = band_layout(&grid, levels, channels)
            .into_iter()
            .map(|(scale, orientation, channel, side)| Band {
                scale,
                orientation,
                channel,
                side,
                data: vec![0.0; side.pow(d)],
            })
            .collect();
        Ok(Self {
            family,
            levels,
            grid,
            channels,
            bands,
        })
    }

    /// Splits a pyramid-layout field into bands.
    pub fn from_pyramid(pyr: &Field, family: WaveletFamily, levels: usize) -> Result<Self> {
        let grid = *pyr.grid();
        check_levels(&grid, levels)?;
        let bands = band_layout(&grid, levels, pyr.channels())
            .into_iter()
            .map(|(scale, orientation, channel, side)| Band {
                scale,
                orientation,
                channel,
                side,
                data: gather_band(pyr.channel(channel), &grid, scale, orientation, side),
            })
            .collect();
        Ok(Self {
            family,
            levels,
            grid,
            channels: pyr.channels(),
            bands,
        })
    }

    /// Packs the bands back into the in-place pyramid layout.
    pub fn to_pyramid(&self) -> Field {
        let mut out = Field::zeros(self.grid, self.channels);
        for b in &self.bands {
            scatter_band(out.channel_mut(b.channel), &self.grid, b);
        }
        out
    }

    pub fn family(&self) -> WaveletFamily {
        self.family
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Finest scale index.
    pub fn j_max(&self) -> usize {
        self.levels
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn bands_mut(&mut self) -> &mut [Band] {
        &mut self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.iter().map(|b| b.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Canonical flattening.
    pub fn to_vec(&self) -> Vec<f64> {
        self.bands.iter().flat_map(|b| b.data.iter().copied()).collect()
    }

    /// Replaces every coefficient from a canonical flat vector.
    pub fn set_from_slice(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.len() {
            return Err(SgfmError::Shape(format!(
                "expected {} coefficients, got {}",
                self.len(),
                v.len()
            )));
        }
        let mut off = 0;
        for b in &mut self.bands {
            let k = b.data.len();
            b.data.copy_from_slice(&v[off..off + k]);
            off += k;
        }
        Ok(())
    }

    /// Euclidean norm of all coefficients.
    pub fn norm(&self) -> f64 {
        self.bands
            .iter()
            .flat_map(|b| b.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, a: f64) {
        for b in &mut self.bands {
            b.data.iter_mut().for_each(|v| *v *= a);
        }
    }

    /// `self += a * other`; shapes must agree.
    pub fn axpy(&mut self, a: f64, other: &WaveletCoefficients) -> Result<()> {
        self.check_compatible(other)?;
        for (s, o) in self.bands.iter_mut().zip(&other.bands) {
            s.data.iter_mut().zip(&o.data).for_each(|(x, y)| *x += a * y);
        }
        Ok(())
    }

    pub fn check_compatible(&self, other: &WaveletCoefficients) -> Result<()> {
        if self.grid != other.grid
            || self.levels != other.levels
            || self.channels != other.channels
            || self.family != other.family
        {
            return Err(SgfmError::Shape("incompatible coefficient sets".into()));
        }
        Ok(())
    }

    /// Band shapes must match the canonical layout for this grid and depth.
    pub fn validate(&self) -> Result<()> {
        check_levels(&self.grid, self.levels)?;
        let layout = band_layout(&self.grid, self.levels, self.channels);
        if layout.len() != self.bands.len() {
            return Err(SgfmError::Shape(format!(
                "expected {} bands, found {}",
                layout.len(),
                self.bands.len()
            )));
        }
        let d = self.grid.ndim() as u32;
        for ((scale, orientation, channel, side), b) in layout.into_iter().zip(&self.bands) {
            if b.scale != scale
                || b.orientation != orientation
                || b.channel != channel
                || b.side != side
                || b.data.len() != side.pow(d)
            {
                return Err(SgfmError::Shape(format!(
                    "band (j={}, o={}, c={}) has inconsistent shape",
                    b.scale, b.orientation, b.channel
                )));
            }
        }
        Ok(())
    }
}

/// Disjoint coarse (`j <= j_split`) and fine (`j > j_split`) coefficient sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSplit {
    family: WaveletFamily,
    levels: usize,
    grid: Grid,
    channels: usize,
    j_split: usize,
    pub coarse: Vec<Band>,
    pub fine: Vec<Band>,
}

pub fn split_scales(c: &WaveletCoefficients, j_split: usize) -> Result<ScaleSplit> {
    if j_split > c.j_max() {
        return Err(SgfmError::InvalidArgument(format!(
            "j_split must be in 0..={}, got {j_split}",
            c.j_max()
        )));
    }
    let (coarse, fine) = c.bands.iter().cloned().partition(|b| b.scale <= j_split);
    Ok(ScaleSplit {
        family: c.family,
        levels: c.levels,
        grid: c.grid,
        channels: c.channels,
        j_split,
        coarse,
        fine,
    })
}

pub fn merge_scales(s: &ScaleSplit) -> Result<WaveletCoefficients> {
    if s.coarse.iter().any(|b| b.scale > s.j_split) || s.fine.iter().any(|b| b.scale <= s.j_split) {
        return Err(SgfmError::Shape("band on the wrong side of j_split".into()));
    }
    let out = WaveletCoefficients {
        family: s.family,
        levels: s.levels,
        grid: s.grid,
        channels: s.channels,
        bands: s.coarse.iter().chain(&s.fine).cloned().collect(),
    };
    out.validate()?;
    Ok(out)
}

fn flat(bands: &[Band]) -> Vec<f64> {
    bands.iter().flat_map(|b| b.data.iter().copied()).collect()
}

fn fill(bands: &mut [Band], v: &[f64]) -> Result<()> {
    let total: usize = bands.iter().map(|b| b.data.len()).sum();
    if total != v.len() {
        return Err(SgfmError::Shape(format!(
            "expected {total} coefficients, got {}",
            v.len()
        )));
    }
    let mut off = 0;
    for b in bands {
        let k = b.data.len();
        b.data.copy_from_slice(&v[off..off + k]);
        off += k;
    }
    Ok(())
}

impl ScaleSplit {
    pub fn j_split(&self) -> usize {
        self.j_split
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn family(&self) -> WaveletFamily {
        self.family
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn coarse_vec(&self) -> Vec<f64> {
        flat(&self.coarse)
    }

    pub fn fine_vec(&self) -> Vec<f64> {
        flat(&self.fine)
    }

    pub fn coarse_len(&self) -> usize {
        self.coarse.iter().map(|b| b.data.len()).sum()
    }

    pub fn fine_len(&self) -> usize {
        self.fine.iter().map(|b| b.data.len()).sum()
    }

    pub fn set_fine(&mut self, v: &[f64]) -> Result<()> {
        fill(&mut self.fine, v)
    }

    pub fn set_coarse(&mut self, v: &[f64]) -> Result<()> {
        fill(&mut self.coarse, v)
    }
}
