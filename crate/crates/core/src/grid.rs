//! Periodic spatial grids, the continuous-convention discrete Fourier
//! transform, and the field containers shared by every numerical module.
//!
//! Points are `x_k = -L/2 + k L/n` per axis and the frequency lattice is
//! `xi_m = 2 pi m / L` for `m` in `[-n/2, n/2)`, stored in FFT order. The
//! forward transform approximates `F h(xi) = \int e^{-i(xi,x)} h(x) dx` by a
//! Riemann sum with cell volume `(L/n)^d`; the inverse carries the matching
//! `1/L^d` so the pair is exact on the lattice.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Relative threshold used by [`Field::realize`].
pub const REALNESS_TOLERANCE: f64 = 1e-8;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    n: usize,
    length: f64,
}

impl GridSpec {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(LabError::InvalidGrid(format!("dimension {dim} not in {{1,2}}")));
        }
        if n < 2 || !n.is_power_of_two() {
            return Err(LabError::InvalidGrid(format!("n = {n} is not a power of two >= 2")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(LabError::InvalidGrid(format!("length {length} must be positive")));
        }
        Ok(Self { dim, n, length })
    }

    /// Default desk-scale grid: `L = 32`, `n = 256` in 1-d and `n = 128` in 2-d.
    pub fn default_for(dim: usize) -> Result<Self> {
        Self::new(dim, if dim == 1 { 256 } else { 128 }, 32.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell().powi(self.dim as i32)
    }

    pub fn coordinate(&self, k: usize) -> f64 {
        -0.5 * self.length + k as f64 * self.cell()
    }

    /// Spatial point of flat index `idx` (second entry is 0 in 1-d).
    pub fn point(&self, idx: usize) -> [f64; 2] {
        if self.dim == 1 {
            [self.coordinate(idx), 0.0]
        } else {
            [self.coordinate(idx / self.n), self.coordinate(idx % self.n)]
        }
    }

    /// Signed frequency index of FFT slot `m`.
    pub fn freq_index(&self, m: usize) -> i64 {
        if m < self.n / 2 {
            m as i64
        } else {
            m as i64 - self.n as i64
        }
    }

    pub fn frequency(&self, m: usize) -> f64 {
        2.0 * PI * self.freq_index(m) as f64 / self.length
    }

    /// Wave vector of flat spectral index `idx` (second entry is 0 in 1-d).
    pub fn wavevector(&self, idx: usize) -> [f64; 2] {
        if self.dim == 1 {
            [self.frequency(idx), 0.0]
        } else {
            [self.frequency(idx / self.n), self.frequency(idx % self.n)]
        }
    }

    pub fn wavevectors(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|i| self.wavevector(i)).collect()
    }

    pub fn freq_norms(&self) -> Vec<f64> {
        self.wavevectors().iter().map(|k| k[0].hypot(k[1])).collect()
    }

    /// Largest `|xi|` present on the lattice.
    pub fn max_frequency(&self) -> f64 {
        let edge = PI * self.n as f64 / self.length;
        edge * (self.dim as f64).sqrt()
    }

    /// Flat index of the lattice point `-xi` (the Nyquist row maps to itself).
    pub fn negated_index(&self, idx: usize) -> usize {
        let neg = |m: usize| (self.n - m) % self.n;
        if self.dim == 1 {
            neg(idx)
        } else {
            neg(idx / self.n) * self.n + neg(idx % self.n)
        }
    }

    fn phase_sign(&self, idx: usize) -> f64 {
        let parity = if self.dim == 1 { idx } else { idx / self.n + idx % self.n };
        if parity % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    fn fft_in_place(&self, buf: &mut [Complex64], inverse: bool) {
        let n = self.n;
        let fft = plan(n, inverse);
        if self.dim == 1 {
            fft.process(buf);
            return;
        }
        for row in buf.chunks_mut(n) {
            fft.process(row);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); n];
        for c in 0..n {
            for r in 0..n {
                column[r] = buf[r * n + c];
            }
            fft.process(&mut column);
            for r in 0..n {
                buf[r * n + c] = column[r];
            }
        }
    }

    /// Continuous-convention forward transform of one channel, in place.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.fft_in_place(buf, false);
        let w = self.cell_volume();
        for (idx, v) in buf.iter_mut().enumerate() {
            *v *= w * self.phase_sign(idx);
        }
    }

    /// Inverse of [`GridSpec::forward`], in place.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        for (idx, v) in buf.iter_mut().enumerate() {
            *v *= self.phase_sign(idx);
        }
        self.fft_in_place(buf, true);
        let w = 1.0 / self.length.powi(self.dim as i32);
        for v in buf.iter_mut() {
            *v *= w;
        }
    }

    /// Applies the Fourier multiplier `mult` (FFT order) to one channel.
    pub fn apply_multiplier(&self, buf: &mut [Complex64], mult: &[Complex64]) {
        self.fft_in_place(buf, false);
        let w = 1.0 / self.len() as f64;
        for (v, m) in buf.iter_mut().zip(mult) {
            *v *= m * w;
        }
        self.fft_in_place(buf, true);
    }

    // The Nyquist mode is split evenly between +xi and -xi.
    fn interp_phase(&self, m: usize, x: f64) -> Complex64 {
        let xi = self.frequency(m);
        if self.freq_index(m) == -(self.n as i64) / 2 {
            Complex64::new((xi * x).cos(), 0.0)
        } else {
            Complex64::from_polar(1.0, xi * x)
        }
    }

    /// Band-limited (trigonometric) interpolation of one physical channel at
    /// arbitrary points. Points are taken modulo the period.
    pub fn trig_interpolate(&self, values: &[Complex64], points: &[[f64; 2]]) -> Vec<Complex64> {
        let mut spec = values.to_vec();
        self.forward(&mut spec);
        let inv_vol = 1.0 / self.length.powi(self.dim as i32);
        let n = self.n;
        if self.dim == 1 {
            return points
                .iter()
                .map(|p| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (m, s) in spec.iter().enumerate() {
                        acc += s * self.interp_phase(m, p[0]);
                    }
                    acc * inv_vol
                })
                .collect();
        }
        points
            .iter()
            .map(|p| {
                let ex: Vec<Complex64> =
                    (0..n).map(|m| self.interp_phase(m, p[0])).collect();
                let ey: Vec<Complex64> = (0..n).map(|m| self.interp_phase(m, p[1])).collect();
                let mut acc = Complex64::new(0.0, 0.0);
                for (a, row) in spec.chunks(n).enumerate() {
                    let inner: Complex64 = row.iter().zip(&ey).map(|(s, e)| s * e).sum();
                    acc += ex[a] * inner;
                }
                acc * inv_vol
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    Physical,
    Spectral,
}

/// Multi-channel complex samples on a grid; channel-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    channels: usize,
    domain: Domain,
    values: Vec<Complex64>,
}

impl Field {
    pub fn zeros(grid: GridSpec, channels: usize) -> Self {
        assert!(channels >= 1, "a field needs at least one channel");
        Self {
            grid,
            channels,
            domain: Domain::Physical,
            values: vec![Complex64::new(0.0, 0.0); grid.len() * channels],
        }
    }

    pub fn from_values(grid: GridSpec, channels: usize, values: Vec<Complex64>) -> Result<Self> {
        if channels == 0 || values.len() != grid.len() * channels {
            return Err(LabError::ShapeMismatch(format!(
                "{} values for {} points x {} channels",
                values.len(),
                grid.len(),
                channels
            )));
        }
        Ok(Self { grid, channels, domain: Domain::Physical, values })
    }

    pub fn from_real(grid: GridSpec, values: &[f64]) -> Result<Self> {
        Self::from_values(grid, 1, values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    /// Samples `f` at every grid point (scalar channel).
    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| Complex64::new(f(grid.point(i)), 0.0)).collect();
        Self { grid, channels: 1, domain: Domain::Physical, values }
    }

    /// Builds a field directly from lattice spectrum values (scalar channel).
    pub fn from_spectrum(grid: GridSpec, spectrum: Vec<Complex64>) -> Result<Self> {
        let mut f = Self::from_values(grid, 1, spectrum)?;
        f.domain = Domain::Spectral;
        Ok(f)
    }

    /// Discrete point mass at `x = 0` with unit integral.
    pub fn delta(grid: GridSpec) -> Self {
        let mut f = Self::zeros(grid, 1);
        let center = grid.n() / 2;
        let idx = if grid.dim() == 1 { center } else { center * grid.n() + center };
        f.values[idx] = Complex64::new(1.0 / grid.cell_volume(), 0.0);
        f
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn channel(&self, c: usize) -> &[Complex64] {
        let n = self.grid.len();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n = self.grid.len();
        &mut self.values[c * n..(c + 1) * n]
    }

    /// Splits into scalar-channel fields.
    pub fn split_channels(&self) -> Vec<Field> {
        (0..self.channels)
            .map(|c| Field {
                grid: self.grid,
                channels: 1,
                domain: self.domain,
                values: self.channel(c).to_vec(),
            })
            .collect()
    }

    pub fn stack_channels(parts: &[Field]) -> Result<Field> {
        let first = parts
            .first()
            .ok_or_else(|| LabError::ShapeMismatch("no channels to stack".into()))?;
        let mut values = Vec::with_capacity(first.values.len() * parts.len());
        let mut channels = 0;
        for p in parts {
            if p.grid != first.grid || p.domain != first.domain {
                return Err(LabError::ShapeMismatch("stacked fields disagree on grid".into()));
            }
            values.extend_from_slice(&p.values);
            channels += p.channels;
        }
        Ok(Field { grid: first.grid, channels, domain: first.domain, values })
    }

    pub fn real_parts(&self, c: usize) -> Vec<f64> {
        self.channel(c).iter().map(|v| v.re).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Strips imaginary parts after checking they are below
    /// `1e-8 * max|field|`.
    pub fn realize(&self) -> Result<Field> {
        let limit = REALNESS_TOLERANCE * self.max_abs().max(f64::MIN_POSITIVE);
        let imag = self.values.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
        if imag > limit {
            return Err(LabError::NotReal { imag, limit });
        }
        let mut out = self.clone();
        for v in &mut out.values {
            v.im = 0.0;
        }
        Ok(out)
    }

    /// Riemann-sum integral of each channel.
    pub fn integral(&self) -> Vec<Complex64> {
        let w = self.grid.cell_volume();
        (0..self.channels).map(|c| self.channel(c).iter().sum::<Complex64>() * w).collect()
    }

    pub fn scale(&self, s: f64) -> Field {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        out.values.iter_mut().zip(&other.values).for_each(|(a, b)| *a += b);
        Ok(out)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.add(&other.scale(-1.0))
    }

    fn check_compatible(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid {
            return Err(LabError::ShapeMismatch("fields live on different grids".into()));
        }
        if self.channels != other.channels {
            return Err(LabError::ShapeMismatch(format!(
                "channel counts {} and {} differ",
                self.channels, other.channels
            )));
        }
        Ok(())
    }

    /// Applies a scalar Fourier multiplier (FFT order) to every channel of a
    /// physical field.
    pub fn apply_multiplier(&self, mult: &[Complex64]) -> Result<Field> {
        if mult.len() != self.grid.len() {
            return Err(LabError::ShapeMismatch("multiplier length differs from lattice".into()));
        }
        let mut out = self.clone();
        for c in 0..out.channels {
            self.grid.apply_multiplier(out.channel_mut(c), mult);
        }
        Ok(out)
    }

    /// Applies a real multiplier given as a function of the wave vector.
    pub fn apply_symbol(&self, symbol: impl Fn([f64; 2]) -> f64) -> Field {
        let mult: Vec<Complex64> = self
            .grid
            .wavevectors()
            .into_iter()
            .map(|k| Complex64::new(symbol(k), 0.0))
            .collect();
        self.apply_multiplier(&mult).expect("multiplier built from own lattice")
    }

    /// Euclidean channel norm `|f(x)|_V` at each point.
    pub fn pointwise_norm(&self) -> Vec<f64> {
        let n = self.grid.len();
        (0..n)
            .map(|i| {
                (0..self.channels)
                    .map(|c| self.values[c * n + i].norm_sqr())
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// `|f|_{V,p} = (\int |f|_V^p dx)^{1/p}`.
    pub fn lp_norm(&self, p: f64) -> f64 {
        let w = self.grid.cell_volume();
        let s: f64 = self.pointwise_norm().iter().map(|v| v.powf(p)).sum();
        (s * w).powf(1.0 / p)
    }

    /// Writes the binary layout: little-endian `d: u64, n: u64, L: f64,
    /// m_V: u64`, then for each grid point in row-major order and each
    /// channel a `(re, im)` pair of `f64`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.grid.dim as u64).to_le_bytes())?;
        w.write_all(&(self.grid.n as u64).to_le_bytes())?;
        w.write_all(&self.grid.length.to_le_bytes())?;
        w.write_all(&(self.channels as u64).to_le_bytes())?;
        let n = self.grid.len();
        for i in 0..n {
            for c in 0..self.channels {
                let v = self.values[c * n + i];
                w.write_all(&v.re.to_le_bytes())?;
                w.write_all(&v.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Field> {
        let mut b8 = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut b8)?;
            Ok(b8)
        };
        let dim = u64::from_le_bytes(next(&mut r)?) as usize;
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let length = f64::from_le_bytes(next(&mut r)?);
        let channels = u64::from_le_bytes(next(&mut r)?) as usize;
        let grid = GridSpec::new(dim, n, length)?;
        if channels == 0 {
            return Err(LabError::ShapeMismatch("binary field with zero channels".into()));
        }
        let pts = grid.len();
        let mut values = vec![Complex64::new(0.0, 0.0); pts * channels];
        for i in 0..pts {
            for c in 0..channels {
                let re = f64::from_le_bytes(next(&mut r)?);
                let im = f64::from_le_bytes(next(&mut r)?);
                values[c * pts + i] = Complex64::new(re, im);
            }
        }
        Field::from_values(grid, channels, values)
    }

    /// CSV with header `x[,y],channel,re,im`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        if self.grid.dim == 1 {
            writeln!(w, "x,channel,re,im")?;
        } else {
            writeln!(w, "x,y,channel,re,im")?;
        }
        let n = self.grid.len();
        for i in 0..n {
            let p = self.grid.point(i);
            for c in 0..self.channels {
                let v = self.values[c * n + i];
                if self.grid.dim == 1 {
                    writeln!(w, "{},{},{:e},{:e}", p[0], c, v.re, v.im)?;
                } else {
                    writeln!(w, "{},{},{},{:e},{:e}", p[0], p[1], c, v.re, v.im)?;
                }
            }
        }
        Ok(())
    }
}

pub fn dft(f: &Field) -> Result<Field> {
    if f.domain != Domain::Physical {
        return Err(LabError::ShapeMismatch("dft expects a physical-domain field".into()));
    }
    let mut out = f.clone();
    for c in 0..out.channels {
        f.grid.forward(out.channel_mut(c));
    }
    out.domain = Domain::Spectral;
    Ok(out)
}

pub fn idft(f: &Field) -> Result<Field> {
    if f.domain != Domain::Spectral {
        return Err(LabError::ShapeMismatch("idft expects a spectral-domain field".into()));
    }
    let mut out = f.clone();
    for c in 0..out.channels {
        f.grid.inverse(out.channel_mut(c));
    }
    out.domain = Domain::Physical;
    Ok(out)
}

/// `F^{-1}(F f . F g)`; `g` is scalar or channel-matched.
pub fn periodic_convolve(f: &Field, g: &Field) -> Result<Field> {
    if f.grid != g.grid {
        return Err(LabError::ShapeMismatch("convolution operands on different grids".into()));
    }
    if g.channels != 1 && g.channels != f.channels {
        return Err(LabError::ShapeMismatch(format!(
            "cannot convolve {} channels with {}",
            f.channels, g.channels
        )));
    }
    let ff = dft(f)?;
    let gf = dft(g)?;
    let mut out = ff;
    for c in 0..out.channels {
        let gc = if g.channels == 1 { 0 } else { c };
        let gs = gf.channel(gc).to_vec();
        out.channel_mut(c).iter_mut().zip(&gs).for_each(|(a, b)| *a *= b);
    }
    idft(&out)
}

/// Uniform time grid on `[a, b]` with `steps + 1` knots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(start: f64, end: f64, steps: usize) -> Result<Self> {
        if !(end > start) || steps == 0 {
            return Err(LabError::InvalidGrid(format!(
                "time grid [{start}, {end}] with {steps} steps"
            )));
        }
        Ok(Self { start, end, steps })
    }

    pub fn knots(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        (self.end - self.start) / self.steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.steps {
            self.end
        } else {
            self.start + i as f64 * self.dt()
        }
    }

    /// Trapezoid weights over knots `0..=last`.
    pub fn trapezoid_weights(&self, last: usize) -> Vec<f64> {
        let dt = self.dt();
        let mut w = vec![dt; last + 1];
        if last == 0 {
            w[0] = 0.0;
        } else {
            w[0] = 0.5 * dt;
            w[last] = 0.5 * dt;
        }
        w
    }

    /// Index of a knot equal to `t` within `1e-9 dt`.
    pub fn knot_of(&self, t: f64) -> Option<usize> {
        let r = (t - self.start) / self.dt();
        let k = r.round();
        if (r - k).abs() < 1e-9 && k >= 0.0 && k as usize <= self.steps {
            Some(k as usize)
        } else {
            None
        }
    }
}

/// One field per knot of a time grid.
#[derive(Debug, Clone)]
pub struct SpaceTimeField {
    times: TimeGrid,
    frames: Vec<Field>,
}

impl SpaceTimeField {
    pub fn new(times: TimeGrid, frames: Vec<Field>) -> Result<Self> {
        if frames.len() != times.knots() {
            return Err(LabError::ShapeMismatch(format!(
                "{} frames for {} knots",
                frames.len(),
                times.knots()
            )));
        }
        let first = &frames[0];
        if frames.iter().any(|f| f.grid != first.grid || f.channels != first.channels) {
            return Err(LabError::ShapeMismatch("frames disagree on grid or channels".into()));
        }
        Ok(Self { times, frames })
    }

    pub fn constant(times: TimeGrid, frame: Field) -> Self {
        Self { times, frames: vec![frame; times.knots()] }
    }

    pub fn times(&self) -> &TimeGrid {
        &self.times
    }

    pub fn frames(&self) -> &[Field] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &Field {
        &self.frames[i]
    }

    pub fn grid(&self) -> &GridSpec {
        &self.frames[0].grid
    }

    pub fn channels(&self) -> usize {
        self.frames[0].channels
    }

    pub fn map(&self, f: impl Fn(&Field) -> Field) -> SpaceTimeField {
        SpaceTimeField { times: self.times, frames: self.frames.iter().map(f).collect() }
    }

    pub fn add(&self, other: &SpaceTimeField) -> Result<SpaceTimeField> {
        if self.times != other.times {
            return Err(LabError::ShapeMismatch("time grids differ".into()));
        }
        let frames =
            self.frames.iter().zip(&other.frames).map(|(a, b)| a.add(b)).collect::<Result<_>>()?;
        Ok(SpaceTimeField { times: self.times, frames })
    }
}

/// Fields on the triangle `s_i <= t_j` of a time grid.
#[derive(Debug, Clone)]
pub struct TwoTimeField {
    times: TimeGrid,
    frames: Vec<Field>,
}

impl TwoTimeField {
    /// `frames` ordered by `(j, i)` with `i <= j`, i.e. by outer time `t_j`.
    pub fn new(times: TimeGrid, frames: Vec<Field>) -> Result<Self> {
        let k = times.knots();
        if frames.len() != k * (k + 1) / 2 {
            return Err(LabError::ShapeMismatch(format!(
                "{} frames for a triangle of {} knots",
                frames.len(),
                k
            )));
        }
        let first = &frames[0];
        if frames.iter().any(|f| f.grid != first.grid || f.channels != first.channels) {
            return Err(LabError::ShapeMismatch("frames disagree on grid or channels".into()));
        }
        Ok(Self { times, frames })
    }

    pub fn index(i: usize, j: usize) -> usize {
        debug_assert!(i <= j);
        j * (j + 1) / 2 + i
    }

    pub fn times(&self) -> &TimeGrid {
        &self.times
    }

    /// Frame at `(s_i, t_j)`.
    pub fn frame(&self, i: usize, j: usize) -> &Field {
        &self.frames[Self::index(i, j)]
    }

    pub fn frames(&self) -> &[Field] {
        &self.frames
    }

    pub fn grid(&self) -> &GridSpec {
        &self.frames[0].grid
    }

    pub fn channels(&self) -> usize {
        self.frames[0].channels
    }

    pub fn map(&self, f: impl Fn(&Field) -> Field + Sync + Send) -> TwoTimeField {
        use rayon::prelude::*;
        TwoTimeField { times: self.times, frames: self.frames.par_iter().map(f).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: GridSpec, channels: usize, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..grid.len() * channels)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        Field::from_values(grid, channels, values).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridSpec::new(3, 16, 1.0).is_err());
        assert!(GridSpec::new(1, 12, 1.0).is_err());
        assert!(GridSpec::new(1, 16, 0.0).is_err());
    }

    #[test]
    fn delta_has_flat_spectrum() {
        for dim in [1, 2] {
            let grid = GridSpec::new(dim, 32, 8.0).unwrap();
            let spec = dft(&Field::delta(grid)).unwrap();
            for v in spec.values() {
                assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn parseval_holds() {
        for dim in [1, 2] {
            let grid = GridSpec::new(dim, 32, 5.0).unwrap();
            let f = random_field(grid, 2, 3);
            let lhs: f64 = f.values().iter().map(|v| v.norm_sqr()).sum::<f64>() * grid.cell_volume();
            let spec = dft(&f).unwrap();
            let rhs: f64 = spec.values().iter().map(|v| v.norm_sqr()).sum::<f64>()
                / grid.length().powi(dim as i32);
            assert!((lhs - rhs).abs() < 1e-10 * lhs);
        }
    }

    #[test]
    fn gaussian_transform_matches_closed_form() {
        // Periodic images of exp(-x^2/2) at distance 32 and spectral leakage
        // past the Nyquist frequency (8 pi) are both far below 1e-10.
        let grid = GridSpec::new(1, 256, 32.0).unwrap();
        let f = Field::from_fn(grid, |x| (-0.5 * x[0] * x[0]).exp());
        let spec = dft(&f).unwrap();
        for (m, v) in spec.values().iter().enumerate() {
            let xi = grid.frequency(m);
            let exact = (2.0 * PI).sqrt() * (-0.5 * xi * xi).exp();
            assert!((v - Complex64::new(exact, 0.0)).norm() < 1e-10, "xi = {xi}");
        }
    }

    #[test]
    fn round_trip_and_linearity() {
        for dim in [1, 2] {
            let grid = GridSpec::new(dim, 16, 3.0).unwrap();
            let f = random_field(grid, 3, 1);
            let g = random_field(grid, 3, 2);
            let back = idft(&dft(&f).unwrap()).unwrap();
            let err = back.sub(&f).unwrap().max_abs() / f.max_abs();
            assert!(err < 1e-12);
            let lhs = dft(&f.scale(2.0).add(&g).unwrap()).unwrap();
            let rhs = dft(&f).unwrap().scale(2.0).add(&dft(&g).unwrap()).unwrap();
            assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-12 * lhs.max_abs());
        }
    }

    #[test]
    fn convolution_identity_symmetry_and_theorem() {
        let grid = GridSpec::new(2, 16, 4.0).unwrap();
        let f = random_field(grid, 1, 5);
        let g = random_field(grid, 1, 6);
        let id = periodic_convolve(&f, &Field::delta(grid)).unwrap();
        assert!(id.sub(&f).unwrap().max_abs() < 1e-12 * f.max_abs());
        let fg = periodic_convolve(&f, &g).unwrap();
        let gf = periodic_convolve(&g, &f).unwrap();
        assert!(fg.sub(&gf).unwrap().max_abs() < 1e-12 * fg.max_abs());
        let lhs = dft(&fg).unwrap();
        let (a, b) = (dft(&f).unwrap(), dft(&g).unwrap());
        for ((l, x), y) in lhs.values().iter().zip(a.values()).zip(b.values()) {
            assert!((l - x * y).norm() < 1e-10 * (1.0 + l.norm()));
        }
    }

    #[test]
    fn gaussian_variances_add_under_convolution() {
        let grid = GridSpec::new(1, 256, 32.0).unwrap();
        let gauss = |var: f64| {
            Field::from_fn(grid, move |x| (-x[0] * x[0] / (2.0 * var)).exp() / (2.0 * PI * var).sqrt())
        };
        let conv = periodic_convolve(&gauss(1.0), &gauss(2.0)).unwrap();
        let err = conv.sub(&gauss(3.0)).unwrap().max_abs();
        assert!(err < 1e-12, "err = {err}");
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let grid = GridSpec::new(1, 16, 1.0).unwrap();
        let f = random_field(grid, 3, 1);
        let g = random_field(grid, 2, 1);
        assert!(periodic_convolve(&f, &g).is_err());
        let other = GridSpec::new(1, 32, 1.0).unwrap();
        assert!(periodic_convolve(&f, &random_field(other, 1, 1)).is_err());
    }

    #[test]
    fn realize_rejects_complex_fields() {
        let grid = GridSpec::new(1, 16, 1.0).unwrap();
        let f = random_field(grid, 1, 9);
        assert!(f.realize().is_err());
        let r = Field::from_fn(grid, |x| x[0]);
        assert!(r.realize().is_ok());
    }

    #[test]
    fn binary_round_trip() {
        let grid = GridSpec::new(2, 8, 2.5).unwrap();
        let f = random_field(grid, 2, 4);
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 64 * 2 * 16);
        let back = Field::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn trig_interpolation_reproduces_grid_values() {
        let grid = GridSpec::new(2, 8, 2.0).unwrap();
        let f = Field::from_fn(grid, |x| (PI * x[0]).cos() * (PI * x[1]).sin() + 0.3);
        let pts: Vec<[f64; 2]> = (0..grid.len()).map(|i| grid.point(i)).collect();
        let vals = grid.trig_interpolate(f.channel(0), &pts);
        for (a, b) in vals.iter().zip(f.channel(0)) {
            assert!((a - b).norm() < 1e-12);
        }
        let off = grid.trig_interpolate(f.channel(0), &[[0.1, 0.2]]);
        let exact = (PI * 0.1).cos() * (PI * 0.2).sin() + 0.3;
        assert!((off[0].re - exact).abs() < 1e-12);
    }
}
