//! Littlewood-Paley bank, Besov / Sobolev / square-function norms and their
//! space-time versions, fractional derivatives and Bessel potentials.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{LabError, Result};
use crate::grid::{Field, GridSpec, SpaceTimeField, TimeGrid, TwoTimeField};

fn sigma(u: f64) -> f64 {
    if u > 0.0 {
        (-1.0 / u).exp()
    } else {
        0.0
    }
}

/// Smooth step: 0 for `u <= 0`, 1 for `u >= 1`, `s(u) + s(1-u) = 1`.
pub fn smooth_step(u: f64) -> f64 {
    let a = sigma(u);
    let b = sigma(1.0 - u);
    a / (a + b)
}

/// Radial cut-off: 1 on `[0, 1]`, 0 on `[2, inf)`.
pub fn cutoff(r: f64) -> f64 {
    smooth_step(2.0 - r)
}

/// Bump profile with support `[1/2, 2]`; `sum_k bump(2^-k r) = 1` for `r > 0`.
pub fn bump(r: f64) -> f64 {
    cutoff(r) - cutoff(2.0 * r)
}

/// Cached masks `F phi_j` and `F phi~_j`, `j = 0..=J`, on one lattice.
#[derive(Debug, Clone)]
pub struct LpBank {
    grid: GridSpec,
    blocks: usize,
    masks: Vec<Vec<f64>>,
    wide: Vec<Vec<f64>>,
}

impl LpBank {
    /// Requires `2^J >= max |xi|` so every `phi_k`, `k > J`, vanishes on the
    /// lattice and `phi_0` is the low-frequency cut-off.
    pub fn new(grid: GridSpec, blocks: usize) -> Result<Self> {
        let need = Self::min_blocks(&grid);
        if blocks < need {
            return Err(LabError::InvalidParams(format!(
                "J = {blocks} does not cover max |xi| = {:.4} (need J >= {need})",
                grid.max_frequency()
            )));
        }
        let norms = grid.freq_norms();
        let mut masks = vec![vec![0.0; norms.len()]; blocks + 1];
        for (idx, &r) in norms.iter().enumerate() {
            let mut acc = 0.0;
            for (j, mask) in masks.iter_mut().enumerate().skip(1) {
                let v = bump(r / 2f64.powi(j as i32));
                mask[idx] = v;
                acc += v;
            }
            masks[0][idx] = 1.0 - acc;
        }
        let wide = (0..=blocks)
            .map(|j| {
                (0..norms.len())
                    .map(|i| {
                        let lo = if j > 0 { masks[j - 1][i] } else { 0.0 };
                        let hi = if j < blocks { masks[j + 1][i] } else { 0.0 };
                        lo + masks[j][i] + hi
                    })
                    .collect()
            })
            .collect();
        Ok(Self { grid, blocks, masks, wide })
    }

    /// Smallest admissible `J` for `grid`.
    pub fn min_blocks(grid: &GridSpec) -> usize {
        let top = grid.max_frequency();
        let mut j = 0;
        while 2f64.powi(j as i32) < top {
            j += 1;
        }
        j
    }

    pub fn for_grid(grid: GridSpec) -> Result<Self> {
        Self::new(grid, Self::min_blocks(&grid))
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Highest block index `J`.
    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn mask(&self, j: usize) -> &[f64] {
        &self.masks[j]
    }

    pub fn wide_mask(&self, j: usize) -> &[f64] {
        &self.wide[j]
    }

    fn check(&self, f: &Field) -> Result<()> {
        if *f.grid() != self.grid {
            return Err(LabError::ShapeMismatch("field and bank live on different grids".into()));
        }
        Ok(())
    }
}

fn real_mult(m: &[f64]) -> Vec<Complex64> {
    m.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// `phi_j * f`, per channel.
pub fn lp_block(f: &Field, bank: &LpBank, j: usize) -> Result<Field> {
    bank.check(f)?;
    if j > bank.blocks {
        return Err(LabError::InvalidParams(format!("block {j} beyond J = {}", bank.blocks)));
    }
    f.apply_multiplier(&real_mult(bank.mask(j)))
}

pub fn lp_blocks(f: &Field, bank: &LpBank) -> Result<Vec<Field>> {
    (0..=bank.blocks).map(|j| lp_block(f, bank, j)).collect()
}

/// `F^{-1}((1 + |xi|^2)^{beta/2} F f)`.
pub fn bessel_potential(f: &Field, beta: f64) -> Field {
    f.apply_symbol(|k| (1.0 + k[0] * k[0] + k[1] * k[1]).powf(beta / 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivMethod {
    Fourier,
    Hypersingular,
}

/// `-F^{-1}(|xi|^beta F f)`.
pub fn frac_deriv_fourier(f: &Field, beta: f64) -> Field {
    f.apply_symbol(|k| {
        let r = k[0].hypot(k[1]);
        if r == 0.0 {
            0.0
        } else {
            -r.powf(beta)
        }
    })
}

pub fn frac_deriv(f: &Field, beta: f64, method: DerivMethod) -> Result<Field> {
    match method {
        DerivMethod::Fourier => Ok(frac_deriv_fourier(f, beta)),
        DerivMethod::Hypersingular => {
            let h = Hypersingular::new(f.grid().dim(), beta, HypersingularRule::default())?;
            let c = h.analytic_constant();
            Ok(h.raw(f)?.scale(c))
        }
    }
}

/// Graded radial quadrature for `\int [f(x+y) - f(x)] |y|^{-d-beta} dy`:
/// log-spaced shells on `[inner, 1]`, then uniform shells with spacing
/// `outer_step / max|xi|` up to `R = (2 periods + 1) L / 2`. Beyond `R` the
/// shifted field is replaced by its mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HypersingularRule {
    pub inner: f64,
    pub shells_per_decade: usize,
    pub outer_step: f64,
    pub periods: usize,
    pub angles: usize,
}

impl Default for HypersingularRule {
    fn default() -> Self {
        Self { inner: 1e-4, shells_per_decade: 96, outer_step: 0.1, periods: 8, angles: 64 }
    }
}

#[derive(Debug, Clone)]
pub struct Hypersingular {
    dim: usize,
    beta: f64,
    rule: HypersingularRule,
}

/// Result of fitting the constant on a reference field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub fitted: f64,
    pub analytic: f64,
    pub residual: f64,
    pub taylor_bound: f64,
}

impl Hypersingular {
    pub fn new(dim: usize, beta: f64, rule: HypersingularRule) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(LabError::InvalidParams(format!(
                "hypersingular quadrature needs beta in (0, 1), got {beta}"
            )));
        }
        if rule.shells_per_decade < 4 || (dim == 2 && rule.angles < 8) {
            return Err(LabError::InvalidParams("hypersingular rule too coarse".into()));
        }
        Ok(Self { dim, beta, rule })
    }

    /// Radii and weights of the radial rule for `dr r^{d-1} r^{-d-beta}`.
    fn shells(&self, outer: f64, top: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let lo = self.rule.inner.ln();
        let knee = 1f64.min(outer);
        let decades = (knee.ln() - lo) / std::f64::consts::LN_10;
        let m = ((decades * self.rule.shells_per_decade as f64).ceil() as usize).max(8);
        let h = (knee.ln() - lo) / m as f64;
        for s in 0..=m {
            let r = (lo + s as f64 * h).exp();
            let tw = if s == 0 || s == m { 0.5 * h } else { h };
            // dr = r d(ln r)
            out.push((r, tw * r.powf(-self.beta)));
        }
        if outer > knee {
            let m = (((outer - knee) * top / self.rule.outer_step).ceil() as usize).max(8);
            let h = (outer - knee) / m as f64;
            for s in 0..=m {
                let r = knee + s as f64 * h;
                let tw = if s == 0 || s == m { 0.5 * h } else { h };
                out.push((r, tw * r.powf(-1.0 - self.beta)));
            }
        }
        out
    }

    /// `2^beta Gamma((d+beta)/2) / (pi^{d/2} |Gamma(-beta/2)|)`.
    pub fn analytic_constant(&self) -> f64 {
        let d = self.dim as f64;
        let b = self.beta;
        2f64.powf(b) * gamma((d + b) / 2.0) / (PI.powf(d / 2.0) * gamma(-b / 2.0).abs())
    }

    fn directions(&self) -> Vec<([f64; 2], f64)> {
        if self.dim == 1 {
            return vec![([1.0, 0.0], 1.0), ([-1.0, 0.0], 1.0)];
        }
        let q = self.rule.angles;
        let h = 2.0 * PI / q as f64;
        (0..q).map(|k| ([(k as f64 * h).cos(), (k as f64 * h).sin()], h)).collect()
    }

    /// The integral without the constant; periodic shifts are exact Fourier
    /// translations and the region `|y| > L/2` uses the field mean.
    pub fn raw(&self, f: &Field) -> Result<Field> {
        if f.grid().dim() != self.dim {
            return Err(LabError::ShapeMismatch("dimension mismatch".into()));
        }
        let grid = *f.grid();
        let outer = (2 * self.rule.periods + 1) as f64 * grid.length() / 2.0;
        let shells = self.shells(outer, grid.max_frequency());
        let dirs = self.directions();
        let ks = grid.wavevectors();
        let mut spec = f.clone();
        for c in 0..spec.channels() {
            grid.forward(spec.channel_mut(c));
        }
        // sum over shells of w(r) [e^{i(xi, r w)} - 1] in Fourier space
        let mut kernel = vec![Complex64::new(0.0, 0.0); grid.len()];
        let pieces: Vec<Vec<Complex64>> = shells
            .par_chunks(64)
            .map(|chunk| {
                let mut acc = vec![Complex64::new(0.0, 0.0); ks.len()];
                for &(r, weight) in chunk {
                    for (a, k) in acc.iter_mut().zip(&ks) {
                        let mut v = 0.0;
                        for (w, wt) in &dirs {
                            v += wt * (((k[0] * w[0] + k[1] * w[1]) * r).cos() - 1.0);
                        }
                        a.re += weight * v;
                    }
                }
                acc
            })
            .collect();
        for p in &pieces {
            kernel.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        }
        let surface: f64 = dirs.iter().map(|d| d.1).sum();
        let tail = surface * outer.powf(-self.beta) / self.beta;
        // (mean - f) * tail: the mean is the xi = 0 mode
        for (idx, k) in kernel.iter_mut().enumerate() {
            if idx != 0 {
                *k -= tail;
            }
        }
        let mut out = spec;
        for c in 0..out.channels() {
            let ch = out.channel_mut(c);
            ch.iter_mut().zip(&kernel).for_each(|(a, b)| *a *= b);
            grid.inverse(ch);
        }
        Ok(out)
    }

    /// Least-squares constant matching the Fourier derivative on `reference`,
    /// with the residual after calibration and the neglected inner-ball term
    /// bound `|D^2 f|_inf S_d eps^{2-beta} / (2 (2-beta))`.
    pub fn calibrate(&self, reference: &Field) -> Result<Calibration> {
        let raw = self.raw(reference)?;
        let target = frac_deriv_fourier(reference, self.beta);
        let num: f64 = raw.values().iter().zip(target.values()).map(|(a, b)| a.re * b.re).sum();
        let den: f64 = raw.values().iter().map(|a| a.re * a.re).sum();
        if den == 0.0 {
            return Err(LabError::Degenerate("reference field has zero derivative".into()));
        }
        let fitted = num / den;
        let residual = raw
            .values()
            .iter()
            .zip(target.values())
            .map(|(a, b)| (a.re * fitted - b.re).abs())
            .fold(0.0, f64::max);
        let hess = reference.apply_symbol(|k| k[0] * k[0] + k[1] * k[1]).max_abs();
        let surface = if self.dim == 1 { 2.0 } else { 2.0 * PI };
        let eps = self.rule.inner;
        let taylor_bound = hess * surface * eps.powf(2.0 - self.beta) / (2.0 * (2.0 - self.beta));
        Ok(Calibration { fitted, analytic: self.analytic_constant(), residual, taylor_bound })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormFamily {
    Besov,
    Sobolev,
    Htilde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeStructure {
    None,
    E,
    Etilde,
    Barred,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormDescriptor {
    pub family: NormFamily,
    pub beta: f64,
    pub p: f64,
    pub time: TimeStructure,
}

impl NormDescriptor {
    pub fn new(family: NormFamily, beta: f64, p: f64, time: TimeStructure) -> Result<Self> {
        if !(p >= 1.0) {
            return Err(LabError::InvalidParams(format!("p = {p} < 1")));
        }
        if time == TimeStructure::Barred && family == NormFamily::Htilde {
            return Err(LabError::InvalidParams("barred norms exist for besov and sobolev only".into()));
        }
        Ok(Self { family, beta, p, time })
    }
}

#[derive(Debug, Clone, Copy)]
pub enum NormInput<'a> {
    Field(&'a Field),
    SpaceTime(&'a SpaceTimeField),
    TwoTime(&'a TwoTimeField),
}

/// JSON record for norm reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormRecord {
    pub family: NormFamily,
    pub beta: f64,
    pub p: f64,
    pub time_structure: TimeStructure,
    pub value: f64,
}

/// `\int |f|_V^p dx` for one field.
fn lp_power(f: &Field, p: f64) -> f64 {
    let w = f.grid().cell_volume();
    f.pointwise_norm().iter().map(|v| v.powf(p)).sum::<f64>() * w
}

/// `|f|^p` in the chosen spatial norm.
fn spatial_power(f: &Field, family: NormFamily, beta: f64, p: f64, bank: &LpBank) -> Result<f64> {
    bank.check(f)?;
    match family {
        NormFamily::Sobolev => Ok(lp_power(&bessel_potential(f, beta), p)),
        NormFamily::Besov => {
            let mut acc = 0.0;
            for j in 0..=bank.blocks {
                let b = lp_block(f, bank, j)?;
                acc += 2f64.powf(j as f64 * beta * p) * lp_power(&b, p);
            }
            Ok(acc)
        }
        NormFamily::Htilde => {
            let mut sq = vec![0.0; f.grid().len()];
            for j in 0..=bank.blocks {
                let b = lp_block(f, bank, j)?;
                let wj = 2f64.powf(2.0 * beta * j as f64);
                sq.iter_mut().zip(b.pointwise_norm()).for_each(|(s, v)| *s += wj * v * v);
            }
            let w = f.grid().cell_volume();
            Ok(sq.iter().map(|s| s.powf(p / 2.0)).sum::<f64>() * w)
        }
    }
}

/// Weights of the inner trapezoid over `s_0..=s_j` for the outer knot `j`.
fn triangle_weights(times: &TimeGrid) -> Vec<f64> {
    let k = times.knots();
    let outer = times.trapezoid_weights(times.steps);
    let mut w = vec![0.0; k * (k + 1) / 2];
    for j in 0..k {
        let inner = times.trapezoid_weights(j);
        for i in 0..=j {
            w[TwoTimeField::index(i, j)] = outer[j] * inner[i];
        }
    }
    w
}

pub fn norm(input: NormInput<'_>, desc: &NormDescriptor, bank: &LpBank) -> Result<f64> {
    let p = desc.p;
    let power = match (input, desc.time) {
        (NormInput::Field(f), TimeStructure::None) => {
            spatial_power(f, desc.family, desc.beta, p, bank)?
        }
        (NormInput::SpaceTime(g), TimeStructure::E) => {
            let w = g.times().trapezoid_weights(g.times().steps);
            let parts: Vec<f64> = g
                .frames()
                .par_iter()
                .map(|f| spatial_power(f, desc.family, desc.beta, p, bank))
                .collect::<Result<_>>()?;
            parts.iter().zip(&w).map(|(a, b)| a * b).sum()
        }
        (NormInput::TwoTime(u), TimeStructure::Etilde) => {
            let w = triangle_weights(u.times());
            let parts: Vec<f64> = u
                .frames()
                .par_iter()
                .map(|f| spatial_power(f, desc.family, desc.beta, p, bank))
                .collect::<Result<_>>()?;
            parts.iter().zip(&w).map(|(a, b)| a * b).sum()
        }
        (NormInput::TwoTime(u), TimeStructure::Barred) => barred_power(u, desc, bank)?,
        _ => {
            return Err(LabError::ShapeMismatch(format!(
                "time structure {:?} does not match the input shape",
                desc.time
            )))
        }
    };
    Ok(power.powf(1.0 / p))
}

pub fn norm_record(input: NormInput<'_>, desc: &NormDescriptor, bank: &LpBank) -> Result<NormRecord> {
    Ok(NormRecord {
        family: desc.family,
        beta: desc.beta,
        p: desc.p,
        time_structure: desc.time,
        value: norm(input, desc, bank)?,
    })
}

/// `\int_a^b \int (\int_a^t |A f(s,t,x)|_V^2 ds)^{p/2} dx dt`, summed over
/// blocks with weights `2^{j beta p}` for Besov, with `A` the Bessel
/// potential for Sobolev.
fn barred_power(u: &TwoTimeField, desc: &NormDescriptor, bank: &LpBank) -> Result<f64> {
    let times = u.times();
    let k = times.knots();
    let outer = times.trapezoid_weights(times.steps);
    let npts = u.grid().len();
    let cell = u.grid().cell_volume();
    let p = desc.p;
    let filters: Vec<(f64, Vec<Complex64>)> = match desc.family {
        NormFamily::Besov => (0..=bank.blocks)
            .map(|j| (2f64.powf(j as f64 * desc.beta * p), real_mult(bank.mask(j))))
            .collect(),
        NormFamily::Sobolev => {
            let m = u
                .grid()
                .freq_norms()
                .iter()
                .map(|r| Complex64::new((1.0 + r * r).powf(desc.beta / 2.0), 0.0))
                .collect();
            vec![(1.0, m)]
        }
        NormFamily::Htilde => unreachable!("rejected by the descriptor"),
    };
    let per_t: Vec<f64> = (0..k)
        .into_par_iter()
        .map(|j| -> Result<f64> {
            let inner = times.trapezoid_weights(j);
            let mut total = 0.0;
            for (wj, mult) in &filters {
                let mut acc = vec![0.0; npts];
                for (i, wi) in inner.iter().enumerate() {
                    if *wi == 0.0 {
                        continue;
                    }
                    let f = u.frame(i, j).apply_multiplier(mult)?;
                    acc.iter_mut().zip(f.pointwise_norm()).for_each(|(a, v)| *a += wi * v * v);
                }
                total += wj * acc.iter().map(|a| a.powf(p / 2.0)).sum::<f64>() * cell;
            }
            Ok(total)
        })
        .collect::<Result<_>>()?;
    Ok(per_t.iter().zip(&outer).map(|(a, b)| a * b).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_and_bump_shape() {
        assert_eq!(smooth_step(-1.0), 0.0);
        assert_eq!(smooth_step(1.5), 1.0);
        for u in [0.1, 0.3, 0.77] {
            assert!((smooth_step(u) + smooth_step(1.0 - u) - 1.0).abs() < 1e-15);
        }
        assert_eq!(bump(0.5), 0.0);
        assert_eq!(bump(2.0), 0.0);
        assert!(bump(1.0) > 0.0 && bump(0.6) > 0.0 && bump(1.9) > 0.0);
    }

    #[test]
    fn bank_rejects_short_bank() {
        let g = GridSpec::new(1, 256, 32.0).unwrap();
        let need = LpBank::min_blocks(&g);
        assert!(LpBank::new(g, need - 1).is_err());
        assert!(LpBank::new(g, need).is_ok());
    }

    #[test]
    fn masks_partition_and_range() {
        for g in [GridSpec::new(1, 256, 32.0).unwrap(), GridSpec::new(2, 64, 16.0).unwrap()] {
            let bank = LpBank::for_grid(g).unwrap();
            for i in 0..g.len() {
                let s: f64 = (0..=bank.blocks()).map(|j| bank.mask(j)[i]).sum();
                assert!((s - 1.0).abs() < 1e-14);
                let nonzero = (1..=bank.blocks()).filter(|&j| bank.mask(j)[i] > 0.0).count();
                assert!(nonzero <= 2);
                for j in 0..=bank.blocks() {
                    assert!((0.0..=1.0 + 1e-15).contains(&bank.mask(j)[i]));
                }
            }
            assert_eq!(bank.mask(0)[0], 1.0);
        }
    }

    #[test]
    fn hypersingular_constant_rejects_range() {
        assert!(Hypersingular::new(1, 1.0, HypersingularRule::default()).is_err());
        assert!(Hypersingular::new(1, 0.0, HypersingularRule::default()).is_err());
    }
}
