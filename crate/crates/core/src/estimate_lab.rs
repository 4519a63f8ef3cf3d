//! Empirical-constant harness: ratio reports for the two operator bounds,
//! a derivative bound for homogeneous profiles, maximal and sharp functions, and
//! seeded random test fields.
//!
//! An existential inequality counts as verified when the measured ratio is
//! bounded and stays put under grid refinement.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{LabError, Result};
use crate::grid::{idft, Field, GridSpec, SpaceTimeField, TimeGrid, TwoTimeField};
use crate::kernel::Propagator;
use crate::lp_norms::{
    frac_deriv_fourier, norm, LpBank, NormDescriptor, NormFamily, NormInput, TimeStructure,
};
use crate::singular_ops::apply_i;
use crate::symbol::SymbolParams;

pub const REPORT_HEADER: &str =
    "verification of an existential bound = bounded measured ratio + stability under refinement";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeProfile {
    Constant,
    /// `a + b t` with independent random `a`, `b` per mode.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldEnsembleSpec {
    pub seed: u64,
    pub count: usize,
    pub band: (f64, f64),
    /// Spectral amplitude `|xi|^{-decay}`.
    #[serde(default)]
    pub decay: f64,
    pub time_profile: TimeProfile,
    #[serde(default = "one")]
    pub channels: usize,
}

fn one() -> usize {
    1
}

/// Integer frequency vectors `m` with `2 pi |m| / L` inside `band`, one per
/// `{m, -m}` pair, in an order that does not depend on `n`.
fn band_modes(grid: &GridSpec, band: (f64, f64)) -> Vec<[i64; 2]> {
    let unit = 2.0 * PI / grid.length();
    let top = (band.1 / unit).ceil() as i64;
    let mut out = Vec::new();
    let ys = if grid.dim() == 1 { 0..=0 } else { -top..=top };
    for m1 in ys {
        for m0 in -top..=top {
            let positive = m1 > 0 || (m1 == 0 && m0 > 0);
            if !positive {
                continue;
            }
            let r = unit * ((m0 * m0 + m1 * m1) as f64).sqrt();
            if r >= band.0 && r <= band.1 {
                out.push([m0, m1]);
            }
        }
    }
    out
}

fn lattice_index(grid: &GridSpec, m: [i64; 2]) -> usize {
    let n = grid.n() as i64;
    let wrap = |v: i64| (v.rem_euclid(n)) as usize;
    if grid.dim() == 1 {
        wrap(m[0])
    } else {
        wrap(m[0]) * grid.n() + wrap(m[1])
    }
}

impl FieldEnsembleSpec {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        if self.count == 0 || self.channels == 0 {
            return Err(LabError::InvalidParams("ensemble needs count and channels >= 1".into()));
        }
        let nyquist = PI * grid.n() as f64 / grid.length();
        if !(self.band.0 >= 0.0 && self.band.1 > self.band.0) {
            return Err(LabError::InvalidParams(format!("bad band {:?}", self.band)));
        }
        if self.band.1 >= nyquist {
            return Err(LabError::InvalidParams(format!(
                "band {:?} reaches the lattice edge {nyquist:.4}",
                self.band
            )));
        }
        if band_modes(grid, self.band).is_empty() {
            return Err(LabError::InvalidParams(format!("band {:?} holds no lattice mode", self.band)));
        }
        Ok(())
    }
}

/// Seeded band-limited Gaussian fields. Coefficients are keyed by integer
/// frequency, so grids that share `L` and contain the band see the same
/// function.
pub fn random_fields(spec: &FieldEnsembleSpec, grid: GridSpec, times: TimeGrid) -> Result<Vec<SpaceTimeField>> {
    spec.validate(&grid)?;
    let modes = band_modes(&grid, spec.band);
    let unit = 2.0 * PI / grid.length();
    (0..spec.count)
        .into_par_iter()
        .map(|member| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(member as u64);
            let mut draw = || -> Complex64 {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im)
            };
            // coefficients[c][mode] = (a, b)
            let coefficients: Vec<Vec<(Complex64, Complex64)>> = (0..spec.channels)
                .map(|_| {
                    modes
                        .iter()
                        .map(|m| {
                            let r = unit * ((m[0] * m[0] + m[1] * m[1]) as f64).sqrt();
                            let amp = r.powf(-spec.decay);
                            let a = draw() * amp;
                            let b = match spec.time_profile {
                                TimeProfile::Constant => Complex64::new(0.0, 0.0),
                                TimeProfile::Linear => draw() * amp,
                            };
                            (a, b)
                        })
                        .collect()
                })
                .collect();
            let frames = (0..times.knots())
                .map(|k| {
                    let t = times.time(k);
                    let parts: Vec<Field> = coefficients
                        .iter()
                        .map(|coef| {
                            // F g(xi_m) = L^d c_m gives g = sum c_m e^{i xi_m x} + c.c.
                            let scale = grid.length().powi(grid.dim() as i32);
                            let mut spec = vec![Complex64::new(0.0, 0.0); grid.len()];
                            for (m, (a, b)) in modes.iter().zip(coef) {
                                let v = (a + b * t) * scale;
                                spec[lattice_index(&grid, *m)] = v;
                                spec[lattice_index(&grid, [-m[0], -m[1]])] = v.conj();
                            }
                            idft(&Field::from_spectrum(grid, spec)?)?.realize()
                        })
                        .collect::<Result<_>>()?;
                    Field::stack_channels(&parts)
                })
                .collect::<Result<_>>()?;
            SpaceTimeField::new(times, frames)
        })
        .collect()
}

/// Least-squares slope of `log |F g|^2` against `log |xi|` over the band,
/// pooled over the ensemble at the first knot.
pub fn spectral_slope(fields: &[SpaceTimeField], band: (f64, f64)) -> Result<f64> {
    let grid = *fields[0].grid();
    let norms = grid.freq_norms();
    let mut power = vec![0.0; grid.len()];
    for f in fields {
        let spec = crate::grid::dft(f.frame(0))?;
        for c in 0..spec.channels() {
            power.iter_mut().zip(spec.channel(c)).for_each(|(p, v)| *p += v.norm_sqr());
        }
    }
    // average over shells of width one lattice step
    let unit = 2.0 * PI / grid.length();
    let mut shells: std::collections::BTreeMap<i64, (f64, f64, usize)> = Default::default();
    for (r, p) in norms.iter().zip(&power) {
        if *r >= band.0 && *r <= band.1 && *r > 0.0 {
            let e = shells.entry((r / unit).round() as i64).or_insert((0.0, 0.0, 0));
            e.0 += r.ln();
            e.1 += p;
            e.2 += 1;
        }
    }
    let pts: Vec<(f64, f64)> =
        shells.values().map(|(lr, p, c)| (lr / *c as f64, (p / *c as f64).ln())).collect();
    if pts.len() < 2 {
        return Err(LabError::Degenerate("too few shells for a slope fit".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioSample {
    pub sample_id: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

impl RatioSample {
    fn new(sample_id: usize, lhs: f64, rhs: f64) -> Result<Self> {
        if !(rhs > 0.0) {
            return Err(LabError::Degenerate(format!("sample {sample_id} has zero right-hand side")));
        }
        Ok(Self { sample_id, lhs, rhs, ratio: lhs / rhs })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioReport {
    pub header: String,
    pub label: String,
    pub samples: Vec<RatioSample>,
    pub max_ratio: f64,
    pub refined_samples: Vec<RatioSample>,
    pub refined_max_ratio: f64,
    pub refinement_factor: f64,
    pub pass: bool,
}

impl RatioReport {
    pub fn new(label: &str, coarse: Vec<RatioSample>, fine: Vec<RatioSample>, growth_limit: f64) -> Self {
        let max_ratio = coarse.iter().map(|s| s.ratio).fold(0.0, f64::max);
        let refined_max_ratio = fine.iter().map(|s| s.ratio).fold(0.0, f64::max);
        let refinement_factor = if fine.is_empty() {
            1.0
        } else {
            refined_max_ratio.max(max_ratio) / refined_max_ratio.min(max_ratio)
        };
        let pass = max_ratio.is_finite() && refinement_factor.is_finite() && refinement_factor < growth_limit;
        Self {
            header: REPORT_HEADER.to_string(),
            label: label.to_string(),
            samples: coarse,
            max_ratio,
            refined_samples: fine,
            refined_max_ratio,
            refinement_factor,
            pass,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {}", self.header)?;
        writeln!(w, "sample_id,lhs,rhs,ratio,level")?;
        for (level, set) in [("coarse", &self.samples), ("fine", &self.refined_samples)] {
            for s in set.iter() {
                writeln!(w, "{},{:e},{:e},{:e},{}", s.sample_id, s.lhs, s.rhs, s.ratio, level)?;
            }
        }
        Ok(())
    }
}

/// `|I g|_{H~^{beta+alpha}_p(E~)}` against `|g|_{B^{beta+alpha-alpha/p}_{pp}(E)}`.
pub fn ratio_prop1(
    id: usize,
    g: &SpaceTimeField,
    prop: &Propagator,
    bank: &LpBank,
    beta: f64,
    p: f64,
) -> Result<RatioSample> {
    check_p(p)?;
    prop1_sample(id, g, &apply_i(g, prop)?, prop.alpha(), bank, beta, p)
}

fn check_p(p: f64) -> Result<()> {
    if p < 2.0 {
        return Err(LabError::InvalidParams(format!("p = {p} < 2")));
    }
    Ok(())
}

fn nonzero_rhs(id: usize, rhs: f64) -> Result<()> {
    if !(rhs > 0.0) {
        return Err(LabError::Degenerate(format!("sample {id} has zero right-hand side")));
    }
    Ok(())
}

/// [`ratio_prop1`] with `u = I g` supplied.
pub fn prop1_sample(
    id: usize,
    g: &SpaceTimeField,
    u: &TwoTimeField,
    alpha: f64,
    bank: &LpBank,
    beta: f64,
    p: f64,
) -> Result<RatioSample> {
    check_p(p)?;
    let rhs = norm(
        NormInput::SpaceTime(g),
        &NormDescriptor::new(NormFamily::Besov, beta + alpha - alpha / p, p, TimeStructure::E)?,
        bank,
    )?;
    nonzero_rhs(id, rhs)?;
    let lhs = norm(
        NormInput::TwoTime(u),
        &NormDescriptor::new(NormFamily::Htilde, beta + alpha, p, TimeStructure::Etilde)?,
        bank,
    )?;
    RatioSample::new(id, lhs, rhs)
}

/// `d^{alpha/2} I g` frame by frame.
pub fn half_derivative(u: &TwoTimeField, alpha: f64) -> TwoTimeField {
    u.map(|f| frac_deriv_fourier(f, alpha / 2.0))
}

/// `|d^{alpha/2} I g|` in the barred norm against `|g|` in `family(beta, p)` on `E`.
pub fn ratio_prop2(
    id: usize,
    g: &SpaceTimeField,
    prop: &Propagator,
    bank: &LpBank,
    beta: f64,
    p: f64,
    family: NormFamily,
) -> Result<RatioSample> {
    check_p(p)?;
    let du = half_derivative(&apply_i(g, prop)?, prop.alpha());
    prop2_sample(id, g, &du, bank, beta, p, family)
}

/// [`ratio_prop2`] with `du = d^{alpha/2} I g` supplied.
pub fn prop2_sample(
    id: usize,
    g: &SpaceTimeField,
    du: &TwoTimeField,
    bank: &LpBank,
    beta: f64,
    p: f64,
    family: NormFamily,
) -> Result<RatioSample> {
    check_p(p)?;
    let rhs = norm(NormInput::SpaceTime(g), &NormDescriptor::new(family, beta, p, TimeStructure::E)?, bank)?;
    nonzero_rhs(id, rhs)?;
    let lhs = norm(NormInput::TwoTime(du), &NormDescriptor::new(family, beta, p, TimeStructure::Barred)?, bank)?;
    RatioSample::new(id, lhs, rhs)
}

/// Exact `p = 2` left side of the first bound for frozen coefficients: the
/// `t` integral in closed form, trapezoid in `s`.
pub fn prop1_parseval_lhs(
    g: &SpaceTimeField,
    prop: &Propagator,
    bank: &LpBank,
    beta: f64,
) -> Result<f64> {
    if !prop.is_frozen() {
        return Err(LabError::InvalidParams("closed form needs frozen coefficients".into()));
    }
    let grid = *g.grid();
    let times = g.times();
    let alpha = prop.alpha();
    let weight: Vec<f64> = (0..grid.len())
        .map(|i| {
            (0..=bank.blocks())
                .map(|j| 2f64.powf(2.0 * (beta + alpha) * j as f64) * bank.mask(j)[i].powi(2))
                .sum()
        })
        .collect();
    // Re psi per lattice point from the unit-time exponent
    let (unit, _) = prop.multiplier(0.0, 1.0)?;
    let re_psi: Vec<f64> = unit.iter().map(|m| m.norm().ln()).collect();
    let ws = times.trapezoid_weights(times.steps);
    let b = times.end;
    let mut total = 0.0;
    for (k, w) in ws.iter().enumerate() {
        let s = times.time(k);
        let spec = crate::grid::dft(g.frame(k))?;
        let span = b - s;
        for c in 0..spec.channels() {
            for (i, v) in spec.channel(c).iter().enumerate() {
                let a = 2.0 * re_psi[i];
                let tint = if a.abs() * span < 1e-12 { span } else { ((a * span).exp() - 1.0) / a };
                total += w * weight[i] * v.norm_sqr() * tint;
            }
        }
    }
    Ok((total / grid.length().powi(grid.dim() as i32)).sqrt())
}

/// `m = 1` fractional Laplacian, or the heat symbol at `alpha = 2`.
pub fn reference_params(alpha: f64, dim: usize) -> Result<SymbolParams> {
    if alpha == 2.0 {
        SymbolParams::heat(dim)
    } else {
        SymbolParams::fractional_laplacian(alpha, dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// `|I g|_{H~^{beta+alpha}_p(E~)} <= C |g|_{B^{beta+alpha-alpha/p}_{pp}(E)}`.
    First,
    /// `|d^{alpha/2} I g|` barred against `|g|` in the given family.
    Second(NormFamily),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessSpec {
    pub alphas: Vec<f64>,
    pub ps: Vec<f64>,
    pub betas: Vec<f64>,
    pub n: usize,
    pub steps: usize,
    pub length: f64,
    pub horizon: f64,
    pub ensemble: FieldEnsembleSpec,
    pub growth_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseReport {
    pub bound: Bound,
    pub alpha: f64,
    pub p: f64,
    pub beta: f64,
    pub report: RatioReport,
    /// First bound at `p = 2`: largest `|LHS / exact - 1|` over both levels.
    pub parseval_error: Option<f64>,
    /// Second bound at `p = 2`: largest `ratio (2 mu)^{1/2}`, at most 1.
    pub parseval_bound: Option<f64>,
}

/// Ratios for every `(alpha, p, beta)` on `(n, steps)` and `(2n, 2 steps)`.
pub fn run_harness(spec: &HarnessSpec, bound: Bound) -> Result<Vec<CaseReport>> {
    let cases: Vec<(usize, f64, f64)> = (0..spec.alphas.len())
        .flat_map(|a| spec.ps.iter().flat_map(move |&p| spec.betas.iter().map(move |&b| (a, p, b))))
        .collect();
    if cases.is_empty() {
        return Err(LabError::InvalidParams("harness has no cases".into()));
    }
    for &p in &spec.ps {
        check_p(p)?;
    }
    let mut samples: Vec<[Vec<RatioSample>; 2]> = vec![[Vec::new(), Vec::new()]; cases.len()];
    let mut extras: Vec<Option<f64>> = vec![None; cases.len()];
    for level in 0..2 {
        let grid = GridSpec::new(1, spec.n << level, spec.length)?;
        let times = TimeGrid::new(0.0, spec.horizon, spec.steps << level)?;
        let fields = random_fields(&spec.ensemble, grid, times)?;
        let bank = LpBank::for_grid(grid)?;
        for (ai, &alpha) in spec.alphas.iter().enumerate() {
            let prop = Propagator::new(&reference_params(alpha, 1)?, grid)?;
            let mine: Vec<usize> = (0..cases.len()).filter(|&c| cases[c].0 == ai).collect();
            let per_member: Vec<Vec<(RatioSample, Option<f64>)>> = fields
                .par_iter()
                .enumerate()
                .map(|(id, g)| {
                    let u = apply_i(g, &prop)?;
                    let u = match bound {
                        Bound::First => u,
                        Bound::Second(_) => half_derivative(&u, alpha),
                    };
                    mine.iter()
                        .map(|&c| {
                            let (_, p, beta) = cases[c];
                            match bound {
                                Bound::First => {
                                    let s = prop1_sample(id, g, &u, alpha, &bank, beta, p)?;
                                    let extra = if p == 2.0 {
                                        let exact = prop1_parseval_lhs(g, &prop, &bank, beta)?;
                                        Some((s.lhs / exact - 1.0).abs())
                                    } else {
                                        None
                                    };
                                    Ok((s, extra))
                                }
                                Bound::Second(family) => {
                                    let s = prop2_sample(id, g, &u, &bank, beta, p, family)?;
                                    let extra = (p == 2.0).then(|| s.ratio * (2.0 * prop.mu()).sqrt());
                                    Ok((s, extra))
                                }
                            }
                        })
                        .collect()
                })
                .collect::<Result<_>>()?;
            for member in per_member {
                for (&c, (s, extra)) in mine.iter().zip(member) {
                    samples[c][level].push(s);
                    if let Some(e) = extra {
                        extras[c] = Some(extras[c].map_or(e, |v: f64| v.max(e)));
                    }
                }
            }
        }
    }
    Ok(cases
        .iter()
        .zip(samples)
        .zip(extras)
        .map(|((&(ai, p, beta), [coarse, fine]), extra)| {
            let alpha = spec.alphas[ai];
            let label = format!("{bound:?} alpha={alpha} p={p} beta={beta}");
            let report = RatioReport::new(&label, coarse, fine, spec.growth_limit);
            let (parseval_error, parseval_bound) = match bound {
                Bound::First => (extra, None),
                Bound::Second(_) => (None, extra),
            };
            CaseReport { bound, alpha, p, beta, report, parseval_error, parseval_bound }
        })
        .collect())
}

/// Relative gap between the `p = 2` barred left side squared of a
/// multichannel `g` and the sum over its channels.
pub fn channel_additivity(
    g: &SpaceTimeField,
    prop: &Propagator,
    bank: &LpBank,
    beta: f64,
    family: NormFamily,
) -> Result<f64> {
    let whole = ratio_prop2(0, g, prop, bank, beta, 2.0, family)?.lhs.powi(2);
    let mut parts = 0.0;
    for c in 0..g.channels() {
        let frames = g.frames().iter().map(|f| f.split_channels().swap_remove(c)).collect();
        let gc = SpaceTimeField::new(*g.times(), frames)?;
        parts += ratio_prop2(0, &gc, prop, bank, beta, 2.0, family)?.lhs.powi(2);
    }
    Ok((whole - parts).abs() / parts)
}

/// Tanh-sinh nodes on `[0, 1]` as `(x, 1 - x, weight)`.
fn tanh_sinh(level: usize) -> Vec<(f64, f64, f64)> {
    let h = 2f64.powi(-(level as i32));
    let half = PI / 2.0;
    let mut out = Vec::new();
    let kmax = (4.0 / h) as i64;
    for k in -kmax..=kmax {
        let t = k as f64 * h;
        let u = half * t.sinh();
        let w = 0.5 * h * half * t.cosh() / u.cosh().powi(2);
        // 1 - tanh(u) = 2 / (1 + e^{2u})
        let left = 1.0 / (1.0 + (2.0 * u).exp());
        let right = 1.0 / (1.0 + (-2.0 * u).exp());
        if w < 1e-300 || left == 0.0 || right == 0.0 {
            continue;
        }
        out.push((left, right, w));
    }
    out
}

/// `\int_a^b f` where `f` receives `(y, y - a, b - y)`.
fn integrate(nodes: &[(f64, f64, f64)], a: f64, b: f64, f: &dyn Fn(f64, f64, f64) -> f64) -> f64 {
    let len = b - a;
    nodes
        .iter()
        .map(|&(l, r, w)| {
            let dl = len * l;
            let dr = len * r;
            let y = if l < r { a + dl } else { b - dr };
            w * len * f(y, dl, dr)
        })
        .sum()
}

/// Homogeneous profile `F(xi) = |xi|^l m_F(xi / |xi|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    /// 1-d: `m_F(+1) = plus`, `m_F(-1) = minus`.
    TwoValued { plus: f64, minus: f64 },
    /// 2-d: `mean + amplitude cos(order theta)`.
    Harmonic { mean: f64, amplitude: f64, order: u32 },
}

impl Profile {
    fn dim(&self) -> usize {
        match self {
            Profile::TwoValued { .. } => 1,
            Profile::Harmonic { .. } => 2,
        }
    }

    fn angular(&self, w: [f64; 2]) -> f64 {
        match *self {
            Profile::TwoValued { plus, minus } => {
                if w[0] >= 0.0 {
                    plus
                } else {
                    minus
                }
            }
            Profile::Harmonic { mean, amplitude, order } => {
                mean + amplitude * (order as f64 * w[1].atan2(w[0])).cos()
            }
        }
    }

    fn eval(&self, l: f64, x: [f64; 2]) -> f64 {
        let r = x[0].hypot(x[1]);
        if r == 0.0 {
            return 0.0;
        }
        r.powf(l) * self.angular([x[0] / r, x[1] / r])
    }

    /// `F(x + h) - F(x)` without cancellation for small `h`.
    fn increment(&self, l: f64, x: [f64; 2], h: [f64; 2]) -> f64 {
        let y = [x[0] + h[0], x[1] + h[1]];
        let rho2 = x[0] * x[0] + x[1] * x[1];
        let q = (2.0 * (x[0] * h[0] + x[1] * h[1]) + h[0] * h[0] + h[1] * h[1]) / rho2;
        if q <= -1.0 + 1e-12 || y[0].hypot(y[1]) == 0.0 {
            return self.eval(l, y) - self.eval(l, x);
        }
        let rho = rho2.sqrt();
        let ry = y[0].hypot(y[1]);
        let m_new = self.angular([y[0] / ry, y[1] / ry]);
        let dm = match *self {
            Profile::TwoValued { .. } => m_new - self.angular([x[0] / rho, x[1] / rho]),
            Profile::Harmonic { amplitude, order, .. } => {
                let theta = x[1].atan2(x[0]);
                let turn = (x[0] * y[1] - x[1] * y[0]).atan2(x[0] * y[0] + x[1] * y[1]);
                let k = order as f64;
                -2.0 * amplitude * (k * (theta + turn / 2.0)).sin() * (k * turn / 2.0).sin()
            }
        };
        let ratio_m1 = (0.5 * l * q.ln_1p()).exp_m1();
        rho.powf(l) * (ratio_m1 * m_new + dm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuxReport {
    pub l: f64,
    pub delta: f64,
    /// `(xi, |xi|^{delta - l} |d^delta F(xi)|)` on the annulus.
    pub values: Vec<([f64; 2], f64)>,
    pub sup: f64,
    /// Largest relative spread of the normalized value along one ray.
    pub ray_spread: f64,
    pub refined_sup: f64,
    pub refinement_change: f64,
}

fn frac_constant(dim: usize, delta: f64) -> f64 {
    let d = dim as f64;
    2f64.powf(delta) * gamma((d + delta) / 2.0) / (PI.powf(d / 2.0) * gamma(-delta / 2.0).abs())
}

/// `c \int_0^inf [F(xi + r w) + F(xi - r w) - 2 F(xi)] r^{-1-delta} dr`
/// split at `r*` and `2|xi|`, the tail mapped to `[0, 1]` by `r = 2|xi| / u`.
fn radial_second_difference(
    profile: &Profile,
    l: f64,
    delta: f64,
    xi: [f64; 2],
    w: [f64; 2],
    r_star: f64,
    nodes: &[(f64, f64, f64)],
) -> f64 {
    let rho = xi[0].hypot(xi[1]);
    let g = |r: f64| {
        let a = profile.increment(l, xi, [r * w[0], r * w[1]]);
        let b = profile.increment(l, xi, [-r * w[0], -r * w[1]]);
        (a + b) * r.powf(-1.0 - delta)
    };
    let far = 2.0 * rho;
    let cut = r_star.clamp(0.0, far);
    let mut total = 0.0;
    if cut > 0.0 {
        total += integrate(nodes, 0.0, cut, &|y, _, _| g(y));
    }
    if far > cut {
        total += integrate(nodes, cut, far, &|y, _, _| g(y));
    }
    // r = far / u, dr = far u^{-2} du
    total += integrate(nodes, 0.0, 1.0, &|u, dl, _| {
        if dl == 0.0 {
            return 0.0;
        }
        g(far / u) * far / (u * u)
    });
    total
}

fn aux_value(profile: &Profile, l: f64, delta: f64, xi: [f64; 2], level: usize, angles: usize) -> f64 {
    let nodes = tanh_sinh(level);
    let c = frac_constant(profile.dim(), delta);
    let rho = xi[0].hypot(xi[1]);
    if profile.dim() == 1 {
        // F(xi - r) passes through the origin at r = |xi|
        return c * radial_second_difference(profile, l, delta, xi, [1.0, 0.0], rho, &nodes);
    }
    // half-circle of directions aligned with xi; symmetrization covers the rest
    let phase = xi[1].atan2(xi[0]);
    let h = PI / angles as f64;
    let mut total = 0.0;
    for q in 0..angles {
        let th = phase + q as f64 * h;
        let w = [th.cos(), th.sin()];
        let r_star = (xi[0] * w[0] + xi[1] * w[1]).abs();
        total += h * radial_second_difference(profile, l, delta, xi, w, r_star, &nodes);
    }
    c * total
}

/// Normalized `|xi|^{delta-l} |d^delta F(xi)|` on `1 <= |xi| <= 8` along
/// `rays` directions with `radii` points each, at quadrature `level` and
/// `level + 1`.
pub fn verify_auxl2(
    l: f64,
    delta: f64,
    profile: Profile,
    rays: usize,
    radii: usize,
    level: usize,
) -> Result<AuxReport> {
    let d = profile.dim() as f64;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(LabError::InvalidParams(format!("delta = {delta} not in (0, 1)")));
    }
    if !(l > -d && l < delta) {
        return Err(LabError::InvalidParams(format!("l = {l} not in (-{d}, {delta})")));
    }
    if rays == 0 || radii < 2 {
        return Err(LabError::InvalidParams("need at least one ray and two radii".into()));
    }
    let directions: Vec<[f64; 2]> = if profile.dim() == 1 {
        vec![[1.0, 0.0], [-1.0, 0.0]]
    } else {
        (0..rays)
            .map(|k| {
                let th = 2.0 * PI * (k as f64 + 0.5) / rays as f64;
                [th.cos(), th.sin()]
            })
            .collect()
    };
    let angles = 64 * (1 << level.saturating_sub(4));
    let points: Vec<(usize, [f64; 2])> = directions
        .iter()
        .enumerate()
        .flat_map(|(k, w)| {
            (0..radii).map(move |i| {
                let r = 8f64.powf(i as f64 / (radii - 1) as f64);
                (k, [r * w[0], r * w[1]])
            })
        })
        .collect();
    let eval = |lev: usize, ang: usize| -> Vec<f64> {
        points
            .par_iter()
            .map(|(_, xi)| {
                let rho = xi[0].hypot(xi[1]);
                rho.powf(delta - l) * aux_value(&profile, l, delta, *xi, lev, ang).abs()
            })
            .collect()
    };
    let coarse = eval(level, angles);
    let fine = eval(level + 1, angles * 2);
    let sup = coarse.iter().cloned().fold(0.0, f64::max);
    let refined_sup = fine.iter().cloned().fold(0.0, f64::max);
    let mut ray_spread: f64 = 0.0;
    for k in 0..directions.len() {
        let vals: Vec<f64> =
            points.iter().zip(&coarse).filter(|(p, _)| p.0 == k).map(|(_, v)| *v).collect();
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        if max > 0.0 {
            ray_spread = ray_spread.max((max - min) / max);
        }
    }
    let values = points.iter().zip(&coarse).map(|((_, xi), v)| (*xi, *v)).collect();
    Ok(AuxReport {
        l,
        delta,
        values,
        sup,
        ray_spread,
        refined_sup,
        refinement_change: (refined_sup - sup).abs() / sup.max(f64::MIN_POSITIVE),
    })
}

/// One parabolic box: spatial half-width `r` cells, time half-width `k`
/// knots, centred at `(time, cell)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxStat {
    pub radius: usize,
    pub time_radius: usize,
    pub average_abs: f64,
    pub mean_oscillation: f64,
    pub average_square: f64,
}

/// Spatial radii `0, 1, 2, 4, ...` cells (up to `n/2`) and the matching time
/// half-widths `floor((r cell)^alpha / dt)`.
pub fn box_radii(grid: &GridSpec, times: &TimeGrid, alpha: f64) -> Vec<(usize, usize)> {
    let mut out = vec![(0, 0)];
    let mut r = 1;
    while r <= grid.n() / 2 {
        let delta = r as f64 * grid.cell();
        out.push((r, (delta.powf(alpha) / times.dt()).floor() as usize));
        r *= 2;
    }
    out
}

/// Indices (time knot, flat point) of the box, periodic in space and clipped
/// in time.
fn box_members(grid: &GridSpec, times: &TimeGrid, t: usize, cell: [usize; 2], r: usize, k: usize) -> Vec<(usize, usize)> {
    let n = grid.n() as i64;
    let t0 = t.saturating_sub(k);
    let t1 = (t + k).min(times.steps);
    let span: Vec<i64> = (-(r as i64)..=r as i64).collect();
    let mut out = Vec::new();
    for tk in t0..=t1 {
        if grid.dim() == 1 {
            for &a in &span {
                out.push((tk, (cell[0] as i64 + a).rem_euclid(n) as usize));
            }
        } else {
            for &a in &span {
                for &b in &span {
                    let i = (cell[0] as i64 + a).rem_euclid(n) as usize;
                    let j = (cell[1] as i64 + b).rem_euclid(n) as usize;
                    out.push((tk, i * grid.n() + j));
                }
            }
        }
    }
    out
}

/// Box family: for each radius, centres on the lattice of multiples of the
/// radius (space) and of the time radius (time); radius 0 is every point.
fn box_family(grid: &GridSpec, times: &TimeGrid, alpha: f64) -> Vec<(usize, [usize; 2], usize, usize)> {
    let mut out = Vec::new();
    for (r, k) in box_radii(grid, times, alpha) {
        let sstep = r.max(1);
        let tstep = k.max(1);
        let centres: Vec<usize> = (0..grid.n()).step_by(sstep).collect();
        for t in (0..times.knots()).step_by(tstep) {
            if grid.dim() == 1 {
                for &c in &centres {
                    out.push((t, [c, 0], r, k));
                }
            } else {
                for &a in &centres {
                    for &b in &centres {
                        out.push((t, [a, b], r, k));
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct MaximalSharp {
    pub maximal: SpaceTimeField,
    pub sharp: SpaceTimeField,
    pub boxes: Vec<BoxStat>,
}

/// Maximal and sharp functions over the dyadic parabolic box family.
pub fn maximal_and_sharp(h: &SpaceTimeField, alpha: f64) -> Result<MaximalSharp> {
    if h.channels() != 1 {
        return Err(LabError::ShapeMismatch("maximal function needs a scalar field".into()));
    }
    let grid = *h.grid();
    let times = *h.times();
    let vals: Vec<Vec<f64>> = h.frames().iter().map(|f| f.real_parts(0)).collect();
    let family = box_family(&grid, &times, alpha);
    let per_box: Vec<(Vec<(usize, usize)>, BoxStat)> = family
        .par_iter()
        .map(|&(t, c, r, k)| {
            let members = box_members(&grid, &times, t, c, r, k);
            let n = members.len() as f64;
            let mean = members.iter().map(|&(a, b)| vals[a][b]).sum::<f64>() / n;
            let avg_abs = members.iter().map(|&(a, b)| vals[a][b].abs()).sum::<f64>() / n;
            let osc = members.iter().map(|&(a, b)| (vals[a][b] - mean).abs()).sum::<f64>() / n;
            let sq = members.iter().map(|&(a, b)| vals[a][b].powi(2)).sum::<f64>() / n;
            let stat = BoxStat { radius: r, time_radius: k, average_abs: avg_abs, mean_oscillation: osc, average_square: sq };
            (members, stat)
        })
        .collect();
    let mut maximal = vec![vec![0.0; grid.len()]; times.knots()];
    let mut sharp = vec![vec![0.0; grid.len()]; times.knots()];
    for (members, stat) in &per_box {
        for &(a, b) in members {
            if stat.average_abs > maximal[a][b] {
                maximal[a][b] = stat.average_abs;
            }
            if stat.mean_oscillation > sharp[a][b] {
                sharp[a][b] = stat.mean_oscillation;
            }
        }
    }
    let to_field = |rows: Vec<Vec<f64>>| -> Result<SpaceTimeField> {
        let frames = rows.iter().map(|r| Field::from_real(grid, r)).collect::<Result<_>>()?;
        SpaceTimeField::new(times, frames)
    };
    Ok(MaximalSharp {
        maximal: to_field(maximal)?,
        sharp: to_field(sharp)?,
        boxes: per_box.into_iter().map(|(_, s)| s).collect(),
    })
}

pub fn maximal_fn(h: &SpaceTimeField, alpha: f64) -> Result<SpaceTimeField> {
    Ok(maximal_and_sharp(h, alpha)?.maximal)
}

pub fn sharp_fn(h: &SpaceTimeField, alpha: f64) -> Result<SpaceTimeField> {
    Ok(maximal_and_sharp(h, alpha)?.sharp)
}

/// Space-time `L^p` norm with trapezoid weights in time.
pub fn spacetime_lp(h: &SpaceTimeField, p: f64) -> f64 {
    let w = h.times().trapezoid_weights(h.times().steps);
    let cell = h.grid().cell_volume();
    let s: f64 = h
        .frames()
        .iter()
        .zip(&w)
        .map(|(f, wt)| wt * cell * f.pointwise_norm().iter().map(|v| v.powf(p)).sum::<f64>())
        .sum();
    s.powf(1.0 / p)
}

/// Largest `(h_B^#)^2 / avg_B h^2` over the box family; at most 1.
pub fn sharp_domination(boxes: &[BoxStat]) -> f64 {
    boxes
        .iter()
        .filter(|b| b.average_square > 0.0)
        .map(|b| b.mean_oscillation.powi(2) / b.average_square)
        .fold(0.0, f64::max)
}

/// `G u(t_j, x) = (\int_0^{t_j} |u(s, t_j, x)|^2 ds)^{1/2}`.
pub fn square_aggregate(u: &TwoTimeField) -> Result<SpaceTimeField> {
    let times = *u.times();
    let frames = (0..times.knots())
        .map(|j| {
            let w = times.trapezoid_weights(j);
            let mut acc = vec![0.0; u.grid().len()];
            for (i, wi) in w.iter().enumerate() {
                acc.iter_mut().zip(u.frame(i, j).pointwise_norm()).for_each(|(a, v)| *a += wi * v * v);
            }
            let vals: Vec<f64> = acc.iter().map(|a| a.sqrt()).collect();
            Field::from_real(*u.grid(), &vals)
        })
        .collect::<Result<_>>()?;
    SpaceTimeField::new(times, frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_sinh_integrates_endpoint_singularity() {
        let nodes = tanh_sinh(6);
        let v = integrate(&nodes, 0.0, 1.0, &|_, dl, _| dl.powf(-0.5));
        assert!((v - 2.0).abs() < 1e-10, "{v}");
        let v = integrate(&nodes, 1.0, 3.0, &|y, _, _| y * y);
        assert!((v - 26.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn band_modes_independent_of_n() {
        let a = band_modes(&GridSpec::new(1, 64, 32.0).unwrap(), (0.5, 3.0));
        let b = band_modes(&GridSpec::new(1, 256, 32.0).unwrap(), (0.5, 3.0));
        assert_eq!(a, b);
        assert!(!a.is_empty());
    }

    #[test]
    fn box_radii_include_singleton() {
        let g = GridSpec::new(1, 16, 8.0).unwrap();
        let t = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let r = box_radii(&g, &t, 1.5);
        assert_eq!(r[0], (0, 0));
        assert_eq!(r.last().unwrap().0, 8);
    }
}
