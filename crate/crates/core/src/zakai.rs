//! Filtering of a 1-d stable signal from marked jump observations: the
//! unnormalized density by spectral splitting, and a particle filter.
//!
//! Signal: `X_t = X_0 + b t + L_t`, `L` the compensated stable process with
//! Lévy density `(m_+ 1_{y>0} + m_- 1_{y<0}) |y|^{-1-alpha}`. Observation: jumps
//! with mark `y_i` arrive at rate `rho(X_{t-}, y_i) pi_i`.
//!
//! With `E e^{i xi X_t} = e^{t psi(xi)}` and the transform `\int e^{-i xi x}`,
//! the forward (density) equation has multiplier `conj psi(xi)`: the
//! reflected jump density and the drift `-d/dx (b v)`. The compensation term
//! `-y v'` of the generator turns into `+y v'` under the adjoint, which the
//! reflection `y -> -y` absorbs, so the adjoint of the compensated generator
//! is again compensated. The unnormalized density then solves
//! `dv = A* v dt + v (rho(., y) - 1) (p(dt, dy) - pi(dy) dt)`, integrated per
//! step as (a) `e^{conj psi dt}`, (b) `e^{-Lambda dt}` with
//! `Lambda = sum_i pi_i (rho(., y_i) - 1)`, (c) `v rho(., y)` at each jump.

use std::f64::consts::PI;

use log::debug;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::grid::{Field, GridSpec, TimeGrid};
use crate::jump_mc::{cms_draw, path_rng, simulate_ppm_stream, stable_parameters, thin, JumpRecord, Mark, PoissonSpec};
use crate::symbol::{eval_symbol, AngularDensity, CoefficientSet, Normalization, Schedule, SymbolParams};

#[derive(Debug, Clone, PartialEq)]
pub struct FilterModel {
    pub alpha: f64,
    pub drift: f64,
    pub m_plus: f64,
    pub m_minus: f64,
    pub grid: GridSpec,
    pub u0: Field,
    pub marks: Vec<Mark>,
    /// `rho(x_k, y_i)` as `likelihood[i][k]`, clipped to `[c1, c_upper]`.
    pub likelihood: Vec<Vec<f64>>,
    pub c1: f64,
    pub c_upper: f64,
    pub horizon: f64,
    pub steps: usize,
}

impl FilterModel {
    /// Validates, clips the likelihood and renormalizes `u0`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        alpha: f64,
        drift: f64,
        jump: (f64, f64),
        u0: Field,
        marks: Vec<Mark>,
        likelihood: Vec<Vec<f64>>,
        bounds: (f64, f64),
        horizon: f64,
        steps: usize,
    ) -> Result<Self> {
        stable_parameters(alpha, jump.0, jump.1)?;
        let grid = *u0.grid();
        if grid.dim() != 1 {
            return Err(LabError::InvalidParams("filtering needs d = 1".into()));
        }
        if u0.channels() != 1 {
            return Err(LabError::ShapeMismatch("initial density must be scalar".into()));
        }
        let (c1, c_upper) = bounds;
        if !(c1 > 0.0 && c1 <= c_upper && c_upper.is_finite()) {
            return Err(LabError::InvalidParams(format!("likelihood bounds {bounds:?}")));
        }
        if !drift.is_finite() {
            return Err(LabError::InvalidParams("drift must be finite".into()));
        }
        if likelihood.len() != marks.len() || likelihood.iter().any(|r| r.len() != grid.len()) {
            return Err(LabError::ShapeMismatch("likelihood table needs marks x grid".into()));
        }
        PoissonSpec::new(marks.clone(), horizon, None)?;
        if steps == 0 {
            return Err(LabError::InvalidParams("need at least one step".into()));
        }
        let init = u0.real_parts(0);
        if init.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(LabError::InvalidParams("initial density must be non-negative".into()));
        }
        let mass: f64 = init.iter().sum::<f64>() * grid.cell();
        if !(mass > 0.0) {
            return Err(LabError::Degenerate("initial density has zero mass".into()));
        }
        let u0 = Field::from_real(grid, &init.iter().map(|v| v / mass).collect::<Vec<_>>())?;
        let likelihood = likelihood
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.clamp(c1, c_upper)).collect())
            .collect();
        Ok(Self {
            alpha,
            drift,
            m_plus: jump.0,
            m_minus: jump.1,
            grid,
            u0,
            marks,
            likelihood,
            c1,
            c_upper,
            horizon,
            steps,
        })
    }

    pub fn times(&self) -> TimeGrid {
        TimeGrid::new(0.0, self.horizon, self.steps).expect("validated horizon")
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Signal symbol parameters (jump part only, Lévy normalization).
    pub fn symbol_params(&self) -> Result<SymbolParams> {
        let set = CoefficientSet::jump_only(AngularDensity::TwoPoint { plus: self.m_plus, minus: self.m_minus });
        SymbolParams::new(self.alpha, 1, Schedule::frozen(set), Normalization::LevyMeasure, 1.0, 1.0)
    }

    /// Parameters whose symbol is `conj psi` when `b = 0`.
    pub fn adjoint_params(&self) -> Result<SymbolParams> {
        let set = CoefficientSet::jump_only(AngularDensity::TwoPoint { plus: self.m_minus, minus: self.m_plus });
        SymbolParams::new(self.alpha, 1, Schedule::frozen(set), Normalization::LevyMeasure, 1.0, 1.0)
    }

    /// `Lambda(x_k) = sum_i pi_i (rho(x_k, y_i) - 1)`.
    pub fn lambda(&self) -> Vec<f64> {
        (0..self.grid.len())
            .map(|k| self.marks.iter().zip(&self.likelihood).map(|(m, r)| m.rate * (r[k] - 1.0)).sum())
            .collect()
    }

    /// `rho(x, y_i)` by periodic linear interpolation.
    pub fn rho_at(&self, x: f64, i: usize) -> f64 {
        let n = self.grid.n();
        let pos = (wrap(x, self.grid.length()) + self.grid.length() / 2.0) / self.grid.cell();
        let k = pos.floor();
        let f = pos - k;
        let k = (k as usize) % n;
        let row = &self.likelihood[i];
        (1.0 - f) * row[k] + f * row[(k + 1) % n]
    }

    fn lambda_at(&self, x: f64) -> f64 {
        self.marks.iter().enumerate().map(|(i, m)| m.rate * (self.rho_at(x, i) - 1.0)).sum()
    }

    /// Constant-likelihood copy with `rho = value` for every mark.
    pub fn with_constant_likelihood(&self, value: f64) -> Result<Self> {
        let table = vec![vec![value; self.grid.len()]; self.marks.len()];
        Self::new(
            self.alpha,
            self.drift,
            (self.m_plus, self.m_minus),
            self.u0.clone(),
            self.marks.clone(),
            table,
            (self.c1.min(value), self.c_upper.max(value)),
            self.horizon,
            self.steps,
        )
    }
}

/// Position on the torus `[-L/2, L/2)`.
pub fn wrap(x: f64, length: f64) -> f64 {
    (x + length / 2.0).rem_euclid(length) - length / 2.0
}

/// `conj psi(xi)` on the lattice, drift included.
pub fn adjoint_multiplier(model: &FilterModel) -> Result<Vec<Complex64>> {
    let params = model.symbol_params()?;
    Ok((0..model.grid.len())
        .map(|i| {
            let xi = model.grid.frequency(i);
            let psi = eval_symbol(&params, 0.0, [xi, 0.0]).jump + Complex64::new(0.0, model.drift * xi);
            psi.conj()
        })
        .collect())
}

/// Draw from the grid density `u0`: a cell by its mass, then uniform in it.
fn sample_initial(model: &FilterModel, rng: &mut impl Rng, cdf: &[f64]) -> f64 {
    let u: f64 = rng.random::<f64>() * cdf[cdf.len() - 1];
    let k = cdf.partition_point(|c| *c < u).min(cdf.len() - 1);
    model.grid.coordinate(k) + (rng.random::<f64>() - 0.5) * model.grid.cell()
}

fn initial_cdf(model: &FilterModel) -> Vec<f64> {
    let mut acc = 0.0;
    model
        .u0
        .real_parts(0)
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Truth {
    /// Unwrapped signal at the knots.
    pub signal: Vec<f64>,
    pub observations: JumpRecord,
}

/// Signal by exact stable increments on the knots; observations by thinning
/// the dominating rates `c_upper pi_i` with `rho(X_{tau-}, y_i) / c_upper`.
pub fn simulate_truth(model: &FilterModel, seed: u64) -> Result<Truth> {
    let (sigma, beta) = stable_parameters(model.alpha, model.m_plus, model.m_minus)?;
    let dt = model.dt();
    let scale = sigma * dt.powf(1.0 / model.alpha);
    let mut rng = path_rng(seed, 0);
    let cdf = initial_cdf(model);
    let mut x = sample_initial(model, &mut rng, &cdf);
    let mut signal = vec![x];
    for _ in 0..model.steps {
        x += model.drift * dt + scale * cms_draw(model.alpha, beta, &mut rng);
        signal.push(x);
    }
    let dominating: Vec<Mark> =
        model.marks.iter().map(|m| Mark { value: m.value, rate: model.c_upper * m.rate }).collect();
    let spec = PoissonSpec::new(dominating, model.horizon, None)?;
    let proposal = simulate_ppm_stream(&spec, seed, 1)?;
    let mut accept_rng = path_rng(seed, 2);
    let observations = thin(&proposal, &mut accept_rng, |t, i| {
        // X_{tau-}: the signal on the knot at or before tau
        let k = ((t / dt).ceil() as usize).saturating_sub(1).min(model.steps);
        model.rho_at(signal[k], i) / model.c_upper
    });
    Ok(Truth { signal, observations })
}

/// Observations drawn at the reference rates `pi_i`, independent of the
/// signal.
pub fn reference_observations(model: &FilterModel, seed: u64, stream: u64) -> Result<JumpRecord> {
    simulate_ppm_stream(&PoissonSpec::new(model.marks.clone(), model.horizon, None)?, seed, stream)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub time: f64,
    pub density: Field,
    /// `ln` of the total mass after each step.
    pub log_mass: Vec<f64>,
}

impl FilterState {
    pub fn initial(model: &FilterModel) -> Self {
        Self { time: 0.0, density: model.u0.clone(), log_mass: vec![0.0] }
    }

    pub fn mass(&self) -> f64 {
        self.density.real_parts(0).iter().sum::<f64>() * self.density.grid().cell()
    }
}

/// Step multipliers shared by every step.
#[derive(Debug, Clone)]
pub struct StepCache {
    transport: Vec<Complex64>,
    decay: Vec<f64>,
    dt: f64,
}

impl StepCache {
    pub fn new(model: &FilterModel) -> Result<Self> {
        let dt = model.dt();
        let raw: Vec<Complex64> = adjoint_multiplier(model)?.iter().map(|p| (p * dt).exp()).collect();
        // the Nyquist mode is its own negative
        let grid = model.grid;
        let transport = (0..raw.len()).map(|i| 0.5 * (raw[i] + raw[grid.negated_index(i)].conj())).collect();
        let decay = model.lambda().iter().map(|l| (-l * dt).exp()).collect();
        Ok(Self { transport, decay, dt })
    }
}

/// One splitting step over `(t, t + dt]`; `jumps` are the mark indices of the
/// observations in that interval.
pub fn zakai_step(state: &FilterState, model: &FilterModel, cache: &StepCache, jumps: &[usize]) -> Result<FilterState> {
    let moved = state.density.apply_multiplier(&cache.transport)?.realize()?;
    let mut v = moved.real_parts(0);
    v.iter_mut().zip(&cache.decay).for_each(|(a, d)| *a *= d);
    for &i in jumps {
        v.iter_mut().zip(&model.likelihood[i]).for_each(|(a, r)| *a *= r);
    }
    if v.iter().any(|a| !a.is_finite()) {
        return Err(LabError::Numerical(format!("non-finite density at t = {}", state.time + cache.dt)));
    }
    let density = Field::from_real(model.grid, &v)?;
    let mut log_mass = state.log_mass.clone();
    let next = FilterState { time: state.time + cache.dt, density, log_mass: Vec::new() };
    let mass = next.mass();
    if !(mass > 0.0) {
        return Err(LabError::Numerical(format!("mass {mass} at t = {}", next.time)));
    }
    log_mass.push(mass.ln());
    Ok(FilterState { log_mass, ..next })
}

/// Mark indices of the jumps in each step interval.
fn jumps_per_step(model: &FilterModel, obs: &JumpRecord) -> Vec<Vec<usize>> {
    let times = model.times();
    (0..model.steps).map(|k| obs.between(times.time(k), times.time(k + 1)).map(|(_, m)| m).collect()).collect()
}

/// Unnormalized densities at every knot.
pub fn run_spectral(model: &FilterModel, obs: &JumpRecord) -> Result<Vec<FilterState>> {
    let cache = StepCache::new(model)?;
    let mut states = vec![FilterState::initial(model)];
    for jumps in jumps_per_step(model, obs) {
        let next = zakai_step(states.last().expect("non-empty"), model, &cache, &jumps)?;
        states.push(next);
    }
    Ok(states)
}

/// Smallest `v / max v` over the run.
pub fn positivity(states: &[FilterState]) -> f64 {
    states
        .iter()
        .map(|s| {
            let v = s.density.real_parts(0);
            let max = v.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
            v.iter().cloned().fold(f64::INFINITY, f64::min) / max
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleRun {
    /// Normalized kernel density estimates at every knot.
    pub densities: Vec<Field>,
    pub resamplings: usize,
    pub min_ess: f64,
}

fn systematic_resample(weights: &[f64], rng: &mut impl Rng) -> Vec<usize> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    let step = total / n as f64;
    let mut u = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(n);
    let mut acc = weights[0];
    let mut k = 0;
    for _ in 0..n {
        while u > acc && k + 1 < n {
            k += 1;
            acc += weights[k];
        }
        out.push(k);
        u += step;
    }
    out
}

/// Weighted histogram (linear binning on the torus) smoothed by a periodic
/// Gaussian with a Silverman bandwidth; unit mass.
pub fn kernel_density(grid: GridSpec, positions: &[f64], weights: &[f64]) -> Result<Field> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(LabError::Degenerate("all particle weights vanished".into()));
    }
    let n = grid.n();
    let mut hist = vec![0.0; n];
    let mut mean = 0.0;
    for (x, w) in positions.iter().zip(weights) {
        let y = wrap(*x, grid.length());
        mean += w * y;
        let pos = (y + grid.length() / 2.0) / grid.cell();
        let k = pos.floor();
        let f = pos - k;
        let k = (k as usize) % n;
        hist[k] += w * (1.0 - f);
        hist[(k + 1) % n] += w * f;
    }
    mean /= total;
    let var = positions
        .iter()
        .zip(weights)
        .map(|(x, w)| w * (wrap(*x, grid.length()) - mean).powi(2))
        .sum::<f64>()
        / total;
    let ess = total * total / weights.iter().map(|w| w * w).sum::<f64>();
    let spread = var.sqrt().min(weighted_iqr(positions, weights, grid.length()) / 1.34);
    let h = (1.06 * spread * ess.powf(-0.2)).max(0.5 * grid.cell());
    let norm = 1.0 / (total * grid.cell());
    let f = Field::from_real(grid, &hist.iter().map(|v| v * norm).collect::<Vec<_>>())?;
    let smooth: Vec<Complex64> = (0..grid.len())
        .map(|i| Complex64::new((-0.5 * (h * grid.frequency(i)).powi(2)).exp(), 0.0))
        .collect();
    f.apply_multiplier(&smooth)?.realize()
}

fn weighted_iqr(positions: &[f64], weights: &[f64], length: f64) -> f64 {
    let mut pairs: Vec<(f64, f64)> = positions.iter().map(|x| wrap(*x, length)).zip(weights.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = weights.iter().sum();
    let quantile = |q: f64| {
        let mut acc = 0.0;
        for (x, w) in &pairs {
            acc += w;
            if acc >= q * total {
                return *x;
            }
        }
        pairs[pairs.len() - 1].0
    };
    let iqr = quantile(0.75) - quantile(0.25);
    if iqr > 0.0 {
        iqr
    } else {
        f64::INFINITY
    }
}

/// Bootstrap-type filter with the same splitting as [`zakai_step`].
pub fn particle_filter(model: &FilterModel, obs: &JumpRecord, n_particles: usize, seed: u64) -> Result<ParticleRun> {
    if n_particles < 2 {
        return Err(LabError::InvalidParams("need at least two particles".into()));
    }
    let (sigma, beta) = stable_parameters(model.alpha, model.m_plus, model.m_minus)?;
    let dt = model.dt();
    let scale = sigma * dt.powf(1.0 / model.alpha);
    let cdf = initial_cdf(model);
    let mut rngs: Vec<ChaCha8Rng> = (0..n_particles as u64).map(|k| path_rng(seed, k)).collect();
    let mut x: Vec<f64> = rngs.par_iter_mut().map(|r| sample_initial(model, r, &cdf)).collect();
    let mut w = vec![1.0; n_particles];
    let mut resample_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    let mut densities = vec![kernel_density(model.grid, &x, &w)?];
    let mut resamplings = 0;
    let mut min_ess = n_particles as f64;
    for jumps in jumps_per_step(model, obs) {
        x.par_iter_mut().zip(rngs.par_iter_mut()).zip(w.par_iter_mut()).for_each(|((xi, r), wi)| {
            *xi += model.drift * dt + scale * cms_draw(model.alpha, beta, r);
            *wi *= (-model.lambda_at(*xi) * dt).exp();
            for &i in &jumps {
                *wi *= model.rho_at(*xi, i);
            }
        });
        let total: f64 = w.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(LabError::Numerical("particle weights collapsed".into()));
        }
        w.iter_mut().for_each(|v| *v /= total);
        densities.push(kernel_density(model.grid, &x, &w)?);
        let ess = 1.0 / w.iter().map(|v| v * v).sum::<f64>();
        min_ess = min_ess.min(ess);
        if ess < n_particles as f64 / 2.0 {
            let idx = systematic_resample(&w, &mut resample_rng);
            x = idx.iter().map(|&k| x[k]).collect();
            w = vec![1.0; n_particles];
            resamplings += 1;
        }
    }
    debug!("particle filter: {resamplings} resamplings, min ESS {min_ess:.1}");
    Ok(ParticleRun { densities, resamplings, min_ess })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterComparison {
    pub l1: Vec<f64>,
    pub tv: Vec<f64>,
    pub mean_tv: f64,
    pub max_tv: f64,
}

/// Distances between normalized densities knot by knot.
pub fn compare_filters(spectral: &[Field], particle: &[Field]) -> Result<FilterComparison> {
    if spectral.len() != particle.len() || spectral.is_empty() {
        return Err(LabError::ShapeMismatch("density sequences differ in length".into()));
    }
    let normalize = |f: &Field| -> Result<Vec<f64>> {
        let v = f.real_parts(0);
        let mass: f64 = v.iter().sum::<f64>() * f.grid().cell();
        if !(mass > 0.0) {
            return Err(LabError::Degenerate("zero-mass frame".into()));
        }
        Ok(v.iter().map(|a| a / mass).collect())
    };
    let mut l1 = Vec::with_capacity(spectral.len());
    for (a, b) in spectral.iter().zip(particle) {
        if a.grid() != b.grid() {
            return Err(LabError::ShapeMismatch("density grids differ".into()));
        }
        let (p, q) = (normalize(a)?, normalize(b)?);
        l1.push(p.iter().zip(&q).map(|(x, y)| (x - y).abs()).sum::<f64>() * a.grid().cell());
    }
    let tv: Vec<f64> = l1.iter().map(|v| 0.5 * v).collect();
    let mean_tv = tv.iter().sum::<f64>() / tv.len() as f64;
    let max_tv = tv.iter().cloned().fold(0.0, f64::max);
    Ok(FilterComparison { l1, tv, mean_tv, max_tv })
}

/// Gaussian bump of width `width` centred at `centre`, unit mass on the grid.
pub fn gaussian_density(grid: GridSpec, centre: f64, width: f64) -> Field {
    Field::from_fn(grid, |x| {
        let d = wrap(x[0] - centre, grid.length());
        (-0.5 * (d / width).powi(2)).exp() / (width * (2.0 * PI).sqrt())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn systematic_resampling_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let idx = systematic_resample(&[0.0, 0.5, 0.0, 0.5], &mut rng);
        assert_eq!(idx.iter().filter(|k| **k == 1).count(), 2);
        assert_eq!(idx.iter().filter(|k| **k == 3).count(), 2);
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap(9.0, 16.0), -7.0);
        assert_eq!(wrap(-8.0, 16.0), -8.0);
        assert_eq!(wrap(8.0, 16.0), -8.0);
    }
}
