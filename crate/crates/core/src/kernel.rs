//! Propagators `G_{s,t}` and dyadic kernels `h^j_{s,t}` on a periodic grid,
//! with the L1 decay scan and the self-similarity check.

use std::io::Write;

use log::{debug, warn};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::grid::{idft, periodic_convolve, Field, GridSpec};
use crate::lp_norms::LpBank;
use crate::symbol::{check_assumption_b, LatticeSymbol, SymbolParams};

/// Lattice cache of the symbol used to build kernels for many time pairs.
#[derive(Debug, Clone)]
pub struct Propagator {
    symbol: LatticeSymbol,
    alpha: f64,
    mu: f64,
    assumption_b: bool,
}

#[derive(Debug, Clone)]
pub struct KernelTable {
    pub s: f64,
    pub t: f64,
    pub multiplier: Vec<Complex64>,
    pub kernel: Field,
    /// Largest change made by the conjugate-reflection symmetrization.
    pub symmetrization: f64,
}

impl KernelTable {
    pub fn grid(&self) -> &GridSpec {
        self.kernel.grid()
    }

    pub fn mass(&self) -> f64 {
        self.kernel.integral()[0].re
    }

    pub fn l1_norm(&self) -> f64 {
        self.kernel.lp_norm(1.0)
    }
}

#[derive(Debug, Clone)]
pub struct DyadicKernel {
    pub j: usize,
    pub table: KernelTable,
}

impl Propagator {
    pub fn new(params: &SymbolParams, grid: GridSpec) -> Result<Self> {
        let symbol = LatticeSymbol::new(params, grid)?;
        let report = check_assumption_b(params);
        if !report.pass {
            warn!(
                "assumption B fails: sup Re psi~ = {:.4e} > -mu = {:.4e}",
                report.sup_re_reduced, -params.mu
            );
        }
        Ok(Self { symbol, alpha: params.alpha, mu: params.mu, assumption_b: report.pass })
    }

    pub fn grid(&self) -> &GridSpec {
        self.symbol.grid()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn is_frozen(&self) -> bool {
        self.symbol.is_frozen()
    }

    pub fn assumption_b(&self) -> bool {
        self.assumption_b
    }

    /// `exp(\int_s^t psi dr)`, symmetrized as `(m(xi) + conj m(-xi)) / 2`.
    pub fn multiplier(&self, s: f64, t: f64) -> Result<(Vec<Complex64>, f64)> {
        if s > t {
            return Err(LabError::InvalidParams(format!("s = {s} > t = {t}")));
        }
        let grid = self.grid();
        let raw: Vec<Complex64> = self.symbol.exponent(s, t).iter().map(|e| e.exp()).collect();
        let mut dev: f64 = 0.0;
        let sym = (0..raw.len())
            .map(|i| {
                let v = 0.5 * (raw[i] + raw[grid.negated_index(i)].conj());
                dev = dev.max((v - raw[i]).norm());
                v
            })
            .collect();
        if dev > 1e-12 {
            debug!("multiplier symmetrization changed values by up to {dev:.3e}");
        }
        Ok((sym, dev))
    }

    pub fn table(&self, s: f64, t: f64) -> Result<KernelTable> {
        let (multiplier, symmetrization) = self.multiplier(s, t)?;
        let kernel = spectrum_to_field(self.grid(), &multiplier)?;
        Ok(KernelTable { s, t, multiplier, kernel, symmetrization })
    }

    pub fn dyadic(&self, bank: &LpBank, j: usize, s: f64, t: f64) -> Result<DyadicKernel> {
        if bank.grid() != self.grid() {
            return Err(LabError::ShapeMismatch("bank and propagator grids differ".into()));
        }
        if j > bank.blocks() {
            return Err(LabError::InvalidParams(format!("block {j} beyond J = {}", bank.blocks())));
        }
        let (mut multiplier, symmetrization) = self.multiplier(s, t)?;
        multiplier.iter_mut().zip(bank.wide_mask(j)).for_each(|(m, w)| *m *= w);
        let kernel = spectrum_to_field(self.grid(), &multiplier)?;
        Ok(DyadicKernel { j, table: KernelTable { s, t, multiplier, kernel, symmetrization } })
    }

    /// Largest `|m(xi)| / exp(-mu |xi|^alpha (t - s))` over the lattice.
    pub fn domination_ratio(&self, table: &KernelTable) -> f64 {
        let tau = table.t - table.s;
        self.grid()
            .freq_norms()
            .iter()
            .zip(&table.multiplier)
            .map(|(r, m)| m.norm() / (-self.mu * r.powf(self.alpha) * tau).exp())
            .fold(0.0, f64::max)
    }
}

fn spectrum_to_field(grid: &GridSpec, spectrum: &[Complex64]) -> Result<Field> {
    idft(&Field::from_spectrum(*grid, spectrum.to_vec())?)?.realize()
}

pub fn propagator(params: &SymbolParams, s: f64, t: f64, grid: GridSpec) -> Result<KernelTable> {
    Propagator::new(params, grid)?.table(s, t)
}

pub fn dyadic_kernel(
    params: &SymbolParams,
    bank: &LpBank,
    j: usize,
    s: f64,
    t: f64,
) -> Result<DyadicKernel> {
    Propagator::new(params, *bank.grid())?.dyadic(bank, j, s, t)
}

/// `|G_{s,u} * G_{u,t} - G_{s,t}|_inf`.
pub fn chapman_kolmogorov_residual(prop: &Propagator, s: f64, u: f64, t: f64) -> Result<f64> {
    let a = prop.table(s, u)?;
    let b = prop.table(u, t)?;
    let c = prop.table(s, t)?;
    Ok(periodic_convolve(&a.kernel, &b.kernel)?.sub(&c.kernel)?.max_abs())
}

/// `min G / max G`; stable densities give values `>= -1e-3` up to truncation.
pub fn negativity(table: &KernelTable) -> f64 {
    let vals = table.kernel.real_parts(0);
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    min / max
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayRow {
    pub j: usize,
    pub tau: f64,
    pub scaled_time: f64,
    pub l1_norm: f64,
    pub envelope: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayScan {
    pub rows: Vec<DecayRow>,
    pub fitted_c: f64,
    pub fitted_const: f64,
    /// Largest relative spread of `|h^j|_1` among rows with equal
    /// `2^{j alpha} tau`, `j >= 2`.
    pub collapse_spread: f64,
    pub h0_norms: Vec<(f64, f64)>,
    pub h0_max: f64,
}

/// Rows whose measured norm sits below this level are round-off and are
/// left out of the fit.
pub const DECAY_FLOOR: f64 = 1e-11;

fn envelope_shape(x: f64, order: usize) -> f64 {
    let poly: f64 = (0..=order).map(|k| x.powi(k as i32)).sum();
    poly
}

/// Pairs `(j, tau)` with `2^{j alpha} tau` outside `window` are skipped.
pub fn l1_decay_scan(
    params: &SymbolParams,
    bank: &LpBank,
    js: &[usize],
    taus: &[f64],
    window: (f64, f64),
) -> Result<DecayScan> {
    if js.is_empty() || taus.is_empty() {
        return Err(LabError::InvalidParams("empty scan range".into()));
    }
    let prop = Propagator::new(params, *bank.grid())?;
    let order = params.derivative_order();
    let alpha = params.alpha;
    let pairs: Vec<(usize, f64)> = js
        .iter()
        .flat_map(|&j| taus.iter().map(move |&t| (j, t)))
        .filter(|&(j, t)| {
            let x = 2f64.powf(j as f64 * alpha) * t;
            x >= window.0 && x <= window.1
        })
        .collect();
    if pairs.is_empty() {
        return Err(LabError::InvalidParams("no (j, tau) pair inside the window".into()));
    }
    let measured: Vec<(usize, f64, f64)> = pairs
        .par_iter()
        .map(|&(j, tau)| Ok((j, tau, prop.dyadic(bank, j, 0.0, tau)?.table.l1_norm())))
        .collect::<Result<_>>()?;
    let h0_norms: Vec<(f64, f64)> = taus
        .par_iter()
        .map(|&tau| Ok((tau, prop.dyadic(bank, 0, 0.0, tau)?.table.l1_norm())))
        .collect::<Result<_>>()?;
    let h0_max = h0_norms.iter().map(|r| r.1).fold(0.0, f64::max);

    let usable: Vec<(usize, f64, f64, f64)> = measured
        .iter()
        .filter(|m| m.0 >= 1 && m.2 > DECAY_FLOOR)
        .map(|&(j, tau, l1)| (j, tau, 2f64.powf(j as f64 * alpha) * tau, l1))
        .collect();
    if usable.is_empty() {
        return Err(LabError::Degenerate("no scan rows above the round-off floor".into()));
    }
    // For each c, the smallest admissible constant; keep the c whose
    // envelope hugs the data most tightly.
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for k in 0..=400 {
        let c = 10f64.powf(-4.0 + 5.0 * k as f64 / 400.0);
        let shape = |x: f64| (-c * x).exp() * envelope_shape(x, order);
        let cc = usable.iter().map(|u| u.3 / shape(u.2)).fold(0.0, f64::max);
        let slack = usable.iter().map(|u| (cc * shape(u.2) / u.3).ln()).fold(0.0, f64::max);
        if slack < best.0 {
            best = (slack, c, cc);
        }
    }
    let (_, fitted_c, fitted_const) = best;
    let rows: Vec<DecayRow> = measured
        .iter()
        .map(|&(j, tau, l1)| {
            let x = 2f64.powf(j as f64 * alpha) * tau;
            let envelope = fitted_const * (-fitted_c * x).exp() * envelope_shape(x, order);
            DecayRow { j, tau, scaled_time: x, l1_norm: l1, envelope, ratio: l1 / envelope }
        })
        .collect();

    let mut collapse_spread: f64 = 0.0;
    let collapse: Vec<&DecayRow> = rows.iter().filter(|r| r.j >= 2).collect();
    for a in &collapse {
        let group: Vec<f64> = collapse
            .iter()
            .filter(|b| ((b.scaled_time - a.scaled_time) / a.scaled_time).abs() < 1e-9)
            .map(|b| b.l1_norm)
            .collect();
        if group.len() > 1 {
            let max = group.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = group.iter().cloned().fold(f64::INFINITY, f64::min);
            collapse_spread = collapse_spread.max((max - min) / max);
        }
    }
    Ok(DecayScan { rows, fitted_c, fitted_const, collapse_spread, h0_norms, h0_max })
}

impl DecayScan {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "j,tau,l1_norm,envelope,ratio")?;
        for r in &self.rows {
            writeln!(w, "{},{:e},{:e},{:e},{:e}", r.j, r.tau, r.l1_norm, r.envelope, r.ratio)?;
        }
        Ok(())
    }

    /// Largest measured-to-envelope ratio among rows above the floor.
    pub fn max_ratio(&self) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.j >= 1 && r.l1_norm > DECAY_FLOOR)
            .map(|r| r.ratio)
            .fold(0.0, f64::max)
    }
}

/// Max over `|x| <= L/4` of `|G_{tau2}(x) - l^d G_{tau1}(l x)| / max |G_{tau2}|`
/// with `l = (tau1/tau2)^{1/alpha}`; the narrower kernel is resampled by
/// trigonometric interpolation.
pub fn selfsimilarity_check(params: &SymbolParams, grid: GridSpec, tau1: f64, tau2: f64) -> Result<f64> {
    if !params.schedule.is_frozen() {
        return Err(LabError::InvalidParams(
            "self-similarity needs time-independent coefficients".into(),
        ));
    }
    if !(tau1 > 0.0 && tau2 > 0.0) {
        return Err(LabError::InvalidParams("times must be positive".into()));
    }
    let (narrow, wide) = if tau1 <= tau2 { (tau1, tau2) } else { (tau2, tau1) };
    let prop = Propagator::new(params, grid)?;
    let g_narrow = prop.table(0.0, narrow)?.kernel;
    let g_wide = prop.table(0.0, wide)?.kernel;
    let lambda = (narrow / wide).powf(1.0 / params.alpha);
    let bulk: Vec<usize> = (0..grid.len())
        .filter(|&i| {
            let p = grid.point(i);
            p[0].abs().max(p[1].abs()) <= grid.length() / 4.0
        })
        .collect();
    let points: Vec<[f64; 2]> =
        bulk.iter().map(|&i| {
            let p = grid.point(i);
            [lambda * p[0], lambda * p[1]]
        }).collect();
    let resampled = grid.trig_interpolate(g_narrow.channel(0), &points);
    let scale = lambda.powi(params.dim as i32);
    let wide_vals = g_wide.channel(0);
    let peak = wide_vals.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let err = bulk
        .iter()
        .zip(&resampled)
        .map(|(&i, r)| (wide_vals[i] - r * scale).norm())
        .fold(0.0, f64::max);
    Ok(err / peak)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_time_gives_delta() {
        let p = SymbolParams::fractional_laplacian(1.3, 1).unwrap();
        let g = GridSpec::new(1, 64, 16.0).unwrap();
        let t = propagator(&p, 0.4, 0.4, g).unwrap();
        assert!(t.multiplier.iter().all(|m| (m - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        let d = Field::delta(g);
        assert!(t.kernel.sub(&d).unwrap().max_abs() < 1e-10 * d.max_abs());
    }

    #[test]
    fn reversed_times_rejected() {
        let p = SymbolParams::fractional_laplacian(1.3, 1).unwrap();
        let g = GridSpec::new(1, 64, 16.0).unwrap();
        assert!(propagator(&p, 1.0, 0.5, g).is_err());
    }

    #[test]
    fn dyadic_zero_time_is_wide_mask() {
        let p = SymbolParams::fractional_laplacian(1.5, 1).unwrap();
        let g = GridSpec::new(1, 128, 32.0).unwrap();
        let bank = LpBank::for_grid(g).unwrap();
        let h = dyadic_kernel(&p, &bank, 0, 0.0, 0.0).unwrap();
        for (m, w) in h.table.multiplier.iter().zip(bank.wide_mask(0)) {
            assert!((m.re - w).abs() < 1e-15 && m.im == 0.0);
        }
        assert!(dyadic_kernel(&p, &bank, bank.blocks() + 1, 0.0, 1.0).is_err());
    }

    #[test]
    fn time_varying_rejected_by_selfsimilarity() {
        use crate::symbol::{AngularDensity, CoefficientSet, Normalization, Schedule};
        let sets = vec![
            CoefficientSet::jump_only(AngularDensity::Constant { value: 1.0 }),
            CoefficientSet::jump_only(AngularDensity::Constant { value: 2.0 }),
        ];
        let p = SymbolParams::new(
            1.5,
            1,
            Schedule::new(vec![0.0, 1.0], sets).unwrap(),
            Normalization::FractionalLaplacian,
            0.5,
            10.0,
        )
        .unwrap();
        let g = GridSpec::new(1, 64, 16.0).unwrap();
        assert!(selfsimilarity_check(&p, g, 0.5, 1.0).is_err());
    }
}
