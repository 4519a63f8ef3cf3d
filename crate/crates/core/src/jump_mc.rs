//! Poisson random measures over finite mark sets, compensated integrals and
//! Monte Carlo estimates of their moments, and skewed stable increments.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{LabError, Result};
use crate::grid::TimeGrid;

/// Points of the sup grid between jumps.
pub const SUP_GRID: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mark {
    pub value: f64,
    pub rate: f64,
}

/// Bounds `c1 <= rho <= c_upper` of a state-dependent thinning factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThinningBounds {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonSpec {
    pub marks: Vec<Mark>,
    pub horizon: f64,
    #[serde(default)]
    pub thinning: Option<ThinningBounds>,
}

impl PoissonSpec {
    pub fn new(marks: Vec<Mark>, horizon: f64, thinning: Option<ThinningBounds>) -> Result<Self> {
        let spec = Self { marks, horizon, thinning };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(LabError::InvalidParams(format!("horizon {}", self.horizon)));
        }
        if self.marks.iter().any(|m| !(m.rate > 0.0 && m.rate.is_finite())) {
            return Err(LabError::InvalidParams("mark rates must be positive".into()));
        }
        if let Some(b) = self.thinning {
            if !(b.lower > 0.0 && b.lower <= b.upper && b.upper.is_finite()) {
                return Err(LabError::InvalidParams(format!(
                    "thinning bounds need 0 < lower <= upper, got {b:?}"
                )));
            }
        }
        Ok(())
    }

    /// Every rate multiplied by `kappa`.
    pub fn scaled(&self, kappa: f64) -> Result<Self> {
        let marks = self.marks.iter().map(|m| Mark { value: m.value, rate: kappa * m.rate }).collect();
        Self::new(marks, self.horizon, self.thinning)
    }

    pub fn total_rate(&self) -> f64 {
        self.marks.iter().map(|m| m.rate).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpRecord {
    pub times: Vec<f64>,
    pub marks: Vec<usize>,
    pub counts: Vec<usize>,
    pub seed: u64,
    pub stream: u64,
    pub horizon: f64,
}

impl JumpRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Jumps in `(a, b]`.
    pub fn between(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, usize)> + '_ {
        let lo = self.times.partition_point(|t| *t <= a);
        let hi = self.times.partition_point(|t| *t <= b);
        (lo..hi).map(move |k| (self.times[k], self.marks[k]))
    }
}

pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sample_record(spec: &PoissonSpec, rng: &mut ChaCha8Rng, seed: u64, stream: u64) -> Result<JumpRecord> {
    let mut events: Vec<(f64, usize)> = Vec::new();
    let mut counts = Vec::with_capacity(spec.marks.len());
    for (i, m) in spec.marks.iter().enumerate() {
        let mean = m.rate * spec.horizon;
        let n = Poisson::new(mean)
            .map_err(|e| LabError::InvalidParams(format!("poisson mean {mean}: {e}")))?
            .sample(rng) as usize;
        counts.push(n);
        for _ in 0..n {
            events.push((rng.random::<f64>() * spec.horizon, i));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(JumpRecord {
        times: events.iter().map(|e| e.0).collect(),
        marks: events.iter().map(|e| e.1).collect(),
        counts,
        seed,
        stream,
        horizon: spec.horizon,
    })
}

pub fn simulate_ppm(spec: &PoissonSpec, seed: u64) -> Result<JumpRecord> {
    simulate_ppm_stream(spec, seed, 0)
}

/// Realization on the RNG stream `(seed, stream)`.
pub fn simulate_ppm_stream(spec: &PoissonSpec, seed: u64, stream: u64) -> Result<JumpRecord> {
    spec.validate()?;
    sample_record(spec, &mut path_rng(seed, stream), seed, stream)
}

/// Keeps each jump with probability `accept(t, mark)`.
pub fn thin(record: &JumpRecord, rng: &mut impl Rng, accept: impl Fn(f64, usize) -> f64) -> JumpRecord {
    let mut out = JumpRecord {
        times: Vec::new(),
        marks: Vec::new(),
        counts: vec![0; record.counts.len()],
        seed: record.seed,
        stream: record.stream,
        horizon: record.horizon,
    };
    for (t, m) in record.times.iter().zip(&record.marks) {
        let u: f64 = rng.random();
        if u < accept(*t, *m) {
            out.times.push(*t);
            out.marks.push(*m);
            out.counts[*m] += 1;
        }
    }
    out
}

/// Three-point Gauss-Legendre on `[a, b]`.
fn gauss3(a: f64, b: f64, f: &impl Fn(f64) -> f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let x = (0.6f64).sqrt();
    h * (5.0 * f(c - h * x) + 8.0 * f(c) + 5.0 * f(c + h * x)) / 9.0
}

/// `\int_0^t sum_i lambda_i g(s, i) ds` at each of the sorted `times`.
fn compensator_at(g: &impl Fn(f64, usize) -> f64, spec: &PoissonSpec, times: &[f64]) -> Vec<f64> {
    let h = |s: f64| spec.marks.iter().enumerate().map(|(i, m)| m.rate * g(s, i)).sum::<f64>();
    let mut out = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    let mut last = 0.0;
    for &t in times {
        if t > last {
            acc += gauss3(last, t, &h);
            last = t;
        }
        out.push(acc);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// `Q_t = sum_{tau_k <= t} g(tau_k, v_k) - \int_0^t sum_i lambda_i g(s, v_i) ds`
/// on the knots of `out`.
pub fn compensated_integral(
    g: &impl Fn(f64, usize) -> f64,
    record: &JumpRecord,
    spec: &PoissonSpec,
    out: &TimeGrid,
) -> Trajectory {
    let times: Vec<f64> = (0..out.knots()).map(|k| out.time(k)).collect();
    let comp = compensator_at(g, spec, &times);
    let mut values = Vec::with_capacity(times.len());
    let mut sum = 0.0;
    let mut next = 0;
    for (t, c) in times.iter().zip(&comp) {
        while next < record.len() && record.times[next] <= *t {
            sum += g(record.times[next], record.marks[next]);
            next += 1;
        }
        values.push(sum - c);
    }
    Trajectory { times, values }
}

/// `sup_t |Q_t|` over jump times (both sides), the sup grid and `T`, plus
/// `Q_T`.
fn sup_and_end(g: &impl Fn(f64, usize) -> f64, record: &JumpRecord, spec: &PoissonSpec) -> (f64, f64) {
    let grid = TimeGrid::new(0.0, spec.horizon, SUP_GRID).expect("valid horizon");
    let mut events: Vec<(f64, Option<usize>)> = (0..grid.knots()).map(|k| (grid.time(k), None)).collect();
    events.extend(record.times.iter().zip(&record.marks).map(|(t, m)| (*t, Some(*m))));
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.is_some().cmp(&b.1.is_some())));
    let times: Vec<f64> = events.iter().map(|e| e.0).collect();
    let comp = compensator_at(g, spec, &times);
    let mut sum = 0.0;
    let mut sup: f64 = 0.0;
    for ((t, mark), c) in events.iter().zip(&comp) {
        sup = sup.max((sum - c).abs());
        if let Some(m) = mark {
            sum += g(*t, *m);
        }
        sup = sup.max((sum - c).abs());
    }
    (sup, sum - comp.last().copied().unwrap_or(0.0))
}

fn pow_abs(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() < 64.0 {
        x.abs().powi(p as i32)
    } else {
        x.abs().powf(p)
    }
}

/// Order-fixed pairwise sum.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub p: f64,
    pub kappa: f64,
    pub n_paths: usize,
    /// `E sup_t |Q_t|^p`.
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub std_err: f64,
    /// `E |Q_T|^p` and its standard error.
    pub endpoint: f64,
    pub endpoint_std_err: f64,
    /// Sup-grid error bound `max_s sum_i lambda_i |g(s, i)| T / SUP_GRID`.
    pub sup_grid_error: f64,
}

/// `\int_0^T sum_i lambda_i |g(s, i)|^q ds`.
pub fn compensator_moment(g: &impl Fn(f64, usize) -> f64, spec: &PoissonSpec, q: f64) -> f64 {
    let pieces = 1024;
    let h = spec.horizon / pieces as f64;
    let f = |s: f64| spec.marks.iter().enumerate().map(|(i, m)| m.rate * pow_abs(g(s, i), q)).sum::<f64>();
    (0..pieces).map(|k| gauss3(k as f64 * h, (k + 1) as f64 * h, &f)).sum()
}

/// `\int_0^T sum_i lambda_i |g|^p ds + (\int_0^T sum_i lambda_i g^2 ds)^{p/2}`.
pub fn bdg_rhs(g: &impl Fn(f64, usize) -> f64, spec: &PoissonSpec, p: f64) -> f64 {
    compensator_moment(g, spec, p) + compensator_moment(g, spec, 2.0).powf(p / 2.0)
}

/// Monte Carlo two-sided moment estimate for a deterministic integrand.
pub fn bdg_two_sided(
    g: &(impl Fn(f64, usize) -> f64 + Sync),
    spec: &PoissonSpec,
    p: f64,
    n_paths: usize,
    seed: u64,
) -> Result<MomentReport> {
    if p < 2.0 {
        return Err(LabError::InvalidParams(format!("p = {p} < 2")));
    }
    if n_paths < 2 {
        return Err(LabError::InvalidParams("need at least two paths".into()));
    }
    spec.validate()?;
    let samples: Vec<(f64, f64)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|k| {
            let record = simulate_ppm_stream(spec, seed, k)?;
            let (sup, end) = sup_and_end(g, &record, spec);
            Ok((pow_abs(sup, p), pow_abs(end, p)))
        })
        .collect::<Result<_>>()?;
    let sups: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let ends: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let (lhs, std_err) = mean_and_stderr(&sups);
    let (endpoint, endpoint_std_err) = mean_and_stderr(&ends);
    let rhs = bdg_rhs(g, spec, p);
    // Lipschitz constant of the compensator
    let lip = (0..=SUP_GRID)
        .map(|k| {
            let t = spec.horizon * k as f64 / SUP_GRID as f64;
            spec.marks.iter().enumerate().map(|(i, m)| m.rate * g(t, i).abs()).sum::<f64>()
        })
        .fold(0.0, f64::max);
    Ok(MomentReport {
        p,
        kappa: 1.0,
        n_paths,
        lhs,
        rhs,
        ratio: lhs / rhs,
        std_err,
        endpoint,
        endpoint_std_err,
        sup_grid_error: lip * spec.horizon / SUP_GRID as f64,
    })
}

/// Sample mean and standard error of `Q_t` at each knot of `out`.
pub fn martingale_means(
    g: &(impl Fn(f64, usize) -> f64 + Sync),
    spec: &PoissonSpec,
    out: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let paths: Vec<Vec<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|k| Ok(compensated_integral(g, &simulate_ppm_stream(spec, seed, k)?, spec, out).values))
        .collect::<Result<_>>()?;
    Ok((0..out.knots())
        .map(|j| {
            let col: Vec<f64> = paths.iter().map(|p| p[j]).collect();
            mean_and_stderr(&col)
        })
        .collect())
}

/// Scale `sigma` (at unit time) and skewness `beta` of the stable law with
/// Lévy density `(m_+ 1_{y>0} + m_- 1_{y<0}) |y|^{-1-alpha}`, compensated.
///
/// For `alpha` in `(1, 2)`,
/// `\int (e^{iuy} - 1 - iuy) nu(dy) = Gamma(-alpha) |u|^alpha
///  [(m_+ + m_-) cos(pi alpha/2) - i sgn(u) (m_+ - m_-) sin(pi alpha/2)]`,
/// which is `-sigma^alpha |u|^alpha (1 - i beta sgn(u) tan(pi alpha/2))` with
/// `sigma^alpha = -Gamma(-alpha) cos(pi alpha/2) (m_+ + m_-)` and
/// `beta = (m_+ - m_-) / (m_+ + m_-)`.
pub fn stable_parameters(alpha: f64, m_plus: f64, m_minus: f64) -> Result<(f64, f64)> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(LabError::InvalidParams(format!("alpha = {alpha} not in (1, 2)")));
    }
    if !(m_plus >= 0.0 && m_minus >= 0.0 && m_plus + m_minus > 0.0) {
        return Err(LabError::InvalidParams("need m_+, m_- >= 0, not both 0".into()));
    }
    let total = m_plus + m_minus;
    let sigma_a = -gamma(-alpha) * (PI * alpha / 2.0).cos() * total;
    Ok((sigma_a.powf(1.0 / alpha), (m_plus - m_minus) / total))
}

/// One standard `S(1, beta, 0)` draw.
pub fn cms_draw(alpha: f64, beta: f64, rng: &mut impl Rng) -> f64 {
    let v = PI * (rng.random::<f64>() - 0.5);
    let w: f64 = Exp1.sample(rng);
    let t = beta * (PI * alpha / 2.0).tan();
    let b = t.atan() / alpha;
    let s = (1.0 + t * t).powf(1.0 / (2.0 * alpha));
    s * (alpha * (v + b)).sin() / v.cos().powf(1.0 / alpha)
        * ((v - alpha * (v + b)).cos() / w).powf((1.0 - alpha) / alpha)
}

/// Increments over time `dt` of the compensated stable process, by the
/// Chambers-Mallows-Stuck transform scaled by `sigma dt^{1/alpha}`.
pub fn stable_increments(
    alpha: f64,
    m_plus: f64,
    m_minus: f64,
    dt: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let (sigma, beta) = stable_parameters(alpha, m_plus, m_minus)?;
    if !(dt > 0.0) {
        return Err(LabError::InvalidParams(format!("dt = {dt}")));
    }
    let scale = sigma * dt.powf(1.0 / alpha);
    let mut rng = path_rng(seed, 0);
    Ok((0..count).map(|_| scale * cms_draw(alpha, beta, &mut rng)).collect())
}
