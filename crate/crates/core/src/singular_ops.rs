//! The operator `I g(s,t) = G_{s,t} * g(s)`, the representation operators
//! `R` and `T_t`, and the deterministic functionals `I_1`, `I_2`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::grid::{Field, SpaceTimeField, TwoTimeField};
use crate::kernel::Propagator;

/// `g(s, x, v_i)` with one channel per mark and mark weights `lambda_i`.
#[derive(Debug, Clone)]
pub struct MarkedField {
    field: SpaceTimeField,
    weights: Vec<f64>,
}

impl MarkedField {
    pub fn new(field: SpaceTimeField, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != field.channels() {
            return Err(LabError::ShapeMismatch(format!(
                "{} mark weights for {} channels",
                weights.len(),
                field.channels()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(LabError::InvalidParams("mark weights must be positive".into()));
        }
        Ok(Self { field, weights })
    }

    pub fn field(&self) -> &SpaceTimeField {
        &self.field
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

fn check_grid(g: &SpaceTimeField, prop: &Propagator) -> Result<()> {
    if g.grid() != prop.grid() {
        return Err(LabError::ShapeMismatch("field and propagator grids differ".into()));
    }
    Ok(())
}

/// Frames `(s_i, t_j)`, `i <= j`, of `G_{s_i,t_j} * g(s_i)`.
pub fn apply_i(g: &SpaceTimeField, prop: &Propagator) -> Result<TwoTimeField> {
    check_grid(g, prop)?;
    let times = *g.times();
    let k = times.knots();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|j| (0..=j).map(move |i| (i, j))).collect();
    let frames: Vec<Field> = pairs
        .par_iter()
        .map(|&(i, j)| {
            if i == j {
                return Ok(g.frame(i).clone());
            }
            let (m, _) = prop.multiplier(times.time(i), times.time(j))?;
            g.frame(i).apply_multiplier(&m)
        })
        .collect::<Result<_>>()?;
    TwoTimeField::new(times, frames)
}

/// `R f(t) = \int_0^t G_{s,t} * f(s) ds` by the trapezoid rule on the knots.
pub fn apply_r(f: &SpaceTimeField, prop: &Propagator, t: f64) -> Result<Field> {
    check_grid(f, prop)?;
    let times = f.times();
    let k = times
        .knot_of(t)
        .ok_or_else(|| LabError::InvalidParams(format!("t = {t} is not a knot")))?;
    let weights = times.trapezoid_weights(k);
    let parts: Vec<Field> = (0..=k)
        .into_par_iter()
        .map(|i| {
            let (m, _) = prop.multiplier(times.time(i), times.time(k))?;
            Ok(f.frame(i).apply_multiplier(&m)?.scale(weights[i]))
        })
        .collect::<Result<_>>()?;
    let mut out = Field::zeros(*f.grid(), f.channels());
    for p in &parts {
        out = out.add(p)?;
    }
    Ok(out)
}

/// `T_t u_0 = G_{0,t} * u_0`.
pub fn apply_t(u0: &Field, prop: &Propagator, t: f64) -> Result<Field> {
    if u0.grid() != prop.grid() {
        return Err(LabError::ShapeMismatch("field and propagator grids differ".into()));
    }
    let (m, _) = prop.multiplier(0.0, t)?;
    u0.apply_multiplier(&m)
}

/// `-|xi|^alpha` times the propagator multiplier: `d^alpha G_{s,t}`.
fn derivative_multiplier(prop: &Propagator, s: f64, t: f64) -> Result<Vec<Complex64>> {
    let (mut m, _) = prop.multiplier(s, t)?;
    let alpha = prop.alpha();
    for (v, r) in m.iter_mut().zip(prop.grid().freq_norms()) {
        *v *= if r == 0.0 { 0.0 } else { -r.powf(alpha) };
    }
    Ok(m)
}

/// `d^alpha G_{s_i,t_j} * g(s_i)` for every pair, as per-point values of
/// each channel: `out[j][i]` is the frame at `(s_i, t_j)`.
fn derivative_frames(g: &MarkedField, prop: &Propagator) -> Result<Vec<Vec<Field>>> {
    let f = g.field();
    check_grid(f, prop)?;
    let times = *f.times();
    (0..times.knots())
        .into_par_iter()
        .map(|j| {
            (0..=j)
                .map(|i| {
                    let m = derivative_multiplier(prop, times.time(i), times.time(j))?;
                    f.frame(i).apply_multiplier(&m)
                })
                .collect()
        })
        .collect()
}

/// `I_1 = \int_0^T \int (\int_0^t sum_i lambda_i [d^alpha G_{s,t} * g(s,x,v_i)]^2 ds)^{p/2} dx dt`.
pub fn functional_i1(g: &MarkedField, prop: &Propagator, p: f64) -> Result<f64> {
    if p < 2.0 {
        return Err(LabError::InvalidParams(format!("p = {p} < 2")));
    }
    let frames = derivative_frames(g, prop)?;
    let times = *g.field().times();
    let outer = times.trapezoid_weights(times.steps);
    let npts = g.field().grid().len();
    let cell = g.field().grid().cell_volume();
    let mut total = 0.0;
    for (j, row) in frames.iter().enumerate() {
        let inner = times.trapezoid_weights(j);
        let mut acc = vec![0.0; npts];
        for (i, f) in row.iter().enumerate() {
            for (c, lam) in g.weights().iter().enumerate() {
                let w = inner[i] * lam;
                acc.iter_mut().zip(f.channel(c)).for_each(|(a, v)| *a += w * v.norm_sqr());
            }
        }
        total += outer[j] * acc.iter().map(|a| a.powf(p / 2.0)).sum::<f64>() * cell;
    }
    Ok(total)
}

/// `I_2 = \int_0^T \int_0^t \int sum_i lambda_i |d^alpha G_{s,t} * g(s,x,v_i)|^p dx ds dt`.
pub fn functional_i2(g: &MarkedField, prop: &Propagator, p: f64) -> Result<f64> {
    if p < 2.0 {
        return Err(LabError::InvalidParams(format!("p = {p} < 2")));
    }
    let frames = derivative_frames(g, prop)?;
    let times = *g.field().times();
    let outer = times.trapezoid_weights(times.steps);
    let cell = g.field().grid().cell_volume();
    let mut total = 0.0;
    for (j, row) in frames.iter().enumerate() {
        let inner = times.trapezoid_weights(j);
        for (i, f) in row.iter().enumerate() {
            for (c, lam) in g.weights().iter().enumerate() {
                let s: f64 = f.channel(c).iter().map(|v| v.norm().powf(p)).sum();
                total += outer[j] * inner[i] * lam * s * cell;
            }
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, TimeGrid};
    use crate::symbol::SymbolParams;

    #[test]
    fn marked_field_validation() {
        let g = GridSpec::new(1, 16, 8.0).unwrap();
        let times = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let f = SpaceTimeField::constant(times, Field::zeros(g, 2));
        assert!(MarkedField::new(f.clone(), vec![1.0]).is_err());
        assert!(MarkedField::new(f.clone(), vec![1.0, 0.0]).is_err());
        assert!(MarkedField::new(f, vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn functionals_reject_small_p() {
        let g = GridSpec::new(1, 16, 8.0).unwrap();
        let times = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let f = MarkedField::new(SpaceTimeField::constant(times, Field::zeros(g, 1)), vec![1.0]).unwrap();
        let prop = Propagator::new(&SymbolParams::fractional_laplacian(1.5, 1).unwrap(), g).unwrap();
        assert!(functional_i1(&f, &prop, 1.5).is_err());
        assert!(functional_i2(&f, &prop, 1.0).is_err());
        assert_eq!(functional_i1(&f, &prop, 2.0).unwrap(), 0.0);
    }
}
