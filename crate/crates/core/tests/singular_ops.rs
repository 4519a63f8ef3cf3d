use num_complex::Complex64;
use stable_lab::grid::{Field, GridSpec, SpaceTimeField, TimeGrid, TwoTimeField};
use stable_lab::kernel::Propagator;
use stable_lab::lp_norms::{frac_deriv_fourier, norm, LpBank, NormDescriptor, NormFamily, NormInput, TimeStructure};
use stable_lab::singular_ops::{apply_i, apply_r, apply_t, functional_i1, functional_i2, MarkedField};
use stable_lab::symbol::{eval_symbol, AngularDensity, CoefficientSet, Normalization, Schedule, SymbolParams};

fn skewed(alpha: f64) -> SymbolParams {
    SymbolParams::new(
        alpha,
        1,
        Schedule::frozen(CoefficientSet::jump_only(AngularDensity::TwoPoint { plus: 1.2, minus: 0.6 })),
        Normalization::FractionalLaplacian,
        0.9,
        10.0,
    )
    .unwrap()
}

fn varying_field(grid: GridSpec, times: TimeGrid) -> SpaceTimeField {
    let frames = (0..times.knots())
        .map(|i| {
            let t = times.time(i);
            Field::from_fn(grid, |x| (-(x[0] - t).powi(2)).exp() + 0.3 * (0.5 * x[0]).sin() * t)
        })
        .collect();
    SpaceTimeField::new(times, frames).unwrap()
}

#[test]
fn diagonal_and_constant_inputs() {
    let g = GridSpec::new(1, 64, 16.0).unwrap();
    let times = TimeGrid::new(0.0, 1.0, 8).unwrap();
    let prop = Propagator::new(&skewed(1.5), g).unwrap();
    let f = varying_field(g, times);
    let u = apply_i(&f, &prop).unwrap();
    for i in 0..times.knots() {
        assert_eq!(u.frame(i, i), f.frame(i));
    }
    let c = SpaceTimeField::constant(times, Field::from_fn(g, |_| 1.7));
    let uc = apply_i(&c, &prop).unwrap();
    for fr in uc.frames() {
        assert!(fr.sub(c.frame(0)).unwrap().max_abs() < 1e-12);
    }
    let r = apply_r(&c, &prop, 0.75).unwrap();
    assert!(r.sub(&Field::from_fn(g, |_| 1.7 * 0.75)).unwrap().max_abs() < 1e-12);
    let zero = SpaceTimeField::constant(times, Field::zeros(g, 1));
    assert_eq!(apply_r(&zero, &prop, 1.0).unwrap().max_abs(), 0.0);
    assert!(apply_r(&c, &prop, 0.3).is_err());
}

#[test]
fn block_tone_decays_spectrally() {
    // xi_0 = 2^j-ish tone with j = 2: |xi_0| >= 2^{j-1}
    let g = GridSpec::new(1, 128, 8.0 * std::f64::consts::PI).unwrap();
    let times = TimeGrid::new(0.0, 1.0, 8).unwrap();
    let p = skewed(1.5);
    let prop = Propagator::new(&p, g).unwrap();
    let xi0 = 3.0;
    let tone = SpaceTimeField::constant(times, Field::from_fn(g, |x| (xi0 * x[0]).cos()));
    let u = apply_i(&tone, &prop).unwrap();
    for j in 0..times.knots() {
        for i in 0..=j {
            let tau = times.time(j) - times.time(i);
            let bound = (-p.mu * 2f64.powf(1.5) * tau).exp() * tone.frame(i).lp_norm(2.0);
            assert!(u.frame(i, j).lp_norm(2.0) <= bound * (1.0 + 1e-12));
        }
    }
}

#[test]
fn r_of_tone_matches_exact_time_integral() {
    let g = GridSpec::new(1, 32, 4.0 * std::f64::consts::PI).unwrap();
    let times = TimeGrid::new(0.0, 1.0, 1024).unwrap();
    let p = skewed(1.3);
    let prop = Propagator::new(&p, g).unwrap();
    let xi0 = 2.0;
    let tone = Field::from_fn(g, |x| (xi0 * x[0]).cos());
    let f = SpaceTimeField::constant(times, tone.clone());
    let r = apply_r(&f, &prop, 1.0).unwrap();
    let psi = eval_symbol(&p, 0.0, [xi0, 0.0]).value;
    let factor = ((psi * 1.0).exp() - 1.0) / psi;
    let exact = Field::from_values(
        g,
        1,
        (0..g.len())
            .map(|i| {
                let x = g.point(i)[0];
                let e = Complex64::from_polar(1.0, xi0 * x) * factor;
                Complex64::new(e.re, 0.0)
            })
            .collect(),
    )
    .unwrap();
    let err = r.sub(&exact).unwrap().max_abs();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn heat_evolution_of_gaussian_and_semigroup() {
    let g = GridSpec::new(1, 256, 32.0).unwrap();
    let prop = Propagator::new(&SymbolParams::heat(1).unwrap(), g).unwrap();
    let u0 = Field::from_fn(g, |x| (-x[0] * x[0] / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt());
    let t = 0.75;
    let u = apply_t(&u0, &prop, t).unwrap();
    let v = 1.0 + 2.0 * t;
    let exact = Field::from_fn(g, |x| (-x[0] * x[0] / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt());
    assert!(u.sub(&exact).unwrap().max_abs() < 1e-8);
    assert!((u.integral()[0].re - u0.integral()[0].re).abs() < 1e-10);
    assert!(apply_t(&u0, &prop, 0.0).unwrap().sub(&u0).unwrap().max_abs() < 1e-15);

    let prop = Propagator::new(&skewed(0.8), g).unwrap();
    let a = apply_t(&u0, &prop, 0.9).unwrap();
    let b = apply_t(&apply_t(&u0, &prop, 0.4).unwrap(), &prop, 0.5).unwrap();
    assert!(a.sub(&b).unwrap().max_abs() < 1e-9);
}

#[test]
fn linearity() {
    let g = GridSpec::new(1, 64, 16.0).unwrap();
    let times = TimeGrid::new(0.0, 1.0, 6).unwrap();
    let prop = Propagator::new(&skewed(1.1), g).unwrap();
    let f = varying_field(g, times);
    let h = f.map(|fr| fr.apply_symbol(|k| (k[0] * 0.3).cos()));
    let sum = f.add(&h.map(|fr| fr.scale(2.0))).unwrap();
    let lhs = apply_i(&sum, &prop).unwrap();
    let a = apply_i(&f, &prop).unwrap();
    let b = apply_i(&h, &prop).unwrap();
    for idx in 0..lhs.frames().len() {
        let rhs = a.frames()[idx].add(&b.frames()[idx].scale(2.0)).unwrap();
        assert!(lhs.frames()[idx].sub(&rhs).unwrap().max_abs() < 1e-12);
    }
}

#[test]
fn parseval_energy_bound() {
    let g = GridSpec::new(1, 128, 32.0).unwrap();
    let bank = LpBank::for_grid(g).unwrap();
    let times = TimeGrid::new(0.0, 1.0, 32).unwrap();
    let p = SymbolParams::fractional_laplacian(1.5, 1).unwrap();
    let prop = Propagator::new(&p, g).unwrap();
    let f = varying_field(g, times).map(|fr| fr.apply_symbol(|k| if k[0].abs() >= 0.5 && k[0].abs() <= 3.0 { 1.0 } else { 0.0 }));
    let u = apply_i(&f, &prop).unwrap();
    let du = u.map(|fr| frac_deriv_fourier(fr, 0.75));
    let lhs = norm(
        NormInput::TwoTime(&du),
        &NormDescriptor::new(NormFamily::Sobolev, 0.0, 2.0, TimeStructure::Etilde).unwrap(),
        &bank,
    )
    .unwrap();
    let rhs = norm(
        NormInput::SpaceTime(&f),
        &NormDescriptor::new(NormFamily::Sobolev, 0.0, 2.0, TimeStructure::E).unwrap(),
        &bank,
    )
    .unwrap();
    assert!(lhs * lhs <= rhs * rhs / (2.0 * p.mu), "{lhs} {rhs}");
    let _ = TwoTimeField::index(0, 0);
}

fn tone_marked(g: GridSpec, times: TimeGrid, xi0: f64, weights: Vec<f64>) -> MarkedField {
    let frame = Field::from_fn(g, |x| (xi0 * x[0]).cos());
    let frames: Vec<Field> = weights.iter().map(|_| frame.clone()).collect();
    let stacked = Field::stack_channels(&frames).unwrap();
    MarkedField::new(SpaceTimeField::constant(times, stacked), weights).unwrap()
}

#[test]
fn functionals_one_tone_oracles() {
    let g = GridSpec::new(1, 16, 2.0 * std::f64::consts::PI).unwrap();
    let times = TimeGrid::new(0.0, 1.0, 512).unwrap();
    let alpha = 1.5;
    let p = SymbolParams::fractional_laplacian(alpha, 1).unwrap();
    let prop = Propagator::new(&p, g).unwrap();
    let xi0 = 1.0;
    let lam = 0.7;
    let g1 = tone_marked(g, times, xi0, vec![lam]);
    let a = eval_symbol(&p, 0.0, [xi0, 0.0]).value.re;
    let tt = 1.0;
    // \int_0^T \int_0^t e^{2a(t-s)} ds dt
    let double = ((2.0 * a * tt).exp() - 1.0 - 2.0 * a * tt) / (4.0 * a * a);
    let space = g.length() / 2.0;
    let exact = lam * xi0.powf(2.0 * alpha) * double * space;
    let i1 = functional_i1(&g1, &prop, 2.0).unwrap();
    let i2 = functional_i2(&g1, &prop, 2.0).unwrap();
    assert!((i1 - i2).abs() < 1e-12 * i1);
    assert!((i1 - exact).abs() < 1e-6 * exact, "{i1} {exact}");

    // p = 4: I_1 = lam^2 xi^{4 alpha} \int A(t)^2 dt \int cos^4, I_2 similar
    let cos4 = 3.0 * g.length() / 8.0;
    let steps = 200_000;
    let h = tt / steps as f64;
    let mut int_a2 = 0.0;
    let mut int_e4 = 0.0;
    for k in 0..=steps {
        let t = k as f64 * h;
        let w = if k == 0 || k == steps { 0.5 * h } else { h };
        let at = (1.0 - (2.0 * a * t).exp()) / (-2.0 * a);
        int_a2 += w * at * at;
        int_e4 += w * (1.0 - (4.0 * a * t).exp()) / (-4.0 * a);
    }
    let i1_exact = lam * lam * xi0.powf(4.0 * alpha) * int_a2 * cos4;
    let i2_exact = lam * xi0.powf(4.0 * alpha) * int_e4 * cos4;
    let i1 = functional_i1(&g1, &prop, 4.0).unwrap();
    let i2 = functional_i2(&g1, &prop, 4.0).unwrap();
    assert!((i1 - i1_exact).abs() < 1e-5 * i1_exact, "{i1} {i1_exact}");
    assert!((i2 - i2_exact).abs() < 1e-5 * i2_exact, "{i2} {i2_exact}");

    let zero = MarkedField::new(SpaceTimeField::constant(times, Field::zeros(g, 1)), vec![1.0]).unwrap();
    assert_eq!(functional_i1(&zero, &prop, 3.0).unwrap(), 0.0);
    assert_eq!(functional_i2(&zero, &prop, 3.0).unwrap(), 0.0);
}
