//! One PASS/FAIL line per acceptance criterion.

use std::f64::consts::PI;
use std::io::Write;
use std::process::{Command, Stdio};
use std::time::Instant;

use stable_lab::cli::{bdg_integrand, ExperimentConfig};
use stable_lab::estimate_lab::{
    maximal_and_sharp, random_fields, reference_params, run_harness, sharp_domination, spacetime_lp, verify_auxl2,
    Bound, FieldEnsembleSpec, HarnessSpec, Profile, TimeProfile,
};
use stable_lab::grid::{GridSpec, TimeGrid};
use stable_lab::jump_mc::{bdg_two_sided, compensator_moment, Mark, PoissonSpec};
use stable_lab::kernel::{chapman_kolmogorov_residual, l1_decay_scan, propagator, Propagator};
use stable_lab::lp_norms::{LpBank, NormFamily};
use stable_lab::singular_ops::apply_t;
use stable_lab::symbol::{LatticeSymbol, SymbolParams};
use stable_lab::zakai::{compare_filters, particle_filter, reference_observations, run_spectral, simulate_truth};

const SEED: u64 = 7;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn symbol_calibration() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for d in [1, 2] {
        let grid = GridSpec::new(d, 128, 32.0).unwrap();
        for alpha in [0.7, 1.0, 1.5, 2.0] {
            let p = SymbolParams::fractional_laplacian(alpha, d).unwrap();
            let lattice = LatticeSymbol::new(&p, grid).unwrap();
            for (v, r) in lattice.at(0.0).iter().zip(grid.freq_norms()) {
                worst = worst.max((v.re + r.powf(alpha)).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst < 1e-6 && secs < 5.0, format!("max error {worst:.2e}, {secs:.2} s"))
}

fn kernel_oracles() -> Outcome {
    let start = Instant::now();
    let g = GridSpec::new(1, 256, 32.0).unwrap();
    let heat = propagator(&SymbolParams::heat(1).unwrap(), 0.0, 0.5, g).unwrap();
    let heat_err = (0..g.len())
        .map(|i| {
            let x = g.coordinate(i);
            (heat.kernel.values()[i].re - (-x * x / 2.0).exp() / (2.0 * PI).sqrt()).abs()
        })
        .fold(0.0, f64::max);
    let g = GridSpec::new(1, 512, 64.0).unwrap();
    let cauchy = propagator(&SymbolParams::fractional_laplacian(1.0, 1).unwrap(), 0.0, 1.0, g).unwrap();
    let cauchy_err = (0..g.len())
        .filter(|&i| g.coordinate(i).abs() <= g.length() / 4.0)
        .map(|i| {
            let x = g.coordinate(i);
            (cauchy.kernel.values()[i].re - 1.0 / (PI * (1.0 + x * x))).abs()
        })
        .fold(0.0, f64::max);
    let mut mass: f64 = 0.0;
    let mut ck: f64 = 0.0;
    for (alpha, d) in [(0.7, 1), (1.0, 1), (1.5, 1), (2.0, 1), (1.5, 2)] {
        let grid = if d == 1 { GridSpec::new(1, 256, 32.0).unwrap() } else { GridSpec::new(2, 64, 16.0).unwrap() };
        let prop = Propagator::new(&reference_params(alpha, d).unwrap(), grid).unwrap();
        mass = mass.max((prop.table(0.1, 0.8).unwrap().mass() - 1.0).abs());
        ck = ck.max(chapman_kolmogorov_residual(&prop, 0.1, 0.45, 0.8).unwrap());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = heat_err < 1e-8 && cauchy_err < 1e-3 && mass < 1e-10 && ck < 1e-10 && secs < 10.0;
    outcome(
        pass,
        format!("heat {heat_err:.2e}, cauchy {cauchy_err:.2e}, mass {mass:.2e}, ck {ck:.2e}, {secs:.2} s"),
    )
}

fn l1_decay() -> Outcome {
    let g = GridSpec::new(1, 1 << 13, 32.0).unwrap();
    let bank = LpBank::for_grid(g).unwrap();
    let taus: Vec<f64> = (0..=18).map(|k| 2f64.powi(-k)).collect();
    let p = SymbolParams::fractional_laplacian(1.5, 1).unwrap();
    let scan = l1_decay_scan(&p, &bank, &[1, 2, 3, 4, 5, 6, 7], &taus, (2f64.powi(-6), 2f64.powi(6))).unwrap();
    let pass = scan.max_ratio() <= 1.0 + 1e-12
        && scan.fitted_c > 0.0
        && scan.collapse_spread < 0.2
        && scan.h0_max.is_finite();
    outcome(
        pass,
        format!(
            "envelope ratio {:.4}, c {:.3}, collapse spread {:.3}, sup |h0|_1 {:.3}",
            scan.max_ratio(),
            scan.fitted_c,
            scan.collapse_spread,
            scan.h0_max
        ),
    )
}

fn harness(seed: u64) -> HarnessSpec {
    HarnessSpec {
        alphas: vec![0.7, 1.5, 2.0],
        ps: vec![2.0, 4.0],
        betas: vec![-0.5, 0.0, 0.5],
        n: 128,
        steps: 16,
        length: 32.0,
        horizon: 1.0,
        ensemble: FieldEnsembleSpec {
            seed,
            count: 50,
            band: (0.5, 3.0),
            decay: 0.0,
            time_profile: TimeProfile::Linear,
            channels: 1,
        },
        growth_limit: 2.0,
    }
}

fn first_bound() -> Outcome {
    let cases = run_harness(&harness(SEED), Bound::First).unwrap();
    let finite = cases.iter().all(|c| c.report.max_ratio.is_finite() && c.report.refined_max_ratio.is_finite());
    let growth = cases.iter().map(|c| c.report.refinement_factor).fold(0.0, f64::max);
    let parseval = cases.iter().filter_map(|c| c.parseval_error).fold(0.0, f64::max);
    let pass = cases.len() == 18 && finite && growth < 2.0 && parseval < 0.05;
    outcome(pass, format!("18 cases, max growth {growth:.3}, max p=2 Parseval error {parseval:.4}"))
}

fn second_bound() -> Outcome {
    let mut growth: f64 = 0.0;
    let mut bound: f64 = 0.0;
    let mut finite = true;
    for family in [NormFamily::Sobolev, NormFamily::Besov] {
        for c in run_harness(&harness(SEED), Bound::Second(family)).unwrap() {
            finite &= c.report.max_ratio.is_finite();
            growth = growth.max(c.report.refinement_factor);
            if let Some(b) = c.parseval_bound {
                bound = bound.max(b);
            }
        }
    }
    let mut spec = harness(SEED).ensemble;
    spec.channels = 3;
    spec.count = 3;
    let grid = GridSpec::new(1, 128, 32.0).unwrap();
    let fields = random_fields(&spec, grid, TimeGrid::new(0.0, 1.0, 16).unwrap()).unwrap();
    let bank = LpBank::for_grid(grid).unwrap();
    let mut additivity: f64 = 0.0;
    for alpha in [0.7, 1.5, 2.0] {
        let prop = Propagator::new(&reference_params(alpha, 1).unwrap(), grid).unwrap();
        for family in [NormFamily::Sobolev, NormFamily::Besov] {
            for g in &fields {
                additivity = additivity
                    .max(stable_lab::estimate_lab::channel_additivity(g, &prop, &bank, 0.0, family).unwrap());
            }
        }
    }
    let pass = finite && growth < 2.0 && bound <= 1.0 + 1e-6 && additivity < 1e-10;
    outcome(
        pass,
        format!("max growth {growth:.3}, max ratio*(2mu)^(1/2) {bound:.4}, channel additivity {additivity:.2e}"),
    )
}

fn auxl2() -> Outcome {
    let profile = Profile::TwoValued { plus: 1.0, minus: 2.0 };
    let mut spread: f64 = 0.0;
    let mut finite = true;
    for (l, delta) in [(0.0, 0.5), (-0.5, 0.3), (0.4, 0.9)] {
        let r = verify_auxl2(l, delta, profile, 1, 8, 6).unwrap();
        finite &= r.sup.is_finite() && r.sup > 0.0;
        spread = spread.max(r.ray_spread);
    }
    outcome(finite && spread < 0.05, format!("max ray spread {spread:.2e}"))
}

fn fefferman_stein() -> Outcome {
    let mut ratios = Vec::new();
    let mut dominated = true;
    let mut sharp: f64 = 0.0;
    for level in 0..2 {
        let grid = GridSpec::new(1, 64 << level, 32.0).unwrap();
        let times = TimeGrid::new(0.0, 1.0, 16 << level).unwrap();
        let spec = FieldEnsembleSpec {
            seed: SEED,
            count: 20,
            band: (0.5, 3.0),
            decay: 0.0,
            time_profile: TimeProfile::Linear,
            channels: 1,
        };
        let mut worst: f64 = 0.0;
        for h in random_fields(&spec, grid, times).unwrap() {
            let ms = maximal_and_sharp(&h, 1.5).unwrap();
            for (k, f) in h.frames().iter().enumerate() {
                let m = ms.maximal.frame(k).real_parts(0);
                dominated &= f.real_parts(0).iter().zip(&m).all(|(a, b)| *b >= a.abs());
            }
            sharp = sharp.max(sharp_domination(&ms.boxes));
            worst = worst.max(spacetime_lp(&h, 4.0) / spacetime_lp(&ms.sharp, 4.0));
        }
        ratios.push(worst);
    }
    let change = (ratios[1] / ratios[0] - 1.0).abs();
    let pass = ratios.iter().all(|r| r.is_finite()) && change < 0.3 && dominated && sharp <= 1.0 + 1e-12;
    outcome(
        pass,
        format!(
            "ratio {:.3} -> {:.3} (change {change:.3}), Mh >= |h| {dominated}, sharp domination {sharp:.3}",
            ratios[0], ratios[1]
        ),
    )
}

fn bdg() -> Outcome {
    let start = Instant::now();
    let paths = 100_000;
    let single = PoissonSpec::new(vec![Mark { value: 1.0, rate: 1.5 }], 2.0, None).unwrap();
    let iso = bdg_two_sided(&|_, _| 1.0, &single, 2.0, paths, SEED).unwrap();
    let qv = compensator_moment(&|_, _| 1.0, &single, 2.0);
    let iso_sigmas = (iso.endpoint - qv).abs() / iso.endpoint_std_err;
    let four = bdg_two_sided(&|_, _| 1.0, &single, 4.0, paths, SEED + 1).unwrap();
    let lt = 3.0;
    let four_sigmas = (four.endpoint - (lt + 3.0 * lt * lt)).abs() / four.endpoint_std_err;
    let two = PoissonSpec::new(
        vec![Mark { value: -1.0, rate: 1.5 }, Mark { value: 1.0, rate: 3.0 }],
        2.0,
        None,
    )
    .unwrap();
    let mut band = true;
    let mut drift: f64 = 0.0;
    for kappa in [0.25, 1.0, 4.0] {
        let spec = two.scaled(kappa).unwrap();
        let a = bdg_two_sided(&bdg_integrand, &spec, 4.0, paths, SEED + 2).unwrap();
        let b = bdg_two_sided(&bdg_integrand, &spec, 4.0, 2 * paths, SEED + 2).unwrap();
        band &= a.ratio > 0.05 && a.ratio < 50.0 && b.ratio > 0.05 && b.ratio < 50.0;
        drift = drift.max((b.ratio / a.ratio - 1.0).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = iso_sigmas <= 3.0 && four_sigmas <= 3.0 && band && drift < 0.3 && secs < 60.0;
    outcome(
        pass,
        format!(
            "isometry {iso_sigmas:.2} sigma, fourth moment {four_sigmas:.2} sigma, band {band}, doubling drift {drift:.3}, {secs:.1} s"
        ),
    )
}

fn zakai() -> Outcome {
    let start = Instant::now();
    let model = ExperimentConfig::default().zakai.model().unwrap();
    let flat = model.with_constant_likelihood(1.0).unwrap();
    let states = run_spectral(&flat, &simulate_truth(&flat, SEED).unwrap().observations).unwrap();
    let prop = Propagator::new(&flat.adjoint_params().unwrap(), flat.grid).unwrap();
    let times = flat.times();
    let collapse = states
        .iter()
        .enumerate()
        .map(|(k, s)| s.density.sub(&apply_t(&flat.u0, &prop, times.time(k)).unwrap()).unwrap().max_abs())
        .fold(0.0, f64::max);
    let masses: Vec<f64> = (0..1000)
        .map(|k| {
            let obs = reference_observations(&model, SEED, 1000 + k).unwrap();
            run_spectral(&model, &obs).unwrap().last().unwrap().mass()
        })
        .collect();
    let n = masses.len() as f64;
    let mean = masses.iter().sum::<f64>() / n;
    let se = (masses.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    let truth = simulate_truth(&model, SEED).unwrap();
    let spectral: Vec<_> = run_spectral(&model, &truth.observations).unwrap().into_iter().map(|s| s.density).collect();
    let tv = compare_filters(&spectral, &particle_filter(&model, &truth.observations, 100_000, SEED).unwrap().densities)
        .unwrap()
        .mean_tv;
    let tv2 = compare_filters(&spectral, &particle_filter(&model, &truth.observations, 200_000, SEED).unwrap().densities)
        .unwrap()
        .mean_tv;
    let secs = start.elapsed().as_secs_f64();
    let pass = collapse < 1e-6 && (mean - 1.0).abs() <= 3.0 * se && tv < 0.2 && tv2 < tv && secs < 300.0;
    outcome(
        pass,
        format!(
            "collapse {collapse:.2e}, mass {mean:.4} +- {se:.4}, TV {tv:.4} -> {tv2:.4} under doubling, {secs:.1} s"
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut summaries = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_stable-lab"))
            .args(["all", "--seed", "7", "--out"])
            .arg(&out)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::null())
            .status()
            .unwrap();
        summaries.push((status.code(), std::fs::read(out.join("summary.json")).unwrap_or_default()));
    }
    let identical = !summaries[0].1.is_empty() && summaries[0].1 == summaries[1].1;
    outcome(
        identical,
        format!(
            "exit codes {:?} / {:?}, summary {} bytes, identical {identical}",
            summaries[0].0,
            summaries[1].0,
            summaries[0].1.len()
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 symbol calibration", symbol_calibration),
        ("2 kernel oracles", kernel_oracles),
        ("3 L1 decay", l1_decay),
        ("4 first bound harness", first_bound),
        ("5 second bound harness", second_bound),
        ("6 auxiliary L2 homogeneity", auxl2),
        ("7 maximal and sharp functions", fefferman_stein),
        ("8 two-sided moment bounds", bdg),
        ("9 filtering demo", zakai),
        ("10 determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let o = check();
        // bypasses test output capture so the lines show up in plain `cargo test`
        let _ = writeln!(std::io::stderr(), "{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
