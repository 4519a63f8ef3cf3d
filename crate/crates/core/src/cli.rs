//! Experiment runner: TOML configuration, the `verify-*` checks, and the
//! artifacts and pass/fail summary each one writes.
//!
//! Output layout under `--out`:
//! `summary.json` plus one directory per subcommand holding its CSV/JSON
//! (and for `run-zakai` binary and SVG) artifacts. Every artifact carries
//! the configuration hash and seed.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::estimate_lab::{
    channel_additivity, maximal_and_sharp, random_fields, reference_params, run_harness, sharp_domination,
    spacetime_lp, verify_auxl2, Bound, CaseReport, FieldEnsembleSpec, HarnessSpec, Profile, TimeProfile,
};
use crate::grid::{Field, GridSpec, TimeGrid};
use crate::jump_mc::{bdg_two_sided, compensator_moment, Mark, MomentReport, PoissonSpec};
use crate::kernel::{chapman_kolmogorov_residual, l1_decay_scan, propagator, Propagator};
use crate::lp_norms::{norm, Hypersingular, HypersingularRule, LpBank, NormDescriptor, NormFamily, NormInput, TimeStructure};
use crate::singular_ops::apply_t;
use crate::symbol::{check_assumption_b, LatticeSymbol};
use crate::zakai::{
    compare_filters, gaussian_density, particle_filter, positivity, reference_observations, run_spectral,
    simulate_truth, FilterModel,
};

pub const SUBCOMMANDS: [&str; 9] = [
    "verify-symbol",
    "verify-kernel",
    "verify-norms",
    "verify-prop1",
    "verify-prop2",
    "verify-auxl2",
    "verify-maximal",
    "verify-bdg",
    "run-zakai",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SymbolSection {
    pub alphas: Vec<f64>,
    pub dims: Vec<usize>,
    pub n: usize,
    pub length: f64,
    pub tolerance: f64,
}

impl Default for SymbolSection {
    fn default() -> Self {
        Self { alphas: vec![0.7, 1.0, 1.5, 2.0], dims: vec![1, 2], n: 128, length: 32.0, tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub heat_n: usize,
    pub heat_length: f64,
    pub heat_tolerance: f64,
    pub cauchy_n: usize,
    pub cauchy_length: f64,
    pub cauchy_tolerance: f64,
    pub mass_tolerance: f64,
    pub ck_tolerance: f64,
    pub decay_n: usize,
    pub decay_length: f64,
    pub decay_alpha: f64,
    pub decay_blocks: usize,
    /// `tau = 2^{-k}` for `k = 0..=decay_tau_exponent`.
    pub decay_tau_exponent: i32,
    pub decay_window: (f64, f64),
    pub collapse_tolerance: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            heat_n: 256,
            heat_length: 32.0,
            heat_tolerance: 1e-8,
            cauchy_n: 512,
            cauchy_length: 64.0,
            cauchy_tolerance: 1e-3,
            mass_tolerance: 1e-10,
            ck_tolerance: 1e-10,
            decay_n: 8192,
            decay_length: 32.0,
            decay_alpha: 1.5,
            decay_blocks: 7,
            decay_tau_exponent: 18,
            decay_window: (1.0 / 64.0, 64.0),
            collapse_tolerance: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormsSection {
    pub n: usize,
    pub length: f64,
    pub partition_tolerance: f64,
    pub parseval_tolerance: f64,
    pub hypersingular_beta: f64,
    pub hypersingular_tolerance: f64,
}

impl Default for NormsSection {
    fn default() -> Self {
        Self {
            n: 256,
            length: 32.0,
            partition_tolerance: 1e-12,
            parseval_tolerance: 1e-10,
            hypersingular_beta: 0.5,
            hypersingular_tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropSection {
    pub alphas: Vec<f64>,
    pub ps: Vec<f64>,
    pub betas: Vec<f64>,
    pub n: usize,
    pub steps: usize,
    pub length: f64,
    pub horizon: f64,
    pub count: usize,
    pub band: (f64, f64),
    pub decay: f64,
    pub growth_limit: f64,
    /// First bound: `|LHS / exact - 1|` at `p = 2`.
    pub parseval_tolerance: f64,
    /// Second bound: families and the `p = 2` slack.
    pub families: Vec<NormFamily>,
    pub bound_tolerance: f64,
    pub channels: usize,
    pub additivity_tolerance: f64,
}

impl Default for PropSection {
    fn default() -> Self {
        Self {
            alphas: vec![0.7, 1.5, 2.0],
            ps: vec![2.0, 4.0],
            betas: vec![-0.5, 0.0, 0.5],
            n: 128,
            steps: 16,
            length: 32.0,
            horizon: 1.0,
            count: 50,
            band: (0.5, 3.0),
            decay: 0.0,
            growth_limit: 2.0,
            parseval_tolerance: 0.05,
            families: vec![NormFamily::Sobolev, NormFamily::Besov],
            bound_tolerance: 1e-6,
            channels: 3,
            additivity_tolerance: 1e-10,
        }
    }
}

impl PropSection {
    fn harness(&self, seed: u64, channels: usize) -> HarnessSpec {
        HarnessSpec {
            alphas: self.alphas.clone(),
            ps: self.ps.clone(),
            betas: self.betas.clone(),
            n: self.n,
            steps: self.steps,
            length: self.length,
            horizon: self.horizon,
            ensemble: FieldEnsembleSpec {
                seed,
                count: self.count,
                band: self.band,
                decay: self.decay,
                time_profile: TimeProfile::Linear,
                channels,
            },
            growth_limit: self.growth_limit,
        }
    }

    fn validate(&self, seed: u64) -> Result<()> {
        let grid = GridSpec::new(1, self.n, self.length)?;
        TimeGrid::new(0.0, self.horizon, self.steps)?;
        LpBank::for_grid(grid)?;
        self.harness(seed, 1).ensemble.validate(&grid)?;
        for &a in &self.alphas {
            reference_params(a, 1)?;
        }
        if self.ps.iter().any(|p| *p < 2.0) {
            return Err(LabError::Config("p must be at least 2".into()));
        }
        if self.families.contains(&NormFamily::Htilde) {
            return Err(LabError::Config("second bound families are sobolev and besov".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuxSection {
    pub cases: Vec<(f64, f64)>,
    pub plus: f64,
    pub minus: f64,
    pub radii: usize,
    pub level: usize,
    pub ray_tolerance: f64,
    pub refinement_tolerance: f64,
    pub harmonic_amplitude: f64,
}

impl Default for AuxSection {
    fn default() -> Self {
        Self {
            cases: vec![(0.0, 0.5), (-0.5, 0.3), (0.4, 0.9)],
            plus: 1.0,
            minus: 2.0,
            radii: 8,
            level: 6,
            ray_tolerance: 0.05,
            refinement_tolerance: 0.05,
            harmonic_amplitude: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaximalSection {
    pub count: usize,
    pub n: usize,
    pub steps: usize,
    pub length: f64,
    pub alpha: f64,
    pub p: f64,
    pub band: (f64, f64),
    pub stability: f64,
}

impl Default for MaximalSection {
    fn default() -> Self {
        Self { count: 20, n: 64, steps: 16, length: 32.0, alpha: 1.5, p: 4.0, band: (0.5, 3.0), stability: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BdgSection {
    pub rate: f64,
    pub horizon: f64,
    pub paths: usize,
    pub kappas: Vec<f64>,
    pub p: f64,
    pub band: (f64, f64),
    pub stability: f64,
    pub sigmas: f64,
}

impl Default for BdgSection {
    fn default() -> Self {
        Self {
            rate: 1.5,
            horizon: 2.0,
            paths: 100_000,
            kappas: vec![0.25, 1.0, 4.0],
            p: 4.0,
            band: (0.05, 50.0),
            stability: 0.3,
            sigmas: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZakaiSection {
    pub n: usize,
    pub length: f64,
    pub alpha: f64,
    pub drift: f64,
    pub m_plus: f64,
    pub m_minus: f64,
    pub horizon: f64,
    pub steps: usize,
    pub marks: Vec<Mark>,
    /// `rho(x, y) = 1 + gain tanh(x y)`, clipped to `bounds`.
    pub gain: f64,
    pub bounds: (f64, f64),
    pub initial_width: f64,
    pub particles: usize,
    pub mass_paths: usize,
    pub collapse_tolerance: f64,
    pub mass_sigmas: f64,
    pub tv_tolerance: f64,
    pub positivity_tolerance: f64,
}

impl Default for ZakaiSection {
    fn default() -> Self {
        Self {
            n: 256,
            length: 16.0,
            alpha: 1.5,
            drift: 0.0,
            m_plus: 1.5,
            m_minus: 0.5,
            horizon: 1.0,
            steps: 128,
            marks: vec![Mark { value: -1.0, rate: 2.0 }, Mark { value: 1.0, rate: 2.0 }],
            gain: 0.8,
            bounds: (0.2, 1.8),
            initial_width: 1.0,
            particles: 100_000,
            mass_paths: 1000,
            collapse_tolerance: 1e-6,
            mass_sigmas: 3.0,
            tv_tolerance: 0.2,
            positivity_tolerance: 1e-6,
        }
    }
}

impl ZakaiSection {
    pub fn model(&self) -> Result<FilterModel> {
        let grid = GridSpec::new(1, self.n, self.length)?;
        let table = self
            .marks
            .iter()
            .map(|m| (0..grid.len()).map(|k| 1.0 + self.gain * (m.value * grid.coordinate(k)).tanh()).collect())
            .collect();
        FilterModel::new(
            self.alpha,
            self.drift,
            (self.m_plus, self.m_minus),
            gaussian_density(grid, 0.0, self.initial_width),
            self.marks.clone(),
            table,
            self.bounds,
            self.horizon,
            self.steps,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub symbol: SymbolSection,
    pub kernel: KernelSection,
    pub norms: NormsSection,
    pub prop1: PropSection,
    pub prop2: PropSection,
    pub auxl2: AuxSection,
    pub maximal: MaximalSection,
    pub bdg: BdgSection,
    pub zakai: ZakaiSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            symbol: SymbolSection::default(),
            kernel: KernelSection::default(),
            norms: NormsSection::default(),
            prop1: PropSection::default(),
            prop2: PropSection::default(),
            auxl2: AuxSection::default(),
            maximal: MaximalSection::default(),
            bdg: BdgSection::default(),
            zakai: ZakaiSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Doubles grid sizes, step counts and path counts.
    pub fn refined(&self) -> Self {
        let mut c = self.clone();
        for s in [&mut c.prop1, &mut c.prop2] {
            s.n *= 2;
            s.steps *= 2;
        }
        c.maximal.n *= 2;
        c.maximal.steps *= 2;
        c.bdg.paths *= 2;
        c.zakai.n *= 2;
        c.zakai.steps *= 2;
        c.zakai.particles *= 2;
        c.zakai.mass_paths *= 2;
        c
    }

    /// SHA-256 of the JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Feasibility of the sections a subcommand uses, before any compute.
    pub fn validate(&self, subcommand: &str) -> Result<()> {
        let all = subcommand == "all";
        let wants = |name: &str| all || subcommand == name;
        if !all && !SUBCOMMANDS.contains(&subcommand) {
            return Err(LabError::Config(format!("unknown subcommand {subcommand}")));
        }
        if wants("verify-symbol") {
            for &d in &self.symbol.dims {
                GridSpec::new(d, self.symbol.n, self.symbol.length)?;
            }
        }
        if wants("verify-prop1") {
            self.prop1.validate(self.seed)?;
        }
        if wants("verify-prop2") {
            self.prop2.validate(self.seed)?;
        }
        if wants("verify-maximal") {
            let grid = GridSpec::new(1, self.maximal.n, self.maximal.length)?;
            FieldEnsembleSpec {
                seed: self.seed,
                count: self.maximal.count,
                band: self.maximal.band,
                decay: 0.0,
                time_profile: TimeProfile::Linear,
                channels: 1,
            }
            .validate(&grid)?;
        }
        if wants("verify-bdg") {
            PoissonSpec::new(vec![Mark { value: 1.0, rate: self.bdg.rate }], self.bdg.horizon, None)?;
            if self.bdg.p < 2.0 || self.bdg.paths < 2 {
                return Err(LabError::Config("bdg needs p >= 2 and at least two paths".into()));
            }
        }
        if wants("run-zakai") {
            self.zakai.model()?;
        }
        if wants("verify-auxl2") && self.auxl2.radii < 2 {
            return Err(LabError::Config("auxl2 needs at least two radii".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

impl Check {
    /// `value < limit`.
    pub fn below(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, pass: value < limit }
    }

    /// `value <= limit`.
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, pass: value <= limit }
    }

    /// `value > limit`.
    pub fn above(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self { name: name.into(), value, limit, pass: value > limit }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommandResult {
    pub name: String,
    pub pass: bool,
    pub checks: Vec<Check>,
}

impl CommandResult {
    fn new(name: &str, checks: Vec<Check>) -> Self {
        Self { name: name.to_string(), pass: checks.iter().all(|c| c.pass), checks }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub config_hash: String,
    pub seed: u64,
    pub refine: bool,
    pub results: Vec<CommandResult>,
    pub pass: bool,
}

struct Artifacts {
    dir: PathBuf,
    hash: String,
    seed: u64,
}

impl Artifacts {
    fn new(root: &Path, name: &str, hash: &str, seed: u64) -> Result<Self> {
        let dir = root.join(name);
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, hash: hash.to_string(), seed })
    }

    fn json<T: Serialize>(&self, file: &str, value: &T) -> Result<()> {
        let wrapped = serde_json::json!({
            "config_hash": self.hash,
            "seed": self.seed,
            "data": value,
        });
        write_json(&self.dir.join(file), &wrapped)
    }

    fn csv(&self, file: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
        let mut w = std::io::BufWriter::new(fs::File::create(self.dir.join(file))?);
        writeln!(w, "# config_hash={} seed={}", self.hash, self.seed)?;
        writeln!(w, "{header}")?;
        for r in rows {
            writeln!(w, "{r}")?;
        }
        Ok(())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| LabError::Io(std::io::Error::other(e)))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Runs `subcommand` (or every subcommand for `all`) and writes
/// `summary.json`.
pub fn run(subcommand: &str, config: &ExperimentConfig, out: &Path, refine: bool) -> Result<Summary> {
    let config = if refine { config.refined() } else { config.clone() };
    config.validate(subcommand)?;
    fs::create_dir_all(out)?;
    let hash = config.hash();
    let names: Vec<&str> = if subcommand == "all" { SUBCOMMANDS.to_vec() } else { vec![subcommand] };
    let mut results = Vec::new();
    for name in names {
        info!("running {name}");
        let art = Artifacts::new(out, name, &hash, config.seed)?;
        let checks = match name {
            "verify-symbol" => verify_symbol(&config, &art)?,
            "verify-kernel" => verify_kernel(&config, &art)?,
            "verify-norms" => verify_norms(&config, &art)?,
            "verify-prop1" => verify_prop1(&config, &art)?,
            "verify-prop2" => verify_prop2(&config, &art)?,
            "verify-auxl2" => verify_auxl2_cmd(&config, &art)?,
            "verify-maximal" => verify_maximal(&config, &art)?,
            "verify-bdg" => verify_bdg(&config, &art)?,
            "run-zakai" => run_zakai(&config, &art)?,
            other => return Err(LabError::Config(format!("unknown subcommand {other}"))),
        };
        let result = CommandResult::new(name, checks);
        art.json("result.json", &result)?;
        results.push(result);
    }
    let summary = Summary {
        config_hash: hash,
        seed: config.seed,
        refine,
        pass: results.iter().all(|r| r.pass),
        results,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn verify_symbol(c: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let s = &c.symbol;
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    for &d in &s.dims {
        let grid = GridSpec::new(d, s.n, s.length)?;
        for &alpha in &s.alphas {
            let params = crate::symbol::SymbolParams::fractional_laplacian(alpha, d)?;
            let lattice = LatticeSymbol::new(&params, grid)?;
            let err = lattice
                .at(0.0)
                .iter()
                .zip(grid.freq_norms())
                .map(|(v, r)| (v.re + r.powf(alpha)).abs())
                .fold(0.0, f64::max);
            let b = check_assumption_b(&params);
            rows.push(format!("{alpha},{d},{err:e},{}", b.pass));
            checks.push(Check::below(format!("calibration alpha={alpha} d={d}"), err, s.tolerance));
        }
    }
    art.csv("symbol.csv", "alpha,dim,max_error,assumption_b", rows)?;
    Ok(checks)
}

fn verify_kernel(c: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let k = &c.kernel;
    let mut checks = Vec::new();
    // heat kernel at t = 1/2 is the unit Gaussian
    let g = GridSpec::new(1, k.heat_n, k.heat_length)?;
    let heat = propagator(&reference_params(2.0, 1)?, 0.0, 0.5, g)?;
    let heat_err = (0..g.len())
        .map(|i| {
            let x = g.coordinate(i);
            (heat.kernel.values()[i].re - (-x * x / 2.0).exp() / (2.0 * PI).sqrt()).abs()
        })
        .fold(0.0, f64::max);
    checks.push(Check::below("heat kernel max error", heat_err, k.heat_tolerance));
    let g = GridSpec::new(1, k.cauchy_n, k.cauchy_length)?;
    let cauchy = propagator(&reference_params(1.0, 1)?, 0.0, 1.0, g)?;
    let cauchy_err = (0..g.len())
        .filter(|&i| g.coordinate(i).abs() <= g.length() / 4.0)
        .map(|i| {
            let x = g.coordinate(i);
            (cauchy.kernel.values()[i].re - 1.0 / (PI * (1.0 + x * x))).abs()
        })
        .fold(0.0, f64::max);
    checks.push(Check::below("cauchy kernel max error on |x| <= L/4", cauchy_err, k.cauchy_tolerance));
    let mut rows = Vec::new();
    for (alpha, d) in [(0.7, 1), (1.5, 1), (2.0, 1), (1.5, 2)] {
        let grid = if d == 1 { GridSpec::new(1, 256, 32.0)? } else { GridSpec::new(2, 64, 16.0)? };
        let prop = Propagator::new(&reference_params(alpha, d)?, grid)?;
        let t = prop.table(0.1, 0.8)?;
        let mass = (t.mass() - 1.0).abs();
        let ck = chapman_kolmogorov_residual(&prop, 0.1, 0.45, 0.8)?;
        rows.push(format!("{alpha},{d},{mass:e},{ck:e}"));
        checks.push(Check::below(format!("mass alpha={alpha} d={d}"), mass, k.mass_tolerance));
        checks.push(Check::below(format!("chapman-kolmogorov alpha={alpha} d={d}"), ck, k.ck_tolerance));
    }
    art.csv("mass_ck.csv", "alpha,dim,mass_error,ck_residual", rows)?;
    let grid = GridSpec::new(1, k.decay_n, k.decay_length)?;
    let bank = LpBank::for_grid(grid)?;
    let js: Vec<usize> = (1..=k.decay_blocks).collect();
    let taus: Vec<f64> = (0..=k.decay_tau_exponent).map(|e| 2f64.powi(-e)).collect();
    let scan = l1_decay_scan(&reference_params(k.decay_alpha, 1)?, &bank, &js, &taus, k.decay_window)?;
    let mut buf = Vec::new();
    scan.write_csv(&mut buf)?;
    fs::write(art.dir.join("decay.csv"), buf)?;
    checks.push(Check::at_most("decay envelope ratio", scan.max_ratio(), 1.0 + 1e-12));
    checks.push(Check::above("fitted decay rate c", scan.fitted_c, 0.0));
    checks.push(Check::below("collapse spread", scan.collapse_spread, k.collapse_tolerance));
    checks.push(Check::below("h0 L1 bound", scan.h0_max, f64::INFINITY));
    art.json("decay.json", &serde_json::json!({
        "fitted_c": scan.fitted_c,
        "fitted_const": scan.fitted_const,
        "collapse_spread": scan.collapse_spread,
        "h0_max": scan.h0_max,
    }))?;
    Ok(checks)
}

fn verify_norms(c: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let s = &c.norms;
    let grid = GridSpec::new(1, s.n, s.length)?;
    let bank = LpBank::for_grid(grid)?;
    let partition = (0..grid.len())
        .map(|i| ((0..=bank.blocks()).map(|j| bank.mask(j)[i]).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let f = Field::from_fn(grid, |x| (-x[0] * x[0] / 4.0).exp() * (1.3 * x[0]).cos());
    let beta = 0.7;
    let sob = norm(NormInput::Field(&f), &NormDescriptor::new(NormFamily::Sobolev, beta, 2.0, TimeStructure::None)?, &bank)?;
    let spec = crate::grid::dft(&f)?;
    let parseval = (spec
        .values()
        .iter()
        .zip(grid.freq_norms())
        .map(|(v, r)| (1.0 + r * r).powf(beta) * v.norm_sqr())
        .sum::<f64>()
        / grid.length())
    .sqrt();
    let rel = (sob - parseval).abs() / parseval;
    let h = Hypersingular::new(1, s.hypersingular_beta, HypersingularRule::default())?;
    let cal = h.calibrate(&Field::from_fn(grid, |x| (-x[0] * x[0] / 2.0).exp()))?;
    let cal_err = (cal.fitted - cal.analytic).abs() / cal.analytic;
    art.json("norms.json", &serde_json::json!({
        "partition_error": partition,
        "sobolev_parseval_error": rel,
        "hypersingular": cal,
    }))?;
    Ok(vec![
        Check::below("partition of unity", partition, s.partition_tolerance),
        Check::below("sobolev parseval", rel, s.parseval_tolerance),
        Check::below("hypersingular calibration", cal_err, s.hypersingular_tolerance),
    ])
}

fn case_rows(cases: &[CaseReport]) -> Vec<String> {
    cases
        .iter()
        .flat_map(|c| {
            let tag = format!("{},{},{}", c.alpha, c.p, c.beta);
            let coarse = c.report.samples.iter().map(move |s| (s, "coarse"));
            let fine = c.report.refined_samples.iter().map(move |s| (s, "fine"));
            coarse
                .chain(fine)
                .map(move |(s, level)| format!("{tag},{},{:e},{:e},{:e},{level}", s.sample_id, s.lhs, s.rhs, s.ratio))
        })
        .collect()
}

fn case_summary(cases: &[CaseReport]) -> serde_json::Value {
    serde_json::json!({
        "header": crate::estimate_lab::REPORT_HEADER,
        "cases": cases.iter().map(|c| serde_json::json!({
            "bound": c.bound,
            "alpha": c.alpha,
            "p": c.p,
            "beta": c.beta,
            "max_ratio": c.report.max_ratio,
            "refined_max_ratio": c.report.refined_max_ratio,
            "refinement_factor": c.report.refinement_factor,
            "pass": c.report.pass,
            "parseval_error": c.parseval_error,
            "parseval_bound": c.parseval_bound,
        })).collect::<Vec<_>>(),
    })
}

fn harness_checks(cases: &[CaseReport], s: &PropSection, tag: &str) -> Vec<Check> {
    let mut checks = Vec::new();
    for c in cases {
        let label = format!("{tag} alpha={} p={} beta={}", c.alpha, c.p, c.beta);
        checks.push(Check::below(format!("{label} max ratio finite"), c.report.max_ratio, f64::INFINITY));
        checks.push(Check::below(format!("{label} refinement growth"), c.report.refinement_factor, s.growth_limit));
        if let Some(e) = c.parseval_error {
            checks.push(Check::below(format!("{label} parseval agreement"), e, s.parseval_tolerance));
        }
        if let Some(b) = c.parseval_bound {
            checks.push(Check::at_most(format!("{label} parseval bound"), b, 1.0 + s.bound_tolerance));
        }
    }
    checks
}

fn verify_prop1(c: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let s = &c.prop1;
    let cases = run_harness(&s.harness(c.seed, 1), Bound::First)?;
    art.csv("prop1.csv", "alpha,p,beta,sample_id,lhs,rhs,ratio,level", case_rows(&cases))?;
    art.json("prop1.json", &case_summary(&cases))?;
    Ok(harness_checks(&cases, s, "first"))
}

fn verify_prop2(c: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let s = &c.prop2;
    let mut checks = Vec::new();
    let mut all = Vec::new();
    for &family in &s.families {
        let cases = run_harness(&s.harness(c.seed, 1), Bound::Second(family))?;
        let tag = format!("{family:?}").to_lowercase();
        art.csv(&format!("prop2_{tag}.csv"), "alpha,p,beta,sample_id,lhs,rhs,ratio,level", case_rows(&cases))?;
        checks.extend(harness_checks(&cases, s, &tag));
        all.extend(cases);
    }
    art.json("prop2.json", &case_summary(&all))?;
    // Hilbert-valued g: channels add in the p = 2 barred norm
    let grid = GridSpec::new(1, s.n, s.length)?;
    let times = TimeGrid::new(0.0, s.horizon, s.steps)?;
    let mut ens = s.harness(c.seed, s.channels).ensemble;
    ens.count = 3;
    let fields = random_fields(&ens, grid, times)?;
    let bank = LpBank::for_grid(grid)?;
    let mut worst: f64 = 0.0;
    for &alpha in &s.alphas {
        let prop = Propagator::new(&reference_params(alpha, 1)?, grid)?;
        for &family in &s.families {
            for g in &fields {
                worst = worst.max(channel_additivity(g, &prop, &bank, 0.0, family)?);
            }
        }
    }
    checks.push(Check::below(format!("channel additivity m_V={}", s.channels), worst, s.additivity_tolerance));
    Ok(checks)
}

fn verify_auxl2_cmd(c: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let s = &c.auxl2;
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    let profile = Profile::TwoValued { plus: s.plus, minus: s.minus };
    for &(l, delta) in &s.cases {
        let r = verify_auxl2(l, delta, profile, 1, s.radii, s.level)?;
        for (xi, v) in &r.values {
            rows.push(format!("{l},{delta},{},{:e}", xi[0], v));
        }
        let label = format!("l={l} delta={delta}");
        checks.push(Check::below(format!("{label} sup finite"), r.sup, f64::INFINITY));
        checks.push(Check::below(format!("{label} ray spread"), r.ray_spread, s.ray_tolerance));
        checks.push(Check::below(format!("{label} refinement"), r.refinement_change, s.refinement_tolerance));
    }
    let harmonic = Profile::Harmonic { mean: 1.0, amplitude: s.harmonic_amplitude, order: 1 };
    let r = verify_auxl2(0.0, 0.5, harmonic, 4, 4, 5)?;
    checks.push(Check::below("harmonic d=2 sup finite", r.sup, f64::INFINITY));
    art.csv("auxl2.csv", "l,delta,xi,normalized", rows)?;
    Ok(checks)
}

fn verify_maximal(c: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let s = &c.maximal;
    let mut ratios = Vec::new();
    let mut dominated = true;
    let mut sharp_worst: f64 = 0.0;
    for level in 0..2 {
        let grid = GridSpec::new(1, s.n << level, s.length)?;
        let times = TimeGrid::new(0.0, 1.0, s.steps << level)?;
        let spec = FieldEnsembleSpec {
            seed: c.seed,
            count: s.count,
            band: s.band,
            decay: 0.0,
            time_profile: TimeProfile::Linear,
            channels: 1,
        };
        let mut worst: f64 = 0.0;
        for h in random_fields(&spec, grid, times)? {
            let ms = maximal_and_sharp(&h, s.alpha)?;
            for (k, f) in h.frames().iter().enumerate() {
                let m = ms.maximal.frame(k).real_parts(0);
                dominated &= f.real_parts(0).iter().zip(&m).all(|(a, b)| *b >= a.abs());
            }
            sharp_worst = sharp_worst.max(sharp_domination(&ms.boxes));
            worst = worst.max(spacetime_lp(&h, s.p) / spacetime_lp(&ms.sharp, s.p));
        }
        ratios.push(worst);
    }
    let change = (ratios[1] / ratios[0] - 1.0).abs();
    art.json("maximal.json", &serde_json::json!({
        "fefferman_stein_ratio": ratios,
        "refinement_change": change,
        "maximal_dominates": dominated,
        "sharp_domination": sharp_worst,
    }))?;
    Ok(vec![
        Check::below("fefferman-stein ratio finite", ratios[0].max(ratios[1]), f64::INFINITY),
        Check::below("fefferman-stein refinement", change, s.stability),
        Check::at_most("maximal dominates |h|", if dominated { 0.0 } else { 1.0 }, 0.0),
        Check::at_most("sharp domination", sharp_worst, 1.0 + 1e-12),
    ])
}

/// The mixed two-mark integrand of the band check.
pub fn bdg_integrand(s: f64, i: usize) -> f64 {
    if i == 0 {
        -s
    } else {
        1.0 + s
    }
}

fn verify_bdg(c: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let s = &c.bdg;
    let single = PoissonSpec::new(vec![Mark { value: 1.0, rate: s.rate }], s.horizon, None)?;
    let mut checks = Vec::new();
    let mut reports: Vec<MomentReport> = Vec::new();
    let iso = bdg_two_sided(&|_, _| 1.0, &single, 2.0, s.paths, c.seed)?;
    let qv = compensator_moment(&|_, _| 1.0, &single, 2.0);
    checks.push(Check::at_most(
        "p=2 isometry (sigmas)",
        (iso.endpoint - qv).abs() / iso.endpoint_std_err,
        s.sigmas,
    ));
    reports.push(iso);
    let four = bdg_two_sided(&|_, _| 1.0, &single, 4.0, s.paths, c.seed.wrapping_add(1))?;
    let lt = s.rate * s.horizon;
    let exact = lt + 3.0 * lt * lt;
    checks.push(Check::at_most(
        "p=4 endpoint moment (sigmas)",
        (four.endpoint - exact).abs() / four.endpoint_std_err,
        s.sigmas,
    ));
    reports.push(four);
    let two = PoissonSpec::new(
        vec![Mark { value: -1.0, rate: s.rate }, Mark { value: 1.0, rate: 2.0 * s.rate }],
        s.horizon,
        None,
    )?;
    for &kappa in &s.kappas {
        let spec = two.scaled(kappa)?;
        let mut a = bdg_two_sided(&bdg_integrand, &spec, s.p, s.paths, c.seed.wrapping_add(2))?;
        let mut b = bdg_two_sided(&bdg_integrand, &spec, s.p, 2 * s.paths, c.seed.wrapping_add(2))?;
        a.kappa = kappa;
        b.kappa = kappa;
        checks.push(Check::above(format!("kappa={kappa} ratio lower"), a.ratio, s.band.0));
        checks.push(Check::below(format!("kappa={kappa} ratio upper"), a.ratio, s.band.1));
        checks.push(Check::below(format!("kappa={kappa} path doubling"), (b.ratio / a.ratio - 1.0).abs(), s.stability));
        reports.push(a);
        reports.push(b);
    }
    art.json("bdg.json", &reports)?;
    Ok(checks)
}

fn run_zakai(c: &ExperimentConfig, art: &Artifacts) -> Result<Vec<Check>> {
    let s = &c.zakai;
    let model = s.model()?;
    let mut checks = Vec::new();
    // (i) uninformative observations
    let flat = model.with_constant_likelihood(1.0)?;
    let truth = simulate_truth(&flat, c.seed)?;
    let states = run_spectral(&flat, &truth.observations)?;
    let prop = Propagator::new(&flat.adjoint_params()?, flat.grid)?;
    let times = flat.times();
    let mut collapse: f64 = 0.0;
    for (k, st) in states.iter().enumerate() {
        let want = apply_t(&flat.u0, &prop, times.time(k))?;
        collapse = collapse.max(st.density.sub(&want)?.max_abs());
    }
    checks.push(Check::below("uninformative collapse", collapse, s.collapse_tolerance));
    // (ii) mass under the reference measure
    let masses: Vec<f64> = (0..s.mass_paths as u64)
        .map(|k| {
            let obs = reference_observations(&model, c.seed, 1000 + k)?;
            Ok(run_spectral(&model, &obs)?.last().expect("knots").mass())
        })
        .collect::<Result<_>>()?;
    let n = masses.len() as f64;
    let mean = masses.iter().sum::<f64>() / n;
    let se = (masses.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt();
    checks.push(Check::at_most("mean mass (sigmas)", (mean - 1.0).abs() / se, s.mass_sigmas));
    // (iii) informative observations
    let truth = simulate_truth(&model, c.seed)?;
    let states = run_spectral(&model, &truth.observations)?;
    let pos = positivity(&states);
    checks.push(Check::above("positivity", pos, -s.positivity_tolerance));
    let spectral: Vec<Field> = states.iter().map(|st| st.density.clone()).collect();
    let run = particle_filter(&model, &truth.observations, s.particles, c.seed)?;
    let cmp = compare_filters(&spectral, &run.densities)?;
    let run2 = particle_filter(&model, &truth.observations, 2 * s.particles, c.seed)?;
    let cmp2 = compare_filters(&spectral, &run2.densities)?;
    checks.push(Check::below("time-averaged TV", cmp.mean_tv, s.tv_tolerance));
    checks.push(Check::below("TV under particle doubling", cmp2.mean_tv, cmp.mean_tv));
    art.json("zakai.json", &serde_json::json!({
        "collapse_error": collapse,
        "mass_mean": mean,
        "mass_std_err": se,
        "positivity": pos,
        "observations": truth.observations.len(),
        "tv": cmp,
        "tv_doubled": cmp2,
        "resamplings": run.resamplings,
    }))?;
    let last = spectral.len() - 1;
    let v = spectral[last].real_parts(0);
    let mass: f64 = v.iter().sum::<f64>() * model.grid.cell();
    let p = run.densities[last].real_parts(0);
    art.csv(
        "final_density.csv",
        "x,spectral,particle",
        (0..model.grid.len()).map(|k| format!("{},{:e},{:e}", model.grid.coordinate(k), v[k] / mass, p[k])),
    )?;
    spectral[last].write_binary(std::io::BufWriter::new(fs::File::create(art.dir.join("final_density.bin"))?))?;
    fs::write(art.dir.join("tv.svg"), tv_svg(&times, &cmp.tv))?;
    Ok(checks)
}

/// Line plot of TV against time.
fn tv_svg(times: &TimeGrid, tv: &[f64]) -> String {
    let (w, h, pad) = (480.0, 240.0, 30.0);
    let top = tv.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
    let pts: Vec<String> = tv
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let x = pad + (w - 2.0 * pad) * (times.time(k) - times.start) / (times.end - times.start);
            let y = h - pad - (h - 2.0 * pad) * v / top;
            format!("{x:.2},{y:.2}")
        })
        .collect();
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{pad}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <text x=\"{pad}\" y=\"{ty}\" font-size=\"11\">TV max {top:.3e}</text>\n\
         <polyline fill=\"none\" stroke=\"steelblue\" points=\"{}\"/>\n</svg>\n",
        pts.join(" "),
        y0 = h - pad,
        x1 = w - pad,
        ty = pad - 8.0,
    )
}

/// Process exit code for an error: 2 for configuration or feasibility
/// problems, 3 for numerical aborts.
pub fn exit_code(err: &LabError) -> i32 {
    match err {
        LabError::Config(_) | LabError::InvalidGrid(_) | LabError::InvalidParams(_) | LabError::ShapeMismatch(_) => 2,
        _ => 3,
    }
}
