//! Invariant suite run by the `verify` command.

use std::f64::consts::PI;
use std::path::PathBuf;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use dynhomog_core::dispersion::find_branches;
use dynhomog_core::homogenizer::{apply_constitutive, effective_params, solve_eigenfields, EffectiveParams};
use dynhomog_core::spectral::AssembledSystem;
use dynhomog_core::unit_cell::{reference_from_average, reference_from_layer};

use crate::commands::{RunContext, Setup};
use crate::error::CliError;
use crate::output::write_json;

pub const SEED_ENV: &str = "DYNHOMOG_SEED";
pub const HERMITIAN_TOL: f64 = 1e-12;
pub const REALNESS_TOL: f64 = 1e-10;
pub const PRODUCT_TOL: f64 = 1e-8;
pub const REFERENCE_TOL: f64 = 0.01;
/// Number of configured wavenumbers used for the on-branch checks.
pub const ON_BRANCH_POINTS: usize = 4;

/// Deliberate defects for exercising the failure path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    Hermitian,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub worst: f64,
    pub tolerance: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct VerifyReport {
    pub seed: u64,
    pub requested_samples: usize,
    pub evaluated_samples: usize,
    pub skipped_samples: usize,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn failed(&self) -> Vec<String> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect()
    }
}

#[derive(Default)]
struct Accumulator {
    worst: f64,
    count: usize,
    /// A sample was non-finite or violated a sign condition.
    violated: bool,
}

impl Accumulator {
    fn add(&mut self, v: f64) {
        self.count += 1;
        if v.is_nan() {
            self.violated = true;
        } else {
            self.worst = self.worst.max(v);
        }
    }

    fn finish(self, name: &str, tol: f64) -> CheckResult {
        CheckResult {
            name: name.into(),
            passed: !self.violated && self.worst <= tol,
            worst: self.worst,
            tolerance: tol,
            samples: self.count,
        }
    }
}

struct Sample {
    q: f64,
    omega: f64,
    stress: Complex64,
    velocity: Complex64,
}

struct SampleOutcome {
    hermitian: f64,
    realness: f64,
    conjugacy: f64,
    energy_imag: f64,
    symmetric: f64,
}

fn random_complex(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

fn inject(sys: &mut AssembledSystem, fault: Option<Fault>) {
    if let Some(Fault::Hermitian) = fault {
        let n = sys.a_d.nrows();
        if n > 1 {
            let scale = sys.a_d.iter().map(|z| z.norm()).fold(0.0, f64::max);
            sys.a_d[(0, n - 1)] += Complex64::new(1e-6 * scale, 0.0);
        } else if n == 1 {
            let bump = 1e-6 * sys.a_d[(0, 0)].norm().max(1.0);
            sys.a_d[(0, 0)] += Complex64::new(0.0, bump);
        }
    }
}

fn energy_imag(p: &EffectiveParams, s: Complex64, v: Complex64) -> f64 {
    let e = apply_constitutive(p, s, v).energy;
    if e.norm() == 0.0 {
        0.0
    } else {
        e.im.abs() / e.norm()
    }
}

fn symmetric_defect(p: &EffectiveParams) -> f64 {
    let scale = p.s1.norm().max(p.s2.norm());
    if scale == 0.0 {
        return 0.0;
    }
    (p.s1.im.abs().max(p.s2.im.abs()) + (p.s1 - p.s2).norm()) / scale
}

fn rel(a: Complex64, b: Complex64) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

pub fn seed(ctx: &RunContext) -> Result<u64, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map_err(|_| CliError::Config {
            field: SEED_ENV.into(),
            message: format!("expected an unsigned integer, got \"{s}\""),
        }),
        Err(_) => Ok(ctx.config.verify.seed),
    }
}

pub fn run(ctx: &RunContext, seed: u64, fault: Option<Fault>) -> Result<VerifyReport, CliError> {
    let cfg = &ctx.config;
    let setup = Setup::new(cfg)?;
    let h = &setup.homogenizer;
    let a = setup.period;
    let n = cfg.scan.n_branches;
    let q_grid = cfg.q_values()?;
    let scan = setup.scan(cfg, &q_grid, n)?;
    let nu_max = setup.scaled(scan.omega_max);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<Sample> = (0..cfg.verify.samples)
        .map(|_| {
            let q = PI / a * rng.gen_range(0.02..=1.0);
            let nu = rng.gen_range(0.05..nu_max);
            Sample {
                q,
                omega: nu * setup.c0 / a,
                stress: random_complex(&mut rng),
                velocity: random_complex(&mut rng),
            }
        })
        .collect();

    let symmetric = cfg.is_symmetric();
    let pool = ctx.pool();
    let outcomes: Vec<Option<SampleOutcome>> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| {
                let mut sys = match h.assembler().assemble(s.omega, s.q) {
                    Ok(sys) => sys,
                    Err(e) => {
                        log::debug!("sample skipped: {e}");
                        return None;
                    }
                };
                inject(&mut sys, fault);
                let hermitian = sys.hermitian_defect().max(rel_matrix(&sys));
                let sol = match solve_eigenfields(&sys, dynhomog_core::homogenizer::DEFAULT_CONDITION_CAP) {
                    Ok(sol) => sol,
                    Err(e) => {
                        log::debug!("sample skipped: {e}");
                        return None;
                    }
                };
                let p = effective_params(&sol);
                Some(SampleOutcome {
                    hermitian,
                    realness: p.realness_defect(),
                    conjugacy: p.conjugacy_defect(),
                    energy_imag: energy_imag(&p, s.stress, s.velocity),
                    symmetric: symmetric_defect(&p),
                })
            })
            .collect()
    });

    let mut herm = Accumulator::default();
    let mut real = Accumulator::default();
    let mut conj = Accumulator::default();
    let mut energy = Accumulator::default();
    let mut sym = Accumulator::default();
    for o in outcomes.iter().flatten() {
        herm.add(o.hermitian);
        real.add(o.realness);
        conj.add(o.conjugacy);
        energy.add(o.energy_imag);
        sym.add(o.symmetric);
    }
    let evaluated = herm.count;

    // On-branch checks along branch 1 at a spread of configured wavenumbers.
    let step = (q_grid.len() / ON_BRANCH_POINTS).max(1);
    let on_q: Vec<f64> = q_grid.iter().copied().skip(step - 1).step_by(step).take(ON_BRANCH_POINTS).collect();
    let alternative = if cfg.uses_layer_average() {
        reference_from_layer(&setup.cell, 0)
    } else {
        Ok(reference_from_average(&setup.cell))
    }
    .map_err(|e| CliError::Config {
        field: "reference".into(),
        message: e.to_string(),
    })?;
    let h_alt = cfg.homogenizer_with(alternative)?;
    let averages: Vec<(Complex64, Complex64)> = on_q
        .iter()
        .map(|_| (random_complex(&mut rng), random_complex(&mut rng)))
        .collect();
    let on_branch: Vec<Result<(f64, f64, f64), String>> = pool.install(|| {
        on_q.par_iter()
            .zip(&averages)
            .map(|(&q, &(s, v))| {
                let bp = find_branches(h, q, 1, &scan)
                    .map_err(|e| e.to_string())?
                    .remove(0);
                let p = bp.params;
                let f = apply_constitutive(&p, s, v);
                let positive = if p.is_positive() && f.energy.re >= 0.0 { 0.0 } else { f64::NAN };
                let alt = h_alt.params(bp.omega, q).map_err(|e| e.to_string())?;
                let refdev = rel(p.compliance, alt.compliance)
                    .max(rel(p.density, alt.density))
                    .max(rel(p.s1, alt.s1));
                Ok((positive, bp.product_defect(), refdev))
            })
            .collect()
    });
    let mut pos = Accumulator::default();
    let mut prod = Accumulator::default();
    let mut refi = Accumulator::default();
    for r in &on_branch {
        match r {
            Ok((p, d, r)) => {
                pos.add(*p);
                prod.add(*d);
                refi.add(*r);
            }
            Err(e) => {
                log::warn!("on-branch check failed: {e}");
                pos.add(f64::NAN);
                prod.add(f64::NAN);
                refi.add(f64::NAN);
            }
        }
    }

    let mut checks = vec![
        herm.finish("hermitian-assembly", HERMITIAN_TOL),
        real.finish("realness", REALNESS_TOL),
        conj.finish("conjugacy", REALNESS_TOL),
        energy.finish("energy-realness", REALNESS_TOL),
        pos.finish("positivity", 0.0),
        refi.finish("reference-independence", REFERENCE_TOL),
        prod.finish("product-identity", PRODUCT_TOL),
    ];
    if symmetric {
        checks.push(sym.finish("symmetric-coupling", REALNESS_TOL));
    }
    if evaluated == 0 {
        for c in checks.iter_mut().take(4) {
            c.passed = false;
        }
    }
    Ok(VerifyReport {
        seed,
        requested_samples: cfg.verify.samples,
        evaluated_samples: evaluated,
        skipped_samples: cfg.verify.samples - evaluated,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

/// `|B_us - B_su^H| / max |B_su|`.
fn rel_matrix(sys: &AssembledSystem) -> f64 {
    let scale = sys.b_stress_velocity.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    (&sys.b_velocity_stress - sys.b_stress_velocity.adjoint())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
        / scale
}

pub fn verify(ctx: &RunContext, fault: Option<Fault>) -> Result<(VerifyReport, Vec<PathBuf>), CliError> {
    let seed = seed(ctx)?;
    let report = run(ctx, seed, fault)?;
    let path = ctx.out_dir.join("verify_report.json");
    write_json(&path, &serde_json::to_value(&report).expect("report serializes"))?;
    let meta = ctx.write_meta("verify", json!({ "seed": seed, "passed": report.passed }), std::slice::from_ref(&path))?;
    Ok((report, vec![path, meta]))
}
