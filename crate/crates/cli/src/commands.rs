//! The `dispersion`, `homogenize` and `fields` commands.

use std::path::PathBuf;

use num_complex::Complex64;
use rayon::prelude::*;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use dynhomog_core::dispersion::{find_branches, BranchPoint, ScanParams};
use dynhomog_core::fields::{default_grid, reconstruct, relative_rms, DEFAULT_POINTS_PER_SUBREGION};
use dynhomog_core::homogenizer::Homogenizer;
use dynhomog_core::oracle::{exact_dispersion, field_integration_homog, mode_shape};
use dynhomog_core::unit_cell::UnitCell;
use dynhomog_core::Error;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{write_json, Cell, Table};

/// Headroom above the highest requested exact root when `scan.omega_max` is
/// not configured.
pub const AUTO_OMEGA_MARGIN: f64 = 1.15;

/// Everything a command needs: parsed config, raw text and output location.
pub struct RunContext {
    pub config: RunConfig,
    pub config_text: String,
    pub out_dir: PathBuf,
    pub jobs: usize,
}

impl RunContext {
    pub fn new(config: RunConfig, config_text: String, out: Option<PathBuf>, jobs: Option<usize>) -> Self {
        let out_dir = out.unwrap_or_else(|| config.output.directory.clone());
        let jobs = jobs
            .filter(|&j| j > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        Self {
            config,
            config_text,
            out_dir,
            jobs,
        }
    }

    pub fn pool(&self) -> rayon::ThreadPool {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .expect("thread pool")
    }

    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.config_text.as_bytes()))
    }

    fn write_table(&self, table: &Table, stem: &str) -> Result<PathBuf, CliError> {
        table.write(
            &self.out_dir,
            stem,
            self.config.output.format,
            self.config.output.precision,
        )
    }

    pub fn write_meta(&self, command: &str, extra: Value, outputs: &[PathBuf]) -> Result<PathBuf, CliError> {
        let t = &self.config.tolerances;
        let names: Vec<String> = outputs
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect();
        let meta = json!({
            "command": command,
            "config_sha256": self.config_hash(),
            "tolerances": { "eps_mat": t.eps_mat, "eps_pole": t.eps_pole, "tol_root": t.tol_root },
            "versions": {
                "dynhomog": env!("CARGO_PKG_VERSION"),
                "dynhomog-core": dynhomog_core::VERSION,
            },
            "outputs": names,
            "details": extra,
        });
        let path = self.out_dir.join("run_meta.json");
        write_json(&path, &meta)?;
        Ok(path)
    }
}

/// Solver setup shared by the sweep commands.
pub struct Setup {
    pub cell: UnitCell,
    pub homogenizer: Homogenizer,
    pub period: f64,
    pub c0: f64,
}

impl Setup {
    pub fn new(cfg: &RunConfig) -> Result<Self, CliError> {
        let cell = cfg.unit_cell()?;
        let homogenizer = cfg.homogenizer()?;
        let c0 = homogenizer.dcell().reference().wave_speed();
        Ok(Self {
            period: cell.period(),
            cell,
            homogenizer,
            c0,
        })
    }

    pub fn scaled(&self, omega: f64) -> f64 {
        omega * self.period / self.c0
    }

    /// Scan window in raw `omega`: configured, or a margin above the highest
    /// exact root needed over `q_values`.
    pub fn scan(&self, cfg: &RunConfig, q_values: &[f64], n_branches: usize) -> Result<ScanParams, CliError> {
        let omega_max = match cfg.scan.omega_max {
            Some(s) => s * self.c0 / self.period,
            None => {
                let mut top: f64 = 0.0;
                for &q in q_values {
                    let w = exact_dispersion(&self.cell, q, n_branches)
                        .map_err(|e| CliError::solver(q, f64::NAN, e))?;
                    top = top.max(w[n_branches - 1]);
                }
                AUTO_OMEGA_MARGIN * top
            }
        };
        ScanParams::new(1e-9 * omega_max, omega_max)
            .and_then(|s| s.with_tol_root(cfg.tolerances.tol_root))
            .map_err(|e| CliError::Config {
                field: "scan.omega_max".into(),
                message: e.to_string(),
            })
    }
}

/// Micromechanical and exact roots at one `q`.
pub struct SweepPoint {
    pub q: f64,
    pub roots: Vec<BranchPoint>,
    pub exact: Vec<f64>,
}

fn root_failure(q: f64, e: Error) -> CliError {
    let omega = match &e {
        Error::NearPole { omega, .. } | Error::SingularSystem { omega, .. } => *omega,
        _ => f64::NAN,
    };
    CliError::solver(q, omega, e)
}

/// Roots at every configured `q`, in `q` order.
pub fn sweep(ctx: &RunContext, setup: &Setup) -> Result<(Vec<SweepPoint>, ScanParams), CliError> {
    let cfg = &ctx.config;
    let n = cfg.scan.n_branches;
    let q_values = cfg.q_values()?;
    let scan = setup.scan(cfg, &q_values, n)?;
    let points = ctx.pool().install(|| {
        q_values
            .par_iter()
            .map(|&q| {
                let roots = find_branches(&setup.homogenizer, q, n, &scan).map_err(|e| root_failure(q, e))?;
                let exact = exact_dispersion(&setup.cell, q, n).map_err(|e| CliError::solver(q, f64::NAN, e))?;
                Ok(SweepPoint { q, roots, exact })
            })
            .collect::<Result<Vec<_>, CliError>>()
    })?;
    Ok((points, scan))
}

fn rel_error(omega: f64, exact: f64) -> f64 {
    (omega - exact).abs() / exact
}

/// Branch-major ordering of `(branch, point index)` pairs.
fn branch_major(points: &[SweepPoint], n: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    (0..n).flat_map(move |b| (0..points.len()).map(move |i| (b, i)))
}

pub const DISPERSION_COLUMNS: [&str; 9] = [
    "branch",
    "q_a",
    "omega",
    "omega_scaled",
    "oracle_omega",
    "oracle_omega_scaled",
    "rel_error",
    "residual",
    "phase_velocity",
];

pub fn dispersion(ctx: &RunContext) -> Result<Vec<PathBuf>, CliError> {
    let setup = Setup::new(&ctx.config)?;
    let (points, scan) = sweep(ctx, &setup)?;
    let n = ctx.config.scan.n_branches;
    let mut table = Table::new(DISPERSION_COLUMNS);
    let mut worst: f64 = 0.0;
    for (b, i) in branch_major(&points, n) {
        let p = &points[i];
        let r = &p.roots[b];
        let ex = p.exact[b];
        let err = rel_error(r.omega, ex);
        worst = worst.max(err);
        table.push(vec![
            Cell::from(b + 1),
            (p.q * setup.period).into(),
            r.omega.into(),
            setup.scaled(r.omega).into(),
            ex.into(),
            setup.scaled(ex).into(),
            err.into(),
            r.residual.into(),
            r.phase_velocity.into(),
        ]);
    }
    let path = ctx.write_table(&table, "dispersion")?;
    let meta = ctx.write_meta(
        "dispersion",
        json!({
            "omega_max_scaled": setup.scaled(scan.omega_max),
            "rows": table.rows.len(),
            "max_rel_error": worst,
        }),
        std::slice::from_ref(&path),
    )?;
    Ok(vec![path, meta])
}

pub fn effective_columns() -> Vec<String> {
    let mut cols: Vec<String> = ["branch", "q_a", "omega", "omega_scaled"].map(String::from).to_vec();
    for name in ["D_bar", "rho_bar", "S1", "S2", "D_eff", "rho_eff"] {
        cols.push(format!("{name}_re"));
        cols.push(format!("{name}_im"));
    }
    cols.extend(
        [
            "oracle_omega",
            "oracle_omega_scaled",
            "oracle_D_eff_re",
            "oracle_D_eff_im",
            "oracle_rho_eff_re",
            "oracle_rho_eff_im",
            "rel_error",
        ]
        .map(String::from),
    );
    cols
}

fn push_complex(row: &mut Vec<Cell>, z: Complex64) {
    row.push(z.re.into());
    row.push(z.im.into());
}

pub fn homogenize(ctx: &RunContext) -> Result<Vec<PathBuf>, CliError> {
    let setup = Setup::new(&ctx.config)?;
    let (points, scan) = sweep(ctx, &setup)?;
    let n = ctx.config.scan.n_branches;
    let items: Vec<(usize, usize)> = branch_major(&points, n).collect();
    let oracle: Vec<(Complex64, Complex64)> = ctx.pool().install(|| {
        items
            .par_iter()
            .map(|&(b, i)| {
                let p = &points[i];
                mode_shape(&setup.cell, p.q, p.exact[b])
                    .and_then(|m| field_integration_homog(&m))
                    .unwrap_or_else(|e| {
                        log::warn!("no oracle parameters at q={}, branch {}: {e}", p.q, b + 1);
                        let nan = Complex64::new(f64::NAN, f64::NAN);
                        (nan, nan)
                    })
            })
            .collect()
    });
    let mut table = Table::new(effective_columns());
    for (&(b, i), &(od, orho)) in items.iter().zip(&oracle) {
        let p = &points[i];
        let r = &p.roots[b];
        let ex = p.exact[b];
        let mut row = vec![
            Cell::from(b + 1),
            (p.q * setup.period).into(),
            r.omega.into(),
            setup.scaled(r.omega).into(),
        ];
        for z in [r.params.compliance, r.params.density, r.params.s1, r.params.s2, r.d_eff, r.rho_eff] {
            push_complex(&mut row, z);
        }
        row.push(ex.into());
        row.push(setup.scaled(ex).into());
        push_complex(&mut row, od);
        push_complex(&mut row, orho);
        row.push(rel_error(r.omega, ex).into());
        table.push(row);
    }
    let path = ctx.write_table(&table, "effective")?;
    let meta = ctx.write_meta(
        "homogenize",
        json!({
            "omega_max_scaled": setup.scaled(scan.omega_max),
            "rows": table.rows.len(),
        }),
        std::slice::from_ref(&path),
    )?;
    Ok(vec![path, meta])
}

pub const FIELD_COLUMNS: [&str; 15] = [
    "x",
    "sigma_re",
    "sigma_im",
    "velocity_re",
    "velocity_im",
    "strain_re",
    "strain_im",
    "momentum_re",
    "momentum_im",
    "oracle_sigma_re",
    "oracle_sigma_im",
    "oracle_velocity_re",
    "oracle_velocity_im",
    "sigma_rms_mismatch",
    "velocity_rms_mismatch",
];

/// File stem for a field profile at `q = q_frac * pi / a`.
pub fn fields_stem(q_frac: f64, branch: usize) -> String {
    format!("fields_q{q_frac}_b{branch}")
}

pub fn fields(ctx: &RunContext, q_frac: f64, branch: usize) -> Result<Vec<PathBuf>, CliError> {
    if !(q_frac > 0.0 && q_frac <= 1.0) {
        return Err(CliError::Config {
            field: "--q".into(),
            message: format!("must lie in (0, 1] as a fraction of pi/a, got {q_frac}"),
        });
    }
    if branch == 0 {
        return Err(CliError::Config {
            field: "--branch".into(),
            message: "branches are numbered from 1".into(),
        });
    }
    let cfg = &ctx.config;
    let setup = Setup::new(cfg)?;
    let q = q_frac * std::f64::consts::PI / setup.period;
    let scan = setup.scan(cfg, &[q], cfg.scan.n_branches)?;
    let root = match find_branches(&setup.homogenizer, q, branch, &scan) {
        Ok(mut roots) => roots.remove(branch - 1),
        Err(Error::InsufficientRoots { found, .. }) => {
            return Err(CliError::BranchNotFound {
                q,
                branch,
                message: format!(
                    "only {found} roots below omega a / c0 = {}",
                    setup.scaled(scan.omega_max)
                ),
            })
        }
        Err(e) => return Err(root_failure(q, e)),
    };
    let exact = exact_dispersion(&setup.cell, q, branch).map_err(|e| CliError::solver(q, f64::NAN, e))?;
    let omega_exact = exact[branch - 1];
    let mode = mode_shape(&setup.cell, q, omega_exact).map_err(|e| CliError::solver(q, omega_exact, e))?;
    let h = &setup.homogenizer;
    let ev = h.evaluate(root.omega, q).map_err(|e| CliError::solver(q, root.omega, e))?;
    let dcell = h.dcell();
    let grid = default_grid(dcell, DEFAULT_POINTS_PER_SUBREGION);
    let profile = reconstruct(
        &ev.solution,
        dcell,
        h.basis(),
        mode.mean_stress,
        mode.mean_velocity(),
        &grid,
        cfg.tolerances.eps_pole,
    )
    .map_err(|e| CliError::solver(q, root.omega, e))?;
    let (os, ov): (Vec<_>, Vec<_>) = grid.iter().map(|&x| mode.periodic_fields(x)).unzip();
    let rms_s = relative_rms(&profile.stress, &os);
    let rms_v = relative_rms(&profile.velocity, &ov);

    let mut table = Table::new(FIELD_COLUMNS);
    for k in 0..grid.len() {
        let mut row = vec![Cell::from(grid[k])];
        for z in [profile.stress[k], profile.velocity[k], profile.strain[k], profile.momentum[k], os[k], ov[k]] {
            push_complex(&mut row, z);
        }
        row.push(rms_s.into());
        row.push(rms_v.into());
        table.push(row);
    }
    let path = ctx.write_table(&table, &fields_stem(q_frac, branch))?;
    let meta = ctx.write_meta(
        "fields",
        json!({
            "q_a": q * setup.period,
            "branch": branch,
            "omega": root.omega,
            "omega_scaled": setup.scaled(root.omega),
            "oracle_omega": omega_exact,
            "sigma_rms_mismatch": rms_s,
            "velocity_rms_mismatch": rms_v,
        }),
        std::slice::from_ref(&path),
    )?;
    Ok(vec![path, meta])
}
