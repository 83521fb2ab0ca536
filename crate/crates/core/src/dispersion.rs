//! Overall dispersion relation, root scanning and on-branch effective
//! parameters.
//!
//! Frequencies are handled internally as `nu_hat = omega a / c0`, so scan
//! resolution and root tolerances are dimensionless.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::homogenizer::{EffectiveParams, Homogenizer};
use crate::spectral::reference_poles;

pub const DEFAULT_TOL_ROOT: f64 = 1e-10;
/// Grid steps per unit of `nu_hat`.
pub const DEFAULT_STEPS_PER_UNIT: f64 = 400.0;
pub const DEGENERATE_DENOMINATOR: f64 = 1e-12;
/// `Im R / scale` above which a residual evaluation is logged.
const IMAG_WARN: f64 = 1e-8;
const MIN_SCAN_STEPS: usize = 200;
const MAX_BISECTIONS: usize = 200;

/// Complex value of `R(omega; q)` with the scale used to judge it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionResidual {
    pub value: Complex64,
    /// `|D_bar rho_bar v^2| + |1 + v S1| |1 + v S2|`.
    pub scale: f64,
}

impl DispersionResidual {
    pub fn real(&self) -> f64 {
        self.value.re
    }

    pub fn imag_defect(&self) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else {
            self.value.im.abs() / self.scale
        }
    }
}

pub fn residual_from_params(p: &EffectiveParams) -> DispersionResidual {
    let v = p.omega / p.q;
    let one = Complex64::new(1.0, 0.0);
    let lhs = p.compliance * p.density * (v * v);
    let c1 = one + p.s1 * v;
    let c2 = one + p.s2 * v;
    DispersionResidual {
        value: lhs - c1 * c2,
        scale: lhs.norm() + c1.norm() * c2.norm(),
    }
}

/// Real part of `R`. The imaginary part is logged when it exceeds `1e-10` of
/// the residual scale.
pub fn residual(h: &Homogenizer, omega: f64, q: f64) -> Result<f64> {
    if q.is_nan() || q <= 0.0 {
        return Err(Error::NonPositiveInput {
            what: "q",
            value: q,
        });
    }
    let r = residual_from_params(&h.params(omega, q)?);
    if r.imag_defect() > IMAG_WARN {
        log::warn!(
            "dispersion residual not real at omega={omega}, q={q}: Im/scale = {:.3e}",
            r.imag_defect()
        );
    }
    Ok(r.real())
}

/// `(D_eff, rho_eff)` from the coupled parameters on a dispersion root.
pub fn effective_on_branch(p: &EffectiveParams) -> Result<(Complex64, Complex64)> {
    let v = p.omega / p.q;
    let one = Complex64::new(1.0, 0.0);
    let c1 = one + p.s1 * v;
    let c2 = one + p.s2 * v;
    for c in [c1, c2] {
        if c.norm() < DEGENERATE_DENOMINATOR {
            return Err(Error::DegenerateDenominator { value: c.norm() });
        }
    }
    Ok((p.compliance / c1, p.density / c2))
}

/// Frequency window and resolution for a root scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanParams {
    pub omega_min: f64,
    pub omega_max: f64,
    /// Grid steps per unit of `nu_hat`.
    pub steps_per_unit: f64,
    pub tol_root: f64,
}

impl ScanParams {
    pub fn new(omega_min: f64, omega_max: f64) -> Result<Self> {
        if !(omega_min >= 0.0 && omega_max > omega_min && omega_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "scan window [{omega_min}, {omega_max}] is empty or invalid"
            )));
        }
        Ok(Self {
            omega_min,
            omega_max,
            steps_per_unit: DEFAULT_STEPS_PER_UNIT,
            tol_root: DEFAULT_TOL_ROOT,
        })
    }

    pub fn with_tol_root(mut self, tol: f64) -> Result<Self> {
        if !(tol > 0.0 && tol < 1.0) {
            return Err(Error::InvalidTolerance {
                name: "tol_root",
                value: tol,
            });
        }
        self.tol_root = tol;
        Ok(self)
    }

    pub fn with_steps_per_unit(mut self, steps: f64) -> Result<Self> {
        if !(steps >= 1.0 && steps.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "steps per unit must be >= 1, got {steps}"
            )));
        }
        self.steps_per_unit = steps;
        Ok(self)
    }
}

/// A certified root of the overall dispersion relation.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchPoint {
    pub q: f64,
    pub omega: f64,
    /// 1-based, by ascending frequency at this `q`.
    pub branch: usize,
    pub params: EffectiveParams,
    pub d_eff: Complex64,
    pub rho_eff: Complex64,
    pub phase_velocity: f64,
    /// `|R|` at the reported root.
    pub residual: f64,
}

impl BranchPoint {
    /// `|D_eff rho_eff v^2 - 1|`.
    pub fn product_defect(&self) -> f64 {
        (self.d_eff * self.rho_eff * self.phase_velocity.powi(2) - 1.0).norm()
    }
}

/// Roots found by a scan plus the number of grid intervals that could not be
/// evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutcome {
    pub q: f64,
    pub roots: Vec<BranchPoint>,
    pub skipped_intervals: usize,
    pub rejected_brackets: usize,
}

struct Sample {
    nu: f64,
    r: f64,
}

struct Scanner<'a> {
    h: &'a Homogenizer,
    q: f64,
    /// `omega = nu_hat * to_omega`.
    to_omega: f64,
    tol: f64,
}

impl Scanner<'_> {
    fn eval(&self, nu: f64) -> Option<f64> {
        self.check(nu, self.h.params_unchecked(nu * self.to_omega, self.q))
            .map(|(r, _)| r)
    }

    fn eval_checked(&self, nu: f64) -> Option<(f64, EffectiveParams)> {
        self.check(nu, self.h.params(nu * self.to_omega, self.q))
    }

    fn check(&self, nu: f64, p: Result<EffectiveParams>) -> Option<(f64, EffectiveParams)> {
        match p {
            Ok(p) => {
                let r = residual_from_params(&p);
                if r.imag_defect() > IMAG_WARN {
                    log::warn!(
                        "dispersion residual not real at omega={}, q={}: {:.3e}",
                        p.omega,
                        self.q,
                        r.imag_defect()
                    );
                }
                Some((r.real(), p))
            }
            Err(e) => {
                log::debug!("scan point nu_hat={nu} skipped: {e}");
                None
            }
        }
    }

    /// Bisects a sign change and certifies that `|R|` shrank towards it,
    /// which rejects sign flips caused by poles of the overall parameters.
    fn refine(&self, lo: &Sample, hi: &Sample) -> Option<BranchPoint> {
        let initial = lo.r.abs().max(hi.r.abs());
        let (mut a, mut fa) = (lo.nu, lo.r);
        let (mut b, mut fb) = (hi.nu, hi.r);
        let neg_a = fa < 0.0;
        for _ in 0..MAX_BISECTIONS {
            if b - a <= self.tol * b.max(1.0) {
                break;
            }
            let m = 0.5 * (a + b);
            let fm = self.eval(m)?;
            if (fm < 0.0) == neg_a {
                a = m;
                fa = fm;
            } else {
                b = m;
                fb = fm;
            }
        }
        if fa.abs().max(fb.abs()) > initial {
            return None;
        }
        let nu = 0.5 * (a + b);
        let (r, params) = self.eval_checked(nu)?;
        let (d_eff, rho_eff) = effective_on_branch(&params).ok()?;
        if !params.is_positive() {
            log::warn!(
                "non-positive overall parameters on branch point q={}, omega={}: D={}, rho={}",
                self.q,
                params.omega,
                params.compliance,
                params.density
            );
        }
        Some(BranchPoint {
            q: self.q,
            omega: params.omega,
            branch: 0,
            params,
            d_eff,
            rho_eff,
            phase_velocity: params.omega / self.q,
            residual: r.abs(),
        })
    }
}

/// All certified roots of `R(.; q)` inside the scan window, ascending.
pub fn scan_roots(h: &Homogenizer, q: f64, scan: &ScanParams) -> Result<ScanOutcome> {
    scan_lowest(h, q, scan, usize::MAX)
}

/// Scans upward and stops once `limit` roots are certified.
fn scan_lowest(h: &Homogenizer, q: f64, scan: &ScanParams, limit: usize) -> Result<ScanOutcome> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::NonPositiveInput {
            what: "q",
            value: q,
        });
    }
    let dcell = h.dcell();
    let a = dcell.period();
    let c0 = dcell.reference().wave_speed();
    let to_omega = c0 / a;
    let eps_pole = h.assembler().eps_pole();
    let nu_lo = (scan.omega_min / to_omega).max(1e-6);
    let nu_hi = scan.omega_max / to_omega;
    if nu_hi <= nu_lo {
        return Err(Error::InvalidArgument(
            "scan window below minimum frequency".into(),
        ));
    }

    // Kernel poles in nu_hat; the xi = 0 image is not a pole of R.
    let poles: Vec<f64> = if dcell.is_trivial() {
        Vec::new()
    } else {
        reference_poles(dcell, h.basis(), q)
    }
    .into_iter()
    .map(|w| w / to_omega)
    .filter(|&p| p > nu_lo && p < nu_hi)
    .collect();
    let mut segments = Vec::with_capacity(poles.len() + 1);
    let mut start = nu_lo;
    for &p in &poles {
        let w = eps_pole * p.max(1.0) * 4.0;
        if p - w > start {
            segments.push((start, p - w));
        }
        start = p + w;
    }
    if nu_hi > start {
        segments.push((start, nu_hi));
    }

    let scanner = Scanner {
        h,
        q,
        to_omega,
        tol: scan.tol_root,
    };
    let mut outcome = ScanOutcome {
        q,
        roots: Vec::new(),
        skipped_intervals: 0,
        rejected_brackets: 0,
    };
    for (s0, s1) in segments {
        if outcome.roots.len() >= limit {
            break;
        }
        let steps = ((s1 - s0) * scan.steps_per_unit).ceil().max(1.0) as usize;
        let mut prev: Option<Sample> = None;
        for i in 0..=steps {
            let nu = if i == steps {
                s1
            } else {
                s0 + (s1 - s0) * i as f64 / steps as f64
            };
            let cur = scanner.eval(nu).map(|r| Sample { nu, r });
            match (&prev, &cur) {
                (Some(p), Some(c)) if (p.r < 0.0) != (c.r < 0.0) => match scanner.refine(p, c) {
                    Some(bp) => {
                        outcome.roots.push(bp);
                        if outcome.roots.len() >= limit {
                            break;
                        }
                    }
                    None => outcome.rejected_brackets += 1,
                },
                (_, None) => outcome.skipped_intervals += 1,
                _ => {}
            }
            prev = cur;
        }
    }
    outcome
        .roots
        .sort_by(|x, y| x.omega.partial_cmp(&y.omega).expect("finite roots"));
    for (i, r) in outcome.roots.iter_mut().enumerate() {
        r.branch = i + 1;
    }
    if outcome.skipped_intervals > 0 {
        log::info!(
            "q={q}: {} scan points skipped near singular systems",
            outcome.skipped_intervals
        );
    }
    Ok(outcome)
}

/// The lowest `n_branches` certified roots at `q`, tagged `1..=n_branches`.
pub fn find_branches(
    h: &Homogenizer,
    q: f64,
    n_branches: usize,
    scan: &ScanParams,
) -> Result<Vec<BranchPoint>> {
    let outcome = scan_lowest(h, q, scan, n_branches)?;
    if outcome.roots.len() < n_branches {
        return Err(Error::InsufficientRoots {
            q,
            found: outcome.roots.len(),
            requested: n_branches,
        });
    }
    let mut roots = outcome.roots;
    roots.truncate(n_branches);
    Ok(roots)
}

/// Points of one branch ordered by `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionBranch {
    pub branch: usize,
    pub points: Vec<BranchPoint>,
}

impl DispersionBranch {
    /// True when `omega` is monotone in `q` along the branch.
    pub fn is_monotone(&self) -> bool {
        let inc = self.points.windows(2).all(|w| w[1].omega >= w[0].omega);
        let dec = self.points.windows(2).all(|w| w[1].omega <= w[0].omega);
        inc || dec
    }
}

/// Regroups per-`q` root lists into branches, ordered by branch then `q`.
pub fn group_branches(per_q: Vec<Vec<BranchPoint>>) -> Vec<DispersionBranch> {
    let n = per_q.iter().map(Vec::len).max().unwrap_or(0);
    let mut branches: Vec<DispersionBranch> = (1..=n)
        .map(|branch| DispersionBranch {
            branch,
            points: Vec::new(),
        })
        .collect();
    for points in per_q {
        for p in points {
            branches[p.branch - 1].points.push(p);
        }
    }
    for b in &mut branches {
        b.points
            .sort_by(|x, y| x.q.partial_cmp(&y.q).expect("finite q"));
        if !b.is_monotone() {
            log::info!("branch {} is not monotone in q", b.branch);
        }
    }
    branches
}

/// Finds branches at every `q` in order.
pub fn trace_branches(
    h: &Homogenizer,
    q_values: &[f64],
    n_branches: usize,
    scan: &ScanParams,
) -> Result<Vec<DispersionBranch>> {
    let per_q = q_values
        .iter()
        .map(|&q| find_branches(h, q, n_branches, scan))
        .collect::<Result<Vec<_>>>()?;
    Ok(group_branches(per_q))
}

/// `qa` values used by [`quasi_static_limit`].
pub const QUASI_STATIC_QA: [f64; 3] = [0.05, 0.02, 0.01];

/// First-branch `(D_eff, rho_eff)` at small `qa`.
pub fn first_branch_at(h: &Homogenizer, q: f64) -> Result<BranchPoint> {
    let cell = h.dcell().cell();
    let speeds = cell.layers().iter().map(|l| l.material.wave_speed());
    let (c_min, c_max) = speeds.fold((f64::INFINITY, 0.0f64), |(lo, hi), c| {
        (lo.min(c), hi.max(c))
    });
    let scan = ScanParams::new(0.5 * c_min * q, 1.5 * c_max * q)?;
    let a = cell.period();
    let c0 = h.dcell().reference().wave_speed();
    let span = (scan.omega_max - scan.omega_min) * a / c0;
    let scan =
        scan.with_steps_per_unit((MIN_SCAN_STEPS as f64 / span).max(DEFAULT_STEPS_PER_UNIT))?;
    find_branches(h, q, 1, &scan).map(|mut v| v.remove(0))
}

/// Long-wavelength `(D_eff, rho_eff)`: quadratic extrapolation to `q = 0`
/// through first-branch values at `qa` in [`QUASI_STATIC_QA`].
pub fn quasi_static_limit(h: &Homogenizer) -> Result<(Complex64, Complex64)> {
    let a = h.dcell().period();
    let mut d = [Complex64::new(0.0, 0.0); 3];
    let mut r = [Complex64::new(0.0, 0.0); 3];
    for (k, qa) in QUASI_STATIC_QA.iter().enumerate() {
        let bp = first_branch_at(h, qa / a)?;
        d[k] = bp.d_eff;
        r[k] = bp.rho_eff;
    }
    let x = QUASI_STATIC_QA;
    let weights: Vec<f64> = (0..3)
        .map(|i| {
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            (x[j] * x[k]) / ((x[i] - x[j]) * (x[i] - x[k]))
        })
        .collect();
    let extrapolate = |v: &[Complex64; 3]| -> Complex64 { (0..3).map(|i| v[i] * weights[i]).sum() };
    Ok((extrapolate(&d), extrapolate(&r)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::SpectralBasis;
    use crate::unit_cell::{build_cell, discretize, reference_from_average};
    use std::f64::consts::PI;

    fn homogenizer(layers: &[(f64, f64, f64)], counts: &[usize], n_max: usize) -> Homogenizer {
        let cell = build_cell(layers).unwrap();
        let d = discretize(&cell, counts, reference_from_average(&cell), 1e-9).unwrap();
        Homogenizer::new(&d, SpectralBasis::new(n_max).unwrap(), 1e-8).unwrap()
    }

    #[test]
    fn homogeneous_residual_by_substitution() {
        let h = homogenizer(&[(2.0, 0.5, 1.0)], &[3], 5);
        let c0 = 1.0;
        let q = 0.7;
        assert!(residual(&h, c0 * q, q).unwrap().abs() < 1e-14);
        assert!((residual(&h, 2.0 * c0 * q, q).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_lowest_root_is_linear() {
        let h = homogenizer(&[(2.0, 0.5, 1.0)], &[3], 5);
        for q in [0.3, 1.7, PI] {
            let scan = ScanParams::new(0.0, 2.0 * q + 1.0).unwrap();
            let roots = find_branches(&h, q, 1, &scan).unwrap();
            assert!((roots[0].omega - q).abs() <= 1e-8 * q);
            assert!((roots[0].d_eff - 0.5).norm() < 1e-8);
            assert!((roots[0].rho_eff - 2.0).norm() < 1e-8);
        }
    }

    #[test]
    fn insufficient_roots_reports_count() {
        let h = homogenizer(&[(2.0, 0.5, 1.0)], &[3], 5);
        let scan = ScanParams::new(0.0, 5.0).unwrap();
        match find_branches(&h, 1.0, 3, &scan) {
            Err(Error::InsufficientRoots {
                found, requested, ..
            }) => {
                assert_eq!((found, requested), (1, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn effective_on_branch_product_and_degeneracy() {
        let p = EffectiveParams {
            omega: 2.0,
            q: 1.0,
            compliance: Complex64::new(0.3, 0.0),
            density: Complex64::new(1.5, 0.0),
            s1: Complex64::new(0.1, 0.2),
            s2: Complex64::new(0.1, -0.2),
        };
        let (d, r) = effective_on_branch(&p).unwrap();
        assert!((d - p.compliance / Complex64::new(1.2, 0.4)).norm() < 1e-15);
        assert!((r - p.density / Complex64::new(1.2, -0.4)).norm() < 1e-15);
        let bad = EffectiveParams {
            s1: Complex64::new(-0.5, 0.0),
            ..p
        };
        assert!(matches!(
            effective_on_branch(&bad),
            Err(Error::DegenerateDenominator { .. })
        ));
    }

    #[test]
    fn bilayer_roots_are_certified() {
        let h = homogenizer(&[(1.0, 1.0, 0.5), (4.0, 1.0 / 16.0, 0.5)], &[4, 4], 6);
        let scan = ScanParams::new(0.0, 14.0).unwrap();
        let roots = find_branches(&h, PI / 2.0, 2, &scan).unwrap();
        assert!(roots[0].omega < roots[1].omega);
        for r in &roots {
            assert!(r.product_defect() < 1e-8);
            assert!(residual_from_params(&r.params).imag_defect() < 1e-10);
        }
    }

    #[test]
    fn grouping_orders_by_branch_then_q() {
        let h = homogenizer(&[(1.0, 1.0, 0.5), (4.0, 1.0 / 16.0, 0.5)], &[3, 3], 5);
        let scan = ScanParams::new(0.0, 12.0).unwrap();
        let qs = [PI / 4.0, PI / 2.0, 3.0 * PI / 4.0];
        let branches = trace_branches(&h, &qs, 2, &scan).unwrap();
        assert_eq!(branches.len(), 2);
        for b in &branches {
            assert_eq!(b.points.len(), 3);
            assert!(b.points.windows(2).all(|w| w[0].q < w[1].q));
            assert!(b.points.iter().all(|p| p.branch == b.branch));
        }
        assert!(branches[0].is_monotone());
    }
}
