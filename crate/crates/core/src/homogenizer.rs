//! Eigenfield solve and the overall constitutive parameters.
//!
//! The coupled consistency equations
//!
//! ```text
//! f <sigma> = -A_D S + (1 / (omega D0)) B U
//! f <v>     = (1 / (omega rho0)) B S - A_rho U
//! ```
//!
//! are solved with the velocity unknowns rescaled by the reference impedance
//! (`U = sqrt(D0 / rho0) u`) and the second row multiplied by
//! `sqrt(rho0 / D0)`. The scaled matrix
//! `[[-A_D, B / nu], [B / nu, -A_rho]]` is Hermitian for real `q` and
//! dimensionless.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{AssembledSystem, Assembler, SpectralBasis};
use crate::unit_cell::{DiscretizedCell, ReferenceMedium};

/// Condition estimates above this are reported as [`Error::SingularSystem`].
pub const DEFAULT_CONDITION_CAP: f64 = 1e12;

type CVec = DVector<Complex64>;
type CMat = DMatrix<Complex64>;

fn czero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

fn real_dot(f: &[f64], v: &CVec) -> Complex64 {
    f.iter().zip(v.iter()).map(|(&a, &b)| b * a).sum()
}

/// Response vectors of the eigenfields to unit average stress and velocity.
#[derive(Debug, Clone)]
pub struct EigenfieldSolution {
    pub omega: f64,
    pub q: f64,
    pub reference: ReferenceMedium,
    pub n_subregions: usize,
    pub stress_index: Vec<usize>,
    pub velocity_index: Vec<usize>,
    pub stress_fractions: Vec<f64>,
    pub velocity_fractions: Vec<f64>,
    pub phi: CVec,
    pub psi: CVec,
    pub theta: CVec,
    pub gamma: CVec,
    /// 1-norm condition estimate of the scaled block matrix.
    pub condition: f64,
}

impl EigenfieldSolution {
    pub fn is_trivial(&self) -> bool {
        self.stress_index.is_empty() && self.velocity_index.is_empty()
    }

    /// Eigenstress and eigenvelocity per subregion (zero where inactive) for
    /// prescribed averages.
    pub fn eigenfields(
        &self,
        stress_avg: Complex64,
        velocity_avg: Complex64,
    ) -> (Vec<Complex64>, Vec<Complex64>) {
        let d0 = self.reference.compliance;
        let rho0 = self.reference.density;
        let mut stress = vec![czero(); self.n_subregions];
        let mut velocity = vec![czero(); self.n_subregions];
        for (k, &i) in self.stress_index.iter().enumerate() {
            stress[i] = self.phi[k] * stress_avg + self.psi[k] * velocity_avg / d0;
        }
        for (k, &i) in self.velocity_index.iter().enumerate() {
            velocity[i] = self.theta[k] * stress_avg / rho0 + self.gamma[k] * velocity_avg;
        }
        (stress, velocity)
    }

    /// Relative residual of the unscaled consistency equations for the
    /// eigenfields produced by `(stress_avg, velocity_avg)`.
    pub fn consistency_residual(
        &self,
        sys: &AssembledSystem,
        stress_avg: Complex64,
        velocity_avg: Complex64,
    ) -> f64 {
        let (s_full, u_full) = self.eigenfields(stress_avg, velocity_avg);
        let s = CVec::from_iterator(
            sys.stress_index.len(),
            sys.stress_index.iter().map(|&i| s_full[i]),
        );
        let u = CVec::from_iterator(
            sys.velocity_index.len(),
            sys.velocity_index.iter().map(|&i| u_full[i]),
        );
        let omega = sys.omega;
        let b_phys = 1.0 / sys.period;
        let d0 = sys.reference.compliance;
        let rho0 = sys.reference.density;

        let lhs1 = CVec::from_iterator(
            s.len(),
            sys.stress_fractions().iter().map(|&f| stress_avg * f),
        );
        let t1 = -(&sys.a_d * &s);
        let t2 = (&sys.b_stress_velocity * &u) * Complex64::from(b_phys / (omega * d0));
        let lhs2 = CVec::from_iterator(
            u.len(),
            sys.velocity_fractions().iter().map(|&f| velocity_avg * f),
        );
        let t3 = (&sys.b_velocity_stress * &s) * Complex64::from(b_phys / (omega * rho0));
        let t4 = -(&sys.a_rho * &u);

        let rel = |lhs: &CVec, x: &CVec, y: &CVec| {
            let scale = lhs.norm() + x.norm() + y.norm();
            if scale == 0.0 {
                0.0
            } else {
                (lhs - x - y).norm() / scale
            }
        };
        let r1 = rel(&lhs1, &t1, &t2);
        let r2 = rel(&lhs2, &t3, &t4);
        r1.max(r2)
    }
}

/// Scaled Hermitian block matrix of the consistency equations.
pub fn block_matrix(sys: &AssembledSystem) -> CMat {
    let ns = sys.stress_index.len();
    let nu = sys.velocity_index.len();
    let inv_nu = 1.0 / sys.nu_scaled;
    let mut m = CMat::zeros(ns + nu, ns + nu);
    m.view_mut((0, 0), (ns, ns)).copy_from(&(-&sys.a_d));
    m.view_mut((0, ns), (ns, nu))
        .copy_from(&(&sys.b_stress_velocity * Complex64::new(inv_nu, 0.0)));
    m.view_mut((ns, 0), (nu, ns))
        .copy_from(&(&sys.b_velocity_stress * Complex64::new(inv_nu, 0.0)));
    m.view_mut((ns, ns), (nu, nu)).copy_from(&(-&sys.a_rho));
    m
}

fn one_norm(m: &CMat) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Hager-Higham estimate of `||M^-1||_1` for Hermitian `M`, using only
/// solves with the existing factorization.
fn inverse_one_norm_estimate(solve: impl Fn(&CVec) -> Option<CVec>, n: usize) -> Option<f64> {
    if n == 0 {
        return Some(0.0);
    }
    let mut x = CVec::from_element(n, Complex64::new(1.0 / n as f64, 0.0));
    let mut est = 0.0;
    let mut last_j = usize::MAX;
    for iter in 0..5 {
        let y = solve(&x)?;
        let norm_y: f64 = y.iter().map(|z| z.norm()).sum();
        if iter > 0 && norm_y <= est {
            break;
        }
        est = norm_y;
        let sign = y.map(|z| {
            let r = z.norm();
            if r == 0.0 {
                Complex64::new(1.0, 0.0)
            } else {
                z / r
            }
        });
        // M^-H = M^-1 for Hermitian M.
        let z = solve(&sign)?;
        let (j, zmax) = z
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.norm()))
            .fold((0, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        let ztx: f64 = z.iter().zip(x.iter()).map(|(a, b)| (a.conj() * b).re).sum();
        if iter > 0 && (zmax <= ztx || j == last_j) {
            break;
        }
        last_j = j;
        x = CVec::zeros(n);
        x[j] = Complex64::new(1.0, 0.0);
    }
    // Alternating-sign probe guards against the estimator's known blind spots.
    let alt = CVec::from_fn(n, |i, _| {
        let s = if i % 2 == 0 { 1.0 } else { -1.0 };
        let t = if n > 1 {
            i as f64 / (n - 1) as f64
        } else {
            0.0
        };
        Complex64::new(s * (1.0 + t), 0.0)
    });
    let y = solve(&alt)?;
    let alt_est = 2.0 * y.iter().map(|z| z.norm()).sum::<f64>() / (3.0 * n as f64);
    Some(est.max(alt_est))
}

/// Solves the coupled system directly for the two unit right-hand sides.
pub fn solve_eigenfields(sys: &AssembledSystem, condition_cap: f64) -> Result<EigenfieldSolution> {
    solve_inner(sys, Some(condition_cap))
}

/// As [`solve_eigenfields`] but without the condition estimate; only an
/// exactly singular factorization is reported. `condition` is NaN.
pub fn solve_eigenfields_unchecked(sys: &AssembledSystem) -> Result<EigenfieldSolution> {
    solve_inner(sys, None)
}

fn solve_inner(sys: &AssembledSystem, condition_cap: Option<f64>) -> Result<EigenfieldSolution> {
    let ns = sys.stress_index.len();
    let nv = sys.velocity_index.len();
    let slowness = sys.reference.slowness();
    let fs = sys.stress_fractions();
    let fv = sys.velocity_fractions();

    let mut sol = EigenfieldSolution {
        omega: sys.omega,
        q: sys.q,
        reference: sys.reference,
        n_subregions: sys.fractions.len(),
        stress_index: sys.stress_index.clone(),
        velocity_index: sys.velocity_index.clone(),
        stress_fractions: fs.clone(),
        velocity_fractions: fv.clone(),
        phi: CVec::zeros(ns),
        psi: CVec::zeros(ns),
        theta: CVec::zeros(nv),
        gamma: CVec::zeros(nv),
        condition: 1.0,
    };
    if sys.is_trivial() {
        return Ok(sol);
    }

    let m = block_matrix(sys);
    let n = ns + nv;
    let singular = |condition: f64| Error::SingularSystem {
        omega: sys.omega,
        q: sys.q,
        condition,
    };
    let norm_m = one_norm(&m);
    let lu = m.lu();
    let solve = |b: &CVec| lu.solve(b);

    sol.condition = match condition_cap {
        Some(cap) => {
            let inv_norm =
                inverse_one_norm_estimate(solve, n).ok_or_else(|| singular(f64::INFINITY))?;
            let condition = norm_m * inv_norm;
            if !condition.is_finite() || condition > cap {
                return Err(singular(condition));
            }
            condition
        }
        None => f64::NAN,
    };

    let mut rhs = CMat::zeros(n, 2);
    for (k, &f) in fs.iter().enumerate() {
        rhs[(k, 0)] = Complex64::new(f, 0.0);
    }
    for (k, &f) in fv.iter().enumerate() {
        rhs[(ns + k, 1)] = Complex64::new(f, 0.0);
    }
    let x = lu.solve(&rhs).ok_or_else(|| singular(f64::INFINITY))?;

    sol.phi = x.view((0, 0), (ns, 1)).column(0).into_owned();
    sol.theta = x.view((ns, 0), (nv, 1)).column(0).into_owned() * Complex64::from(slowness);
    sol.psi = x.view((0, 1), (ns, 1)).column(0).into_owned() * Complex64::from(slowness);
    sol.gamma = x.view((ns, 1), (nv, 1)).column(0).into_owned();
    Ok(sol)
}

/// Response vectors from the explicit Schur-complement formulas. Requires
/// both active sets to be nonempty with invertible `A_D` and `A_rho`.
#[derive(Debug, Clone)]
pub struct ClosedForm {
    pub phi: CVec,
    pub psi: CVec,
    pub theta: CVec,
    pub gamma: CVec,
}

pub fn closed_form_responses(sys: &AssembledSystem) -> Result<ClosedForm> {
    if sys.stress_index.is_empty() || sys.velocity_index.is_empty() {
        return Err(Error::InvalidArgument(
            "closed forms need both eigenfields active".into(),
        ));
    }
    let singular = || Error::SingularSystem {
        omega: sys.omega,
        q: sys.q,
        condition: f64::INFINITY,
    };
    let inv_nu = Complex64::new(1.0 / sys.nu_scaled, 0.0);
    let bsv = &sys.b_stress_velocity * inv_nu;
    let bvs = &sys.b_velocity_stress * inv_nu;
    let fs = CVec::from_iterator(
        sys.stress_index.len(),
        sys.stress_fractions()
            .into_iter()
            .map(|f| Complex64::new(f, 0.0)),
    );
    let fv = CVec::from_iterator(
        sys.velocity_index.len(),
        sys.velocity_fractions()
            .into_iter()
            .map(|f| Complex64::new(f, 0.0)),
    );
    let a_d_inv = sys.a_d.clone().try_inverse().ok_or_else(singular)?;
    let a_rho_inv = sys.a_rho.clone().try_inverse().ok_or_else(singular)?;

    let schur_d = (-&sys.a_d + &bsv * &a_rho_inv * &bvs)
        .try_inverse()
        .ok_or_else(singular)?;
    let schur_rho = (-&sys.a_rho + &bvs * &a_d_inv * &bsv)
        .try_inverse()
        .ok_or_else(singular)?;
    let slowness = sys.reference.slowness();
    Ok(ClosedForm {
        phi: &schur_d * &fs,
        psi: &schur_d * &bsv * &a_rho_inv * &fv * Complex64::from(slowness),
        theta: &schur_rho * &bvs * &a_d_inv * &fs * Complex64::from(slowness),
        gamma: &schur_rho * &fv,
    })
}

/// Overall constitutive parameters at one `(omega, q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveParams {
    pub omega: f64,
    pub q: f64,
    /// Overall compliance `D_bar`.
    pub compliance: Complex64,
    /// Overall density `rho_bar`.
    pub density: Complex64,
    /// Strain-velocity coupling `S1`.
    pub s1: Complex64,
    /// Momentum-stress coupling `S2`.
    pub s2: Complex64,
}

impl EffectiveParams {
    /// `max(|Im D_bar| / |D_bar|, |Im rho_bar| / |rho_bar|)`.
    pub fn realness_defect(&self) -> f64 {
        let rel = |z: Complex64| {
            if z.norm() == 0.0 {
                0.0
            } else {
                z.im.abs() / z.norm()
            }
        };
        rel(self.compliance).max(rel(self.density))
    }

    /// `|S1 - conj(S2)| / max(|S1|, |S2|)`.
    pub fn conjugacy_defect(&self) -> f64 {
        let scale = self.s1.norm().max(self.s2.norm());
        if scale == 0.0 {
            0.0
        } else {
            (self.s1 - self.s2.conj()).norm() / scale
        }
    }

    pub fn is_positive(&self) -> bool {
        self.compliance.re > 0.0 && self.density.re > 0.0
    }
}

pub fn effective_params(sol: &EigenfieldSolution) -> EffectiveParams {
    let d0 = sol.reference.compliance;
    let rho0 = sol.reference.density;
    EffectiveParams {
        omega: sol.omega,
        q: sol.q,
        compliance: (Complex64::new(1.0, 0.0) - real_dot(&sol.stress_fractions, &sol.phi)) * d0,
        density: (Complex64::new(1.0, 0.0) - real_dot(&sol.velocity_fractions, &sol.gamma)) * rho0,
        s1: -real_dot(&sol.stress_fractions, &sol.psi),
        s2: -real_dot(&sol.velocity_fractions, &sol.theta),
    }
}

/// Averaged fields and energy implied by the overall constitutive relations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragedFields {
    pub stress: Complex64,
    pub velocity: Complex64,
    pub strain: Complex64,
    pub momentum: Complex64,
    pub energy: Complex64,
}

pub fn apply_constitutive(
    params: &EffectiveParams,
    stress: Complex64,
    velocity: Complex64,
) -> AveragedFields {
    let strain = params.compliance * stress + params.s1 * velocity;
    let momentum = params.s2 * stress + params.density * velocity;
    let energy = 0.25
        * (stress.conj() * strain
            + stress * strain.conj()
            + velocity.conj() * momentum
            + velocity * momentum.conj());
    AveragedFields {
        stress,
        velocity,
        strain,
        momentum,
        energy,
    }
}

/// Assembly, solve and parameter extraction bundled for repeated evaluation.
#[derive(Debug, Clone)]
pub struct Homogenizer {
    assembler: Assembler,
    condition_cap: f64,
}

/// Everything produced at one `(omega, q)`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub system: AssembledSystem,
    pub solution: EigenfieldSolution,
    pub params: EffectiveParams,
}

impl Homogenizer {
    pub fn new(dcell: &DiscretizedCell, basis: SpectralBasis, eps_pole: f64) -> Result<Self> {
        Ok(Self {
            assembler: Assembler::new(dcell, basis, eps_pole)?,
            condition_cap: DEFAULT_CONDITION_CAP,
        })
    }

    pub fn with_condition_cap(mut self, cap: f64) -> Self {
        self.condition_cap = cap;
        self
    }

    pub fn assembler(&self) -> &Assembler {
        &self.assembler
    }

    pub fn dcell(&self) -> &DiscretizedCell {
        self.assembler.dcell()
    }

    pub fn basis(&self) -> SpectralBasis {
        self.assembler.basis()
    }

    pub fn evaluate(&self, omega: f64, q: f64) -> Result<Evaluation> {
        let system = self.assembler.assemble(omega, q)?;
        let solution = solve_eigenfields(&system, self.condition_cap)?;
        let params = effective_params(&solution);
        Ok(Evaluation {
            system,
            solution,
            params,
        })
    }

    pub fn params(&self, omega: f64, q: f64) -> Result<EffectiveParams> {
        self.evaluate(omega, q).map(|e| e.params)
    }

    /// Parameters without the condition estimate, for dense scans whose
    /// results are re-checked with [`Homogenizer::evaluate`].
    pub fn params_unchecked(&self, omega: f64, q: f64) -> Result<EffectiveParams> {
        let system = self.assembler.assemble(omega, q)?;
        Ok(effective_params(&solve_eigenfields_unchecked(&system)?))
    }
}
