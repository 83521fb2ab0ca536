//! Fourier kernels of the reference medium and assembly of the
//! subregion-averaged system matrices at one `(omega, q)`.
//!
//! Lengths are scaled by the period `a` internally: `xi_hat = 2 pi n`,
//! `q_hat = q a`, `nu_hat = nu a`. `A(xi)` is scale-free, and the coupling
//! matrix is stored as `a * B_bar`, which makes every stored entry
//! dimensionless.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::unit_cell::{DiscretizedCell, ReferenceMedium, Subregion};

/// Default number of `(xi, -xi)` Fourier pairs.
pub const DEFAULT_N_MAX: usize = 10;
/// Default relative distance from a reference-medium pole.
pub const DEFAULT_EPS_POLE: f64 = 1e-8;

/// The nonzero wavenumbers `xi = +-2 n pi / a`, `1 <= n <= n_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpectralBasis {
    n_max: usize,
}

impl SpectralBasis {
    pub fn new(n_max: usize) -> Result<Self> {
        if n_max == 0 {
            return Err(Error::InvalidArgument("n_max must be at least 1".into()));
        }
        Ok(Self { n_max })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Scaled wavenumbers `xi a` in `(xi, -xi)` pairs.
    pub fn scaled_pairs(&self) -> impl Iterator<Item = (f64, f64)> {
        (1..=self.n_max).map(|n| {
            let xi = 2.0 * PI * n as f64;
            (xi, -xi)
        })
    }

    /// Physical wavenumbers for a cell of period `a`.
    pub fn xi_values(&self, period: f64) -> Vec<f64> {
        self.scaled_pairs()
            .flat_map(|(p, m)| [p / period, m / period])
            .collect()
    }
}

fn sinc(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        let z2 = z * z;
        1.0 - z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sin() / z
    }
}

/// Subregion average of `exp(i xi x)`.
pub fn g_alpha(subregion: &Subregion, xi: f64) -> Complex64 {
    Complex64::from_polar(sinc(0.5 * xi * subregion.length), xi * subregion.center)
}

fn pole_guard(nu2: f64, k: f64, eps_pole: f64) -> bool {
    let k2 = k * k;
    (nu2 - k2).abs() > eps_pole * nu2.max(k2)
}

/// `A(xi) = nu^2 / (nu^2 - (xi + q)^2)`.
pub fn kernel_a(
    xi: f64,
    omega: f64,
    q: f64,
    reference: &ReferenceMedium,
    eps_pole: f64,
) -> Result<f64> {
    let nu = reference.nu(omega);
    let nu2 = nu * nu;
    let k = xi + q;
    if !pole_guard(nu2, k, eps_pole) {
        return Err(Error::NearPole { omega, q, xi });
    }
    Ok(nu2 / (nu2 - k * k))
}

/// `B(xi) = (xi + q) A(xi)`.
pub fn kernel_b(
    xi: f64,
    omega: f64,
    q: f64,
    reference: &ReferenceMedium,
    eps_pole: f64,
) -> Result<f64> {
    Ok((xi + q) * kernel_a(xi, omega, q, reference, eps_pole)?)
}

/// Subregion-averaged system at one `(omega, q)`.
///
/// `a_bar` and `b_bar` are the geometric parts over all subregions;
/// `a_d`, `a_rho` and the two coupling blocks are restricted to the active
/// unknowns.
#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub omega: f64,
    pub q: f64,
    pub period: f64,
    /// `nu a`.
    pub nu_scaled: f64,
    pub reference: ReferenceMedium,
    pub fractions: Vec<f64>,
    pub stress_index: Vec<usize>,
    pub velocity_index: Vec<usize>,
    pub a_bar: DMatrix<Complex64>,
    /// `a * B_bar`.
    pub b_bar: DMatrix<Complex64>,
    pub a_d: DMatrix<Complex64>,
    pub a_rho: DMatrix<Complex64>,
    /// Rows: active stress unknowns; columns: active velocity unknowns.
    pub b_stress_velocity: DMatrix<Complex64>,
    /// Rows: active velocity unknowns; columns: active stress unknowns.
    pub b_velocity_stress: DMatrix<Complex64>,
}

impl AssembledSystem {
    /// No eigenfield unknowns.
    pub fn is_trivial(&self) -> bool {
        self.stress_index.is_empty() && self.velocity_index.is_empty()
    }

    pub fn stress_fractions(&self) -> Vec<f64> {
        self.stress_index
            .iter()
            .map(|&i| self.fractions[i])
            .collect()
    }

    pub fn velocity_fractions(&self) -> Vec<f64> {
        self.velocity_index
            .iter()
            .map(|&i| self.fractions[i])
            .collect()
    }

    /// Worst relative Hermitian defect among `A_D`, `A_rho` and `B_bar`.
    pub fn hermitian_defect(&self) -> f64 {
        [&self.a_d, &self.a_rho, &self.b_bar]
            .into_iter()
            .map(hermitian_defect)
            .fold(0.0, f64::max)
    }
}

/// `max |M - M^H| / max |M|`; zero for empty or zero matrices.
pub fn hermitian_defect(m: &DMatrix<Complex64>) -> f64 {
    let n = m.nrows();
    if n == 0 || n != m.ncols() {
        return if n == m.ncols() { 0.0 } else { f64::INFINITY };
    }
    let scale = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..=i {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst / scale
}

/// Precomputed geometry of a discretized cell: `f_alpha g_alpha(xi)` for
/// every `xi > 0` of the basis. Reused across many `(omega, q)` points.
#[derive(Debug, Clone)]
pub struct Assembler {
    dcell: DiscretizedCell,
    basis: SpectralBasis,
    eps_pole: f64,
    /// `weights[n][alpha] = f_alpha g_alpha(xi_n)`, `xi_n = 2 pi (n + 1) / a`.
    weights: Vec<Vec<Complex64>>,
    stress_index: Vec<usize>,
    velocity_index: Vec<usize>,
}

impl Assembler {
    pub fn new(dcell: &DiscretizedCell, basis: SpectralBasis, eps_pole: f64) -> Result<Self> {
        if !(eps_pole > 0.0 && eps_pole < 1.0) {
            return Err(Error::InvalidTolerance {
                name: "eps_pole",
                value: eps_pole,
            });
        }
        let a = dcell.period();
        let weights = basis
            .scaled_pairs()
            .map(|(xi_hat, _)| {
                dcell
                    .subregions()
                    .iter()
                    .map(|s| s.fraction * g_alpha(s, xi_hat / a))
                    .collect()
            })
            .collect();
        Ok(Self {
            dcell: dcell.clone(),
            basis,
            eps_pole,
            weights,
            stress_index: dcell.active_stress_indices(),
            velocity_index: dcell.active_velocity_indices(),
        })
    }

    pub fn dcell(&self) -> &DiscretizedCell {
        &self.dcell
    }

    pub fn basis(&self) -> SpectralBasis {
        self.basis
    }

    pub fn eps_pole(&self) -> f64 {
        self.eps_pole
    }

    /// Scaled kernel values `(A(xi), A(-xi), q_hat + xi_hat, q_hat - xi_hat)` per pair.
    fn kernels(&self, omega: f64, q: f64) -> Result<Vec<[f64; 4]>> {
        let a = self.dcell.period();
        let nu_hat = self.dcell.reference().nu(omega) * a;
        let nu2 = nu_hat * nu_hat;
        let q_hat = q * a;
        let trivial = self.stress_index.is_empty() && self.velocity_index.is_empty();
        self.basis
            .scaled_pairs()
            .map(|(xp, xm)| {
                let kp = xp + q_hat;
                let km = xm + q_hat;
                for (xi, k) in [(xp, kp), (xm, km)] {
                    if !trivial && !pole_guard(nu2, k, self.eps_pole) {
                        return Err(Error::NearPole {
                            omega,
                            q,
                            xi: xi / a,
                        });
                    }
                }
                Ok([nu2 / (nu2 - kp * kp), nu2 / (nu2 - km * km), kp, km])
            })
            .collect()
    }

    pub fn assemble(&self, omega: f64, q: f64) -> Result<AssembledSystem> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::NonPositiveInput {
                what: "omega",
                value: omega,
            });
        }
        if !q.is_finite() {
            return Err(Error::InvalidArgument(format!("q must be finite, got {q}")));
        }
        let kernels = self.kernels(omega, q)?;
        let n = self.dcell.len();
        let mut a_bar = DMatrix::<Complex64>::zeros(n, n);
        let mut b_bar = DMatrix::<Complex64>::zeros(n, n);

        // Each (xi, -xi) pair is combined before it is accumulated.
        for (w, &[a_p, a_m, k_p, k_m]) in self.weights.iter().zip(&kernels) {
            let b_p = k_p * a_p;
            let b_m = k_m * a_m;
            for beta in 0..n {
                let wb = w[beta].conj();
                for alpha in 0..n {
                    let plus = w[alpha] * wb;
                    let minus = plus.conj();
                    a_bar[(alpha, beta)] += plus * a_p + minus * a_m;
                    b_bar[(alpha, beta)] += plus * b_p + minus * b_m;
                }
            }
        }

        let subs = self.dcell.subregions();
        let reference = *self.dcell.reference();
        let d0 = reference.compliance;
        let rho0 = reference.density;

        let a_d = block(&a_bar, &self.stress_index, &self.stress_index, |i| {
            subs[i].fraction * d0 / (subs[i].compliance - d0)
        });
        let a_rho = block(&a_bar, &self.velocity_index, &self.velocity_index, |i| {
            subs[i].fraction * rho0 / (subs[i].density - rho0)
        });
        let b_stress_velocity = block(&b_bar, &self.stress_index, &self.velocity_index, |_| 0.0);
        let b_velocity_stress = block(&b_bar, &self.velocity_index, &self.stress_index, |_| 0.0);

        Ok(AssembledSystem {
            omega,
            q,
            period: self.dcell.period(),
            nu_scaled: reference.nu(omega) * self.dcell.period(),
            reference,
            fractions: self.dcell.fractions(),
            stress_index: self.stress_index.clone(),
            velocity_index: self.velocity_index.clone(),
            a_bar,
            b_bar,
            a_d,
            a_rho,
            b_stress_velocity,
            b_velocity_stress,
        })
    }
}

/// Sub-block `m[rows, cols]`, adding `diag(i)` where a row and column refer
/// to the same subregion.
fn block(
    m: &DMatrix<Complex64>,
    rows: &[usize],
    cols: &[usize],
    diag: impl Fn(usize) -> f64,
) -> DMatrix<Complex64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| {
        let (i, j) = (rows[r], cols[c]);
        let mut v = m[(i, j)];
        if i == j {
            v += diag(i);
        }
        v
    })
}

/// Assembles the system for a single `(omega, q)`.
pub fn assemble(
    dcell: &DiscretizedCell,
    basis: SpectralBasis,
    omega: f64,
    q: f64,
    eps_pole: f64,
) -> Result<AssembledSystem> {
    Assembler::new(dcell, basis, eps_pole)?.assemble(omega, q)
}

/// Reference-medium resonances `c0 |xi + q|` over the basis, ascending.
pub fn reference_poles(dcell: &DiscretizedCell, basis: SpectralBasis, q: f64) -> Vec<f64> {
    let c0 = dcell.reference().wave_speed();
    let mut poles: Vec<f64> = basis
        .xi_values(dcell.period())
        .into_iter()
        .map(|xi| c0 * (xi + q).abs())
        .collect();
    poles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    poles
}
