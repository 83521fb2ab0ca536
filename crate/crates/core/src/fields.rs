//! Point-wise reconstruction of the periodic stress and velocity fields from
//! solved eigenfields.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::homogenizer::EigenfieldSolution;
use crate::spectral::{g_alpha, kernel_a, kernel_b, SpectralBasis};
use crate::unit_cell::DiscretizedCell;

pub const DEFAULT_POINTS_PER_SUBREGION: usize = 16;

/// One retained Fourier term of the periodic parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourierTerm {
    pub xi: f64,
    pub stress: Complex64,
    pub velocity: Complex64,
}

/// Sampled periodic parts of the fields and the series they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldProfile {
    pub omega: f64,
    pub q: f64,
    pub stress_avg: Complex64,
    pub velocity_avg: Complex64,
    pub x: Vec<f64>,
    pub stress: Vec<Complex64>,
    pub velocity: Vec<Complex64>,
    pub strain: Vec<Complex64>,
    pub momentum: Vec<Complex64>,
    /// Subregion containing each sample.
    pub subregion: Vec<usize>,
    pub terms: Vec<FourierTerm>,
    /// Eigenstress and eigenvelocity per subregion.
    pub eigenstress: Vec<Complex64>,
    pub eigenvelocity: Vec<Complex64>,
}

impl FieldProfile {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// `(sigma, u_dot)` from the series at any `x`.
    pub fn evaluate(&self, x: f64) -> (Complex64, Complex64) {
        self.terms
            .iter()
            .fold((self.stress_avg, self.velocity_avg), |(s, v), t| {
                let e = Complex64::from_polar(1.0, t.xi * x);
                (s + t.stress * e, v + t.velocity * e)
            })
    }

    /// `(d/dx + iq)` applied to `(sigma, u_dot)` at `x`.
    pub fn bloch_gradient(&self, x: f64) -> (Complex64, Complex64) {
        let iq = Complex64::new(0.0, self.q);
        self.terms.iter().fold(
            (iq * self.stress_avg, iq * self.velocity_avg),
            |(s, v), t| {
                let factor =
                    Complex64::new(0.0, t.xi + self.q) * Complex64::from_polar(1.0, t.xi * x);
                (s + t.stress * factor, v + t.velocity * factor)
            },
        )
    }

    /// Averages of the periodic parts `sigma - <sigma>`, `u_dot - <u_dot>` over
    /// each subregion, summed from the series.
    pub fn subregion_averages(&self, dcell: &DiscretizedCell) -> (Vec<Complex64>, Vec<Complex64>) {
        dcell
            .subregions()
            .iter()
            .map(|s| {
                self.terms.iter().fold(
                    (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)),
                    |(a, b), t| {
                        let g = g_alpha(s, t.xi);
                        (a + g * t.stress, b + g * t.velocity)
                    },
                )
            })
            .unzip()
    }
}

/// `n` midpoints per subregion, so no sample sits on an interface.
pub fn default_grid(dcell: &DiscretizedCell, per_subregion: usize) -> Vec<f64> {
    dcell
        .subregions()
        .iter()
        .flat_map(|s| {
            let h = s.length / per_subregion as f64;
            (0..per_subregion).map(move |k| s.left() + (k as f64 + 0.5) * h)
        })
        .collect()
}

/// `n` equally spaced midpoints across the cell.
pub fn uniform_grid(dcell: &DiscretizedCell, n: usize) -> Vec<f64> {
    let a = dcell.period();
    let left = dcell.cell().left_edge();
    (0..n)
        .map(|k| left + (k as f64 + 0.5) * a / n as f64)
        .collect()
}

/// Samples the periodic parts of the fields for prescribed averages.
pub fn reconstruct(
    sol: &EigenfieldSolution,
    dcell: &DiscretizedCell,
    basis: SpectralBasis,
    stress_avg: Complex64,
    velocity_avg: Complex64,
    grid: &[f64],
    eps_pole: f64,
) -> Result<FieldProfile> {
    if sol.n_subregions != dcell.len() {
        return Err(Error::CountMismatch {
            expected: dcell.len(),
            got: sol.n_subregions,
        });
    }
    let a = dcell.period();
    let left = dcell.cell().left_edge();
    if let Some(&x) = grid.iter().find(|&&x| !(x >= left && x < left + a)) {
        return Err(Error::InvalidArgument(format!(
            "grid point {x} outside the cell"
        )));
    }
    let (omega, q) = (sol.omega, sol.q);
    let reference = dcell.reference();
    let d0 = reference.compliance;
    let rho0 = reference.density;
    let (eig_s, eig_u) = sol.eigenfields(stress_avg, velocity_avg);
    let subs = dcell.subregions();

    let mut terms = Vec::with_capacity(2 * basis.n_max());
    if !sol.is_trivial() {
        for xi in basis.xi_values(a) {
            let ka = kernel_a(xi, omega, q, reference, eps_pole)?;
            let kb = kernel_b(xi, omega, q, reference, eps_pole)?;
            let (mut sx, mut ux) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            for (i, s) in subs.iter().enumerate() {
                let w = g_alpha(s, xi).conj() * s.fraction;
                sx += w * eig_s[i];
                ux += w * eig_u[i];
            }
            terms.push(FourierTerm {
                xi,
                stress: sx * ka - ux * (kb / (omega * d0)),
                velocity: ux * ka - sx * (kb / (omega * rho0)),
            });
        }
    }

    let mut profile = FieldProfile {
        omega,
        q,
        stress_avg,
        velocity_avg,
        x: grid.to_vec(),
        stress: Vec::with_capacity(grid.len()),
        velocity: Vec::with_capacity(grid.len()),
        strain: Vec::with_capacity(grid.len()),
        momentum: Vec::with_capacity(grid.len()),
        subregion: Vec::with_capacity(grid.len()),
        terms,
        eigenstress: eig_s,
        eigenvelocity: eig_u,
    };
    for &x in grid {
        let idx = dcell.subregion_index_at(x);
        let (s, v) = profile.evaluate(x);
        profile.stress.push(s);
        profile.velocity.push(v);
        profile.strain.push(s * subs[idx].compliance);
        profile.momentum.push(v * subs[idx].density);
        profile.subregion.push(idx);
    }
    Ok(profile)
}

fn rms(v: impl Iterator<Item = Complex64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), z| (s + z.norm_sqr(), n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// RMS of `(d/dx + iq) sigma + i omega p` and `(d/dx + iq) u_dot + i omega eps`
/// over the samples, each relative to the RMS of its two terms.
pub fn local_residuals(profile: &FieldProfile) -> (f64, f64) {
    let iw = Complex64::new(0.0, profile.omega);
    let grads: Vec<_> = profile
        .x
        .iter()
        .map(|&x| profile.bloch_gradient(x))
        .collect();
    let rel = |res: f64, a: f64, b: f64| if a + b == 0.0 { 0.0 } else { res / (a + b) };
    let momentum = rel(
        rms(grads
            .iter()
            .zip(&profile.momentum)
            .map(|(g, p)| g.0 + iw * p)),
        rms(grads.iter().map(|g| g.0)),
        rms(profile.momentum.iter().map(|p| iw * p)),
    );
    let kinematic = rel(
        rms(grads.iter().zip(&profile.strain).map(|(g, e)| g.1 + iw * e)),
        rms(grads.iter().map(|g| g.1)),
        rms(profile.strain.iter().map(|e| iw * e)),
    );
    (momentum, kinematic)
}

/// Relative RMS of the point-wise consistency conditions
/// `D sigma - D0 (sigma - S)` and `rho u_dot - rho0 (u_dot - U)` over the samples.
pub fn consistency_residuals(profile: &FieldProfile, dcell: &DiscretizedCell) -> (f64, f64) {
    let d0 = dcell.reference().compliance;
    let rho0 = dcell.reference().density;
    let mut rs = Vec::with_capacity(profile.len());
    let mut ru = Vec::with_capacity(profile.len());
    for (k, &i) in profile.subregion.iter().enumerate() {
        rs.push(profile.strain[k] - (profile.stress[k] - profile.eigenstress[i]) * d0);
        ru.push(profile.momentum[k] - (profile.velocity[k] - profile.eigenvelocity[i]) * rho0);
    }
    let ns = rms(profile.strain.iter().copied()).max(f64::MIN_POSITIVE);
    let nu = rms(profile.momentum.iter().copied()).max(f64::MIN_POSITIVE);
    (rms(rs.into_iter()) / ns, rms(ru.into_iter()) / nu)
}

/// Means of the sampled periodic parts `sigma - <sigma>` and `u_dot - <u_dot>`,
/// relative to the RMS of the fields. Exact on a uniform grid with more
/// points than `2 n_max`.
pub fn periodic_means(profile: &FieldProfile) -> (f64, f64) {
    let n = profile.len().max(1) as f64;
    let ms: Complex64 = profile
        .stress
        .iter()
        .map(|s| s - profile.stress_avg)
        .sum::<Complex64>()
        / n;
    let mv: Complex64 = profile
        .velocity
        .iter()
        .map(|v| v - profile.velocity_avg)
        .sum::<Complex64>()
        / n;
    let ns = rms(profile.stress.iter().copied()).max(f64::MIN_POSITIVE);
    let nv = rms(profile.velocity.iter().copied()).max(f64::MIN_POSITIVE);
    (ms.norm() / ns, mv.norm() / nv)
}

/// Relative RMS distance between two sampled fields.
pub fn relative_rms(a: &[Complex64], b: &[Complex64]) -> f64 {
    let diff = rms(a.iter().zip(b).map(|(x, y)| x - y));
    let norm = rms(b.iter().copied());
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}
