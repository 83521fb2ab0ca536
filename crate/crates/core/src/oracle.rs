//! Exact transfer-matrix solution for layered cells: dispersion, band gaps,
//! Bloch mode shapes and effective parameters by field integration.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::unit_cell::{Material, UnitCell};

type Mat2 = [[f64; 2]; 2];

const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];
/// Largest `|trace/2 - cos(qa)|` accepted by [`mode_shape`].
pub const ON_BRANCH_TOL: f64 = 1e-8;
const TANGENT_TOL: f64 = 1e-10;
const GRID_PER_HALF_PERIOD: f64 = 64.0;

fn mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn add(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] + b[0][0], a[0][1] + b[0][1]],
        [a[1][0] + b[1][0], a[1][1] + b[1][1]],
    ]
}

/// Propagator of `(u, sigma)` across a layer of thickness `h`.
pub fn propagator(m: &Material, h: f64, omega: f64) -> Mat2 {
    let s = (m.density * m.compliance).sqrt();
    let c = m.modulus();
    if omega == 0.0 {
        return [[1.0, h * m.compliance], [0.0, 1.0]];
    }
    let k = omega * s;
    let (sn, cs) = (k * h).sin_cos();
    [[cs, sn / (c * k)], [-c * k * sn, cs]]
}

fn propagator_derivative(m: &Material, h: f64, omega: f64) -> Mat2 {
    let s = (m.density * m.compliance).sqrt();
    let c = m.modulus();
    let phase = omega * s * h;
    let (sn, cs) = phase.sin_cos();
    let d_cos = -s * h * sn;
    let d_sin_over = if omega == 0.0 {
        0.0
    } else {
        (phase * cs - sn) / (c * s * omega * omega)
    };
    let d_lower = -c * s * (sn + phase * cs);
    [[d_cos, d_sin_over], [d_lower, d_cos]]
}

/// Ordered product of layer propagators, left edge to right edge.
pub fn monodromy(cell: &UnitCell, omega: f64) -> Mat2 {
    cell.layers().iter().fold(IDENTITY, |acc, l| {
        mul(&propagator(&l.material, l.thickness, omega), &acc)
    })
}

/// Monodromy matrix and its derivative with respect to `omega`.
fn monodromy_with_derivative(cell: &UnitCell, omega: f64) -> (Mat2, Mat2) {
    let mut m = IDENTITY;
    let mut dm = [[0.0; 2]; 2];
    for l in cell.layers() {
        let p = propagator(&l.material, l.thickness, omega);
        let dp = propagator_derivative(&l.material, l.thickness, omega);
        dm = add(&mul(&dp, &m), &mul(&p, &dm));
        m = mul(&p, &m);
    }
    (m, dm)
}

/// Half-trace of the monodromy matrix; propagating Bloch waves satisfy
/// `monodromy_trace(omega) = cos(q a)`.
pub fn monodromy_trace(cell: &UnitCell, omega: f64) -> f64 {
    let m = monodromy(cell, omega);
    0.5 * (m[0][0] + m[1][1])
}

fn trace_slope(cell: &UnitCell, omega: f64) -> f64 {
    let (_, dm) = monodromy_with_derivative(cell, omega);
    0.5 * (dm[0][0] + dm[1][1])
}

/// One-way travel time through the cell.
fn travel_time(cell: &UnitCell) -> f64 {
    cell.layers()
        .iter()
        .map(|l| l.thickness / l.material.wave_speed())
        .sum()
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, rel_tol: f64) -> f64 {
    let neg_lo = f(lo) < 0.0;
    while hi - lo > rel_tol * hi.abs().max(f64::MIN_POSITIVE) {
        let m = 0.5 * (lo + hi);
        if m <= lo || m >= hi {
            break;
        }
        if (f(m) < 0.0) == neg_lo {
            lo = m;
        } else {
            hi = m;
        }
    }
    0.5 * (lo + hi)
}

/// Zeros of `g(omega) = trace/2 - level` on `[0, omega_max]`, ascending, with
/// tangential zeros listed twice. Returns early once `limit` zeros are found.
fn level_crossings(cell: &UnitCell, level: f64, omega_max: f64, limit: usize) -> Vec<f64> {
    let g = |w: f64| monodromy_trace(cell, w) - level;
    let dg = |w: f64| trace_slope(cell, w);
    let step = std::f64::consts::PI / travel_time(cell) / GRID_PER_HALF_PERIOD;
    let n = (omega_max / step).ceil().max(2.0) as usize;
    let step = omega_max / n as f64;

    let mut roots = Vec::new();
    let g0 = g(0.0);
    if g0.abs() <= TANGENT_TOL {
        roots.push(0.0);
    }
    let mut prev = (0.0, g0);
    let mut prev_slope = dg(0.0);
    for i in 1..=n {
        if roots.len() >= limit {
            break;
        }
        let w = step * i as f64;
        let gw = g(w);
        let slope = dg(w);
        let (w0, g0) = prev;
        if gw == 0.0 {
            roots.push(w);
            if slope.abs() <= TANGENT_TOL {
                roots.push(w);
            }
        } else if g0 != 0.0 && (g0 < 0.0) != (gw < 0.0) {
            roots.push(bisect(g, w0, w, 1e-12));
        } else if g0 != 0.0 && (g0 < 0.0) == (gw < 0.0) && (prev_slope < 0.0) != (slope < 0.0) {
            // An extremum of g between grid points: it may touch or cross zero.
            let we = bisect(dg, w0, w, 1e-13);
            let ge = g(we);
            if (ge < 0.0) != (g0 < 0.0) {
                roots.push(bisect(g, w0, we, 1e-12));
                roots.push(bisect(g, we, w, 1e-12));
            } else if ge.abs() <= TANGENT_TOL {
                roots.push(we);
                roots.push(we);
            }
        }
        prev = (w, gw);
        prev_slope = slope;
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots
}

/// Lowest `n_branches` exact frequencies at wavenumber `q`, ascending.
/// Band-edge double roots appear twice.
pub fn exact_dispersion(cell: &UnitCell, q: f64, n_branches: usize) -> Result<Vec<f64>> {
    let a = cell.period();
    if !(q >= 0.0 && q <= std::f64::consts::PI / a * (1.0 + 1e-12)) {
        return Err(Error::InvalidArgument(format!(
            "q = {q} outside the reduced zone [0, pi/a]"
        )));
    }
    let cap = 4.0 * (n_branches as f64 + 2.0) * std::f64::consts::PI / travel_time(cell);
    let mut roots = level_crossings(cell, (q * a).cos(), cap, n_branches);
    if roots.len() < n_branches {
        return Err(Error::InsufficientRoots {
            q,
            found: roots.len(),
            requested: n_branches,
        });
    }
    roots.truncate(n_branches);
    Ok(roots)
}

/// Stop bands `(lower, upper)` below `omega_max`, where `|trace/2| > 1`.
pub fn band_gaps(cell: &UnitCell, omega_max: f64) -> Vec<(f64, f64)> {
    let mut edges: Vec<f64> = level_crossings(cell, 1.0, omega_max, usize::MAX)
        .into_iter()
        .chain(level_crossings(cell, -1.0, omega_max, usize::MAX))
        .filter(|&w| w > 0.0)
        .collect();
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    edges.dedup_by(|a, b| (*a - *b).abs() <= 1e-10 * b.abs());
    let mut gaps = Vec::new();
    for w in edges.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        if monodromy_trace(cell, mid).abs() > 1.0 {
            gaps.push((w[0], w[1]));
        }
    }
    gaps
}

/// Right- and left-going wave amplitudes in one layer, in local coordinates
/// `y = x - left`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerWave {
    pub left: f64,
    pub thickness: f64,
    pub material: Material,
    pub wavenumber: f64,
    pub right_going: Complex64,
    pub left_going: Complex64,
}

impl LayerWave {
    fn i_ck(&self) -> Complex64 {
        Complex64::new(0.0, self.material.modulus() * self.wavenumber)
    }

    pub fn displacement(&self, x: f64) -> Complex64 {
        let y = x - self.left;
        let e = Complex64::from_polar(1.0, self.wavenumber * y);
        self.right_going * e + self.left_going / e
    }

    pub fn stress(&self, x: f64) -> Complex64 {
        let y = x - self.left;
        let e = Complex64::from_polar(1.0, self.wavenumber * y);
        self.i_ck() * (self.right_going * e - self.left_going / e)
    }

    /// `int u(x) e^{-iqx} dx` and `int sigma(x) e^{-iqx} dx` over the layer.
    fn periodic_integrals(&self, q: f64) -> (Complex64, Complex64) {
        let h = self.thickness;
        let k = self.wavenumber;
        let shift = Complex64::from_polar(h, -q * self.left);
        let ep = phase_integral((k - q) * h);
        let em = phase_integral((-k - q) * h);
        let iu = shift * (self.right_going * ep + self.left_going * em);
        let is = shift * self.i_ck() * (self.right_going * ep - self.left_going * em);
        (iu, is)
    }
}

/// `(e^{iz} - 1) / (iz)`.
fn phase_integral(z: f64) -> Complex64 {
    if z.abs() < 1e-6 {
        Complex64::new(1.0 - z * z / 6.0, z / 2.0 - z * z * z / 24.0)
    } else {
        let iz = Complex64::new(0.0, z);
        (iz.exp() - 1.0) / iz
    }
}

/// Exact Bloch mode at `(q, omega)` with cell averages of its periodic parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeShape {
    pub q: f64,
    pub omega: f64,
    pub layers: Vec<LayerWave>,
    pub mean_displacement: Complex64,
    pub mean_stress: Complex64,
    pub mean_momentum: Complex64,
    /// `|state(a/2) - e^{iqa} state(-a/2)| / |state(-a/2)|`.
    pub bloch_residual: f64,
    /// Worst relative mismatch of `(u, sigma)` across interfaces.
    pub continuity_residual: f64,
    /// `max |u|` bound used for degeneracy tests.
    pub displacement_scale: f64,
    pub stress_scale: f64,
}

impl ModeShape {
    fn layer_at(&self, x: f64) -> &LayerWave {
        let a = self.period();
        let left = self.layers[0].left;
        let xf = left + (x - left).rem_euclid(a);
        self.layers
            .iter()
            .rev()
            .find(|l| xf >= l.left)
            .unwrap_or(&self.layers[0])
    }

    pub fn period(&self) -> f64 {
        self.layers.iter().map(|l| l.thickness).sum()
    }

    /// Full displacement at `x` inside the cell.
    pub fn displacement(&self, x: f64) -> Complex64 {
        self.layer_at(x).displacement(x)
    }

    pub fn stress(&self, x: f64) -> Complex64 {
        self.layer_at(x).stress(x)
    }

    /// Periodic parts `(sigma, u_dot)` at `x`, i.e. the fields times `e^{-iqx}`.
    pub fn periodic_fields(&self, x: f64) -> (Complex64, Complex64) {
        let l = self.layer_at(x);
        let carrier = Complex64::from_polar(1.0, -self.q * x);
        let velocity = Complex64::new(0.0, -self.omega) * l.displacement(x);
        (l.stress(x) * carrier, velocity * carrier)
    }

    /// Mean of the periodic part of the velocity.
    pub fn mean_velocity(&self) -> Complex64 {
        Complex64::new(0.0, -self.omega) * self.mean_displacement
    }

    fn scale(&mut self, f: Complex64) {
        for l in &mut self.layers {
            l.right_going *= f;
            l.left_going *= f;
        }
        self.mean_displacement *= f;
        self.mean_stress *= f;
        self.mean_momentum *= f;
        self.displacement_scale *= f.norm();
        self.stress_scale *= f.norm();
    }
}

/// Exact mode shape at a point of the exact dispersion relation.
pub fn mode_shape(cell: &UnitCell, q: f64, omega: f64) -> Result<ModeShape> {
    let a = cell.period();
    let t = monodromy_trace(cell, omega);
    let dispersion_residual = (t - (q * a).cos()).abs();
    if omega.is_nan() || omega <= 0.0 || dispersion_residual > ON_BRANCH_TOL {
        return Err(Error::NotOnBranch {
            q,
            omega,
            residual: dispersion_residual,
        });
    }
    let m = monodromy(cell, omega);
    let lambda = Complex64::from_polar(1.0, q * a);

    // Null vector of (M - lambda I), from whichever row is better conditioned.
    let c = |x: f64| Complex64::new(x, 0.0);
    let v1 = [c(m[0][1]), lambda - m[0][0]];
    let v2 = [lambda - m[1][1], c(m[1][0])];
    let n1 = v1[0].norm() + v1[1].norm();
    let n2 = v2[0].norm() + v2[1].norm();
    let scale_m = m.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max);
    let mut state = if n1.max(n2) <= 1e-12 * scale_m.max(1.0) {
        [c(1.0), c(0.0)]
    } else if n1 >= n2 {
        v1
    } else {
        v2
    };
    let start = state;

    let mut layers = Vec::with_capacity(cell.layers().len());
    let mut x = cell.left_edge();
    let mut continuity: f64 = 0.0;
    let mut sum_u = c(0.0);
    let mut sum_s = c(0.0);
    let mut sum_p = c(0.0);
    let mut u_scale: f64 = 0.0;
    let mut s_scale: f64 = 0.0;
    for l in cell.layers() {
        let k = omega * (l.material.density * l.material.compliance).sqrt();
        let ick = Complex64::new(0.0, l.material.modulus() * k);
        let wave = LayerWave {
            left: x,
            thickness: l.thickness,
            material: l.material,
            wavenumber: k,
            right_going: 0.5 * (state[0] + state[1] / ick),
            left_going: 0.5 * (state[0] - state[1] / ick),
        };
        let (iu, is) = wave.periodic_integrals(q);
        sum_u += iu;
        sum_s += is;
        sum_p += Complex64::new(0.0, -omega * l.material.density) * iu;
        let amp = wave.right_going.norm() + wave.left_going.norm();
        u_scale = u_scale.max(amp);
        s_scale = s_scale.max(amp * ick.norm());

        let p = propagator(&l.material, l.thickness, omega);
        let next = [
            state[0] * p[0][0] + state[1] * p[0][1],
            state[0] * p[1][0] + state[1] * p[1][1],
        ];
        let xe = x + l.thickness;
        let ue = wave.displacement(xe);
        let se = wave.stress(xe);
        let norm = next[0].norm() + next[1].norm();
        continuity = continuity.max(((ue - next[0]).norm() + (se - next[1]).norm()) / norm);
        state = next;
        x = xe;
        layers.push(wave);
    }
    let start_norm = start[0].norm() + start[1].norm();
    let bloch = ((state[0] - lambda * start[0]).norm() + (state[1] - lambda * start[1]).norm())
        / start_norm;

    let mut mode = ModeShape {
        q,
        omega,
        layers,
        mean_displacement: sum_u / a,
        mean_stress: sum_s / a,
        mean_momentum: sum_p / a,
        bloch_residual: bloch,
        continuity_residual: continuity,
        displacement_scale: u_scale,
        stress_scale: s_scale,
    };
    let f = if mode.mean_displacement.norm() > 1e-12 * u_scale {
        mode.mean_displacement.inv()
    } else {
        c(1.0 / u_scale)
    };
    mode.scale(f);
    Ok(mode)
}

/// `(D_eff, rho_eff)` from the cell averages of an exact mode:
/// `D_eff = iq<u>/<sigma>`, `rho_eff = <p>/(-i omega <u>)`.
pub fn field_integration_homog(mode: &ModeShape) -> Result<(Complex64, Complex64)> {
    if mode.mean_stress.norm() < 1e-14 * mode.stress_scale {
        return Err(Error::ZeroAverage { which: "stress" });
    }
    if mode.mean_displacement.norm() < 1e-14 * mode.displacement_scale {
        return Err(Error::ZeroAverage {
            which: "displacement",
        });
    }
    let d = Complex64::new(0.0, mode.q) * mode.mean_displacement / mode.mean_stress;
    let rho = mode.mean_momentum / (Complex64::new(0.0, -mode.omega) * mode.mean_displacement);
    Ok((d, rho))
}

/// Exact on-branch `(D_eff, rho_eff)` for branch `branch` (1-based) at `q`.
pub fn exact_effective(
    cell: &UnitCell,
    q: f64,
    branch: usize,
) -> Result<(f64, Complex64, Complex64)> {
    let omegas = exact_dispersion(cell, q, branch)?;
    let omega = omegas[branch - 1];
    let mode = mode_shape(cell, q, omega)?;
    let (d, r) = field_integration_homog(&mode)?;
    Ok((omega, d, r))
}
