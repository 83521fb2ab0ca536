//! Periodic layered unit cells, the homogeneous reference medium, and the
//! subdivision of a cell into piecewise-constant subregions.
//!
//! The cell occupies `[-a/2, a/2)` with layers laid out left to right.

use crate::error::{Error, Result};

/// Default relative threshold below which a subregion is considered to match
/// the reference medium.
pub const DEFAULT_EPS_MAT: f64 = 1e-9;

fn check_positive(what: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositiveInput { what, value })
    }
}

/// Linear elastic material for longitudinal waves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub density: f64,
    pub compliance: f64,
}

impl Material {
    pub fn new(density: f64, compliance: f64) -> Result<Self> {
        check_positive("density", density)?;
        check_positive("compliance", compliance)?;
        Ok(Self {
            density,
            compliance,
        })
    }

    pub fn from_modulus(density: f64, modulus: f64) -> Result<Self> {
        check_positive("modulus", modulus)?;
        Self::new(density, 1.0 / modulus)
    }

    pub fn modulus(&self) -> f64 {
        1.0 / self.compliance
    }

    pub fn wave_speed(&self) -> f64 {
        1.0 / (self.density * self.compliance).sqrt()
    }

    pub fn impedance(&self) -> f64 {
        (self.density / self.compliance).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layer {
    pub material: Material,
    pub thickness: f64,
}

impl Layer {
    pub fn new(material: Material, thickness: f64) -> Result<Self> {
        check_positive("thickness", thickness)?;
        Ok(Self {
            material,
            thickness,
        })
    }
}

/// One period of a layered composite.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitCell {
    layers: Vec<Layer>,
    period: f64,
}

impl UnitCell {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyCell);
        }
        let period: f64 = layers.iter().map(|l| l.thickness).sum();
        check_positive("period", period)?;
        Ok(Self { layers, period })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn left_edge(&self) -> f64 {
        -0.5 * self.period
    }

    /// `[start, end)` of every layer in cell coordinates.
    pub fn layer_bounds(&self) -> Vec<(f64, f64)> {
        let mut start = self.left_edge();
        self.layers
            .iter()
            .enumerate()
            .map(|(j, layer)| {
                let end = if j + 1 == self.layers.len() {
                    0.5 * self.period
                } else {
                    start + layer.thickness
                };
                let bounds = (start, end);
                start = end;
                bounds
            })
            .collect()
    }

    /// Index of the layer containing `x`, after folding `x` into the cell.
    pub fn layer_index_at(&self, x: f64) -> usize {
        let a = self.period;
        let mut local = (x - self.left_edge()).rem_euclid(a);
        if local >= a {
            local = 0.0;
        }
        let mut acc = 0.0;
        for (j, layer) in self.layers.iter().enumerate() {
            acc += layer.thickness;
            if local < acc {
                return j;
            }
        }
        self.layers.len() - 1
    }

    pub fn material_at(&self, x: f64) -> Material {
        self.layers[self.layer_index_at(x)].material
    }

    /// Volume averages `(density, compliance)` over the cell.
    pub fn volume_averages(&self) -> (f64, f64) {
        let (mut rho, mut d) = (0.0, 0.0);
        for l in &self.layers {
            rho += l.material.density * l.thickness;
            d += l.material.compliance * l.thickness;
        }
        (rho / self.period, d / self.period)
    }

    pub fn is_homogeneous(&self) -> bool {
        let first = self.layers[0].material;
        self.layers.iter().all(|l| l.material == first)
    }
}

/// Builds a cell from `(density, compliance, thickness)` triples.
pub fn build_cell(layers: &[(f64, f64, f64)]) -> Result<UnitCell> {
    if layers.is_empty() {
        return Err(Error::EmptyCell);
    }
    let layers = layers
        .iter()
        .map(|&(rho, d, h)| Layer::new(Material::new(rho, d)?, h))
        .collect::<Result<Vec<_>>>()?;
    UnitCell::new(layers)
}

/// Uniform comparison medium in which the eigenfields live.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceMedium {
    pub density: f64,
    pub compliance: f64,
}

impl ReferenceMedium {
    pub fn new(density: f64, compliance: f64) -> Result<Self> {
        check_positive("reference density", density)?;
        check_positive("reference compliance", compliance)?;
        Ok(Self {
            density,
            compliance,
        })
    }

    /// c0 = 1 / sqrt(rho0 D0).
    pub fn wave_speed(&self) -> f64 {
        1.0 / self.slowness()
    }

    pub fn slowness(&self) -> f64 {
        (self.density * self.compliance).sqrt()
    }

    /// nu = omega sqrt(rho0 D0), the reference wavenumber at `omega`.
    pub fn nu(&self, omega: f64) -> f64 {
        omega * self.slowness()
    }
}

pub fn reference_from_average(cell: &UnitCell) -> ReferenceMedium {
    let (density, compliance) = cell.volume_averages();
    ReferenceMedium {
        density,
        compliance,
    }
}

pub fn reference_from_layer(cell: &UnitCell, index: usize) -> Result<ReferenceMedium> {
    let layer = cell.layers.get(index).ok_or(Error::LayerIndex {
        index,
        layers: cell.layers.len(),
    })?;
    ReferenceMedium::new(layer.material.density, layer.material.compliance)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Subregion {
    pub center: f64,
    pub length: f64,
    /// Volume fraction `length / a`.
    pub fraction: f64,
    pub density: f64,
    pub compliance: f64,
    /// Index of the enclosing layer.
    pub layer: usize,
}

impl Subregion {
    pub fn left(&self) -> f64 {
        self.center - 0.5 * self.length
    }

    pub fn right(&self) -> f64 {
        self.center + 0.5 * self.length
    }
}

/// A unit cell split into subregions, together with the reference medium and
/// the per-subregion flags saying which eigenfields are unknowns.
#[derive(Debug, Clone)]
pub struct DiscretizedCell {
    cell: UnitCell,
    reference: ReferenceMedium,
    counts: Vec<usize>,
    subregions: Vec<Subregion>,
    active_stress: Vec<bool>,
    active_velocity: Vec<bool>,
}

impl DiscretizedCell {
    pub fn cell(&self) -> &UnitCell {
        &self.cell
    }

    pub fn reference(&self) -> &ReferenceMedium {
        &self.reference
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn subregions(&self) -> &[Subregion] {
        &self.subregions
    }

    pub fn len(&self) -> usize {
        self.subregions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subregions.is_empty()
    }

    pub fn period(&self) -> f64 {
        self.cell.period
    }

    pub fn fractions(&self) -> Vec<f64> {
        self.subregions.iter().map(|s| s.fraction).collect()
    }

    /// True where the subregion compliance differs from the reference.
    pub fn active_stress(&self) -> &[bool] {
        &self.active_stress
    }

    /// True where the subregion density differs from the reference.
    pub fn active_velocity(&self) -> &[bool] {
        &self.active_velocity
    }

    pub fn active_stress_indices(&self) -> Vec<usize> {
        indices_of(&self.active_stress)
    }

    pub fn active_velocity_indices(&self) -> Vec<usize> {
        indices_of(&self.active_velocity)
    }

    /// No eigenfield unknowns: the cell is materially identical to the reference.
    pub fn is_trivial(&self) -> bool {
        !self.active_stress.iter().any(|&a| a) && !self.active_velocity.iter().any(|&a| a)
    }

    /// Same geometry and materials, different reference medium.
    pub fn with_reference(&self, reference: ReferenceMedium, eps_mat: f64) -> Result<Self> {
        discretize(&self.cell, &self.counts, reference, eps_mat)
    }

    /// Index of the subregion containing `x` (folded into the cell).
    pub fn subregion_index_at(&self, x: f64) -> usize {
        let a = self.cell.period;
        let folded = (x - self.cell.left_edge()).rem_euclid(a) + self.cell.left_edge();
        match self
            .subregions
            .binary_search_by(|s| s.right().partial_cmp(&folded).unwrap())
        {
            Ok(i) => (i + 1).min(self.subregions.len() - 1),
            Err(i) => i.min(self.subregions.len() - 1),
        }
    }
}

fn indices_of(flags: &[bool]) -> Vec<usize> {
    flags
        .iter()
        .enumerate()
        .filter_map(|(i, &on)| on.then_some(i))
        .collect()
}

/// Splits layer `j` into `counts[j]` equal subregions and flags the ones
/// whose properties differ from `reference` by more than `eps_mat` (relative).
pub fn discretize(
    cell: &UnitCell,
    counts: &[usize],
    reference: ReferenceMedium,
    eps_mat: f64,
) -> Result<DiscretizedCell> {
    if counts.len() != cell.layers.len() {
        return Err(Error::CountMismatch {
            expected: cell.layers.len(),
            got: counts.len(),
        });
    }
    if !(eps_mat > 0.0 && eps_mat < 1.0) {
        return Err(Error::InvalidTolerance {
            name: "eps_mat",
            value: eps_mat,
        });
    }
    if let Some(&bad) = counts.iter().find(|&&c| c == 0) {
        return Err(Error::NonPositiveInput {
            what: "subregion count",
            value: bad as f64,
        });
    }

    let a = cell.period;
    let mut subregions = Vec::with_capacity(counts.iter().sum());
    for (j, ((start, end), &n)) in cell.layer_bounds().into_iter().zip(counts).enumerate() {
        let m = cell.layers[j].material;
        let width = end - start;
        for k in 0..n {
            let left = start + width * k as f64 / n as f64;
            let right = if k + 1 == n {
                end
            } else {
                start + width * (k + 1) as f64 / n as f64
            };
            let length = right - left;
            subregions.push(Subregion {
                center: 0.5 * (left + right),
                length,
                fraction: length / a,
                density: m.density,
                compliance: m.compliance,
                layer: j,
            });
        }
    }

    let active_stress = subregions
        .iter()
        .map(|s| (s.compliance - reference.compliance).abs() > eps_mat * reference.compliance)
        .collect();
    let active_velocity = subregions
        .iter()
        .map(|s| (s.density - reference.density).abs() > eps_mat * reference.density)
        .collect();

    Ok(DiscretizedCell {
        cell: cell.clone(),
        reference,
        counts: counts.to_vec(),
        subregions,
        active_stress,
        active_velocity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn bilayer() -> UnitCell {
        build_cell(&[(1.0, 1.0, 0.5), (4.0, 1.0 / 16.0, 0.5)]).unwrap()
    }

    #[test]
    fn build_cell_sums_thicknesses() {
        let c = bilayer();
        assert_eq!(c.layers().len(), 2);
        assert_relative_eq!(c.period(), 1.0);
        assert_eq!(c.layer_bounds()[0], (-0.5, 0.0));

        let h = build_cell(&[(1.0, 1.0, 1.0)]).unwrap();
        assert!(h.is_homogeneous());
        assert_relative_eq!(h.period(), 1.0);

        let three = build_cell(&[
            (8.0, 1.0 / 300.0, 0.3),
            (1.0, 1.0, 0.2),
            (8.0, 1.0 / 300.0, 0.5),
        ])
        .unwrap();
        assert_eq!(three.layers().len(), 3);
        assert_relative_eq!(three.period(), 1.0);
    }

    #[test]
    fn build_cell_rejects_bad_input() {
        assert_eq!(build_cell(&[]), Err(Error::EmptyCell));
        assert!(matches!(
            build_cell(&[(1.0, 0.0, 1.0)]),
            Err(Error::NonPositiveInput {
                what: "compliance",
                ..
            })
        ));
        assert!(matches!(
            build_cell(&[(1.0, 1.0, -0.1)]),
            Err(Error::NonPositiveInput {
                what: "thickness",
                ..
            })
        ));
        assert!(matches!(
            build_cell(&[(f64::NAN, 1.0, 1.0)]),
            Err(Error::NonPositiveInput {
                what: "density",
                ..
            })
        ));
    }

    #[test]
    fn layer_average_reference() {
        let r = reference_from_average(&bilayer());
        assert_relative_eq!(r.density, 2.5);
        assert_relative_eq!(r.compliance, 0.53125);

        let h = build_cell(&[(3.0, 0.2, 2.0)]).unwrap();
        let r = reference_from_average(&h);
        assert_relative_eq!(r.density, 3.0);
        assert_relative_eq!(r.compliance, 0.2);

        let t = build_cell(&[(1.0, 1.0, 1.0), (2.0, 1.0, 1.0), (3.0, 1.0, 1.0)]).unwrap();
        let r = reference_from_average(&t);
        assert_relative_eq!(r.density, 2.0, epsilon = 1e-15);
        assert_relative_eq!(r.compliance, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn bilayer_thirty_subregions() {
        let cell = bilayer();
        let d = discretize(
            &cell,
            &[15, 15],
            reference_from_average(&cell),
            DEFAULT_EPS_MAT,
        )
        .unwrap();
        assert_eq!(d.len(), 30);
        for s in d.subregions() {
            assert_relative_eq!(s.fraction, 1.0 / 30.0, epsilon = 1e-15);
        }
        assert!(d.active_stress().iter().all(|&a| a));
        assert!(d.active_velocity().iter().all(|&a| a));
    }

    #[test]
    fn one_subregion_per_layer() {
        let cell = build_cell(&[
            (8.0, 1.0 / 300.0, 0.3),
            (1.0, 1.0, 0.2),
            (8.0, 1.0 / 300.0, 0.5),
        ])
        .unwrap();
        let d = discretize(
            &cell,
            &[1, 1, 1],
            reference_from_average(&cell),
            DEFAULT_EPS_MAT,
        )
        .unwrap();
        let f = d.fractions();
        assert_relative_eq!(f[0], 0.3, epsilon = 1e-15);
        assert_relative_eq!(f[1], 0.2, epsilon = 1e-15);
        assert_relative_eq!(f[2], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn layer_matching_reference_is_inactive() {
        let cell = build_cell(&[
            (3.0, 0.1, 0.1),
            (1.0, 1.0, 0.2),
            (4.0, 0.0625, 0.4),
            (1.5, 0.5, 0.2),
            (3.0, 0.1, 0.1),
        ])
        .unwrap();
        let reference = reference_from_layer(&cell, 0).unwrap();
        let d = discretize(&cell, &[5, 15, 10, 15, 5], reference, DEFAULT_EPS_MAT).unwrap();
        for (i, s) in d.subregions().iter().enumerate() {
            let outer = s.layer == 0 || s.layer == 4;
            assert_eq!(d.active_stress()[i], !outer);
            assert_eq!(d.active_velocity()[i], !outer);
        }
    }

    #[test]
    fn active_flags_are_independent() {
        // Second layer matches the reference compliance but not its density.
        let cell = build_cell(&[(1.0, 1.0, 0.5), (2.0, 1.0, 0.5)]).unwrap();
        let d = discretize(
            &cell,
            &[2, 2],
            ReferenceMedium::new(1.0, 1.0).unwrap(),
            1e-9,
        )
        .unwrap();
        assert_eq!(d.active_stress(), &[false; 4]);
        assert_eq!(d.active_velocity(), &[false, false, true, true]);
        assert!(!d.is_trivial());
    }

    #[test]
    fn discretize_errors() {
        let cell = bilayer();
        let r = reference_from_average(&cell);
        assert_eq!(
            discretize(&cell, &[15], r, 1e-9).unwrap_err(),
            Error::CountMismatch {
                expected: 2,
                got: 1
            }
        );
        assert!(matches!(
            discretize(&cell, &[1, 1], r, 0.0),
            Err(Error::InvalidTolerance { .. })
        ));
        assert!(matches!(
            discretize(&cell, &[1, 1], r, 1.0),
            Err(Error::InvalidTolerance { .. })
        ));
        assert!(matches!(
            discretize(&cell, &[0, 1], r, 1e-9),
            Err(Error::NonPositiveInput { .. })
        ));
        assert!(matches!(
            reference_from_layer(&cell, 2),
            Err(Error::LayerIndex {
                index: 2,
                layers: 2
            })
        ));
    }

    #[test]
    fn homogeneous_reference_cell_is_trivial() {
        let cell = build_cell(&[(2.0, 0.3, 1.0)]).unwrap();
        let d = discretize(&cell, &[4], reference_from_average(&cell), 1e-9).unwrap();
        assert!(d.is_trivial());
    }

    #[test]
    fn subregion_lookup() {
        let cell = bilayer();
        let d = discretize(&cell, &[2, 3], reference_from_average(&cell), 1e-9).unwrap();
        assert_eq!(d.subregion_index_at(-0.5), 0);
        assert_eq!(d.subregion_index_at(-0.26), 0);
        assert_eq!(d.subregion_index_at(-0.24), 1);
        assert_eq!(d.subregion_index_at(0.01), 2);
        assert_eq!(d.subregion_index_at(0.49), 4);
        assert_eq!(d.subregion_index_at(0.51), 0);
        assert_eq!(cell.layer_index_at(1.25), 1);
        assert_eq!(cell.layer_index_at(0.75), 0);
    }

    proptest! {
        #[test]
        fn partition_tiles_the_cell(
            layers in prop::collection::vec((0.1f64..10.0, 0.01f64..5.0, 0.01f64..3.0, 1usize..12), 1..6)
        ) {
            let triples: Vec<_> = layers.iter().map(|&(r, d, h, _)| (r, d, h)).collect();
            let counts: Vec<_> = layers.iter().map(|l| l.3).collect();
            let cell = build_cell(&triples).unwrap();
            let d = discretize(&cell, &counts, reference_from_average(&cell), DEFAULT_EPS_MAT).unwrap();

            let total: f64 = d.fractions().iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-14);

            let subs = d.subregions();
            prop_assert!((subs[0].left() - cell.left_edge()).abs() <= 1e-14 * cell.period());
            prop_assert!((subs[subs.len() - 1].right() - 0.5 * cell.period()).abs() <= 1e-14 * cell.period());
            for w in subs.windows(2) {
                prop_assert!((w[0].right() - w[1].left()).abs() <= 1e-14 * cell.period());
            }
            let bounds = cell.layer_bounds();
            for s in subs {
                let m = cell.layers()[s.layer].material;
                prop_assert_eq!(s.density, m.density);
                prop_assert_eq!(s.compliance, m.compliance);
                let (lo, hi) = bounds[s.layer];
                prop_assert!(s.left() >= lo - 1e-14 && s.right() <= hi + 1e-14);
            }
        }
    }
}
