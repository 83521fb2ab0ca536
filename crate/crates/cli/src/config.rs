//! Run configuration: TOML schema, validation and construction of the solver
//! objects.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dynhomog_core::homogenizer::Homogenizer;
use dynhomog_core::spectral::{SpectralBasis, DEFAULT_EPS_POLE, DEFAULT_N_MAX};
use dynhomog_core::unit_cell::{
    discretize, reference_from_average, reference_from_layer, DiscretizedCell, Layer, Material,
    ReferenceMedium, UnitCell, DEFAULT_EPS_MAT,
};
use dynhomog_core::dispersion::DEFAULT_TOL_ROOT;

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_reference")]
    pub reference: ReferenceSpec,
    pub cell: CellConfig,
    pub discretization: DiscretizationConfig,
    #[serde(default)]
    pub fourier: FourierConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum ReferenceSpec {
    /// `"layer-average"` or `"layer:<index>"`.
    Named(String),
    Explicit {
        rho0: f64,
        #[serde(rename = "D0")]
        d0: f64,
    },
}

fn default_reference() -> ReferenceSpec {
    ReferenceSpec::Named("layer-average".into())
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub layers: Vec<LayerConfig>,
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub density: f64,
    pub compliance: Option<f64>,
    pub modulus: Option<f64>,
    pub thickness: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationConfig {
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FourierConfig {
    pub n_max: usize,
}

impl Default for FourierConfig {
    fn default() -> Self {
        Self { n_max: DEFAULT_N_MAX }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub q_points: usize,
    /// Fractions of `pi / a`; samples are taken in `(lo, hi]`.
    pub q_range: [f64; 2],
    /// Upper scan frequency as `omega a / c0`. Chosen from the exact
    /// dispersion when absent.
    pub omega_max: Option<f64>,
    pub n_branches: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            q_points: 32,
            q_range: [0.0, 1.0],
            omega_max: None,
            n_branches: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub eps_mat: f64,
    pub eps_pole: f64,
    pub tol_root: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eps_mat: DEFAULT_EPS_MAT,
            eps_pole: DEFAULT_EPS_POLE,
            tol_root: DEFAULT_TOL_ROOT,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub format: OutputFormat,
    /// Significant digits.
    pub precision: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            format: OutputFormat::Csv,
            precision: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: u64,
    pub samples: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 20240601,
            samples: 200,
        }
    }
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.into(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid("--config", format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::from_toml(&text)?, text))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let layers = &self.cell.layers;
        if layers.is_empty() {
            return Err(invalid("cell.layers", "at least one layer is required"));
        }
        for (i, l) in layers.iter().enumerate() {
            let field = |name: &str| format!("cell.layers[{i}].{name}");
            match (l.compliance, l.modulus) {
                (Some(_), Some(_)) => {
                    return Err(invalid(
                        field("compliance"),
                        "give exactly one of compliance or modulus, not both",
                    ))
                }
                (None, None) => {
                    return Err(invalid(
                        field("compliance"),
                        "give exactly one of compliance or modulus",
                    ))
                }
                (Some(v), None) if !(v > 0.0 && v.is_finite()) => {
                    return Err(invalid(field("compliance"), format!("must be positive, got {v}")))
                }
                (None, Some(v)) if !(v > 0.0 && v.is_finite()) => {
                    return Err(invalid(field("modulus"), format!("must be positive, got {v}")))
                }
                _ => {}
            }
            if !(l.density > 0.0 && l.density.is_finite()) {
                return Err(invalid(field("density"), format!("must be positive, got {}", l.density)));
            }
            if !(l.thickness > 0.0 && l.thickness.is_finite()) {
                return Err(invalid(
                    field("thickness"),
                    format!("must be positive, got {}", l.thickness),
                ));
            }
        }
        let counts = &self.discretization.counts;
        if counts.len() != layers.len() {
            return Err(invalid(
                "discretization.counts",
                format!(
                    "expected {} entries (one per layer), got {}",
                    layers.len(),
                    counts.len()
                ),
            ));
        }
        if let Some(i) = counts.iter().position(|&c| c == 0) {
            return Err(invalid(
                format!("discretization.counts[{i}]"),
                "counts must be at least 1",
            ));
        }
        if self.fourier.n_max == 0 {
            return Err(invalid("fourier.n_max", "must be at least 1"));
        }
        let max_count = counts.iter().copied().max().unwrap_or(0);
        if self.fourier.n_max < max_count {
            log::warn!(
                "fourier.n_max = {} is below the largest per-layer count {max_count}; \
                 the finest subregions are under-resolved",
                self.fourier.n_max
            );
        }
        self.reference_medium()?;

        let s = &self.scan;
        if s.q_points == 0 {
            return Err(invalid("scan.q_points", "must be at least 1"));
        }
        let [lo, hi] = s.q_range;
        if !(lo >= 0.0 && hi > lo && hi <= 1.0) {
            return Err(invalid(
                "scan.q_range",
                format!("need 0 <= lo < hi <= 1 (fractions of pi/a), got [{lo}, {hi}]"),
            ));
        }
        if let Some(w) = s.omega_max {
            if !(w > 0.0 && w.is_finite()) {
                return Err(invalid("scan.omega_max", format!("must be positive, got {w}")));
            }
        }
        if s.n_branches == 0 {
            return Err(invalid("scan.n_branches", "must be at least 1"));
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.eps_mat", t.eps_mat),
            ("tolerances.eps_pole", t.eps_pole),
            ("tolerances.tol_root", t.tol_root),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(invalid(name, format!("must lie in (0, 1), got {v}")));
            }
        }
        if !(1..=17).contains(&self.output.precision) {
            return Err(invalid(
                "output.precision",
                format!("must be between 1 and 17, got {}", self.output.precision),
            ));
        }
        if self.verify.samples == 0 {
            return Err(invalid("verify.samples", "must be at least 1"));
        }
        Ok(())
    }

    pub fn unit_cell(&self) -> Result<UnitCell, CliError> {
        let layers = self
            .cell
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let m = match (l.compliance, l.modulus) {
                    (Some(d), _) => Material::new(l.density, d),
                    (None, Some(c)) => Material::from_modulus(l.density, c),
                    (None, None) => unreachable!("validated"),
                };
                m.and_then(|m| Layer::new(m, l.thickness))
                    .map_err(|e| invalid(format!("cell.layers[{i}]"), e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        UnitCell::new(layers).map_err(|e| invalid("cell.layers", e.to_string()))
    }

    pub fn reference_medium(&self) -> Result<ReferenceMedium, CliError> {
        let cell = self.unit_cell()?;
        match &self.reference {
            ReferenceSpec::Named(name) if name == "layer-average" => Ok(reference_from_average(&cell)),
            ReferenceSpec::Named(name) => {
                let index = name
                    .strip_prefix("layer:")
                    .and_then(|i| i.trim().parse::<usize>().ok())
                    .ok_or_else(|| {
                        invalid(
                            "reference",
                            format!("expected \"layer-average\", \"layer:<index>\" or {{ rho0, D0 }}, got \"{name}\""),
                        )
                    })?;
                reference_from_layer(&cell, index).map_err(|e| invalid("reference", e.to_string()))
            }
            ReferenceSpec::Explicit { rho0, d0 } => {
                ReferenceMedium::new(*rho0, *d0).map_err(|e| invalid("reference", e.to_string()))
            }
        }
    }

    /// Whether the configured reference is the layer average.
    pub fn uses_layer_average(&self) -> bool {
        matches!(&self.reference, ReferenceSpec::Named(n) if n == "layer-average")
    }

    pub fn basis(&self) -> Result<SpectralBasis, CliError> {
        SpectralBasis::new(self.fourier.n_max).map_err(|e| invalid("fourier.n_max", e.to_string()))
    }

    pub fn discretized(&self, reference: ReferenceMedium) -> Result<DiscretizedCell, CliError> {
        discretize(
            &self.unit_cell()?,
            &self.discretization.counts,
            reference,
            self.tolerances.eps_mat,
        )
        .map_err(|e| invalid("discretization", e.to_string()))
    }

    pub fn homogenizer_with(&self, reference: ReferenceMedium) -> Result<Homogenizer, CliError> {
        Homogenizer::new(&self.discretized(reference)?, self.basis()?, self.tolerances.eps_pole)
            .map_err(|e| invalid("tolerances.eps_pole", e.to_string()))
    }

    pub fn homogenizer(&self) -> Result<Homogenizer, CliError> {
        self.homogenizer_with(self.reference_medium()?)
    }

    /// Wavenumbers of the scan, ascending.
    pub fn q_values(&self) -> Result<Vec<f64>, CliError> {
        let a = self.unit_cell()?.period();
        let [lo, hi] = self.scan.q_range;
        let n = self.scan.q_points;
        Ok((1..=n)
            .map(|k| PI / a * (lo + (hi - lo) * k as f64 / n as f64))
            .collect())
    }

    /// Mirror symmetry of both the layer sequence and the discretization.
    pub fn is_symmetric(&self) -> bool {
        let layers = &self.cell.layers;
        let counts = &self.discretization.counts;
        let n = layers.len();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
        (0..n).all(|i| {
            let (l, r) = (&layers[i], &layers[n - 1 - i]);
            let comp = |x: &LayerConfig| x.compliance.unwrap_or_else(|| 1.0 / x.modulus.unwrap_or(1.0));
            close(l.density, r.density)
                && close(comp(l), comp(r))
                && close(l.thickness, r.thickness)
                && counts[i] == counts[n - 1 - i]
        })
    }
}
