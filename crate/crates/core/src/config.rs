//! Run configuration, read from TOML.

use crate::geodesics::{Cutoff, IntegratorOptions};
use crate::metric::{sym_from_upper, AmbientMetric, MetricError, MetricPerturbation};
use crate::reduction::{ScanBox, ScanSpec, SolverOptions};
use crate::spectral::SphereGrid;
use crate::willmore::ElForm;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("invalid value for {key}: {msg}")]
    Invalid { key: &'static str, msg: String },
    #[error("metric: {0}")]
    Metric(#[from] MetricError),
}

/// Perturbation catalog entry. Amplitudes are the six upper-triangle entries
/// a11, a12, a13, a22, a23, a33.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "catalog", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricConfig {
    Flat,
    GaussianBump {
        center: [f64; 3],
        sigma: f64,
        amplitude: [f64; 6],
        epsilon: f64,
    },
    ConformalBump {
        center: [f64; 3],
        sigma: f64,
        c: f64,
        epsilon: f64,
    },
    AnisotropicBump {
        center: [f64; 3],
        sigma: f64,
        axis_scale: [f64; 3],
        amplitude: [f64; 6],
        epsilon: f64,
    },
}

impl MetricConfig {
    pub fn epsilon(&self) -> f64 {
        match *self {
            MetricConfig::Flat => 0.0,
            MetricConfig::GaussianBump { epsilon, .. }
            | MetricConfig::ConformalBump { epsilon, .. }
            | MetricConfig::AnisotropicBump { epsilon, .. } => epsilon,
        }
    }

    pub fn perturbation(&self) -> Result<MetricPerturbation, MetricError> {
        match self {
            MetricConfig::Flat => Ok(MetricPerturbation::zero()),
            MetricConfig::GaussianBump { center, sigma, amplitude, .. } => {
                MetricPerturbation::gaussian_bump(Vector3::from(*center), *sigma, sym_from_upper(amplitude))
            }
            MetricConfig::ConformalBump { center, sigma, c, .. } => {
                MetricPerturbation::conformal_bump(Vector3::from(*center), *sigma, *c)
            }
            MetricConfig::AnisotropicBump { center, sigma, axis_scale, amplitude, .. } => MetricPerturbation::anisotropic_bump(
                Vector3::from(*center),
                *sigma,
                Vector3::from(*axis_scale),
                sym_from_upper(amplitude),
            ),
        }
    }

    pub fn metric(&self) -> Result<AmbientMetric, MetricError> {
        AmbientMetric::new(self.perturbation()?, self.epsilon())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_theta: usize,
    pub l_max: usize,
}

impl GridConfig {
    pub fn build(&self) -> SphereGrid {
        SphereGrid::new(self.n_theta, self.l_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    #[serde(default)]
    pub el_form: ElForm,
    pub integrator_tol: f64,
}

/// The sphere S_p^ρ used by the single-surface subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereConfig {
    pub center: [f64; 3],
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub metric: MetricConfig,
    /// Extra ε values for sweeps; both signs are sampled.
    #[serde(default)]
    pub epsilons: Vec<f64>,
    pub grid: GridConfig,
    #[serde(default)]
    pub cutoff: Cutoff,
    pub solver: SolverConfig,
    pub sphere: SphereConfig,
    pub scan: ScanSpec,
}

fn default_seed() -> u64 {
    7
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn invalid(key: &'static str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key, msg: msg.into() }
}

fn positive(key: &'static str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema(self.schema_version));
        }
        // constructing the metric runs the catalog checks (σ > 0, symmetry, ε bound)
        self.metric.metric()?;
        for &e in &self.epsilons {
            positive("epsilons", e.abs())?;
            AmbientMetric::new(self.metric.perturbation()?, e)?;
        }
        if self.grid.n_theta < 4 || self.grid.l_max < 2 || self.grid.l_max >= self.grid.n_theta {
            return Err(invalid("grid", "need n_theta ≥ 4 and 2 ≤ l_max < n_theta"));
        }
        positive("cutoff.r1", self.cutoff.r1)?;
        if self.cutoff.r2 <= self.cutoff.r1 {
            return Err(invalid("cutoff", "r2 must exceed r1"));
        }
        positive("solver.tol", self.solver.tol)?;
        positive("solver.integrator_tol", self.solver.integrator_tol)?;
        if self.solver.max_iter == 0 {
            return Err(invalid("solver.max_iter", "must be at least 1"));
        }
        positive("sphere.rho", self.sphere.rho)?;
        let s = &self.scan;
        positive("scan.rho_min", s.rho_min)?;
        positive("scan.refine_tol", s.refine_tol)?;
        if s.rho_max < s.rho_min {
            return Err(invalid("scan.rho_max", "below rho_min"));
        }
        if s.n_p == 0 || s.n_rho == 0 {
            return Err(invalid("scan", "n_p and n_rho must be at least 1"));
        }
        if (0..3).any(|a| !(s.bounds.hi[a] >= s.bounds.lo[a])) {
            return Err(invalid("scan.box", "hi must not be below lo"));
        }
        Ok(())
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            l_max: self.grid.l_max,
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            cutoff: self.cutoff,
            el_form: self.solver.el_form,
            integrator: IntegratorOptions { tol: self.solver.integrator_tol, ..Default::default() },
        }
    }
}

impl Default for RunConfig {
    /// The default bump a = diag(1, 0, 0), σ = 1 at ε = 5·10⁻³ with the standard scan.
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: default_seed(),
            output_dir: default_output(),
            metric: MetricConfig::GaussianBump {
                center: [0.0; 3],
                sigma: 1.0,
                amplitude: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                epsilon: 5e-3,
            },
            epsilons: vec![],
            grid: GridConfig { n_theta: 24, l_max: 16 },
            cutoff: Cutoff::default(),
            solver: SolverConfig { tol: 1e-10, max_iter: 50, el_form: ElForm::Complete, integrator_tol: 1e-10 },
            sphere: SphereConfig { center: [0.3, 0.4, 0.2], rho: 1.5 },
            scan: ScanSpec {
                bounds: ScanBox { lo: [-4.5; 3], hi: [4.5; 3] },
                rho_min: 0.25,
                rho_max: 2.5,
                n_p: 7,
                n_rho: 5,
                refine_tol: 1e-3,
            },
        }
    }
}
