use super::ExperimentError;
use crate::bayes::{FieldUpdate, Prior, ProposalKind};
use crate::homogeneous1d::Homogeneous1DParams;
use crate::mesh::{build_dent_with, build_sent, build_voids_with, default_voids, DentLayout, Geometry, Mesh2D, Void};
use crate::randomfield::RandomFieldSpec;
use crate::solver::SolverConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// A complete experiment description. Every field except `geometry` and `n`
/// has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: Geometry,
    pub n: usize,
    #[serde(default)]
    pub mode: InversionMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub material: MaterialConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dent: Option<DentLayout>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voids: Option<Vec<Void>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_field: Option<RandomFieldConfig>,
    #[serde(default)]
    pub inversion: InversionConfig,
    #[serde(default)]
    pub homogeneous: HomogeneousConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InversionMode {
    OneDimensional,
    #[default]
    MultiDimensional,
    /// Both chains on the same seed and budget.
    Both,
}

/// Material values in kN and mm. `ell` defaults to twice the mesh size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialConfig {
    pub mu: f64,
    pub bulk: f64,
    pub gc: f64,
    pub kappa: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ell: Option<f64>,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        Self { mu: 80.0, bulk: 170.0, gc: 2.7e-3, kappa: 1e-8, ell: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomFieldConfig {
    pub sigma: f64,
    /// Correlation length (mm).
    #[serde(default = "default_zeta")]
    pub zeta: f64,
    #[serde(default = "default_n_kl")]
    pub n_kl: usize,
    /// What the sampler moves during inversion.
    #[serde(default = "default_update")]
    pub update: FieldUpdate,
    /// Directory for cached KL bases; defaults to the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl RandomFieldConfig {
    pub fn spec(&self) -> RandomFieldSpec {
        RandomFieldSpec { sigma: self.sigma, zeta: self.zeta, n_kl: self.n_kl }
    }
}

fn default_zeta() -> f64 {
    2.0
}

fn default_n_kl() -> usize {
    100
}

fn default_update() -> FieldUpdate {
    FieldUpdate::Mean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    /// Reference curve CSV; its metadata sidecar must sit next to it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    pub sigma2: f64,
    pub n_samples: usize,
    pub proposal: ProposalKind,
    pub bounds: PriorBounds,
    pub burn_in: f64,
    pub bins: usize,
    pub missing_step_penalty: f64,
    /// Largest lag written to the ACF table.
    pub max_lag: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            reference: None,
            sigma2: 1e-3,
            n_samples: 200,
            proposal: ProposalKind::Uniform,
            bounds: PriorBounds::default(),
            burn_in: 0.2,
            bins: 40,
            missing_step_penalty: 0.0,
            max_lag: 50,
        }
    }
}

/// Physical prior box per parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorBounds {
    pub mu: [f64; 2],
    pub bulk: [f64; 2],
    pub gc: [f64; 2],
}

impl Default for PriorBounds {
    fn default() -> Self {
        Self { mu: [60.0, 100.0], bulk: [140.0, 200.0], gc: [2.1e-3, 3.3e-3] }
    }
}

impl PriorBounds {
    pub fn as_pairs(&self) -> Vec<(f64, f64)> {
        [self.mu, self.bulk, self.gc].iter().map(|b| (b[0], b[1])).collect()
    }
}

/// Bar response in SI units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomogeneousConfig {
    #[serde(rename = "E")]
    pub e_mod: f64,
    pub gc: f64,
    pub ell: f64,
    pub kappas: Vec<f64>,
    /// Curves run to this multiple of the κ=0 peak strain.
    pub eps_max_factor: f64,
    pub points: usize,
}

impl Default for HomogeneousConfig {
    fn default() -> Self {
        let c = Homogeneous1DParams::concrete(0.0);
        Self { e_mod: c.e_mod, gc: c.gc, ell: c.ell, kappas: vec![0.0, 1e-4, 1e-8], eps_max_factor: 3.0, points: 300 }
    }
}

impl HomogeneousConfig {
    pub fn params(&self, kappa: f64) -> Homogeneous1DParams {
        Homogeneous1DParams { e_mod: self.e_mod, gc: self.gc, ell: self.ell, kappa }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Mu,
    Bulk,
    Gc,
    Kappa,
    Ell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write a VTK snapshot every `vtk_stride` steps; 0 keeps only the final
    /// state.
    pub vtk_stride: usize,
    pub vtk: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), vtk_stride: 10, vtk: true }
    }
}

fn invalid(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads a TOML config, or the `config` entry of a JSON metadata sidecar.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let meta: super::output::Metadata = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
            return Ok(meta.config);
        }
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Mesh size of the configured geometry.
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn ell(&self) -> f64 {
        self.material.ell.unwrap_or(2.0 * self.h())
    }

    pub fn build_mesh(&self) -> Result<Mesh2D, ExperimentError> {
        let mesh = match self.geometry {
            Geometry::Sent => build_sent(self.n),
            Geometry::Dent => build_dent_with(self.n, self.dent.unwrap_or_default()),
            Geometry::Voids => build_voids_with(self.n, self.voids.as_deref().unwrap_or(&default_voids())),
            Geometry::Rectangle => return Err(invalid("geometry `rectangle` is not an experiment specimen")),
        }?;
        Ok(mesh)
    }

    /// Checks shared by every command.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.geometry == Geometry::Sent && (self.n < 2 || self.n % 2 != 0) {
            return Err(invalid(format!("SENT needs an even n >= 2, got {}", self.n)));
        }
        if self.n == 0 {
            return Err(invalid("n must be positive"));
        }
        self.solver.validate().map_err(invalid)?;
        let m = &self.material;
        for (name, v) in [("mu", m.mu), ("bulk", m.bulk), ("gc", m.gc)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("material.{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&m.kappa) {
            return Err(invalid(format!("material.kappa must lie in [0, 1), got {}", m.kappa)));
        }
        if let Some(ell) = m.ell {
            if !(ell > 0.0 && ell.is_finite()) {
                return Err(invalid(format!("material.ell must be positive, got {ell}")));
            }
        }
        if let Some(rf) = &self.random_field {
            if !(rf.sigma >= 0.0 && rf.zeta > 0.0 && rf.n_kl > 0) {
                return Err(invalid("random_field needs sigma >= 0, zeta > 0 and n_kl > 0"));
            }
        }
        Ok(())
    }

    pub fn validate_inversion(&self) -> Result<(), ExperimentError> {
        self.validate()?;
        let inv = &self.inversion;
        if inv.n_samples == 0 {
            return Err(invalid("inversion.n_samples must be at least 1"));
        }
        if !(inv.sigma2 > 0.0 && inv.sigma2.is_finite()) {
            return Err(invalid(format!("inversion.sigma2 must be positive, got {}", inv.sigma2)));
        }
        if !(0.0..=0.9).contains(&inv.burn_in) {
            return Err(invalid(format!("inversion.burn_in must lie in [0, 0.9], got {}", inv.burn_in)));
        }
        if inv.bins == 0 {
            return Err(invalid("inversion.bins must be at least 1"));
        }
        if inv.reference.is_none() {
            return Err(invalid("inversion.reference is required"));
        }
        for (name, b) in [("mu", inv.bounds.mu), ("bulk", inv.bounds.bulk), ("gc", inv.bounds.gc)] {
            if !(b[0] > 0.0 && b[1] >= b[0] && b[1].is_finite()) {
                return Err(invalid(format!("inversion.bounds.{name} must satisfy 0 < lo <= hi, got {b:?}")));
            }
        }
        if let ProposalKind::Normal { step } = &inv.proposal {
            if step.is_empty() || step.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(invalid(format!("proposal widths must be positive, got {step:?}")));
            }
        }
        if let Some(rf) = &self.random_field {
            if !matches!(inv.proposal, ProposalKind::Normal { .. }) {
                return Err(invalid("random-field inversion needs the normal proposal"));
            }
            if rf.sigma <= 0.0 {
                return Err(invalid("random-field inversion needs sigma > 0"));
            }
            if self.mode != InversionMode::MultiDimensional {
                return Err(invalid("random-field inversion runs in multi_dimensional mode only"));
            }
        }
        Ok(())
    }

    pub fn validate_homogeneous(&self) -> Result<(), ExperimentError> {
        let h = &self.homogeneous;
        if h.kappas.is_empty() {
            return Err(invalid("homogeneous.kappas must not be empty"));
        }
        if h.points == 0 || !(h.eps_max_factor > 0.0) {
            return Err(invalid("homogeneous.points and eps_max_factor must be positive"));
        }
        for &k in &h.kappas {
            h.params(k).validate().map_err(|e| invalid(e.to_string()))?;
        }
        Ok(())
    }

    pub fn validate_sweep(&self) -> Result<&SweepConfig, ExperimentError> {
        self.validate()?;
        let s = self.sweep.as_ref().ok_or_else(|| invalid("sweep section is required"))?;
        if s.values.is_empty() {
            return Err(invalid("sweep.values must not be empty"));
        }
        Ok(s)
    }

    /// Prior over θ for the uniform-material inversion.
    pub fn uniform_prior(&self) -> Prior {
        Prior::UniformBox(self.inversion.bounds.as_pairs())
    }
}
