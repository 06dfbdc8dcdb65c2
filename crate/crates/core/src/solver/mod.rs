//! Finite-element solution of the coupled displacement / phase-field problem:
//! Newton for displacements, a linear solve for the phase field, staggered
//! iteration per load step and displacement-controlled load stepping.

mod curve;
pub mod element;
mod fem;
pub mod skyline;

pub use curve::{CurveParseError, count_peaks, find_peaks, first_peak, LoadDispCurve, LoadStep, Termination};
pub use fem::{gamma_integral, PhaseFieldSolver, StaggeredReport};

use crate::constitutive::MaterialParams;
use crate::mesh::Mesh2D;
use serde::{Deserialize, Serialize};
use skyline::FactorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("staggered iteration did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    StaggeredNonConvergence { iterations: usize, residual: f64 },
    #[error("non-finite value produced in element {element}")]
    NonFinite { element: usize },
    #[error("element {element} has a non-positive Jacobian determinant")]
    BadElement { element: usize },
    #[error("linear solve failed ({what}): {source}")]
    Singular {
        what: &'static str,
        #[source]
        source: FactorError,
    },
    #[error("field size mismatch: {0}")]
    Size(String),
    #[error("phase field left [0,1] by more than round-off: {value} at node {node}")]
    PhaseFieldBounds { node: usize, value: f64 },
    #[error("load step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<SolverError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Newton relative residual reduction.
    pub tol_newton: f64,
    /// Staggered relative residual reduction.
    pub tol_stag: f64,
    /// Reaction force below which a broken specimen counts as failed.
    pub tol_load: f64,
    /// Maximum number of load steps.
    pub n_max: usize,
    /// Displacement increment per load step (mm).
    pub du_bar: f64,
    pub max_newton_iter: usize,
    pub max_stag_iter: usize,
    /// Nodal phase-field value counted as fully broken.
    pub d_broken_threshold: f64,
    /// Commit the history field after every staggered iteration instead of once
    /// per converged load step.
    pub history_each_iteration: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_newton: 1e-8,
            tol_stag: 1e-4,
            tol_load: 1e-3,
            n_max: 200,
            du_bar: 1e-4,
            max_newton_iter: 50,
            max_stag_iter: 200,
            d_broken_threshold: 0.01,
            history_each_iteration: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("tol_newton", self.tol_newton),
            ("tol_stag", self.tol_stag),
            ("tol_load", self.tol_load),
            ("du_bar", self.du_bar),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("solver.{name} must be positive, got {v}"));
            }
        }
        if self.n_max == 0 || self.max_newton_iter == 0 || self.max_stag_iter == 0 {
            return Err("solver iteration limits must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.d_broken_threshold) {
            return Err(format!("solver.d_broken_threshold must lie in [0,1), got {}", self.d_broken_threshold));
        }
        Ok(())
    }
}

/// Nodal displacement (2 dofs per node), nodal phase field and history values
/// at the 4 Gauss points of every element.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub u: Vec<f64>,
    pub d: Vec<f64>,
    pub history: Vec<f64>,
}

/// Material parameters per element. Spatially varying fields are sampled at
/// element centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct MaterialField {
    per_element: Vec<MaterialParams>,
}

impl MaterialField {
    pub fn uniform(mesh: &Mesh2D, params: MaterialParams) -> Self {
        Self { per_element: vec![params; mesh.num_elements()] }
    }

    /// Centroid values of bilinear nodal fields for `mu`, `bulk` and `gc`.
    pub fn from_nodal_fields(
        mesh: &Mesh2D,
        mu: &[f64],
        bulk: &[f64],
        gc: &[f64],
        kappa: f64,
        ell: f64,
    ) -> Self {
        let avg = |f: &[f64], conn: &[usize; 4]| conn.iter().map(|&n| f[n]).sum::<f64>() / 4.0;
        let per_element = mesh
            .elements
            .iter()
            .map(|conn| MaterialParams {
                mu: avg(mu, conn),
                bulk: avg(bulk, conn),
                gc: avg(gc, conn),
                kappa,
                ell,
            })
            .collect();
        Self { per_element }
    }

    pub fn get(&self, element: usize) -> &MaterialParams {
        &self.per_element[element]
    }

    pub fn len(&self) -> usize {
        self.per_element.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_element.is_empty()
    }
}

/// Displacement constraints: each entry fixes a dof to `factor * u_bar`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryConditions {
    pub constraints: Vec<(usize, f64)>,
    /// Nodes whose vertical internal forces sum to the reaction force.
    pub loaded_nodes: Vec<usize>,
}

impl BoundaryConditions {
    /// Bottom edge clamped, top edge pulled vertically with its horizontal
    /// displacement held at zero.
    pub fn tension(mesh: &Mesh2D) -> Self {
        let active = mesh.active_nodes();
        let mut constraints = Vec::new();
        for &n in &mesh.boundary.bottom {
            if active[n] {
                constraints.push((2 * n, 0.0));
                constraints.push((2 * n + 1, 0.0));
            }
        }
        let mut loaded = Vec::new();
        for &n in &mesh.boundary.top {
            if active[n] {
                constraints.push((2 * n, 0.0));
                constraints.push((2 * n + 1, 1.0));
                loaded.push(n);
            }
        }
        Self { constraints, loaded_nodes: loaded }
    }
}
