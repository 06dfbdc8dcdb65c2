use super::ParamPoint;
use crate::constitutive::MaterialParams;
use crate::mesh::Mesh2D;
use crate::randomfield::{log_field, KLBasis};
use crate::solver::{BoundaryConditions, LoadDispCurve, MaterialField, PhaseFieldSolver, SolverConfig};

/// Map from a full parameter vector to a simulated curve.
pub trait ForwardModel {
    fn simulate(&mut self, theta: &[f64]) -> Result<LoadDispCurve, String>;
}

impl<F> ForwardModel for F
where
    F: FnMut(&[f64]) -> Result<LoadDispCurve, String>,
{
    fn simulate(&mut self, theta: &[f64]) -> Result<LoadDispCurve, String> {
        self(theta)
    }
}

/// Spatially constant `(log μ, log K, log Gc)`.
pub struct UniformForward {
    pub mesh: Mesh2D,
    pub solver: SolverConfig,
    pub kappa: f64,
    pub ell: f64,
}

impl UniformForward {
    pub fn params(&self, theta: &[f64]) -> Result<MaterialParams, String> {
        let p = ParamPoint::new(theta[..3].to_vec()).physical();
        MaterialParams::new(p[0], p[1], p[2], self.kappa, self.ell).map_err(|e| e.to_string())
    }
}

impl ForwardModel for UniformForward {
    fn simulate(&mut self, theta: &[f64]) -> Result<LoadDispCurve, String> {
        let params = self.params(theta)?;
        let solver = PhaseFieldSolver::new(
            &self.mesh,
            MaterialField::uniform(&self.mesh, params),
            BoundaryConditions::tension(&self.mesh),
            self.solver,
        )
        .map_err(|e| e.to_string())?;
        solver.run_load_stepping().map(|(c, _)| c).map_err(|e| e.to_string())
    }
}

/// What the sampler moves in the random-field model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldUpdate {
    /// θ holds the three log-field means; the KL coefficients stay fixed.
    Mean,
    /// θ holds the three means followed by `3 n_kl` KL coefficients.
    Coefficients,
}

/// Log-normal fields `exp(m + Σ √ψ k ξ)` for μ, K and Gc sharing one KL basis.
pub struct FieldForward {
    pub mesh: Mesh2D,
    pub solver: SolverConfig,
    pub kappa: f64,
    pub ell: f64,
    pub basis: KLBasis,
    /// Coefficients used when they are not part of θ, one vector per field.
    pub xi: [Vec<f64>; 3],
    pub update: FieldUpdate,
}

impl FieldForward {
    pub fn theta_dim(&self) -> usize {
        match self.update {
            FieldUpdate::Mean => 3,
            FieldUpdate::Coefficients => 3 + 3 * self.basis.n_kl(),
        }
    }

    /// Nodal μ, K and Gc.
    pub fn fields(&self, theta: &[f64]) -> Result<[Vec<f64>; 3], String> {
        if theta.len() != self.theta_dim() {
            return Err(format!("expected {} parameters, got {}", self.theta_dim(), theta.len()));
        }
        let nn = self.mesh.num_nodes();
        let k = self.basis.n_kl();
        let mut out: [Vec<f64>; 3] = Default::default();
        for (f, slot) in out.iter_mut().enumerate() {
            let xi = match self.update {
                FieldUpdate::Mean => &self.xi[f][..],
                FieldUpdate::Coefficients => &theta[3 + f * k..3 + (f + 1) * k],
            };
            let lf = log_field(&self.basis, &vec![theta[f]; nn], xi).map_err(|e| e.to_string())?;
            *slot = lf.into_iter().map(f64::exp).collect();
        }
        Ok(out)
    }
}

impl ForwardModel for FieldForward {
    fn simulate(&mut self, theta: &[f64]) -> Result<LoadDispCurve, String> {
        let [mu, bulk, gc] = self.fields(theta)?;
        let materials = MaterialField::from_nodal_fields(&self.mesh, &mu, &bulk, &gc, self.kappa, self.ell);
        let solver = PhaseFieldSolver::new(&self.mesh, materials, BoundaryConditions::tension(&self.mesh), self.solver)
            .map_err(|e| e.to_string())?;
        solver.run_load_stepping().map(|(c, _)| c).map_err(|e| e.to_string())
    }
}
