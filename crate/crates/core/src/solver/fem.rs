use super::curve::{LoadDispCurve, LoadStep, Termination};
use super::element::ElementGeometry;
use super::skyline::SkylineMatrix;
use super::{BoundaryConditions, FieldState, MaterialField, SolverConfig, SolverError};
use crate::constitutive::{
    crack_driving, split_energies, strain, stress, tangent, update_history, Strain2,
};
use crate::mesh::Mesh2D;

/// Bounds slack on the phase field before clamping.
const BOUNDS_SLACK: f64 = 1e-9;

/// Residual floor relative to the internal force scale, below which round-off
/// dominates and further reduction is meaningless.
const ABS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaggeredReport {
    pub iterations: usize,
    pub newton_iterations: usize,
    /// Staggered residual at exit divided by its value at the start of the step.
    pub relative_residual: f64,
    pub initial_residual: f64,
}

struct ElementData {
    id: usize,
    conn: [usize; 4],
    geo: ElementGeometry,
    /// `ℓ² ∫ ∇Nᵢ·∇Nⱼ`
    diffusion: [[f64; 4]; 4],
}

/// Finite-element discretization of one specimen: mesh, material field and
/// boundary conditions are fixed, the load level is passed per call.
pub struct PhaseFieldSolver {
    mesh: Mesh2D,
    materials: MaterialField,
    bc: BoundaryConditions,
    cfg: SolverConfig,
    elements: Vec<ElementData>,
    /// Per displacement dof: `Some(factor)` when fixed to `factor * u_bar`.
    u_fixed: Vec<Option<f64>>,
    /// Per node: `Some(value)` when the phase field is prescribed.
    d_fixed: Vec<Option<f64>>,
    broken_candidates: Vec<usize>,
    u_profile: SkylineMatrix,
    d_profile: SkylineMatrix,
    /// `‖∫ Nᵢ‖` over free phase-field nodes.
    d_load_norm: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn element_strain(geo: &ElementGeometry, q: usize, ue: &[f64; 8]) -> Strain2 {
    let mut gu = [[0.0; 2]; 2];
    for k in 0..4 {
        for a in 0..2 {
            for b in 0..2 {
                gu[a][b] += ue[2 * k + a] * geo.grad[q][k][b];
            }
        }
    }
    strain(gu)
}

impl PhaseFieldSolver {
    pub fn new(
        mesh: &Mesh2D,
        materials: MaterialField,
        bc: BoundaryConditions,
        cfg: SolverConfig,
    ) -> Result<Self, SolverError> {
        cfg.validate().map_err(SolverError::Size)?;
        if materials.len() != mesh.num_elements() {
            return Err(SolverError::Size(format!(
                "{} material entries for {} elements",
                materials.len(),
                mesh.num_elements()
            )));
        }
        let nn = mesh.num_nodes();
        let mut elements = Vec::with_capacity(mesh.num_active_elements());
        for (id, conn) in mesh.elements.iter().enumerate() {
            if !mesh.active[id] {
                continue;
            }
            let coords = conn.map(|n| mesh.nodes[n]);
            let geo = ElementGeometry::new(&coords).map_err(|_| SolverError::BadElement { element: id })?;
            let ell = materials.get(id).ell;
            let mut diffusion = [[0.0; 4]; 4];
            for q in 0..4 {
                for i in 0..4 {
                    for j in 0..4 {
                        let g = &geo.grad[q];
                        diffusion[i][j] +=
                            ell * ell * geo.wdet[q] * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                    }
                }
            }
            elements.push(ElementData { id, conn: *conn, geo, diffusion });
        }

        let active = mesh.active_nodes();
        let mut u_fixed = vec![None; 2 * nn];
        let mut d_fixed = vec![None; nn];
        for (n, &a) in active.iter().enumerate() {
            if !a {
                u_fixed[2 * n] = Some(0.0);
                u_fixed[2 * n + 1] = Some(0.0);
                d_fixed[n] = Some(1.0);
            }
        }
        for &(dof, factor) in &bc.constraints {
            if dof >= 2 * nn {
                return Err(SolverError::Size(format!("constraint on dof {dof} beyond {} dofs", 2 * nn)));
            }
            u_fixed[dof] = Some(factor);
        }
        for &n in &mesh.crack_nodes {
            if active[n] {
                d_fixed[n] = Some(0.0);
            }
        }
        let broken_candidates = (0..nn).filter(|&n| active[n] && d_fixed[n].is_none()).collect();

        let u_dofs: Vec<[usize; 8]> = elements
            .iter()
            .map(|e| {
                let c = e.conn;
                [2 * c[0], 2 * c[0] + 1, 2 * c[1], 2 * c[1] + 1, 2 * c[2], 2 * c[2] + 1, 2 * c[3], 2 * c[3] + 1]
            })
            .collect();
        let u_profile = SkylineMatrix::from_element_dofs(2 * nn, u_dofs.iter().map(|d| d.as_slice()));
        let d_profile = SkylineMatrix::from_element_dofs(nn, elements.iter().map(|e| e.conn.as_slice()));

        let mut load = vec![0.0; nn];
        for e in &elements {
            for q in 0..4 {
                for i in 0..4 {
                    load[e.conn[i]] += e.geo.wdet[q] * e.geo.n[q][i];
                }
            }
        }
        let d_load_norm = norm(&(0..nn).filter(|&n| d_fixed[n].is_none()).map(|n| load[n]).collect::<Vec<_>>());

        Ok(Self {
            mesh: mesh.clone(),
            materials,
            bc,
            cfg,
            elements,
            u_fixed,
            d_fixed,
            broken_candidates,
            u_profile,
            d_profile,
            d_load_norm,
        })
    }

    pub fn mesh(&self) -> &Mesh2D {
        &self.mesh
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn num_u_dofs(&self) -> usize {
        2 * self.mesh.num_nodes()
    }

    /// Zero displacement, zero history and the phase field of the unloaded
    /// specimen (the regularized initial crack).
    pub fn initial_state(&self) -> Result<FieldState, SolverError> {
        let history = vec![0.0; 4 * self.mesh.num_elements()];
        let d = self.solve_d(&history)?;
        Ok(FieldState { u: vec![0.0; self.num_u_dofs()], d, history })
    }

    pub fn apply_dirichlet(&self, u: &mut [f64], u_bar: f64) {
        for (v, f) in u.iter_mut().zip(&self.u_fixed) {
            if let Some(f) = f {
                *v = f * u_bar;
            }
        }
    }

    fn gather_u(&self, e: &ElementData, u: &[f64]) -> [f64; 8] {
        let mut ue = [0.0; 8];
        for (k, &n) in e.conn.iter().enumerate() {
            ue[2 * k] = u[2 * n];
            ue[2 * k + 1] = u[2 * n + 1];
        }
        ue
    }

    fn d_at(e: &ElementData, q: usize, d: &[f64]) -> f64 {
        (0..4).map(|k| e.geo.n[q][k] * d[e.conn[k]]).sum()
    }

    /// Unconstrained internal force `∫ Bᵀσ` over active elements.
    pub fn internal_force(&self, u: &[f64], d: &[f64]) -> Result<Vec<f64>, SolverError> {
        self.check_sizes(u, d)?;
        let mut f = vec![0.0; u.len()];
        for e in &self.elements {
            let p = self.materials.get(e.id);
            let ue = self.gather_u(e, u);
            for q in 0..4 {
                let s = stress(&element_strain(&e.geo, q, &ue), Self::d_at(e, q, d), p);
                if !(s.xx.is_finite() && s.yy.is_finite() && s.xy.is_finite()) {
                    return Err(SolverError::NonFinite { element: e.id });
                }
                let w = e.geo.wdet[q];
                for (k, &n) in e.conn.iter().enumerate() {
                    let [gx, gy] = e.geo.grad[q][k];
                    f[2 * n] += w * (gx * s.xx + gy * s.xy);
                    f[2 * n + 1] += w * (gx * s.xy + gy * s.yy);
                }
            }
        }
        Ok(f)
    }

    fn check_sizes(&self, u: &[f64], d: &[f64]) -> Result<(), SolverError> {
        if u.len() != self.num_u_dofs() || d.len() != self.mesh.num_nodes() {
            return Err(SolverError::Size(format!(
                "u has {} entries (expected {}), d has {} (expected {})",
                u.len(),
                self.num_u_dofs(),
                d.len(),
                self.mesh.num_nodes()
            )));
        }
        Ok(())
    }

    /// Displacement residual with constrained components zeroed, and the norm
    /// of the full internal force used as a scale.
    pub fn residual_u(&self, u: &[f64], d: &[f64]) -> Result<(Vec<f64>, f64), SolverError> {
        let mut f = self.internal_force(u, d)?;
        let scale = norm(&f);
        for (v, fx) in f.iter_mut().zip(&self.u_fixed) {
            if fx.is_some() {
                *v = 0.0;
            }
        }
        Ok((f, scale))
    }

    /// Consistent tangent with Dirichlet rows and columns replaced by the
    /// identity.
    pub fn tangent_u(&self, u: &[f64], d: &[f64]) -> Result<SkylineMatrix, SolverError> {
        self.check_sizes(u, d)?;
        let mut k = self.u_profile.clone();
        k.clear();
        for e in &self.elements {
            let p = self.materials.get(e.id);
            let ue = self.gather_u(e, u);
            let mut ke = [[0.0; 8]; 8];
            for q in 0..4 {
                let c = tangent(&element_strain(&e.geo, q, &ue), Self::d_at(e, q, d), p);
                let w = e.geo.wdet[q];
                // B columns: node k contributes [gx,0,gy] and [0,gy,gx]
                let mut b = [[0.0; 8]; 3];
                for n in 0..4 {
                    let [gx, gy] = e.geo.grad[q][n];
                    b[0][2 * n] = gx;
                    b[2][2 * n] = gy;
                    b[1][2 * n + 1] = gy;
                    b[2][2 * n + 1] = gx;
                }
                let mut cb = [[0.0; 8]; 3];
                for r in 0..3 {
                    for j in 0..8 {
                        cb[r][j] = c[r][0] * b[0][j] + c[r][1] * b[1][j] + c[r][2] * b[2][j];
                    }
                }
                for i in 0..8 {
                    for j in 0..8 {
                        ke[i][j] += w * (b[0][i] * cb[0][j] + b[1][i] * cb[1][j] + b[2][i] * cb[2][j]);
                    }
                }
            }
            let mut dofs = [0usize; 8];
            for (kk, &n) in e.conn.iter().enumerate() {
                dofs[2 * kk] = 2 * n;
                dofs[2 * kk + 1] = 2 * n + 1;
            }
            for i in 0..8 {
                if self.u_fixed[dofs[i]].is_some() {
                    continue;
                }
                for j in 0..8 {
                    if dofs[j] > dofs[i] || self.u_fixed[dofs[j]].is_some() {
                        continue;
                    }
                    let v = ke[i][j];
                    if !v.is_finite() {
                        return Err(SolverError::NonFinite { element: e.id });
                    }
                    k.add(dofs[i], dofs[j], v);
                }
            }
        }
        for (dof, fx) in self.u_fixed.iter().enumerate() {
            if fx.is_some() {
                k.set_identity_row(dof);
            }
        }
        Ok(k)
    }

    /// Newton iteration for the displacement at fixed phase field. Returns the
    /// number of linear solves performed.
    pub fn solve_u_newton(&self, u: &mut [f64], d: &[f64], u_bar: f64) -> Result<usize, SolverError> {
        self.apply_dirichlet(u, u_bar);
        let mut r0 = 0.0;
        let mut last = 0.0;
        for it in 0..=self.cfg.max_newton_iter {
            let (r, scale) = self.residual_u(u, d)?;
            let rn = norm(&r);
            if !rn.is_finite() {
                return Err(SolverError::NonConvergence { iterations: it, residual: rn });
            }
            if it == 0 {
                r0 = rn;
            }
            last = rn;
            let floor = ABS_FLOOR * scale;
            if rn <= floor || (it > 0 && rn <= self.cfg.tol_newton * r0) {
                return Ok(it);
            }
            if it == self.cfg.max_newton_iter {
                break;
            }
            let mut k = self.tangent_u(u, d)?;
            k.factor().map_err(|source| SolverError::Singular { what: "displacement tangent", source })?;
            let mut du: Vec<f64> = r.iter().map(|v| -v).collect();
            k.solve_in_place(&mut du);
            for (x, dx) in u.iter_mut().zip(&du) {
                *x += dx;
            }
        }
        Err(SolverError::NonConvergence { iterations: self.cfg.max_newton_iter, residual: last })
    }

    /// Gauss-point crack driving state `max(H_committed, D̃(u))`.
    pub fn trial_history(&self, u: &[f64], committed: &[f64]) -> Vec<f64> {
        let mut h = committed.to_vec();
        for e in &self.elements {
            let p = self.materials.get(e.id);
            let ue = self.gather_u(e, u);
            for q in 0..4 {
                let psi = split_energies(&element_strain(&e.geo, q, &ue), p).psi_plus;
                let k = 4 * e.id + q;
                h[k] = update_history(h[k], crack_driving(psi, p));
            }
        }
        h
    }

    /// Phase-field system `A d = b` at fixed history. The reaction term is
    /// lumped onto the diagonal, which keeps `A` an M-matrix on the structured
    /// grids and the discrete solution inside `[0, 1]`.
    fn assemble_d(&self, history: &[f64]) -> (SkylineMatrix, Vec<f64>, Vec<f64>) {
        let nn = self.mesh.num_nodes();
        let mut a = self.d_profile.clone();
        a.clear();
        let mut b = vec![0.0; nn];
        // row-wise A_fc d_c terms moved to the right-hand side
        let mut lift = vec![0.0; nn];
        for e in &self.elements {
            let p = self.materials.get(e.id);
            let mut ae = e.diffusion;
            let mut be = [0.0; 4];
            for q in 0..4 {
                let c = 1.0 + 2.0 * (1.0 - p.kappa) * history[4 * e.id + q];
                for i in 0..4 {
                    let wn = e.geo.wdet[q] * e.geo.n[q][i];
                    ae[i][i] += c * wn;
                    be[i] += wn;
                }
            }
            for i in 0..4 {
                let gi = e.conn[i];
                if self.d_fixed[gi].is_some() {
                    continue;
                }
                b[gi] += be[i];
                for j in 0..4 {
                    let gj = e.conn[j];
                    if let Some(v) = self.d_fixed[gj] {
                        lift[gi] += ae[i][j] * v;
                    } else if gj <= gi {
                        a.add(gi, gj, ae[i][j]);
                    }
                }
            }
        }
        for (n, fx) in self.d_fixed.iter().enumerate() {
            if let Some(v) = fx {
                a.set_identity_row(n);
                b[n] = *v;
            }
        }
        (a, b, lift)
    }

    /// Solve the linear phase-field problem at fixed history.
    pub fn solve_d(&self, history: &[f64]) -> Result<Vec<f64>, SolverError> {
        let (mut a, b, lift) = self.assemble_d(history);
        a.factor().map_err(|source| SolverError::Singular { what: "phase-field system", source })?;
        let mut d: Vec<f64> = b.iter().zip(&lift).map(|(b, l)| b - l).collect();
        a.solve_in_place(&mut d);
        for (n, v) in d.iter_mut().enumerate() {
            if !(*v >= -BOUNDS_SLACK && *v <= 1.0 + BOUNDS_SLACK) {
                return Err(SolverError::PhaseFieldBounds { node: n, value: *v });
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(d)
    }

    /// Phase-field residual `A d − b` on free nodes.
    pub fn residual_d(&self, d: &[f64], history: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; d.len()];
        for e in &self.elements {
            let p = self.materials.get(e.id);
            for q in 0..4 {
                let c = 1.0 + 2.0 * (1.0 - p.kappa) * history[4 * e.id + q];
                for i in 0..4 {
                    let wn = e.geo.wdet[q] * e.geo.n[q][i];
                    r[e.conn[i]] += c * wn * d[e.conn[i]] - wn;
                }
            }
            for i in 0..4 {
                let s: f64 = (0..4).map(|j| e.diffusion[i][j] * d[e.conn[j]]).sum();
                r[e.conn[i]] += s;
            }
        }
        for (v, fx) in r.iter_mut().zip(&self.d_fixed) {
            if fx.is_some() {
                *v = 0.0;
            }
        }
        r
    }

    /// `|E_u| + |E_d|` at the given fields, with the trial history of `u`.
    /// The second value is the matching scale for round-off floors.
    pub fn staggered_residual(
        &self,
        u: &[f64],
        d: &[f64],
        committed: &[f64],
    ) -> Result<(f64, f64), SolverError> {
        let (ru, scale) = self.residual_u(u, d)?;
        let h = self.trial_history(u, committed);
        Ok((norm(&ru) + norm(&self.residual_d(d, &h)), scale + self.d_load_norm))
    }

    /// Alternate displacement and phase-field solves at load level `u_bar`
    /// until the staggered residual drops by `tol_stag`, then commit the
    /// history.
    pub fn staggered_step(&self, state: &mut FieldState, u_bar: f64) -> Result<StaggeredReport, SolverError> {
        self.check_sizes(&state.u, &state.d)?;
        self.apply_dirichlet(&mut state.u, u_bar);
        let (res0, scale0) = self.staggered_residual(&state.u, &state.d, &state.history)?;
        let mut newton_total = 0;
        let mut res = res0;
        for it in 1..=self.cfg.max_stag_iter {
            newton_total += self.solve_u_newton(&mut state.u, &state.d, u_bar)?;
            let h = self.trial_history(&state.u, &state.history);
            state.d = self.solve_d(&h)?;
            if self.cfg.history_each_iteration {
                state.history = h;
            }
            let (r, scale) = self.staggered_residual(&state.u, &state.d, &state.history)?;
            res = r;
            if res <= self.cfg.tol_stag * res0 || res <= ABS_FLOOR * scale.max(scale0) {
                state.history = self.trial_history(&state.u, &state.history);
                return Ok(StaggeredReport {
                    iterations: it,
                    newton_iterations: newton_total,
                    relative_residual: if res0 > 0.0 { res / res0 } else { 0.0 },
                    initial_residual: res0,
                });
            }
        }
        Err(SolverError::StaggeredNonConvergence {
            iterations: self.cfg.max_stag_iter,
            residual: if res0 > 0.0 { res / res0 } else { res },
        })
    }

    /// Sum of the vertical internal forces over the loaded boundary nodes.
    pub fn reaction_force(&self, u: &[f64], d: &[f64]) -> Result<f64, SolverError> {
        let f = self.internal_force(u, d)?;
        Ok(self.bc.loaded_nodes.iter().map(|&n| f[2 * n + 1]).sum())
    }

    /// Whether any free active node has reached the broken threshold.
    pub fn has_broken_node(&self, d: &[f64]) -> bool {
        self.broken_candidates.iter().any(|&n| d[n] <= self.cfg.d_broken_threshold)
    }

    pub fn run_load_stepping(&self) -> Result<(LoadDispCurve, FieldState), SolverError> {
        self.run_load_stepping_with(|_, _| {})
    }

    /// Displacement-controlled loading. `observer` sees every converged step.
    pub fn run_load_stepping_with<F>(&self, mut observer: F) -> Result<(LoadDispCurve, FieldState), SolverError>
    where
        F: FnMut(&LoadStep, &FieldState),
    {
        let mut state = self.initial_state()?;
        let mut steps = Vec::new();
        let mut termination = Termination::MaxSteps;
        for n in 1..=self.cfg.n_max {
            let u_bar = n as f64 * self.cfg.du_bar;
            let wrap = |source| SolverError::Step { step: n, source: Box::new(source) };
            let report = self.staggered_step(&mut state, u_bar).map_err(wrap)?;
            let force = self.reaction_force(&state.u, &state.d).map_err(wrap)?;
            log::debug!(
                "step {n}: u_bar={u_bar:.4e} F={force:.6e} stag={} newton={}",
                report.iterations,
                report.newton_iterations
            );
            let step = LoadStep { step: n, u_bar, force };
            observer(&step, &state);
            steps.push(step);
            if force.abs() < self.cfg.tol_load && self.has_broken_node(&state.d) {
                termination = Termination::Failure;
                break;
            }
        }
        Ok((LoadDispCurve::new(steps, termination), state))
    }

    /// Degraded stress at the centroid of each element (zero for voids).
    pub fn centroid_stress(&self, u: &[f64], d: &[f64]) -> Vec<[f64; 3]> {
        let mut out = vec![[0.0; 3]; self.mesh.num_elements()];
        for e in &self.elements {
            let p = self.materials.get(e.id);
            let ue = self.gather_u(e, u);
            let mut acc = [0.0; 3];
            for q in 0..4 {
                let s = stress(&element_strain(&e.geo, q, &ue), Self::d_at(e, q, d), p);
                acc[0] += 0.25 * s.xx;
                acc[1] += 0.25 * s.yy;
                acc[2] += 0.25 * s.xy;
            }
            out[e.id] = acc;
        }
        out
    }
}

/// `∫ (1−d)²/(2ℓ) + (ℓ/2)|∇d|²` over active elements.
pub fn gamma_integral(mesh: &Mesh2D, d: &[f64], ell: f64) -> Result<f64, SolverError> {
    if d.len() != mesh.num_nodes() {
        return Err(SolverError::Size(format!("d has {} entries for {} nodes", d.len(), mesh.num_nodes())));
    }
    let mut total = 0.0;
    for (id, conn) in mesh.elements.iter().enumerate() {
        if !mesh.active[id] {
            continue;
        }
        let geo =
            ElementGeometry::new(&conn.map(|n| mesh.nodes[n])).map_err(|_| SolverError::BadElement { element: id })?;
        for q in 0..4 {
            let mut dq = 0.0;
            let mut g = [0.0; 2];
            for k in 0..4 {
                let v = d[conn[k]];
                dq += geo.n[q][k] * v;
                g[0] += geo.grad[q][k][0] * v;
                g[1] += geo.grad[q][k][1] * v;
            }
            total += geo.wdet[q] * ((1.0 - dq).powi(2) / (2.0 * ell) + 0.5 * ell * (g[0] * g[0] + g[1] * g[1]));
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::MaterialParams;
    use crate::mesh::{build_rectangle, build_sent};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(kappa: f64, ell: f64) -> MaterialParams {
        MaterialParams { mu: 80.0, bulk: 170.0, gc: 2.7e-3, kappa, ell }
    }

    fn free_bc() -> BoundaryConditions {
        BoundaryConditions { constraints: Vec::new(), loaded_nodes: Vec::new() }
    }

    /// Plane-strain Q1 stiffness of an axis-aligned a×b element from E and ν,
    /// integrated with its own 2x2 rule.
    fn dense_q1_stiffness(a: f64, b: f64, e_mod: f64, nu: f64) -> [[f64; 8]; 8] {
        let f = e_mod / ((1.0 + nu) * (1.0 - 2.0 * nu));
        let dm = [[f * (1.0 - nu), f * nu, 0.0], [f * nu, f * (1.0 - nu), 0.0], [0.0, 0.0, f * (0.5 - nu)]];
        let g = 1.0 / 3f64.sqrt();
        let mut k = [[0.0; 8]; 8];
        for (xi, eta) in [(-g, -g), (g, -g), (g, g), (-g, g)] {
            // d/dx = (2/a) d/dξ, d/dy = (2/b) d/dη
            let dndx = [-(1.0 - eta) / (2.0 * a), (1.0 - eta) / (2.0 * a), (1.0 + eta) / (2.0 * a), -(1.0 + eta) / (2.0 * a)];
            let dndy = [-(1.0 - xi) / (2.0 * b), -(1.0 + xi) / (2.0 * b), (1.0 + xi) / (2.0 * b), (1.0 - xi) / (2.0 * b)];
            let mut bm = [[0.0; 8]; 3];
            for n in 0..4 {
                bm[0][2 * n] = dndx[n];
                bm[1][2 * n + 1] = dndy[n];
                bm[2][2 * n] = dndy[n];
                bm[2][2 * n + 1] = dndx[n];
            }
            let w = a * b / 4.0;
            for i in 0..8 {
                for j in 0..8 {
                    let mut s = 0.0;
                    for r in 0..3 {
                        for c in 0..3 {
                            s += bm[r][i] * dm[r][c] * bm[c][j];
                        }
                    }
                    k[i][j] += w * s;
                }
            }
        }
        k
    }

    #[test]
    fn single_element_matches_dense_oracle() {
        let mesh = build_rectangle(1, 1, 2.0, 0.5).unwrap();
        let p = params(0.0, 0.1);
        let solver =
            PhaseFieldSolver::new(&mesh, MaterialField::uniform(&mesh, p), free_bc(), SolverConfig::default()).unwrap();
        let e_mod = 9.0 * p.bulk * p.mu / (3.0 * p.bulk + p.mu);
        let nu = (3.0 * p.bulk - 2.0 * p.mu) / (2.0 * (3.0 * p.bulk + p.mu));
        let k = dense_q1_stiffness(2.0, 0.5, e_mod, nu);
        let stretch = 1e-4;
        let u: Vec<f64> = mesh.nodes.iter().flat_map(|x| [stretch * x[0], 0.3 * stretch * x[1]]).collect();
        let f = solver.internal_force(&u, &[1.0; 4]).unwrap();
        // element-local dof order follows the connectivity
        let conn = mesh.elements[0];
        let dof = |i: usize| 2 * conn[i / 2] + i % 2;
        for i in 0..8 {
            let expect: f64 = (0..8).map(|j| k[i][j] * u[dof(j)]).sum();
            let got = f[dof(i)];
            assert!((got - expect).abs() <= 1e-12 * (1.0 + expect.abs()), "{i}: {got} vs {expect}");
        }
    }

    #[test]
    fn zero_state_has_zero_residual() {
        let mesh = build_sent(4).unwrap();
        let solver = PhaseFieldSolver::new(
            &mesh,
            MaterialField::uniform(&mesh, params(1e-8, 0.5)),
            BoundaryConditions::tension(&mesh),
            SolverConfig::default(),
        )
        .unwrap();
        let (r, _) = solver.residual_u(&vec![0.0; 50], &[1.0; 25]).unwrap();
        assert!(r.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tangent_matches_finite_differences() {
        let mesh = build_rectangle(3, 3, 1.0, 1.0).unwrap();
        let p = params(1e-3, 0.3);
        let solver =
            PhaseFieldSolver::new(&mesh, MaterialField::uniform(&mesh, p), free_bc(), SolverConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ndof = solver.num_u_dofs();
        for _ in 0..5 {
            let u: Vec<f64> = (0..ndof).map(|_| rng.random_range(-1e-3..1e-3)).collect();
            let d: Vec<f64> = (0..mesh.num_nodes()).map(|_| rng.random_range(0.2..1.0)).collect();
            let du: Vec<f64> = (0..ndof).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k = solver.tangent_u(&u, &d).unwrap();
            let kdu = k.mul_vec(&du);
            let h = 1e-9;
            let up: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + h * b).collect();
            let um: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a - h * b).collect();
            let fp = solver.internal_force(&up, &d).unwrap();
            let fm = solver.internal_force(&um, &d).unwrap();
            let fd: Vec<f64> = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let err: f64 = norm(&kdu.iter().zip(&fd).map(|(a, b)| a - b).collect::<Vec<_>>());
            assert!(err <= 1e-5 * norm(&fd), "rel err {}", err / norm(&fd));
        }
    }

    #[test]
    fn linear_elastic_newton_takes_one_iteration() {
        let mesh = build_sent(8).unwrap();
        let solver = PhaseFieldSolver::new(
            &mesh,
            MaterialField::uniform(&mesh, params(0.0, 0.25)),
            BoundaryConditions::tension(&mesh),
            SolverConfig::default(),
        )
        .unwrap();
        let d = vec![1.0; mesh.num_nodes()];
        let mut u = vec![0.0; solver.num_u_dofs()];
        assert_eq!(solver.solve_u_newton(&mut u, &d, 0.0).unwrap(), 0);
        assert!(u.iter().all(|v| *v == 0.0));
        assert_eq!(solver.solve_u_newton(&mut u, &d, 1e-3).unwrap(), 1);
    }

    #[test]
    fn uniform_history_gives_homogeneous_phase_field() {
        let mesh = build_rectangle(5, 4, 1.0, 0.8).unwrap();
        let kappa = 1e-6;
        let solver = PhaseFieldSolver::new(
            &mesh,
            MaterialField::uniform(&mesh, params(kappa, 0.2)),
            free_bc(),
            SolverConfig::default(),
        )
        .unwrap();
        let h0 = 0.37;
        let d = solver.solve_d(&vec![h0; 4 * mesh.num_elements()]).unwrap();
        let expect = 1.0 / (1.0 + 2.0 * (1.0 - kappa) * h0);
        assert!(d.iter().all(|v| (v - expect).abs() < 1e-12));
        let d0 = solver.solve_d(&vec![0.0; 4 * mesh.num_elements()]).unwrap();
        assert!(d0.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn gamma_integral_constant_fields() {
        let mesh = build_rectangle(4, 2, 2.0, 1.0).unwrap();
        assert!(gamma_integral(&mesh, &[1.0; 15], 0.1).unwrap().abs() < 1e-20);
        let g = gamma_integral(&mesh, &[0.0; 15], 0.1).unwrap();
        assert!((g - 2.0 / 0.2).abs() < 1e-12);
    }

    #[test]
    fn zero_load_step_converges_immediately() {
        let mesh = build_sent(8).unwrap();
        let solver = PhaseFieldSolver::new(
            &mesh,
            MaterialField::uniform(&mesh, params(1e-8, 0.25)),
            BoundaryConditions::tension(&mesh),
            SolverConfig::default(),
        )
        .unwrap();
        let mut state = solver.initial_state().unwrap();
        let before = state.clone();
        let rep = solver.staggered_step(&mut state, 0.0).unwrap();
        assert_eq!(rep.iterations, 1);
        assert_eq!(state.u, before.u);
        assert!(state.d.iter().zip(&before.d).all(|(a, b)| (a - b).abs() < 1e-14));
    }
}
