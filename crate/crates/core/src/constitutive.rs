//! Pointwise material kernels for the isotropic AT-2 model with a spectral
//! tension/compression split.
//!
//! Units follow the FEM modules: moduli in kN/mm², `gc` in kN/mm, lengths in mm.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Eigenvalue gap below which the strain is treated as diagonal in the split.
const DIAGONAL_TOL: f64 = 1e-14;
/// Eigenvalue gap below which the projection-tensor divided difference is
/// replaced by its limit.
const COINCIDENCE_BAND: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("shear modulus must be positive and finite, got {0}")]
    ShearModulus(f64),
    #[error("bulk modulus must be positive and finite, got {0}")]
    BulkModulus(f64),
    #[error("critical energy release rate must be positive and finite, got {0}")]
    Gc(f64),
    #[error("residual stiffness must lie in [0, 1), got {0}")]
    Kappa(f64),
    #[error("regularization length must be positive and finite, got {0}")]
    Ell(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    /// Shear modulus.
    pub mu: f64,
    /// Bulk modulus.
    pub bulk: f64,
    /// Critical energy release rate.
    pub gc: f64,
    /// Residual stiffness.
    pub kappa: f64,
    /// Regularization length.
    pub ell: f64,
}

impl MaterialParams {
    pub fn new(mu: f64, bulk: f64, gc: f64, kappa: f64, ell: f64) -> Result<Self, ParamError> {
        let p = Self { mu, bulk, gc, kappa, ell };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !pos(self.mu) {
            return Err(ParamError::ShearModulus(self.mu));
        }
        if !pos(self.bulk) {
            return Err(ParamError::BulkModulus(self.bulk));
        }
        if !pos(self.gc) {
            return Err(ParamError::Gc(self.gc));
        }
        if !(self.kappa >= 0.0 && self.kappa < 1.0) {
            return Err(ParamError::Kappa(self.kappa));
        }
        if !pos(self.ell) {
            return Err(ParamError::Ell(self.ell));
        }
        Ok(())
    }

    /// First Lamé parameter `K - 2μ/3`.
    pub fn lambda(&self) -> f64 {
        self.bulk - 2.0 * self.mu / 3.0
    }
}

/// Symmetric 2x2 tensor stored as (xx, yy, xy).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Sym2 {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

pub type Strain2 = Sym2;
pub type Stress2 = Sym2;

impl Sym2 {
    pub const ZERO: Sym2 = Sym2 { xx: 0.0, yy: 0.0, xy: 0.0 };

    pub fn new(xx: f64, yy: f64, xy: f64) -> Self {
        Self { xx, yy, xy }
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Self { xx: a, yy: b, xy: 0.0 }
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    /// Double contraction `A : B`.
    pub fn ddot(&self, other: &Sym2) -> f64 {
        self.xx * other.xx + self.yy * other.yy + 2.0 * self.xy * other.xy
    }

    pub fn norm(&self) -> f64 {
        self.ddot(self).sqrt()
    }

    pub fn scale(&self, s: f64) -> Sym2 {
        Sym2 { xx: s * self.xx, yy: s * self.yy, xy: s * self.xy }
    }

    /// Voigt vector with engineering shear, `[xx, yy, 2 xy]`.
    pub fn to_engineering(&self) -> [f64; 3] {
        [self.xx, self.yy, 2.0 * self.xy]
    }

    pub fn from_engineering(v: [f64; 3]) -> Self {
        Self { xx: v[0], yy: v[1], xy: 0.5 * v[2] }
    }

    /// Voigt vector with tensor shear, `[xx, yy, xy]` (stress convention).
    pub fn to_voigt(&self) -> [f64; 3] {
        [self.xx, self.yy, self.xy]
    }

    /// Eigenvalues `(l1 >= l2)` and the rotation angle of the first principal
    /// direction `N1 = (cos t, sin t)`.
    pub fn eigen(&self) -> (f64, f64, f64) {
        let m = 0.5 * (self.xx + self.yy);
        let half_gap = 0.5 * (self.xx - self.yy);
        let r = half_gap.hypot(self.xy);
        let theta = if self.xy.abs() < DIAGONAL_TOL && half_gap.abs() < DIAGONAL_TOL {
            0.0
        } else {
            0.5 * (2.0 * self.xy).atan2(self.xx - self.yy)
        };
        (m + r, m - r, theta)
    }
}

impl std::ops::Add for Sym2 {
    type Output = Sym2;
    fn add(self, o: Sym2) -> Sym2 {
        Sym2 { xx: self.xx + o.xx, yy: self.yy + o.yy, xy: self.xy + o.xy }
    }
}

impl std::ops::Sub for Sym2 {
    type Output = Sym2;
    fn sub(self, o: Sym2) -> Sym2 {
        Sym2 { xx: self.xx - o.xx, yy: self.yy - o.yy, xy: self.xy - o.xy }
    }
}

/// `N ⊗ N` for a unit vector at angle `theta`.
fn dyad(theta: f64) -> Sym2 {
    let (s, c) = theta.sin_cos();
    Sym2 { xx: c * c, yy: s * s, xy: c * s }
}

/// `sym(N1 ⊗ N2)` for the orthonormal pair at angle `theta`.
fn cross_dyad(theta: f64) -> Sym2 {
    let (s, c) = theta.sin_cos();
    // N1 = (c, s), N2 = (-s, c)
    Sym2 { xx: -c * s, yy: s * c, xy: 0.5 * (c * c - s * s) }
}

pub fn macaulay_pos(x: f64) -> f64 {
    0.5 * (x + x.abs())
}

pub fn macaulay_neg(x: f64) -> f64 {
    0.5 * (x - x.abs())
}

/// Small strain `sym(grad u)` from a displacement gradient `g[i][j] = ∂u_i/∂x_j`.
pub fn strain(grad_u: [[f64; 2]; 2]) -> Strain2 {
    Sym2 {
        xx: grad_u[0][0],
        yy: grad_u[1][1],
        xy: 0.5 * (grad_u[0][1] + grad_u[1][0]),
    }
}

/// `(tr ε, tr ε²)`.
pub fn invariants(eps: &Strain2) -> (f64, f64) {
    (eps.trace(), eps.xx * eps.xx + eps.yy * eps.yy + 2.0 * eps.xy * eps.xy)
}

/// Positive and negative parts of the strain from its eigen-decomposition.
pub fn spectral_split(eps: &Strain2) -> (Strain2, Strain2) {
    if eps.xy.abs() < DIAGONAL_TOL {
        return (
            Sym2::diag(macaulay_pos(eps.xx), macaulay_pos(eps.yy)),
            Sym2::diag(macaulay_neg(eps.xx), macaulay_neg(eps.yy)),
        );
    }
    let (l1, l2, theta) = eps.eigen();
    let p1 = dyad(theta);
    let p2 = dyad(theta + std::f64::consts::FRAC_PI_2);
    let plus = p1.scale(macaulay_pos(l1)) + p2.scale(macaulay_pos(l2));
    let minus = p1.scale(macaulay_neg(l1)) + p2.scale(macaulay_neg(l2));
    (plus, minus)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitEnergies {
    pub psi_plus: f64,
    pub psi_minus: f64,
}

/// Undegraded free energy `K/2 I1² − μ(I1²/3 − I2)`.
pub fn free_energy(eps: &Strain2, p: &MaterialParams) -> f64 {
    let (i1, i2) = invariants(eps);
    0.5 * p.bulk * i1 * i1 - p.mu * (i1 * i1 / 3.0 - i2)
}

pub fn split_energies(eps: &Strain2, p: &MaterialParams) -> SplitEnergies {
    let (i1, _) = invariants(eps);
    let (ep, em) = spectral_split(eps);
    let part = |i1s: f64, e: &Strain2| {
        let (_, i2s) = invariants(e);
        (0.5 * p.bulk * i1s * i1s - p.mu * (i1s * i1s / 3.0 - i2s)).max(0.0)
    };
    SplitEnergies {
        psi_plus: part(macaulay_pos(i1), &ep),
        psi_minus: part(macaulay_neg(i1), &em),
    }
}

/// `g(d⁺) = (1−κ) d⁺² + κ` with `d⁺ = clamp(d, 0, 1)`.
pub fn degradation(d: f64, kappa: f64) -> f64 {
    let dp = d.clamp(0.0, 1.0);
    (1.0 - kappa) * dp * dp + kappa
}

/// Degraded bulk energy density `g(d⁺) Ψ⁺ + Ψ⁻`.
pub fn bulk_energy(eps: &Strain2, d: f64, p: &MaterialParams) -> f64 {
    let s = split_energies(eps, p);
    degradation(d, p.kappa) * s.psi_plus + s.psi_minus
}

/// `(σ̃⁺, σ̃⁻)`, the derivatives of the split energies.
pub fn split_stresses(eps: &Strain2, p: &MaterialParams) -> (Stress2, Stress2) {
    let (i1, _) = invariants(eps);
    let (ep, em) = spectral_split(eps);
    let lam = p.lambda();
    let part = |i1s: f64, e: Strain2| Sym2::diag(lam * i1s, lam * i1s) + e.scale(2.0 * p.mu);
    (part(macaulay_pos(i1), ep), part(macaulay_neg(i1), em))
}

/// `σ = g(d⁺) σ̃⁺ + σ̃⁻`.
pub fn stress(eps: &Strain2, d: f64, p: &MaterialParams) -> Stress2 {
    let (sp, sm) = split_stresses(eps, p);
    sp.scale(degradation(d, p.kappa)) + sm
}

/// Undegraded isotropic tangent in Voigt form (stress `[xx,yy,xy]` against
/// engineering strain `[xx,yy,2xy]`).
pub fn elastic_tangent(p: &MaterialParams) -> [[f64; 3]; 3] {
    let lam = p.lambda();
    let m = p.mu;
    [[lam + 2.0 * m, lam, 0.0], [lam, lam + 2.0 * m, 0.0], [0.0, 0.0, m]]
}

fn heaviside_pos(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        0.0
    } else {
        0.5
    }
}

/// Consistent tangent `∂σ/∂ε` in Voigt form.
///
/// Away from coincident principal strains this is the exact derivative of
/// [`stress`]. When the eigenvalues coincide near zero the projection tensor
/// is undefined and the undegraded tangent scaled by `g(d⁺)` is returned.
pub fn tangent(eps: &Strain2, d: f64, p: &MaterialParams) -> [[f64; 3]; 3] {
    let g = degradation(d, p.kappa);
    let (l1, l2, theta) = eps.eigen();
    let gap = l1 - l2;
    let mean = 0.5 * (l1 + l2);

    if gap.abs() < COINCIDENCE_BAND && mean.abs() < COINCIDENCE_BAND {
        let mut c = elastic_tangent(p);
        for row in c.iter_mut() {
            for v in row.iter_mut() {
                *v *= g;
            }
        }
        return c;
    }

    let hp1 = heaviside_pos(l1);
    let hp2 = heaviside_pos(l2);
    let (q_plus, q_minus) = if gap.abs() < COINCIDENCE_BAND {
        let h = heaviside_pos(mean);
        (h, 1.0 - h)
    } else {
        (
            (macaulay_pos(l1) - macaulay_pos(l2)) / gap,
            (macaulay_neg(l1) - macaulay_neg(l2)) / gap,
        )
    };
    let hi1 = heaviside_pos(eps.trace());

    let n1 = dyad(theta);
    let n2 = dyad(theta + std::f64::consts::FRAC_PI_2);
    let c12 = cross_dyad(theta);
    let lam = p.lambda();

    let mut out = [[0.0; 3]; 3];
    let basis = [Sym2::new(1.0, 0.0, 0.0), Sym2::new(0.0, 1.0, 0.0), Sym2::new(0.0, 0.0, 0.5)];
    for (k, de) in basis.iter().enumerate() {
        let dl1 = de.ddot(&n1);
        let dl2 = de.ddot(&n2);
        // N1·dε·N2 = dε : sym(N1⊗N2)
        let d12 = de.ddot(&c12);
        let tr = de.trace();

        let dplus = n1.scale(hp1 * dl1) + n2.scale(hp2 * dl2) + c12.scale(2.0 * q_plus * d12);
        let dminus =
            n1.scale((1.0 - hp1) * dl1) + n2.scale((1.0 - hp2) * dl2) + c12.scale(2.0 * q_minus * d12);

        let sp = Sym2::diag(lam * hi1 * tr, lam * hi1 * tr) + dplus.scale(2.0 * p.mu);
        let sm = Sym2::diag(lam * (1.0 - hi1) * tr, lam * (1.0 - hi1) * tr) + dminus.scale(2.0 * p.mu);
        let ds = sp.scale(g) + sm;
        out[0][k] = ds.xx;
        out[1][k] = ds.yy;
        out[2][k] = ds.xy;
    }
    out
}

/// `D̃ = ℓ Ψ⁺ / Gc`.
pub fn crack_driving(psi_plus: f64, p: &MaterialParams) -> f64 {
    p.ell * psi_plus / p.gc
}

/// Running maximum of the crack driving state.
pub fn update_history(h_old: f64, d_tilde: f64) -> f64 {
    h_old.max(d_tilde)
}
