//! Closed-form response of a homogeneous bar under monotone tension.
//!
//! Everything here works in SI units (Pa, N/m, m); the finite-element modules
//! use kN and mm. Conversion helpers are at the bottom.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum HomogeneousError {
    #[error("{name} must be positive and finite, got {value}")]
    NotPositive { name: &'static str, value: f64 },
    #[error("kappa must lie in [0, 1], got {0}")]
    Kappa(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Homogeneous1DParams {
    /// Young's modulus (Pa).
    #[serde(rename = "E")]
    pub e_mod: f64,
    /// Critical energy release rate (N/m).
    pub gc: f64,
    /// Length scale (m).
    pub ell: f64,
    pub kappa: f64,
}

impl Homogeneous1DParams {
    /// Plain concrete: E = 29 GPa, Gc = 70 N/m, ℓ = 10.5 mm.
    pub fn concrete(kappa: f64) -> Self {
        Self { e_mod: 29e9, gc: 70.0, ell: 0.0105, kappa }
    }

    pub fn validate(&self) -> Result<(), HomogeneousError> {
        for (name, value) in [("E", self.e_mod), ("Gc", self.gc), ("ell", self.ell)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(HomogeneousError::NotPositive { name, value });
            }
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(HomogeneousError::Kappa(self.kappa));
        }
        Ok(())
    }

    /// `√(Gc / (3ℓE))`, the strain at peak stress when κ = 0.
    pub fn eps_star_closed_form(&self) -> f64 {
        (self.gc / (3.0 * self.ell * self.e_mod)).sqrt()
    }

    /// `(9/16) √(E Gc / (3ℓ))`, the peak stress when κ = 0.
    pub fn sigma_c_closed_form(&self) -> f64 {
        9.0 / 16.0 * (self.e_mod * self.gc / (3.0 * self.ell)).sqrt()
    }
}

/// `D̃ = ℓ (Eε²/2) / Gc`.
pub fn crack_driving(eps: f64, p: &Homogeneous1DParams) -> f64 {
    p.ell * (0.5 * p.e_mod * eps * eps) / p.gc
}

pub fn d_homo(eps: f64, p: &Homogeneous1DParams) -> f64 {
    1.0 / (1.0 + 2.0 * (1.0 - p.kappa) * crack_driving(eps, p))
}

/// `((1−κ)/(1+2(1−κ)D̃)² + κ) E ε`.
pub fn sigma_homo(eps: f64, p: &Homogeneous1DParams) -> f64 {
    let s = 1.0 + 2.0 * (1.0 - p.kappa) * crack_driving(eps, p);
    ((1.0 - p.kappa) / (s * s) + p.kappa) * p.e_mod * eps
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Maximize `f` on `[a, b]` by golden-section search down to a bracket of
/// `rel_tol * b`.
pub fn golden_section_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, rel_tol: f64) -> f64 {
    let tol = rel_tol * b.abs().max(f64::MIN_POSITIVE);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        if b - a <= 0.0 {
            break;
        }
    }
    0.5 * (a + b)
}

/// Strain and stress at the maximum of [`sigma_homo`] on `(0, 10 ε*]`.
pub fn peak_stress(p: &Homogeneous1DParams) -> (f64, f64) {
    peak_stress_in(p, 10.0 * p.eps_star_closed_form())
}

/// As [`peak_stress`] with an explicit upper bracket.
pub fn peak_stress_in(p: &Homogeneous1DParams, upper: f64) -> (f64, f64) {
    let eps = golden_section_max(|e| sigma_homo(e, p), 0.0, upper, 1e-12);
    (eps, sigma_homo(eps, p))
}

/// `(ε, σ)` pairs on `n + 1` evenly spaced strains in `[0, eps_max]`.
pub fn stress_strain_curve(p: &Homogeneous1DParams, eps_max: f64, n: usize) -> Vec<(f64, f64)> {
    (0..=n)
        .map(|k| {
            let e = eps_max * k as f64 / n.max(1) as f64;
            (e, sigma_homo(e, p))
        })
        .collect()
}

/// `sup |σ_κ(ε) − σ_0(ε)|` over `n + 1` evenly spaced strains in `[0, eps_max]`.
pub fn kappa_deviation(p: &Homogeneous1DParams, eps_max: f64, n: usize) -> f64 {
    let p0 = Homogeneous1DParams { kappa: 0.0, ..*p };
    stress_strain_curve(p, eps_max, n)
        .into_iter()
        .map(|(e, s)| (s - sigma_homo(e, &p0)).abs())
        .fold(0.0, f64::max)
}

pub const PA_PER_KN_PER_MM2: f64 = 1e9;
pub const N_PER_M_PER_KN_PER_MM: f64 = 1e6;
pub const M_PER_MM: f64 = 1e-3;

pub fn pa_to_kn_per_mm2(x: f64) -> f64 {
    x / PA_PER_KN_PER_MM2
}

pub fn kn_per_mm2_to_pa(x: f64) -> f64 {
    x * PA_PER_KN_PER_MM2
}

pub fn n_per_m_to_kn_per_mm(x: f64) -> f64 {
    x / N_PER_M_PER_KN_PER_MM
}

pub fn kn_per_mm_to_n_per_m(x: f64) -> f64 {
    x * N_PER_M_PER_KN_PER_MM
}

pub fn m_to_mm(x: f64) -> f64 {
    x / M_PER_MM
}

pub fn mm_to_m(x: f64) -> f64 {
    x * M_PER_MM
}

/// Young's modulus from shear and bulk moduli.
pub fn youngs_modulus(mu: f64, bulk: f64) -> f64 {
    9.0 * bulk * mu / (3.0 * bulk + mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn d_homo_examples() {
        let p = Homogeneous1DParams::concrete(0.0);
        assert_eq!(d_homo(0.0, &p), 1.0);
        // D̃ = 0.5 at ε = √(Gc/(ℓE))
        let e = (p.gc / (p.ell * p.e_mod)).sqrt();
        assert!((d_homo(e, &p) - 0.5).abs() < 1e-14);
        let es = p.eps_star_closed_form();
        assert!((es - 2.768e-4).abs() < 5e-8);
        assert!((crack_driving(es, &p) - 1.0 / 6.0).abs() < 1e-14);
        assert!((d_homo(es, &p) - 0.75).abs() < 1e-14);
    }

    #[test]
    fn sigma_homo_examples() {
        let p = Homogeneous1DParams::concrete(0.0);
        assert_eq!(sigma_homo(0.0, &p), 0.0);
        let es = p.eps_star_closed_form();
        assert!(rel(sigma_homo(es, &p), 9.0 / 16.0 * p.e_mod * es) < 1e-14);
        let rigid = Homogeneous1DParams { kappa: 1.0, ..p };
        assert_eq!(sigma_homo(1e-3, &rigid), rigid.e_mod * 1e-3);
    }

    #[test]
    fn peak_matches_closed_form() {
        let p = Homogeneous1DParams::concrete(0.0);
        let (eps, sig) = peak_stress(&p);
        assert!((sig - 4.516e6).abs() < 1e3, "{sig}");
        assert!(rel(sig, p.sigma_c_closed_form()) < 1e-10);
        assert!(rel(eps, p.eps_star_closed_form()) < 1e-6);
        let tiny = Homogeneous1DParams::concrete(1e-8);
        assert!(rel(peak_stress(&tiny).1, sig) < 1e-6);
        let stiff = Homogeneous1DParams { e_mod: 4.0 * p.e_mod, ..p };
        assert!(rel(peak_stress(&stiff).1, 2.0 * sig) < 1e-10);
    }

    #[test]
    fn peak_is_bracket_invariant() {
        let p = Homogeneous1DParams::concrete(0.0);
        let es = p.eps_star_closed_form();
        let (_, a) = peak_stress_in(&p, 2.0 * es);
        let (_, b) = peak_stress_in(&p, 7.3 * es);
        assert!(rel(a, b) < 1e-10);
    }

    /// To first order in κ, `σ_κ − σ_0 = κ E ε (1 − 1/s² + 4D̃/s³)` with
    /// `s = 1 + 2D̃`. At 3ε* this is `(16/3)(1 − 1/16 + 6/64) κ σc = 5.5 κ σc`,
    /// which is also the sup over `[0, 3ε*]`.
    #[test]
    fn kappa_deviation_bound() {
        for kappa in [1e-4, 1e-6, 1e-8] {
            let p = Homogeneous1DParams::concrete(kappa);
            let sc = p.sigma_c_closed_form();
            let dev = kappa_deviation(&p, 3.0 * p.eps_star_closed_form(), 3000);
            assert!((dev / sc / kappa - 5.5).abs() < 1e-3, "kappa {kappa}: {}", dev / sc);
        }
    }

    #[test]
    fn unit_conversions() {
        assert_eq!(pa_to_kn_per_mm2(29e9), 29.0);
        assert_eq!(kn_per_mm2_to_pa(4.5e-3), 4.5e6);
        assert!((n_per_m_to_kn_per_mm(2.7e3) - 2.7e-3).abs() < 1e-18);
        assert_eq!(kn_per_mm_to_n_per_m(2.7e-3), 2.7e3);
        assert_eq!(m_to_mm(0.0105), 10.5);
        assert_eq!(mm_to_m(10.5), 0.0105);
        // E = 2μ(1+ν) with ν from (K, μ)
        let (mu, k) = (80.0, 170.0);
        let nu = (3.0 * k - 2.0 * mu) / (2.0 * (3.0 * k + mu));
        assert!(rel(youngs_modulus(mu, k), 2.0 * mu * (1.0 + nu)) < 1e-14);
    }

    proptest! {
        #[test]
        fn single_interior_maximum(scale in 0.5f64..2.0, ratio in 0.01f64..0.99) {
            let p = Homogeneous1DParams { e_mod: 29e9 * scale, ..Homogeneous1DParams::concrete(0.0) };
            let es = p.eps_star_closed_form();
            // increasing before ε*, decreasing after
            let lo = ratio * es;
            let hi = es / ratio;
            prop_assert!(sigma_homo(lo, &p) < sigma_homo(lo * 1.001, &p));
            prop_assert!(sigma_homo(hi, &p) > sigma_homo(hi * 1.001, &p));
            let d = d_homo(lo, &p);
            prop_assert!(d > 0.0 && d <= 1.0);
        }
    }
}
