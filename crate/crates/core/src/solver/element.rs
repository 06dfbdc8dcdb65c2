//! Bilinear quadrilateral with 2x2 Gauss quadrature.

const G: f64 = 0.577_350_269_189_625_8; // 1/√3

/// Reference coordinates of the Gauss points, counterclockwise.
pub const GAUSS_POINTS: [[f64; 2]; 4] = [[-G, -G], [G, -G], [G, G], [-G, G]];

const NODE_SIGNS: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

pub fn shape(xi: f64, eta: f64) -> [f64; 4] {
    NODE_SIGNS.map(|s| 0.25 * (1.0 + s[0] * xi) * (1.0 + s[1] * eta))
}

pub fn shape_derivatives(xi: f64, eta: f64) -> [[f64; 2]; 4] {
    NODE_SIGNS.map(|s| [0.25 * s[0] * (1.0 + s[1] * eta), 0.25 * s[1] * (1.0 + s[0] * xi)])
}

/// Shape values, physical gradients and integration weights at the four
/// Gauss points of one element.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    pub n: [[f64; 4]; 4],
    pub grad: [[[f64; 2]; 4]; 4],
    /// Gauss weight times Jacobian determinant.
    pub wdet: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonPositiveJacobian {
    pub det: f64,
}

impl ElementGeometry {
    pub fn new(coords: &[[f64; 2]; 4]) -> Result<Self, NonPositiveJacobian> {
        let mut n = [[0.0; 4]; 4];
        let mut grad = [[[0.0; 2]; 4]; 4];
        let mut wdet = [0.0; 4];
        for (q, gp) in GAUSS_POINTS.iter().enumerate() {
            let dn = shape_derivatives(gp[0], gp[1]);
            // J[a][b] = ∂x_a/∂ξ_b
            let mut j = [[0.0; 2]; 2];
            for (k, c) in coords.iter().enumerate() {
                for a in 0..2 {
                    for b in 0..2 {
                        j[a][b] += c[a] * dn[k][b];
                    }
                }
            }
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if !(det > 0.0) {
                return Err(NonPositiveJacobian { det });
            }
            let inv = [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]];
            for k in 0..4 {
                // ∂N/∂x_a = Σ_b ∂N/∂ξ_b ∂ξ_b/∂x_a
                grad[q][k] = [
                    dn[k][0] * inv[0][0] + dn[k][1] * inv[1][0],
                    dn[k][0] * inv[0][1] + dn[k][1] * inv[1][1],
                ];
            }
            n[q] = shape(gp[0], gp[1]);
            wdet[q] = det;
        }
        Ok(Self { n, grad, wdet })
    }

    pub fn area(&self) -> f64 {
        self.wdet.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity() {
        for gp in GAUSS_POINTS {
            let s: f64 = shape(gp[0], gp[1]).iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
            let ds = shape_derivatives(gp[0], gp[1]);
            assert!(ds.iter().map(|d| d[0]).sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn rectangle_geometry() {
        let g = ElementGeometry::new(&[[1.0, 2.0], [3.0, 2.0], [3.0, 2.5], [1.0, 2.5]]).unwrap();
        assert!((g.area() - 1.0).abs() < 1e-14);
        // gradient of the linear field x reproduces (1, 0)
        let xs = [1.0, 3.0, 3.0, 1.0];
        for q in 0..4 {
            let gx: f64 = (0..4).map(|k| g.grad[q][k][0] * xs[k]).sum();
            let gy: f64 = (0..4).map(|k| g.grad[q][k][1] * xs[k]).sum();
            assert!((gx - 1.0).abs() < 1e-14 && gy.abs() < 1e-14);
        }
    }

    #[test]
    fn clockwise_is_rejected() {
        assert!(ElementGeometry::new(&[[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]).is_err());
    }
}
