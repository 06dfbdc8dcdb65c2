//! Structured quadrilateral meshes for the three benchmark specimens.
//!
//! Every mesh is a tensor-product lattice of axis-aligned bilinear quads with
//! row-major node numbering (`j * (nx + 1) + i`). Pre-cracks are carried as a
//! node set on which the phase field is pinned to zero; voids are carved by
//! switching elements off.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Geometric tolerance used when snapping coordinates to lattice lines.
const SNAP_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("SENT mesh needs an even element count >= 2 so the notch at y=0.5 lies on a grid line, got n={0}")]
    SentResolution(usize),
    #[error("DENT mesh with n={n} does not align {what} (value {value} mm) with a grid line")]
    DentMisaligned { n: usize, what: &'static str, value: f64 },
    #[error("voids mesh needs n >= 10 to resolve the voids, got n={0}")]
    VoidsResolution(usize),
    #[error("rectangle mesh needs at least one element per direction and positive extents")]
    EmptyRectangle,
}

/// Which specimen a mesh was generated for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    Sent,
    Dent,
    Voids,
    Rectangle,
}

impl std::fmt::Display for Geometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Geometry::Sent => "sent",
            Geometry::Dent => "dent",
            Geometry::Voids => "voids",
            Geometry::Rectangle => "rectangle",
        };
        f.write_str(s)
    }
}

/// Named boundary node sets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundarySets {
    pub bottom: Vec<usize>,
    pub top: Vec<usize>,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

/// Lattice description shared by all generated meshes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    pub nx: usize,
    pub ny: usize,
    pub origin: [f64; 2],
    pub hx: f64,
    pub hy: f64,
}

impl Lattice {
    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn node_ij(&self, node: usize) -> (usize, usize) {
        (node % (self.nx + 1), node / (self.nx + 1))
    }
}

/// A circular hole carved out of the voids specimen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Void {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Vertical positions of the two DENT notches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DentLayout {
    pub left_notch_y: f64,
    pub right_notch_y: f64,
    pub notch_length: f64,
}

impl Default for DentLayout {
    fn default() -> Self {
        Self { left_notch_y: 3.5, right_notch_y: 5.5, notch_length: 5.0 }
    }
}

pub const DENT_WIDTH: f64 = 20.0;
pub const DENT_HEIGHT: f64 = 10.0;

/// The two holes of the voids specimen.
pub fn default_voids() -> [Void; 2] {
    [
        Void { center: [0.21, 0.197], radius: 0.247 },
        Void { center: [0.7, 0.197], radius: 0.0806 },
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh2D {
    pub geometry: Geometry,
    pub nodes: Vec<[f64; 2]>,
    /// Counterclockwise connectivity: (i,j), (i+1,j), (i+1,j+1), (i,j+1).
    pub elements: Vec<[usize; 4]>,
    pub boundary: BoundarySets,
    /// Nodes where the phase field is fixed to zero (initial crack).
    pub crack_nodes: Vec<usize>,
    /// `false` for elements removed to carve voids.
    pub active: Vec<bool>,
    /// Nominal element edge length (mm).
    pub h: f64,
    pub lattice: Lattice,
}

impl Mesh2D {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn num_active_elements(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    /// Nodes touched by at least one active element.
    pub fn active_nodes(&self) -> Vec<bool> {
        let mut mask = vec![false; self.nodes.len()];
        for (conn, _) in self.elements.iter().zip(&self.active).filter(|(_, a)| **a) {
            for &n in conn {
                mask[n] = true;
            }
        }
        mask
    }

    pub fn crack_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.nodes.len()];
        for &n in &self.crack_nodes {
            mask[n] = true;
        }
        mask
    }

    pub fn element_area(&self, e: usize) -> f64 {
        let [a, b, c, d] = self.elements[e].map(|n| self.nodes[n]);
        // shoelace
        0.5 * ((a[0] * b[1] - b[0] * a[1])
            + (b[0] * c[1] - c[0] * b[1])
            + (c[0] * d[1] - d[0] * c[1])
            + (d[0] * a[1] - a[0] * d[1]))
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let conn = self.elements[e];
        let mut c = [0.0; 2];
        for n in conn {
            c[0] += 0.25 * self.nodes[n][0];
            c[1] += 0.25 * self.nodes[n][1];
        }
        c
    }

    pub fn domain_area(&self) -> f64 {
        let l = &self.lattice;
        (l.nx as f64 * l.hx) * (l.ny as f64 * l.hy)
    }

    pub fn active_area(&self) -> f64 {
        (0..self.num_elements())
            .filter(|&e| self.active[e])
            .map(|e| self.element_area(e))
            .sum()
    }

    /// Content hash over geometry, node coordinates, connectivity and flags.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.geometry.to_string().as_bytes());
        for p in &self.nodes {
            hasher.update(p[0].to_le_bytes());
            hasher.update(p[1].to_le_bytes());
        }
        for (conn, act) in self.elements.iter().zip(&self.active) {
            for n in conn {
                hasher.update((*n as u64).to_le_bytes());
            }
            hasher.update([*act as u8]);
        }
        for n in &self.crack_nodes {
            hasher.update((*n as u64).to_le_bytes());
        }
        hasher.finalize().into()
    }
}

/// Structured `nx` x `ny` grid over `[0, lx] x [0, ly]` with boundary tags and
/// no crack or voids.
pub fn build_rectangle(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Mesh2D, MeshError> {
    build_rectangle_at(nx, ny, [0.0, 0.0], lx, ly)
}

pub fn build_rectangle_at(
    nx: usize,
    ny: usize,
    origin: [f64; 2],
    lx: f64,
    ly: f64,
) -> Result<Mesh2D, MeshError> {
    if nx == 0 || ny == 0 || !(lx > 0.0) || !(ly > 0.0) {
        return Err(MeshError::EmptyRectangle);
    }
    let hx = lx / nx as f64;
    let hy = ly / ny as f64;
    let lattice = Lattice { nx, ny, origin, hx, hy };

    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            // exact endpoints regardless of accumulated rounding
            let x = if i == nx { origin[0] + lx } else { origin[0] + i as f64 * hx };
            let y = if j == ny { origin[1] + ly } else { origin[1] + j as f64 * hy };
            nodes.push([x, y]);
        }
    }

    let mut elements = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let n0 = lattice.node_index(i, j);
            let n1 = lattice.node_index(i + 1, j);
            let n2 = lattice.node_index(i + 1, j + 1);
            let n3 = lattice.node_index(i, j + 1);
            elements.push([n0, n1, n2, n3]);
        }
    }

    let boundary = BoundarySets {
        bottom: (0..=nx).map(|i| lattice.node_index(i, 0)).collect(),
        top: (0..=nx).map(|i| lattice.node_index(i, ny)).collect(),
        left: (0..=ny).map(|j| lattice.node_index(0, j)).collect(),
        right: (0..=ny).map(|j| lattice.node_index(nx, j)).collect(),
    };

    Ok(Mesh2D {
        geometry: Geometry::Rectangle,
        active: vec![true; elements.len()],
        nodes,
        elements,
        boundary,
        crack_nodes: Vec::new(),
        h: hx.max(hy),
        lattice,
    })
}

/// Unit square with a horizontal notch from the left edge to the center.
pub fn build_sent(n: usize) -> Result<Mesh2D, MeshError> {
    if n < 2 || n % 2 != 0 {
        return Err(MeshError::SentResolution(n));
    }
    let mut mesh = build_rectangle(n, n, 1.0, 1.0)?;
    mesh.geometry = Geometry::Sent;
    let j = n / 2;
    mesh.crack_nodes = (0..=n / 2).map(|i| mesh.lattice.node_index(i, j)).collect();
    Ok(mesh)
}

/// 20 x 10 mm plate with two edge notches, `n` elements per mm.
pub fn build_dent(n: usize) -> Result<Mesh2D, MeshError> {
    build_dent_with(n, DentLayout::default())
}

pub fn build_dent_with(n: usize, layout: DentLayout) -> Result<Mesh2D, MeshError> {
    let grid_index = |what: &'static str, value: f64| -> Result<usize, MeshError> {
        let scaled = value * n as f64;
        let idx = scaled.round();
        if n == 0 || (scaled - idx).abs() > SNAP_TOL * scaled.abs().max(1.0) || idx < 0.0 {
            return Err(MeshError::DentMisaligned { n, what, value });
        }
        Ok(idx as usize)
    };
    let jl = grid_index("left notch height", layout.left_notch_y)?;
    let jr = grid_index("right notch height", layout.right_notch_y)?;
    let len = grid_index("notch length", layout.notch_length)?;
    let nx = 20 * n;
    let ny = 10 * n;
    if jl > ny || jr > ny || len > nx {
        return Err(MeshError::DentMisaligned { n, what: "notch outside plate", value: layout.notch_length });
    }

    let mut mesh = build_rectangle(nx, ny, DENT_WIDTH, DENT_HEIGHT)?;
    mesh.geometry = Geometry::Dent;
    let lat = mesh.lattice;
    let mut crack: Vec<usize> = (0..=len).map(|i| lat.node_index(i, jl)).collect();
    crack.extend((nx - len..=nx).map(|i| lat.node_index(i, jr)));
    crack.sort_unstable();
    crack.dedup();
    mesh.crack_nodes = crack;
    mesh.h = 1.0 / n as f64;
    Ok(mesh)
}

/// Unit square with two circular voids and no pre-crack.
pub fn build_voids(n: usize) -> Result<Mesh2D, MeshError> {
    build_voids_with(n, &default_voids())
}

pub fn build_voids_with(n: usize, voids: &[Void]) -> Result<Mesh2D, MeshError> {
    if n < 10 {
        return Err(MeshError::VoidsResolution(n));
    }
    let mut mesh = build_rectangle(n, n, 1.0, 1.0)?;
    mesh.geometry = Geometry::Voids;
    for e in 0..mesh.num_elements() {
        let c = mesh.centroid(e);
        let inside = voids.iter().any(|v| {
            let dx = c[0] - v.center[0];
            let dy = c[1] - v.center[1];
            dx * dx + dy * dy < v.radius * v.radius
        });
        mesh.active[e] = !inside;
    }
    Ok(mesh)
}
