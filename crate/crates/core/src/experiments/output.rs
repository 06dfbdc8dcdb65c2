use super::config::ExperimentConfig;
use super::ExperimentError;
use crate::constitutive::MaterialParams;
use crate::mesh::{Geometry, Mesh2D};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Crate version plus a digest of the library sources it was built from.
pub fn version_hash() -> String {
    format!("{}+{}", env!("CARGO_PKG_VERSION"), env!("PFBAYES_SOURCE_HASH"))
}

/// Everything needed to rerun the command that produced a directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub command: String,
    pub geometry: Geometry,
    pub n: usize,
    pub h: f64,
    pub du_bar: f64,
    pub params: MaterialParams,
    pub seed: u64,
    pub version: String,
    pub config: ExperimentConfig,
}

impl Metadata {
    pub fn new(command: &str, cfg: &ExperimentConfig, params: MaterialParams) -> Self {
        Self {
            command: command.to_string(),
            geometry: cfg.geometry,
            n: cfg.n,
            h: cfg.h(),
            du_bar: cfg.solver.du_bar,
            params,
            seed: cfg.seed,
            version: version_hash(),
            config: cfg.clone(),
        }
    }

    pub fn read(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Reference(format!("{}: {e}", path.display())))
    }
}

/// Sidecar path for a curve file.
pub fn metadata_path_for(curve: &Path) -> PathBuf {
    curve.with_file_name(METADATA_FILE)
}

pub const METADATA_FILE: &str = "metadata.json";

/// Legacy ASCII VTK unstructured grid with nodal `d` and `u`. Void elements
/// are left out of the cell list.
pub fn vtk_string(mesh: &Mesh2D, u: &[f64], d: &[f64], title: &str) -> String {
    let nn = mesh.num_nodes();
    let cells: Vec<&[usize; 4]> = mesh.elements.iter().zip(&mesh.active).filter(|(_, a)| **a).map(|(c, _)| c).collect();
    let mut s = String::with_capacity(64 * nn);
    s.push_str("# vtk DataFile Version 3.0\n");
    let title: String = title.chars().filter(|c| *c != '\n').take(255).collect();
    s.push_str(&title);
    s.push_str("\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {nn} double");
    for p in &mesh.nodes {
        let _ = writeln!(s, "{:e} {:e} 0", p[0], p[1]);
    }
    let _ = writeln!(s, "CELLS {} {}", cells.len(), 5 * cells.len());
    for c in &cells {
        // counter-clockwise corner order for VTK_QUAD
        let _ = writeln!(s, "4 {} {} {} {}", c[0], c[1], c[2], c[3]);
    }
    let _ = writeln!(s, "CELL_TYPES {}", cells.len());
    for _ in &cells {
        s.push_str("9\n");
    }
    let _ = writeln!(s, "POINT_DATA {nn}");
    s.push_str("SCALARS d double 1\nLOOKUP_TABLE default\n");
    for v in d {
        let _ = writeln!(s, "{v:e}");
    }
    s.push_str("VECTORS u double\n");
    for k in 0..nn {
        let _ = writeln!(s, "{:e} {:e} 0", u[2 * k], u[2 * k + 1]);
    }
    s
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), ExperimentError> {
    std::fs::write(path, contents).map_err(|e| ExperimentError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    write_file(path, text + "\n")
}

pub fn create_dir(path: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(path).map_err(|e| ExperimentError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_sent;

    #[test]
    fn vtk_layout() {
        let mesh = build_sent(2).unwrap();
        let u: Vec<f64> = (0..18).map(|k| k as f64).collect();
        let d = vec![1.0; 9];
        let s = vtk_string(&mesh, &u, &d, "t");
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 3.0");
        assert_eq!(lines[2], "ASCII");
        assert_eq!(lines[3], "DATASET UNSTRUCTURED_GRID");
        assert_eq!(lines[4], "POINTS 9 double");
        assert!(s.contains("CELLS 4 20\n"));
        assert!(s.contains("CELL_TYPES 4\n9\n9\n9\n9\n"));
        assert!(s.contains("POINT_DATA 9\nSCALARS d double 1\nLOOKUP_TABLE default\n"));
        assert!(s.ends_with("1.6e1 1.7e1 0\n"));
    }

    #[test]
    fn version_has_digest() {
        let v = version_hash();
        assert!(v.starts_with(env!("CARGO_PKG_VERSION")));
        assert_eq!(v.split('+').nth(1).unwrap().len(), 16);
    }
}
