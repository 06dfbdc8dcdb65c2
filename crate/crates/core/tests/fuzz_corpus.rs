//! Replays the checked-in fuzz seeds through the decoders.

use pfbayes::experiments::{ExperimentConfig, Metadata};
use pfbayes::randomfield::{decode_basis, encode_basis};
use pfbayes::solver::LoadDispCurve;
use std::path::{Path, PathBuf};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

fn name(p: &Path) -> &str {
    p.file_stem().unwrap().to_str().unwrap()
}

#[test]
fn curve_seeds() {
    for (p, bytes) in seeds("curve_csv") {
        let r = LoadDispCurve::from_csv(std::str::from_utf8(&bytes).unwrap());
        let should_fail = ["bad_header", "decreasing", "nan"].contains(&name(&p));
        assert_eq!(r.is_err(), should_fail, "{}", p.display());
        if let Ok(c) = r {
            assert_eq!(LoadDispCurve::from_csv(&c.to_csv()).unwrap().steps, c.steps);
        }
    }
}

#[test]
fn config_seeds() {
    for (p, bytes) in seeds("experiment_config") {
        let cfg = ExperimentConfig::from_toml(std::str::from_utf8(&bytes).unwrap())
            .unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn metadata_seeds() {
    for (p, bytes) in seeds("metadata_json") {
        let meta: Metadata = serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        meta.config.validate().unwrap();
    }
}

#[test]
fn kl_seeds() {
    for (p, bytes) in seeds("kl_basis") {
        match decode_basis(&bytes) {
            Ok(b) => assert_eq!(decode_basis(&encode_basis(&b)).unwrap(), b),
            Err(_) => assert_eq!(name(&p), "truncated", "{}", p.display()),
        }
    }
}
