use pfbayes::experiments::ExperimentConfig;
use std::path::Path;

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_none_or(|e| e != "toml") {
            continue;
        }
        let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let name = path.file_stem().unwrap().to_str().unwrap();
        let r = if name.ends_with("invert") {
            cfg.validate_inversion()
        } else if name.starts_with("homogeneous") {
            cfg.validate_homogeneous()
        } else if name.starts_with("sweep") {
            cfg.validate_sweep().map(|_| ())
        } else {
            cfg.validate()
        };
        r.unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        cfg.build_mesh().unwrap();
        seen += 1;
    }
    assert!(seen >= 6);
}
