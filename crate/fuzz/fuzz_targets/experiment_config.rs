#![no_main]

use libfuzzer_sys::fuzz_target;
use pfbayes::experiments::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::from_toml(text) {
        let _ = cfg.validate();
        let _ = cfg.validate_inversion();
        let _ = cfg.validate_homogeneous();
        let _ = cfg.validate_sweep();
    }
});
