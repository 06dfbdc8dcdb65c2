#![no_main]

use libfuzzer_sys::fuzz_target;
use pfbayes::experiments::Metadata;

fuzz_target!(|data: &[u8]| {
    if let Ok(meta) = serde_json::from_slice::<Metadata>(data) {
        let _ = meta.config.validate();
    }
});
