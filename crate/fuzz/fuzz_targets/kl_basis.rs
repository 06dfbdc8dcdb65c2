#![no_main]

use libfuzzer_sys::fuzz_target;
use pfbayes::randomfield::{decode_basis, encode_basis};

fuzz_target!(|data: &[u8]| {
    if let Ok(basis) = decode_basis(data) {
        let bytes = encode_basis(&basis);
        assert_eq!(decode_basis(&bytes).expect("re-decode"), basis);
    }
});
