#![no_main]

use libfuzzer_sys::fuzz_target;
use pfbayes::solver::LoadDispCurve;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(curve) = LoadDispCurve::from_csv(text) {
        assert!(!curve.is_empty());
        assert!(curve.steps.windows(2).all(|w| w[0].u_bar < w[1].u_bar));
        // what we write we can read back
        let again = LoadDispCurve::from_csv(&curve.to_csv()).expect("round trip");
        assert_eq!(again.steps, curve.steps);
    }
});
