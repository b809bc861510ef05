#![no_main]

use libfuzzer_sys::fuzz_target;
use tenfill::tns::parse_tns;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(obs) = parse_tns(text) {
        assert!(!obs.is_empty());
        for (idx, _) in obs.iter() {
            assert!(idx.iter().zip(obs.dims()).all(|(&i, &n)| i >= 1 && i <= n));
        }
    }
});
