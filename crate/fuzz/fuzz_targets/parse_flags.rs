#![no_main]

use libfuzzer_sys::fuzz_target;
use tenfill::flags::{parse_dims, parse_list, parse_ratios};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(dims) = parse_dims(text) {
        assert!(!dims.is_empty() && dims.iter().all(|&n| n >= 1));
    }
    if let Ok(ratios) = parse_ratios(text) {
        assert!(ratios.iter().all(|&r| r > 0.0 && r <= 1.0));
    }
    let _ = parse_list::<usize>(text);
});
