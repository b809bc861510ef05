#![no_main]

use libfuzzer_sys::fuzz_target;
use tenfill::tns::{format_observations, parse_tns};

// Anything that parses must survive write + parse unchanged, bit for bit.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(obs) = parse_tns(text) else { return };
    let back = parse_tns(&format_observations(&obs)).expect("formatted output parses");
    assert_eq!(back.dims(), obs.dims());
    assert_eq!(back.len(), obs.len());
    for ((ia, va), (ib, vb)) in obs.iter().zip(back.iter()) {
        assert_eq!(ia, ib);
        assert_eq!(va.to_bits(), vb.to_bits());
    }
});
