#![no_main]

use libfuzzer_sys::fuzz_target;
use tenfill::report::{parse_csv, CompareRow, RankStudyRow, SweepRow};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_csv::<SweepRow>(text);
    let _ = parse_csv::<RankStudyRow>(text);
    let _ = parse_csv::<CompareRow>(text);
});
