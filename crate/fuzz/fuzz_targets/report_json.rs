#![no_main]

use libfuzzer_sys::fuzz_target;
use tenfill::report::ExperimentReport;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = ExperimentReport::from_json(text) {
        // A decoded report is valid, so it encodes and decodes to itself.
        let again = ExperimentReport::from_json(&report.to_json().unwrap()).unwrap();
        assert_eq!(again, report);
    }
});
