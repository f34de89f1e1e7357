#![no_main]

use isac_core::output::{parse_csv, to_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_csv(data) {
        let bytes = to_csv(&rows).expect("serialise");
        let again = parse_csv(&bytes).expect("reparse");
        assert_eq!(again.len(), rows.len());
    }
});
