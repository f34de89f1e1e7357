#![no_main]

use isac_core::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = RunConfig::from_toml_str(text) {
            // Anything accepted must survive a round trip unchanged.
            let again = RunConfig::from_toml_str(&cfg.to_toml_string()).expect("reparse");
            assert_eq!(again, cfg);
        }
    }
});
