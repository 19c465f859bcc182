#![no_main]

use deepseg_cli::parse_run_config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = parse_run_config(text) {
            let _ = cfg.validate(true);
        }
    }
});
