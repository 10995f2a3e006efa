#![no_main]

use libfuzzer_sys::fuzz_target;
use servo_rti::io::ModelDump;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = ModelDump::from_toml_str(text);
    }
});
