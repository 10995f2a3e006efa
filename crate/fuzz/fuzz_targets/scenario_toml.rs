#![no_main]

use libfuzzer_sys::fuzz_target;
use servo_rti::scenario::Scenario;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(sc) = Scenario::from_toml_str(text) {
            let again = Scenario::from_toml_str(&sc.to_toml_string().unwrap()).unwrap();
            assert_eq!(again, sc);
            let _ = sc.grid().unwrap();
        }
    }
});
