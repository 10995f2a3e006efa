#![no_main]

use libfuzzer_sys::fuzz_target;
use servo_rti::io::read_positions;

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = read_positions(data) {
        assert!(map.values().flatten().all(|p| (1..=8).contains(&p.p)));
    }
});
