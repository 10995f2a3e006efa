#![no_main]

use libfuzzer_sys::fuzz_target;
use servo_rti::io::parse_channel_list;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(set) = parse_channel_list(text) {
            assert!(!set.is_empty());
            assert!(set.as_slice().windows(2).all(|w| w[0] < w[1]));
            assert_eq!(parse_channel_list(&set.to_string()).unwrap(), set);
        }
    }
});
