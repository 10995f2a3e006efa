#![no_main]

use libfuzzer_sys::fuzz_target;
use servo_rti::io::{read_final_positions, write_final_positions};

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = read_final_positions(data) {
        let mut buf = Vec::new();
        write_final_positions(&mut buf, &map).unwrap();
        assert_eq!(read_final_positions(buf.as_slice()).unwrap(), map);
    }
});
