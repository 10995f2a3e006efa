#![no_main]

use libfuzzer_sys::fuzz_target;
use servo_rti::io::{read_trace, write_trace};

fuzz_target!(|data: &[u8]| {
    if let Ok(frames) = read_trace(data) {
        for f in &frames {
            assert!(f.samples.windows(2).all(|w| w[0].link < w[1].link));
        }
        let mut buf = Vec::new();
        write_trace(&mut buf, &frames).unwrap();
        assert_eq!(read_trace(buf.as_slice()).unwrap(), frames);
    }
});
