#![no_main]

use libfuzzer_sys::fuzz_target;
use servo_rti::harness::multinomial_bias_test;
use servo_rti::io::parse_counts;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(counts) = parse_counts(text) {
            let trials = counts.iter().try_fold(0usize, |a, &c| a.checked_add(c));
            if let Some(trials) = trials.filter(|&t| t <= 1000 && counts.len() <= 64) {
                if let Ok(t) = multinomial_bias_test(Some(&counts), trials, counts.len(), 9, 4, 1) {
                    assert!((0.0..=1.0).contains(&t.probability));
                }
            }
        }
    }
});
