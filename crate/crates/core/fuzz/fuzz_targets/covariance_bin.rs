#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = review_ope::io::parse_covariance_bin(data);
});
