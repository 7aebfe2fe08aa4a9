#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(venue) = review_ope::io::parse_venue_json(data) {
        let text = review_ope::io::venue_to_json(&venue);
        let again = review_ope::io::parse_venue_json(text.as_bytes()).expect("written venue parses");
        assert_eq!(again, venue);
    }
});
