#![no_main]

use libfuzzer_sys::fuzz_target;
use review_ope::io;

const VENUE: &str = r#"{"papers": ["p0", "p1"], "reviewers": [{"id": "r0", "cap": 2}, {"id": "r1", "cap": 2}, {"id": "r2", "cap": 1}], "paper_load": 1, "conflicts": [["r2", "p1"]], "bid_scheme": "tpdp", "outcome_scale": {"min": 1, "max": 5}}"#;

fuzz_target!(|data: &[u8]| {
    let venue = io::parse_venue_json(VENUE.as_bytes()).expect("fixed venue parses");
    if let Ok(records) = io::parse_outcomes_csv(&venue, data) {
        let text = io::outcomes_to_csv(&venue, &records);
        io::parse_outcomes_csv(&venue, text.as_bytes()).expect("written outcomes parse");
    }
});
