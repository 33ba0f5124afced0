#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use scanpath_guided::harness::dataset::parse_splits;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_splits(text, Path::new("fuzz.csv"));
    }
});
