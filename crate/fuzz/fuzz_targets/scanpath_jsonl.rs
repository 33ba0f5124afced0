#![no_main]

use libfuzzer_sys::fuzz_target;
use scanpath_guided::scanpath::{format_scanpaths, parse_scanpaths};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(paths) = parse_scanpaths(text, "fuzz") {
        let again = parse_scanpaths(&format_scanpaths(&paths), "fuzz").expect("formatted scanpaths parse");
        assert_eq!(again, paths);
    }
});
