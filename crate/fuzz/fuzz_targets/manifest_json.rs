#![no_main]

use libfuzzer_sys::fuzz_target;
use scanpath_guided::harness::Manifest;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = serde_json::from_slice::<Manifest>(data) {
        let text = serde_json::to_string(&m).expect("manifest serializes");
        let _: Manifest = serde_json::from_str(&text).expect("manifest round-trips");
    }
});
