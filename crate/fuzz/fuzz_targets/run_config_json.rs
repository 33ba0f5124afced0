#![no_main]

use libfuzzer_sys::fuzz_target;
use scanpath_guided::harness::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_json(text) {
        let again = RunConfig::from_json(&cfg.to_json()).expect("serialized config parses");
        assert_eq!(again.hash(), cfg.hash());
    }
});
