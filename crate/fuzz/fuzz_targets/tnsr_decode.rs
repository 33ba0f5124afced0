#![no_main]

use libfuzzer_sys::fuzz_target;
use scanpath_guided::numerics::blob;

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = blob::decode(data) {
        assert!(t.is_finite());
        assert_eq!(blob::encode(&t), data);
    }
});
