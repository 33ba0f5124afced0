#![no_main]

use libfuzzer_sys::fuzz_target;
use scanpath_guided::features::pgm;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = pgm::decode(data) {
        assert_eq!(img.data().len(), img.width() * img.height());
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let again = pgm::decode(&pgm::encode(&img)).expect("re-encoded image decodes");
        assert_eq!((again.width(), again.height()), (img.width(), img.height()));
    }
});
