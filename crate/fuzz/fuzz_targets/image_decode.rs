#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = psnis::imageio::decode_image(data) {
        assert_eq!(img.pixels().len(), img.width() * img.height());
        assert!(img.pixels().iter().all(|v| v.is_finite() && *v >= 0.0));
    }
});
