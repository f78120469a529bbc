#![no_main]

use libfuzzer_sys::fuzz_target;
use psnis::imageio::{format_count_grid, parse_count_grid};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(img) = parse_count_grid(text) {
        assert_eq!(parse_count_grid(&format_count_grid(&img)).unwrap(), img);
    }
});
