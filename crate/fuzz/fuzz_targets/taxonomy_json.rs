#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(t) = ovseg_core::Taxonomy::from_json(text) {
            assert_eq!(ovseg_core::Taxonomy::from_json(&t.to_json()).expect("round trip"), t);
        }
    }
});
