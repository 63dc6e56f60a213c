#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(map) = ovseg_core::PanopticMap::from_bytes(data) {
        assert_eq!(map.to_bytes(), data);
    }
});
