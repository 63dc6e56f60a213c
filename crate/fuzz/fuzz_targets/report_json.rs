#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(r) = ovseg_core::report::RunReport::from_json(text) {
            let _ = r.to_json();
        }
    }
});
