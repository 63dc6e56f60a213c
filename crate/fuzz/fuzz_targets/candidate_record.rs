#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(set) = ovseg_core::dump::decode_candidates(data) {
        let bytes = ovseg_core::dump::encode_candidates(&set).expect("decoded sets carry no-object");
        let again = ovseg_core::dump::decode_candidates(&bytes).expect("re-encoded record decodes");
        assert_eq!(again.len(), set.len());
    }
});
