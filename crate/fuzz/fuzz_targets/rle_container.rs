#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(rle) = ovseg_core::rle::RleMask::from_bytes(data) {
        let mask = ovseg_core::rle::rle_decode(&rle).expect("validated container decodes");
        assert_eq!(ovseg_core::rle::rle_encode(&mask), rle);
    }
});
