#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(texts) = ovseg_core::zeroshot::TextEmbeddings::from_bytes(data) {
        assert_eq!(texts.to_bytes().len(), data.len());
    }
});
