#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(grid) = ovseg_core::zeroshot::DenseFeatureGrid::from_bytes(data) {
        assert_eq!(grid.to_bytes().len(), data.len());
    }
});
