#![no_main]

use frameinterp::dataset::{scene_from_manifest, Manifest};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = Manifest::parse_bytes(data) {
        if let Ok(again) = Manifest::parse(&m.to_text()) {
            assert_eq!(again.entries(), m.entries());
        }
        let _ = scene_from_manifest(&m);
    }
});
