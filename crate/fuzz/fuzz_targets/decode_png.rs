#![no_main]

use frameinterp::Frame;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(frame) = Frame::decode_png(data) {
        assert!(frame.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
