#![no_main]

use std::path::Path;

use frameinterp::config::{config_from_ini, IniDocument};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(doc) = IniDocument::parse_bytes(data) {
        let _ = config_from_ini(&doc, Path::new("/nonexistent-fuzz-base"));
    }
});
