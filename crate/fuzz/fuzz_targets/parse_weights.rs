#![no_main]

use frameinterp::conv::ConvSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = ConvSpec::parse(data) {
        let bytes = spec.encode();
        let again = ConvSpec::parse(&bytes).expect("encoded spec parses");
        assert_eq!(again.encode(), bytes);
    }
});
