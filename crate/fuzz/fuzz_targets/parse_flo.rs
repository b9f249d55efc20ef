#![no_main]

use frameinterp::flo::{encode_flo, parse_flo};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(flow) = parse_flo(data) {
        let again = parse_flo(&encode_flo(&flow)).expect("encoded flow parses");
        assert_eq!(again.dims(), flow.dims());
    }
});
