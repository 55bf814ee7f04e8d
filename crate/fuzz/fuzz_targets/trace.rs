#![no_main]

use libfuzzer_sys::fuzz_target;
use ppdnn::traceio::{parse_trace, write_trace};

// Anything the parser accepts must survive a write/parse cycle unchanged.
fuzz_target!(|data: &[u8]| {
    let Ok(trace) = parse_trace(data) else { return };
    let mut out = Vec::new();
    write_trace(&trace, &mut out).expect("accepted trace writes");
    let back = parse_trace(&out).expect("written trace parses");
    assert_eq!(back, trace);
});
