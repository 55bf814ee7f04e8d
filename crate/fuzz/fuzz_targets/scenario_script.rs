#![no_main]

use libfuzzer_sys::fuzz_target;
use ppdnn::traceio::{generate, parse_trace, write_trace, ScenarioScript};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(script) = ScenarioScript::from_toml(text) else { return };
    // keep rendering cheap
    if script.frame_count() > 90 || script.objects.len() > 16 {
        return;
    }
    let trace = generate(&script, 0).expect("validated script renders");
    let mut out = Vec::new();
    write_trace(&trace, &mut out).unwrap();
    assert_eq!(parse_trace(&out).expect("generated trace parses"), trace);
});
