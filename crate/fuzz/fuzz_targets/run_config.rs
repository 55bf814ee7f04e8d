#![no_main]

use libfuzzer_sys::fuzz_target;
use ppdnn::config::{parse_override, RunConfig};

// First line is an override list separated by ';', the rest is TOML.
fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let (head, body) = text.split_once('\n').unwrap_or(("", &text));
    let overrides: Vec<_> = head.split(';').filter(|s| !s.is_empty()).filter_map(|s| parse_override(s).ok()).collect();
    if let Ok(cfg) = RunConfig::parse(body, &overrides) {
        cfg.validate().expect("parse returns validated configs");
    }
});
