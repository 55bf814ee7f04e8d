#![no_main]

use libfuzzer_sys::fuzz_target;
use ppdnn::sim::{parse_published_jsonl, write_published_jsonl};

fuzz_target!(|data: &[u8]| {
    let Ok(records) = parse_published_jsonl(data) else { return };
    let mut out = Vec::new();
    write_published_jsonl(&records, &mut out).unwrap();
    assert_eq!(parse_published_jsonl(&out[..]).unwrap(), records);
});
