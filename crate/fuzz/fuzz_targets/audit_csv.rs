#![no_main]

use libfuzzer_sys::fuzz_target;
use ppdnn::dispatch::{read_audit_csv, write_audit_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(rows) = read_audit_csv(data) else { return };
    let mut out = Vec::new();
    write_audit_csv(&rows, &mut out).unwrap();
    assert_eq!(read_audit_csv(&out[..]).unwrap(), rows);
});
