#![no_main]

use libfuzzer_sys::fuzz_target;
use ppdnn::fusion::{read_fusion_csv, write_fusion_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(rows) = read_fusion_csv(data) else { return };
    let mut out = Vec::new();
    write_fusion_csv(&rows, &mut out).unwrap();
    assert_eq!(read_fusion_csv(&out[..]).unwrap(), rows);
});
