//! Replays the checked-in fuzz seeds through the same checks the fuzz
//! targets run, plus byte-level mutations of each seed.

use std::fs;
use std::path::PathBuf;

use ppdnn::config::{parse_override, RunConfig};
use ppdnn::dispatch::{read_audit_csv, write_audit_csv};
use ppdnn::fusion::{read_fusion_csv, write_fusion_csv};
use ppdnn::sim::{parse_published_jsonl, write_published_jsonl};
use ppdnn::traceio::{generate, parse_trace, write_trace, ScenarioScript};
use proptest::prelude::*;

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut paths: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    paths.sort();
    assert!(!paths.is_empty(), "no seeds in {}", dir.display());
    paths.into_iter().map(|p| fs::read(p).unwrap()).collect()
}

fn trace(data: &[u8]) -> bool {
    let Ok(trace) = parse_trace(data) else { return false };
    let mut out = Vec::new();
    write_trace(&trace, &mut out).unwrap();
    assert_eq!(parse_trace(&out).unwrap(), trace);
    true
}

fn run_config(data: &[u8]) -> bool {
    let text = String::from_utf8_lossy(data);
    let (head, body) = text.split_once('\n').unwrap_or(("", &text));
    let overrides: Vec<_> = head.split(';').filter(|s| !s.is_empty()).filter_map(|s| parse_override(s).ok()).collect();
    match RunConfig::parse(body, &overrides) {
        Ok(cfg) => {
            cfg.validate().unwrap();
            true
        }
        Err(_) => false,
    }
}

fn scenario_script(data: &[u8]) -> bool {
    let Ok(text) = std::str::from_utf8(data) else { return false };
    let Ok(script) = ScenarioScript::from_toml(text) else { return false };
    if script.frame_count() > 90 || script.objects.len() > 16 {
        return true;
    }
    let trace = generate(&script, 0).unwrap();
    let mut out = Vec::new();
    write_trace(&trace, &mut out).unwrap();
    assert_eq!(parse_trace(&out).unwrap(), trace);
    true
}

fn published_jsonl(data: &[u8]) -> bool {
    let Ok(records) = parse_published_jsonl(data) else { return false };
    let mut out = Vec::new();
    write_published_jsonl(&records, &mut out).unwrap();
    assert_eq!(parse_published_jsonl(&out[..]).unwrap(), records);
    true
}

fn fusion_csv(data: &[u8]) -> bool {
    let Ok(rows) = read_fusion_csv(data) else { return false };
    let mut out = Vec::new();
    write_fusion_csv(&rows, &mut out).unwrap();
    assert_eq!(read_fusion_csv(&out[..]).unwrap(), rows);
    true
}

fn audit_csv(data: &[u8]) -> bool {
    let Ok(rows) = read_audit_csv(data) else { return false };
    let mut out = Vec::new();
    write_audit_csv(&rows, &mut out).unwrap();
    assert_eq!(read_audit_csv(&out[..]).unwrap(), rows);
    true
}

type Check = fn(&[u8]) -> bool;

const TARGETS: [(&str, Check); 6] = [
    ("trace", trace),
    ("run_config", run_config),
    ("scenario_script", scenario_script),
    ("published_jsonl", published_jsonl),
    ("fusion_csv", fusion_csv),
    ("audit_csv", audit_csv),
];

#[test]
fn seeds_are_accepted() {
    for (name, check) in TARGETS {
        for (i, seed) in seeds(name).iter().enumerate() {
            assert!(check(seed), "{name} seed {i} rejected");
        }
    }
}

const SPLICE: &[&[u8]] = &[b"-1", b"NaN", b"inf", b"1e309", b"\"", b",", b"\n", b"null", b"{}", b"[]", b"=", b"\xff"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn mutated_seeds_never_panic(
        target in 0..TARGETS.len(),
        pick in any::<prop::sample::Index>(),
        edits in prop::collection::vec((any::<prop::sample::Index>(), 0usize..4, any::<u8>(), 0..SPLICE.len()), 1..6),
    ) {
        let (name, check) = TARGETS[target];
        let all = seeds(name);
        let mut data = pick.get(&all).clone();
        for (at, kind, byte, splice) in edits {
            let pos = if data.is_empty() { 0 } else { at.index(data.len()) };
            match kind {
                0 if !data.is_empty() => data[pos] = byte,
                1 if !data.is_empty() => {
                    data.remove(pos);
                }
                2 => data.truncate(pos),
                _ => {
                    data.splice(pos..pos, SPLICE[splice].iter().copied());
                }
            }
        }
        check(&data);
    }
}
