//! Replays the checked-in fuzz corpus through every parser.
//! Inputs must produce `Ok` or `Err`, never a panic.

use std::fs;
use std::path::PathBuf;

use logodet::config::Config;
use logodet::dataset::{parse_annotations, parse_class_table, render_class_table};
use logodet::network::decode_checkpoint;
use logodet::postprocess::parse_detections;
use logodet::proposals::parse_proposals;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.display().to_string(), fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

/// Every prefix of every seed, plus the seed itself.
fn with_prefixes(target: &str) -> Vec<(String, Vec<u8>)> {
    seeds(target)
        .into_iter()
        .flat_map(|(name, bytes)| {
            let step = (bytes.len() / 64).max(1);
            (0..=bytes.len())
                .step_by(step)
                .chain([bytes.len()])
                .map(move |n| (format!("{name}[..{n}]"), bytes[..n].to_vec()))
                .collect::<Vec<_>>()
        })
        .collect()
}

fn text(bytes: &[u8]) -> Option<&str> {
    std::str::from_utf8(bytes).ok()
}

#[test]
fn class_table_seeds() {
    let mut parsed = 0;
    for (_, b) in with_prefixes("class_table") {
        if let Some(Ok(map)) = text(&b).map(parse_class_table) {
            assert_eq!(parse_class_table(&render_class_table(&map)).unwrap(), map);
            parsed += 1;
        }
    }
    assert!(parsed > 0);
}

#[test]
fn annotation_seeds() {
    let map = parse_class_table("acme-round\tacme\nacme-wide\tacme\nzeta-star\tzeta\n").unwrap();
    let ok = with_prefixes("annotations").iter().filter_map(|(_, b)| text(b)).filter(|t| parse_annotations(t, &map).is_ok()).count();
    assert!(ok > 0);
}

#[test]
fn proposal_seeds() {
    let ok = with_prefixes("proposals").iter().filter_map(|(_, b)| text(b)).filter(|t| parse_proposals(t).is_ok()).count();
    assert!(ok > 0);
}

#[test]
fn detection_seeds() {
    let ok = with_prefixes("detections").iter().filter_map(|(_, b)| text(b)).filter(|t| parse_detections(t).is_ok()).count();
    assert!(ok > 0);
}

#[test]
fn config_seeds() {
    let ok = with_prefixes("config").iter().filter_map(|(_, b)| text(b)).filter(|t| Config::from_json(t, "seed").is_ok()).count();
    assert!(ok > 0);
}

#[test]
fn checkpoint_seeds() {
    let all = with_prefixes("checkpoint");
    let ok = all.iter().filter(|(_, b)| decode_checkpoint(b).is_ok()).count();
    assert!(ok > 0, "the corpus should hold at least one valid checkpoint");
    // Single-byte flips of the valid seeds.
    for (_, bytes) in seeds("checkpoint") {
        if decode_checkpoint(&bytes).is_err() {
            continue;
        }
        for i in (0..bytes.len()).step_by((bytes.len() / 512).max(1)) {
            let mut b = bytes.clone();
            b[i] ^= 0xa5;
            let _ = decode_checkpoint(&b);
        }
    }
}
