#![no_main]

use libfuzzer_sys::fuzz_target;
use logodet::dataset::{parse_annotations, parse_class_table};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let map = parse_class_table("acme-round\tacme\nacme-wide\tacme\nzeta-star\tzeta\n").expect("fixed table");
    let _ = parse_annotations(text, &map);
});
