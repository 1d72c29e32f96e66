#![no_main]

use libfuzzer_sys::fuzz_target;
use logodet::dataset::{parse_class_table, render_class_table};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(map) = parse_class_table(text) {
        let again = parse_class_table(&render_class_table(&map)).expect("rendered table parses");
        assert_eq!(again, map);
    }
});
