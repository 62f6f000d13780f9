#![no_main]

use libfuzzer_sys::fuzz_target;
use lineqgp::io::parse_dataset;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(ds) = parse_dataset(text) {
        let again = parse_dataset(&ds.to_csv()).expect("written dataset parses");
        assert_eq!(ds.inputs, again.inputs);
        assert_eq!(ds.outputs, again.outputs);
    }
});
