#![no_main]

use libfuzzer_sys::fuzz_target;
use lineqgp::constraints::parse_constraint;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(spec) = parse_constraint(text) {
        let again = parse_constraint(&spec.to_string()).expect("displayed constraint parses");
        assert_eq!(spec, again);
    }
});
