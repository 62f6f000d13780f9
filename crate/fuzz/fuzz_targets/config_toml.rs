#![no_main]

use libfuzzer_sys::fuzz_target;
use lineqgp::config::Config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = Config::parse(text) {
        let again = Config::parse(&config.to_toml()).expect("written config parses");
        assert_eq!(config, again);
    }
});
