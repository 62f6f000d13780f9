#![no_main]

use libfuzzer_sys::fuzz_target;
use lineqgp::emulator::EmulatorModel;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(model) = EmulatorModel::from_json(text) {
        let json = model.to_json().expect("loaded model serializes");
        EmulatorModel::from_json(&json).expect("written model loads");
    }
});
