#![no_main]

use libfuzzer_sys::fuzz_target;
use mastery_sim::SimConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = SimConfig::from_toml_str(text) {
        let _ = config.validate();
    }
});
