#![no_main]

use libfuzzer_sys::fuzz_target;
use mastery_core::CourseCatalog;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(catalog) = CourseCatalog::from_toml_str(text) else { return };
    let report = catalog.validate();
    if report.is_ok() {
        let passed = catalog.achievements.iter().map(|a| a.id.clone()).collect();
        assert_eq!(catalog.compute_grade(&passed).unwrap(), catalog.levels.last().cloned());
    }
    if let Ok(again) = catalog.to_toml_string() {
        CourseCatalog::from_toml_str(&again).expect("serialized catalog parses");
    }
});
