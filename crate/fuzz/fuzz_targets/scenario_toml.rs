#![no_main]
use darts_core::sim::ScenarioFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(file) = ScenarioFile::from_toml(text) {
        assert_eq!(ScenarioFile::from_toml(&file.to_toml()).expect("round trip"), file);
    }
});
