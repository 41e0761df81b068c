#![no_main]
use darts_cli::TcdnetConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = toml::from_str::<TcdnetConfig>(text);
    }
});
