#![no_main]
use darts_service::archive::parse_datetime;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_datetime(text);
    }
});
