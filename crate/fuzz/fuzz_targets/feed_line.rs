#![no_main]
use darts_core::feed::FeedRecord;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    if let Ok(record) = FeedRecord::decode_line(line) {
        // anything accepted must survive its own encoding
        let again = FeedRecord::decode_line(&record.encode_line()).expect("re-decodes");
        assert_eq!(again.encode_line(), record.encode_line());
    }
});
