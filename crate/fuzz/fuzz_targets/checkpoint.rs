#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = darts_tcdnet::read_checkpoint::<f32>(data);
});
