#![no_main]
use darts_service::archive::{FlightArchive, FLIGHTS_DIR, INDEX_FILE, LOG_FILE};
use libfuzzer_sys::fuzz_target;

// First line goes to the index, the rest is one flight's log.
fuzz_target!(|data: &[u8]| {
    let dir = tempfile::tempdir().unwrap();
    let split = data.iter().position(|&b| b == b'\n').unwrap_or(data.len());
    let flight = dir.path().join(FLIGHTS_DIR).join("f");
    std::fs::create_dir_all(&flight).unwrap();
    std::fs::write(dir.path().join(INDEX_FILE), &data[..split]).unwrap();
    std::fs::write(flight.join(LOG_FILE), data.get(split + 1..).unwrap_or_default()).unwrap();
    if let Ok(archive) = FlightArchive::open(dir.path()) {
        for s in archive.query(&Default::default()) {
            let _ = archive.detail(&s.flight_id);
        }
    }
});
