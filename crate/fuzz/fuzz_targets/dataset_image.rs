#![no_main]
use darts_core::pipeline::TrajectoryImage;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(reader) = image::ImageReader::new(std::io::Cursor::new(data)).with_guessed_format() else { return };
    let mut reader = reader;
    let mut limits = image::Limits::default();
    limits.max_image_width = Some(1024);
    limits.max_image_height = Some(1024);
    limits.max_alloc = Some(16 << 20);
    reader.limits(limits);
    let Ok(img) = reader.decode() else { return };
    for channels in [1, 3] {
        let t = TrajectoryImage::from_dynamic_image(&img, channels);
        assert_eq!(t.pixels.len(), img.width() as usize * img.height() as usize * channels);
        assert!(t.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
