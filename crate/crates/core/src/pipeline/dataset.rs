//! Labeled trajectory-image datasets: stratified 6:2:2 split and the on-disk
//! layout (one PGM/PPM per image plus a JSON manifest).

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{feed_to_images, ImageMode, PipelineConfig, PipelineError, TrajectoryImage};
use crate::condition::Condition;
use crate::feed::Feed;
use crate::sim::{fly, simulate, window_label, GroundTruthLog, ScenarioFile, SimError};

pub const MANIFEST_SCHEMA: &str = "darts-dataset";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const MIN_PER_LABEL: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Split totals `[train, val, test]` for `n` images: the test share is
/// rounded up first, then the validation share of the remainder.
pub fn split_sizes(n: usize) -> [usize; 3] {
    let test = (n * 2).div_ceil(10);
    let val = (n - test).div_ceil(4);
    [n - test - val, val, test]
}

/// Per-label split allocation `[label][split]` with rows summing to the
/// label counts and columns to [`split_sizes`]. Each cell is the floor or
/// ceiling of its proportional share; among the feasible roundings the one
/// with the largest total of rounded-up remainders wins.
pub fn stratified_allocation(counts: [usize; 3]) -> [[usize; 3]; 3] {
    let n: usize = counts.iter().sum();
    let totals = split_sizes(n);
    if n == 0 {
        return [[0; 3]; 3];
    }
    let mut base = [[0usize; 3]; 3];
    let mut frac = [[0f64; 3]; 3];
    for l in 0..3 {
        for s in 0..3 {
            let num = counts[l] * totals[s];
            base[l][s] = num / n;
            frac[l][s] = (num % n) as f64 / n as f64;
        }
    }
    let mut best: Option<(f64, [[usize; 3]; 3])> = None;
    for mask in 0u32..512 {
        let mut alloc = base;
        let mut score = 0.0;
        for cell in 0..9 {
            if mask & (1 << cell) != 0 {
                alloc[cell / 3][cell % 3] += 1;
                score += frac[cell / 3][cell % 3];
            }
        }
        let rows_ok = (0..3).all(|l| alloc[l].iter().sum::<usize>() == counts[l]);
        let cols_ok = (0..3).all(|s| (0..3).map(|l| alloc[l][s]).sum::<usize>() == totals[s]);
        if rows_ok && cols_ok && best.is_none_or(|(b, _)| score > b + 1e-12) {
            best = Some((score, alloc));
        }
    }
    best.expect("a controlled rounding always exists for a 3x3 table").1
}

#[derive(Debug, Clone)]
pub struct LabeledVideo {
    pub name: String,
    pub feed: Feed,
    pub log: GroundTruthLog,
}

impl LabeledVideo {
    /// Simulate the scenario and fly its plan.
    pub fn record(name: impl Into<String>, file: &ScenarioFile) -> Result<Self, SimError> {
        let log = simulate(&file.scenario)?;
        let feed = fly(&log, &file.drone, &file.camera, &file.noise)?;
        Ok(LabeledVideo { name: name.into(), feed, log })
    }

    /// Every window of the feed, labeled from the ground truth.
    pub fn images(&self, config: &PipelineConfig, video_index: u32) -> Result<Vec<TrajectoryImage>, PipelineError> {
        let (Some(first), Some(last)) = (self.feed.frames.first(), self.feed.frames.last()) else {
            return Ok(Vec::new());
        };
        let epoch = self.log.spec.epoch_start;
        let mut images = feed_to_images(
            &self.feed.frames,
            &self.feed.gps,
            &self.feed.header,
            config,
            self.log.spec.patrol_direction,
            first.timestamp,
            last.timestamp,
        )?;
        for img in &mut images {
            img.label = Some(window_label(&self.log, img.window_start - epoch, config.period()));
            img.source_segment_id = Some(video_index);
        }
        Ok(images)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub config: PipelineConfig,
    pub train: Vec<TrajectoryImage>,
    pub val: Vec<TrajectoryImage>,
    pub test: Vec<TrajectoryImage>,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[TrajectoryImage] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }

    /// Stratified split of labeled images; deterministic for a seed.
    pub fn from_images(config: PipelineConfig, images: Vec<TrajectoryImage>, seed: u64) -> Result<Self, PipelineError> {
        let mut by_label: [Vec<TrajectoryImage>; 3] = Default::default();
        for img in images {
            let label = img.label.ok_or_else(|| PipelineError::Manifest("unlabeled image".into()))?;
            by_label[label.index()].push(img);
        }
        for c in Condition::ALL {
            let count = by_label[c.index()].len();
            if count < MIN_PER_LABEL {
                return Err(PipelineError::TooFewImages { label: c, count });
            }
        }
        let counts = [by_label[0].len(), by_label[1].len(), by_label[2].len()];
        let alloc = stratified_allocation(counts);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Dataset { config, ..Default::default() };
        for (l, mut imgs) in by_label.into_iter().enumerate() {
            imgs.shuffle(&mut rng);
            let mut rest = imgs.into_iter();
            out.train.extend(rest.by_ref().take(alloc[l][0]));
            out.val.extend(rest.by_ref().take(alloc[l][1]));
            out.test.extend(rest);
        }
        Ok(out)
    }

    pub fn write(&self, dir: &Path) -> Result<DatasetManifest, PipelineError> {
        let ext = match self.config.image_mode {
            ImageMode::Monochrome => "pgm",
            ImageMode::Color => "ppm",
        };
        let mut entries = Vec::new();
        for split in Split::ALL {
            let sub = dir.join(split.name());
            fs::create_dir_all(&sub)?;
            for (i, img) in self.split(split).iter().enumerate() {
                let file = format!("{}/{:06}.{ext}", split.name(), i);
                img.to_dynamic_image()
                    .save(dir.join(&file))
                    .map_err(|e| PipelineError::Image(e.to_string()))?;
                entries.push(ManifestEntry {
                    file,
                    split,
                    window_start: img.window_start,
                    label: img.label.ok_or_else(|| PipelineError::Manifest("unlabeled image".into()))?,
                    segment_id: img.source_segment_id,
                });
            }
        }
        let manifest = DatasetManifest {
            schema: MANIFEST_SCHEMA.into(),
            version: MANIFEST_VERSION,
            extraction_period_s: self.config.extraction_period_s,
            image_mode: self.config.image_mode,
            canvas_width: self.config.canvas_width,
            canvas_height: self.config.canvas_height,
            entries,
        };
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
        Ok(manifest)
    }

    pub fn read(dir: &Path) -> Result<Self, PipelineError> {
        let manifest = DatasetManifest::parse(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        let config = PipelineConfig {
            extraction_period_s: manifest.extraction_period_s,
            image_mode: manifest.image_mode,
            canvas_width: manifest.canvas_width,
            canvas_height: manifest.canvas_height,
            ..Default::default()
        };
        let mut out = Dataset { config, ..Default::default() };
        let channels = manifest.image_mode.channels();
        for e in manifest.entries {
            let path = dir.join(&e.file);
            let dynimg = image::open(&path).map_err(|err| PipelineError::Image(format!("{}: {err}", path.display())))?;
            if dynimg.width() != manifest.canvas_width || dynimg.height() != manifest.canvas_height {
                return Err(PipelineError::Manifest(format!("{} does not match the canvas size", e.file)));
            }
            let mut img = TrajectoryImage::from_dynamic_image(&dynimg, channels);
            img.window_start = e.window_start;
            img.window_end = e.window_start + manifest.extraction_period_s as f64;
            img.label = Some(e.label);
            img.source_segment_id = e.segment_id;
            match e.split {
                Split::Train => out.train.push(img),
                Split::Val => out.val.push(img),
                Split::Test => out.test.push(img),
            }
        }
        Ok(out)
    }
}

/// Render, label and split a set of simulated patrol videos.
pub fn build_dataset(videos: &[LabeledVideo], config: &PipelineConfig, seed: u64) -> Result<Dataset, PipelineError> {
    config.validate()?;
    let mut images = Vec::new();
    for (i, v) in videos.iter().enumerate() {
        images.extend(v.images(config, i as u32)?);
    }
    Dataset::from_images(config.clone(), images, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub split: Split,
    pub window_start: f64,
    pub label: Condition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_id: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: String,
    pub version: u32,
    pub extraction_period_s: u32,
    pub image_mode: ImageMode,
    pub canvas_width: u32,
    pub canvas_height: u32,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let m: DatasetManifest = serde_json::from_str(text).map_err(|e| PipelineError::Manifest(e.to_string()))?;
        if m.schema != MANIFEST_SCHEMA || m.version != MANIFEST_VERSION {
            return Err(PipelineError::Manifest(format!("unsupported manifest {} v{}", m.schema, m.version)));
        }
        if m.canvas_width < 2 || m.canvas_height < 2 {
            return Err(PipelineError::Manifest("canvas must be at least 2x2".into()));
        }
        for e in &m.entries {
            if e.file.contains("..") || Path::new(&e.file).is_absolute() {
                return Err(PipelineError::Manifest(format!("entry path {} escapes the dataset", e.file)));
            }
            if !e.window_start.is_finite() {
                return Err(PipelineError::Manifest("non-finite window start".into()));
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_ratio_split() {
        assert_eq!(split_sizes(30), [18, 6, 6]);
        let a = stratified_allocation([10, 10, 10]);
        assert_eq!(a, [[6, 2, 2]; 3]);
    }

    #[test]
    fn twenty_second_row() {
        assert_eq!(split_sizes(1524 + 111 + 1269), [1742, 581, 581]);
    }

    #[test]
    fn too_few_images_aborts() {
        let img = |l| TrajectoryImage { label: Some(l), ..TrajectoryImage::blank(0.0, 20.0, 4, 4, 1) };
        let mut images: Vec<_> = (0..10).map(|_| img(Condition::Normal)).collect();
        images.extend((0..10).map(|_| img(Condition::Incident)));
        images.extend((0..4).map(|_| img(Condition::Recurrent)));
        let err = Dataset::from_images(PipelineConfig::default(), images, 0).unwrap_err();
        assert!(matches!(err, PipelineError::TooFewImages { label: Condition::Recurrent, count: 4 }));
    }

    #[test]
    fn manifest_rejects_escaping_paths() {
        let m = DatasetManifest {
            schema: MANIFEST_SCHEMA.into(),
            version: 1,
            extraction_period_s: 20,
            image_mode: ImageMode::Monochrome,
            canvas_width: 8,
            canvas_height: 8,
            entries: vec![ManifestEntry {
                file: "../x.pgm".into(),
                split: Split::Train,
                window_start: 0.0,
                label: Condition::Normal,
                segment_id: None,
            }],
        };
        assert!(DatasetManifest::parse(&serde_json::to_string(&m).unwrap()).is_err());
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut images = Vec::new();
        for (k, l) in [(6, Condition::Normal), (7, Condition::Recurrent), (8, Condition::Incident)] {
            for i in 0..k {
                let mut img = TrajectoryImage::blank(i as f64, i as f64 + 20.0, 6, 5, 1);
                img.pixels[i % 30] = 1.0;
                img.label = Some(l);
                img.source_segment_id = Some(2);
                images.push(img);
            }
        }
        let config = PipelineConfig { canvas_width: 6, canvas_height: 5, ..Default::default() };
        let ds = Dataset::from_images(config, images, 9).unwrap();
        assert_eq!(ds.sizes(), split_sizes(21));
        ds.write(dir.path()).unwrap();
        let back = Dataset::read(dir.path()).unwrap();
        assert_eq!(back.sizes(), ds.sizes());
        assert_eq!(back.train[0].pixels, ds.train[0].pixels);
        assert_eq!(back.test[2].label, ds.test[2].label);
    }

    proptest! {
        #[test]
        fn allocation_is_stratified(a in 0usize..3000, b in 0usize..300, c in 0usize..3000) {
            let counts = [a, b, c];
            let n = a + b + c;
            prop_assume!(n > 0);
            let alloc = stratified_allocation(counts);
            let totals = split_sizes(n);
            for l in 0..3 {
                prop_assert_eq!(alloc[l].iter().sum::<usize>(), counts[l]);
                for s in 0..3 {
                    let share = counts[l] as f64 * totals[s] as f64 / n as f64;
                    prop_assert!((alloc[l][s] as f64 - share).abs() < 1.0);
                }
            }
            for s in 0..3 {
                prop_assert_eq!((0..3).map(|l| alloc[l][s]).sum::<usize>(), totals[s]);
            }
        }
    }
}
