//! Shared logic behind the `sim`, `tcdnet`, `service` and `feed` binaries.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use darts_core::feed::GROUND_TRUTH_FILE;
use darts_core::pipeline::dataset::LabeledVideo;
use darts_core::pipeline::{build_dataset, Dataset, PipelineConfig};
use darts_core::sim::ScenarioFile;
use darts_tcdnet::sweep::{findings, format_table, sweep_configs, SweepCell, SweepPlan};
use darts_tcdnet::{evaluate, load_checkpoint, save_checkpoint, train, MetricsReport, Model, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into());
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

/// Simulate a scenario file and write the feed directory plus the
/// ground-truth sidecar.
pub fn run_sim(scenario: &Path, out: &Path, seed: Option<u64>) -> Result<LabeledVideo> {
    let text = std::fs::read_to_string(scenario).with_context(|| format!("reading {}", scenario.display()))?;
    let mut file = ScenarioFile::from_toml(&text)?;
    if let Some(s) = seed {
        file.scenario.seed = s;
    }
    let name = scenario.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let video = LabeledVideo::record(name, &file)?;
    video.feed.write_dir(out)?;
    let sidecar = serde_json::to_string_pretty(&video.log.sidecar())?;
    std::fs::write(out.join(GROUND_TRUTH_FILE), sidecar)?;
    Ok(video)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Dataset directory with a manifest, as written by `Dataset::write`.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Scenario files to simulate instead, one labeled video each.
    #[serde(default)]
    pub scenarios: Vec<PathBuf>,
    #[serde(default)]
    pub split_seed: u64,
}

/// `tcdnet` config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TcdnetConfig {
    pub data: DataSection,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub model_seed: u64,
    /// Written by `train`, read by `eval`.
    pub checkpoint: PathBuf,
    /// Machine-readable output; the text table goes to stdout.
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub sweep: Option<SweepPlan>,
}

impl TcdnetConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut c: TcdnetConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        c.data.dataset.as_mut().map(fix);
        c.data.scenarios.iter_mut().for_each(fix);
        fix(&mut c.checkpoint);
        c.report.as_mut().map(fix);
        Ok(c)
    }

    fn model_config(&self) -> ModelConfig {
        self.model.clone().unwrap_or_else(|| ModelConfig {
            input_channels: self.pipeline.image_mode.channels(),
            ..Default::default()
        })
    }
}

pub fn record_videos(scenarios: &[PathBuf]) -> Result<Vec<LabeledVideo>> {
    scenarios
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let file = ScenarioFile::from_toml(&text)?;
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(LabeledVideo::record(name, &file)?)
        })
        .collect()
}

pub fn load_dataset(c: &TcdnetConfig) -> Result<Dataset> {
    match (&c.data.dataset, c.data.scenarios.is_empty()) {
        (Some(dir), true) => Ok(Dataset::read(dir)?),
        (None, false) => Ok(build_dataset(&record_videos(&c.data.scenarios)?, &c.pipeline, c.data.split_seed)?),
        _ => bail!("give exactly one of data.dataset or data.scenarios"),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub sizes: [usize; 3],
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub history: Vec<darts_tcdnet::EpochRecord>,
    pub test: MetricsReport,
}

fn write_report(path: Option<&Path>, value: &impl Serialize) -> Result<()> {
    if let Some(p) = path {
        std::fs::write(p, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

pub fn cmd_train(c: &TcdnetConfig) -> Result<TrainReport> {
    let data = load_dataset(c)?;
    let model = Model::<f32>::build(c.model_config(), c.model_seed)?;
    let out = train(model, &data.train, &data.val, &c.train)?;
    save_checkpoint(&out.model, Some(&data.config), &c.checkpoint)?;
    let test = evaluate(&out.model, &data.test)?;
    let report = TrainReport {
        sizes: data.sizes(),
        best_epoch: out.best_epoch,
        stopped_early: out.stopped_early,
        history: out.history,
        test,
    };
    write_report(c.report.as_deref(), &report)?;
    Ok(report)
}

/// Test-split metrics of the checkpoint named in the config.
pub fn cmd_eval(c: &TcdnetConfig) -> Result<MetricsReport> {
    let (model, header) = load_checkpoint::<f32>(&c.checkpoint)?;
    let data = load_dataset(c)?;
    if let Some(p) = &header.pipeline {
        if p != &data.config {
            tracing_warn(&format!("checkpoint was trained with pipeline {p:?}, dataset uses {:?}", data.config));
        }
    }
    let report = evaluate(&model, &data.test)?;
    write_report(c.report.as_deref(), &report)?;
    Ok(report)
}

fn tracing_warn(msg: &str) {
    eprintln!("warning: {msg}");
}

pub fn cmd_sweep(c: &TcdnetConfig) -> Result<(Vec<SweepCell>, String, Vec<String>)> {
    if c.data.scenarios.is_empty() {
        bail!("sweep needs data.scenarios");
    }
    let videos = record_videos(&c.data.scenarios)?;
    let plan = c.sweep.clone().unwrap_or_else(|| SweepPlan {
        pipeline: c.pipeline.clone(),
        model: c.model_config(),
        train: c.train.clone(),
        split_seed: c.data.split_seed,
        model_seed: c.model_seed,
        ..Default::default()
    });
    let cells = sweep_configs(&videos, &plan)?;
    let table = format_table(&cells);
    let notes = findings(&cells);
    write_report(c.report.as_deref(), &cells)?;
    Ok((cells, table, notes))
}
