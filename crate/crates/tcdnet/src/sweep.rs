//! One model per (image mode, extraction period) cell, reported as a table.

use std::fmt::Write as _;

use darts_core::pipeline::dataset::{build_dataset, LabeledVideo};
use darts_core::pipeline::{ImageMode, PipelineConfig};
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::metrics::{evaluate, MetricsReport};
use crate::model::{Model, ModelConfig};
use crate::train::{train, TrainConfig};
use crate::TcdError;

pub const TABLE_COLUMNS: [&str; 8] =
    ["Image Mode", "Trajectory Extraction Period", "Loss", "Accuracy", "Precision", "Recall", "F1-Score", "AUC-ROC"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepPlan {
    pub periods: Vec<u32>,
    pub modes: Vec<ImageMode>,
    /// Period and mode are overridden per cell.
    pub pipeline: PipelineConfig,
    /// Input channels are overridden per cell.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split_seed: u64,
    pub model_seed: u64,
}

impl Default for SweepPlan {
    fn default() -> Self {
        SweepPlan {
            periods: vec![3, 5, 10, 15, 20],
            modes: vec![ImageMode::Monochrome, ImageMode::Color],
            pipeline: PipelineConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split_seed: 0,
            model_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub image_mode: ImageMode,
    pub extraction_period_s: u32,
    /// `[train, val, test]` image counts.
    pub sizes: [usize; 3],
    pub epochs: usize,
    pub best_epoch: usize,
    pub report: MetricsReport,
}

pub fn sweep_configs(videos: &[LabeledVideo], plan: &SweepPlan) -> Result<Vec<SweepCell>, TcdError> {
    let mut cells = Vec::new();
    for &mode in &plan.modes {
        for &period in &plan.periods {
            let pipeline = PipelineConfig { extraction_period_s: period, image_mode: mode, ..plan.pipeline.clone() };
            let data = build_dataset(videos, &pipeline, plan.split_seed)?;
            let config = ModelConfig { input_channels: mode.channels(), ..plan.model.clone() };
            let model = Model::<f32>::build(config, plan.model_seed)?;
            let outcome = train(model, &data.train, &data.val, &plan.train)?;
            let report = evaluate(&outcome.model, &data.test)?;
            info!(mode = mode.name(), period, accuracy = report.accuracy, "sweep cell");
            cells.push(SweepCell {
                image_mode: mode,
                extraction_period_s: period,
                sizes: data.sizes(),
                epochs: outcome.history.len(),
                best_epoch: outcome.best_epoch,
                report,
            });
        }
    }
    Ok(cells)
}

fn mode_label(mode: ImageMode) -> &'static str {
    match mode {
        ImageMode::Monochrome => "monochrome",
        ImageMode::Color => "color",
    }
}

/// Tab-separated table with four-decimal metrics.
pub fn format_table(cells: &[SweepCell]) -> String {
    let mut s = TABLE_COLUMNS.join("\t");
    s.push('\n');
    for c in cells {
        let r = &c.report;
        let auc = r.auc_roc.map_or("n/a".to_string(), |a| format!("{a:.4}"));
        let _ = writeln!(
            s,
            "{}\t{}s\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}",
            mode_label(c.image_mode),
            c.extraction_period_s,
            r.loss,
            r.accuracy,
            r.precision,
            r.recall,
            r.f1,
            auc
        );
    }
    s
}

/// Observations about mode and period ordering; reported, never enforced.
pub fn findings(cells: &[SweepCell]) -> Vec<String> {
    let mut out = Vec::new();
    let periods: Vec<u32> = {
        let mut p: Vec<u32> = cells.iter().map(|c| c.extraction_period_s).collect();
        p.sort_unstable();
        p.dedup();
        p
    };
    let find = |m, p| cells.iter().find(|c| c.image_mode == m && c.extraction_period_s == p);
    let mono_wins = periods
        .iter()
        .filter_map(|&p| Some((find(ImageMode::Monochrome, p)?, find(ImageMode::Color, p)?)))
        .map(|(m, c)| m.report.accuracy >= c.report.accuracy)
        .collect::<Vec<_>>();
    if !mono_wins.is_empty() {
        out.push(format!(
            "monochrome accuracy >= color in {} of {} periods",
            mono_wins.iter().filter(|&&w| w).count(),
            mono_wins.len()
        ));
    }
    if let Some(best) = cells.iter().max_by(|a, b| a.report.accuracy.total_cmp(&b.report.accuracy)) {
        out.push(format!(
            "best cell: {} {}s at accuracy {:.4}",
            mode_label(best.image_mode),
            best.extraction_period_s,
            best.report.accuracy
        ));
    }
    out
}
