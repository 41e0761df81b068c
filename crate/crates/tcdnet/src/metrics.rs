//! Test-set metrics: loss, accuracy and macro-averaged precision, recall, F1
//! and one-vs-rest AUC.

use std::fmt::Write as _;

use darts_core::condition::Condition;
use darts_core::pipeline::TrajectoryImage;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::model::{decide, Model, CLASSES};
use crate::tensor::Scalar;
use crate::TcdError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean cross-entropy per sample.
    pub loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when no class has both positives and negatives.
    pub auc_roc: Option<f64>,
    pub support: [usize; CLASSES],
    /// `confusion[true][predicted]`.
    pub confusion: [[usize; CLASSES]; CLASSES],
    /// Classes left out of the macro averages.
    pub excluded: Vec<Condition>,
    pub warnings: Vec<String>,
}

impl MetricsReport {
    /// Fixed-width text rendering with four decimals.
    pub fn to_text(&self) -> String {
        let auc = self.auc_roc.map_or("n/a".to_string(), |a| format!("{a:.4}"));
        let mut s = format!(
            "loss {:.4}  accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}  auc {}\n",
            self.loss, self.accuracy, self.precision, self.recall, self.f1, auc
        );
        let _ = writeln!(s, "confusion (rows true, cols predicted; normal/recurrent/incident):");
        for row in &self.confusion {
            let _ = writeln!(s, "  {:>6} {:>6} {:>6}", row[0], row[1], row[2]);
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

/// Metrics from true labels and predicted probabilities. Invariant under a
/// common permutation of both inputs.
pub fn metrics_from_predictions(labels: &[usize], probs: &[[f64; CLASSES]]) -> MetricsReport {
    assert_eq!(labels.len(), probs.len(), "one prediction per label");
    let n = labels.len();
    let mut support = [0usize; CLASSES];
    let mut confusion = [[0usize; CLASSES]; CLASSES];
    let mut losses: Vec<f64> = Vec::with_capacity(n);
    for (&y, p) in labels.iter().zip(probs) {
        support[y] += 1;
        confusion[y][decide(p).index()] += 1;
        losses.push(-p[y].max(f64::MIN_POSITIVE).ln());
    }
    // summing in sorted order keeps the loss independent of sample order
    losses.sort_by(f64::total_cmp);
    let loss = if n == 0 { 0.0 } else { losses.iter().sum::<f64>() / n as f64 };
    let correct: usize = (0..CLASSES).map(|k| confusion[k][k]).sum();
    let accuracy = if n == 0 { 0.0 } else { correct as f64 / n as f64 };

    let mut warnings = Vec::new();
    let mut excluded = Vec::new();
    let (mut ps, mut rs, mut fs, mut aucs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for k in 0..CLASSES {
        let class = Condition::from_label(k as u8).expect("class");
        if support[k] == 0 {
            let msg = format!("class {class} absent from the test set; excluded from macro averages");
            warn!("{msg}");
            warnings.push(msg);
            excluded.push(class);
            continue;
        }
        let tp = confusion[k][k] as f64;
        let predicted: usize = (0..CLASSES).map(|t| confusion[t][k]).sum();
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = tp / support[k] as f64;
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        ps.push(precision);
        rs.push(recall);
        fs.push(f1);
        if support[k] == n {
            let msg = format!("class {class} has no negatives; left out of the AUC average");
            warn!("{msg}");
            warnings.push(msg);
        } else {
            let scores: Vec<(f64, bool)> = probs.iter().zip(labels).map(|(p, &y)| (p[k], y == k)).collect();
            aucs.push(rank_auc(scores));
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    MetricsReport {
        loss,
        accuracy,
        precision: mean(&ps),
        recall: mean(&rs),
        f1: mean(&fs),
        auc_roc: (!aucs.is_empty()).then(|| mean(&aucs)),
        support,
        confusion,
        excluded,
        warnings,
    }
}

/// Area under the ROC curve as the normalized Mann-Whitney statistic, tied
/// scores sharing their average rank.
pub fn rank_auc(mut scores: Vec<(f64, bool)>) -> f64 {
    scores.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_pos = scores.iter().filter(|s| s.1).count() as f64;
    let n_neg = scores.len() as f64 - n_pos;
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < scores.len() {
        let mut j = i;
        while j + 1 < scores.len() && scores[j + 1].0 == scores[i].0 {
            j += 1;
        }
        // ranks are 1-based
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * scores[i..=j].iter().filter(|s| s.1).count() as f64;
        i = j + 1;
    }
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

pub fn evaluate<T: Scalar>(model: &Model<T>, images: &[TrajectoryImage]) -> Result<MetricsReport, TcdError> {
    if images.is_empty() {
        return Err(TcdError::EmptyDataset("test"));
    }
    let labels: Vec<usize> = images
        .iter()
        .map(|im| im.label.map(|l| l.index()).ok_or_else(|| TcdError::Config("unlabeled test image".into())))
        .collect::<Result<_, _>>()?;
    let probs = model.predict_images(images)?;
    Ok(metrics_from_predictions(&labels, &probs))
}
