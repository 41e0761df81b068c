//! Mini-batch Adam on mean cross-entropy with validation-loss early stopping.

use darts_core::pipeline::TrajectoryImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::model::{decide, images_to_tensor, Model};
use crate::tensor::Scalar;
use crate::TcdError;

pub const PATIENCE: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Epochs without a validation-loss improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { max_epochs: 200, patience: PATIENCE, batch_size: 32, learning_rate: 1e-3, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TcdError> {
        if self.patience != PATIENCE {
            return Err(TcdError::Config(format!("patience is fixed at {PATIENCE} epochs, got {}", self.patience)));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(TcdError::Config("max_epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TcdError::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Weights from the epoch with the lowest validation loss.
    pub model: Model<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

struct Adam<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: i32,
    lr: f64,
}

impl<T: Scalar> Adam<T> {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &Model<T>, lr: f64) -> Self {
        let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
        Adam {
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
            lr,
        }
    }

    fn update(&mut self, model: &mut Model<T>) {
        self.step += 1;
        let (b1, b2) = (T::of(Self::B1), T::of(Self::B2));
        let (c1, c2) = (1.0 - Self::B1.powi(self.step), 1.0 - Self::B2.powi(self.step));
        let step = T::of(self.lr / c1);
        let c2 = T::of(c2);
        let eps = T::of(Self::EPS);
        let one = T::one();
        for ((p, m), v) in model.params_mut().into_iter().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                p.value[i] = p.value[i] - step * m[i] / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

fn labels_of(images: &[TrajectoryImage]) -> Result<Vec<usize>, TcdError> {
    images
        .iter()
        .map(|im| im.label.map(|l| l.index()).ok_or_else(|| TcdError::Config("unlabeled training image".into())))
        .collect()
}

/// Mean loss and accuracy over a labelled set, in fixed-size chunks.
pub fn loss_and_accuracy<T: Scalar>(model: &Model<T>, images: &[TrajectoryImage]) -> Result<(f64, f64), TcdError> {
    let labels = labels_of(images)?;
    let mut total = 0.0;
    let mut correct = 0usize;
    for (chunk, ys) in images.chunks(64).zip(labels.chunks(64)) {
        let refs: Vec<&TrajectoryImage> = chunk.iter().collect();
        let x = images_to_tensor::<T>(&refs)?;
        let logits = model.logits(&x)?;
        let (loss, _) = crate::model::mean_cross_entropy(&logits, ys);
        total += loss.f64() * ys.len() as f64;
        for (row, &y) in logits.chunks(crate::CLASSES).zip(ys) {
            correct += usize::from(decide(&crate::softmax(row)).index() == y);
        }
    }
    Ok((total / images.len() as f64, correct as f64 / images.len() as f64))
}

pub fn train<T: Scalar>(
    mut model: Model<T>,
    train_set: &[TrajectoryImage],
    val_set: &[TrajectoryImage],
    tc: &TrainConfig,
) -> Result<TrainOutcome<T>, TcdError> {
    tc.validate()?;
    if train_set.is_empty() {
        return Err(TcdError::EmptyDataset("training"));
    }
    if val_set.is_empty() {
        return Err(TcdError::EmptyDataset("validation"));
    }
    let labels = labels_of(train_set)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut adam = Adam::new(&model, tc.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Model<T>)> = None;
    let mut stopped_early = false;

    for epoch in 1..=tc.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(tc.batch_size) {
            let refs: Vec<&TrajectoryImage> = batch.iter().map(|&i| &train_set[i]).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let x = images_to_tensor::<T>(&refs)?;
            let (loss, probs) = model.loss_and_backward(&x, &ys)?;
            if !loss.is_finite() {
                warn!(epoch, loss, "non-finite batch loss");
                return Err(TcdError::Diverged { epoch, train_loss: loss, val_loss: f64::NAN });
            }
            loss_sum += loss * ys.len() as f64;
            correct += probs.iter().zip(&ys).filter(|(p, &y)| decide(p).index() == y).count();
            adam.update(&mut model);
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let (val_loss, val_accuracy) = loss_and_accuracy(&model, val_set)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(TcdError::Diverged { epoch, train_loss, val_loss });
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            train_accuracy: correct as f64 / train_set.len() as f64,
            val_loss,
            val_accuracy,
        };
        info!(epoch, train_loss, val_loss, val_accuracy, "epoch");
        history.push(record);

        match &best {
            Some((b, _, _)) if val_loss >= *b => {}
            _ => best = Some((val_loss, epoch, model.clone())),
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
        if epoch - best_epoch >= tc.patience {
            stopped_early = true;
            break;
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome { model, history, best_epoch, stopped_early })
}
