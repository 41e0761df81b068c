//! The classifier: three multiscale/attention/downsampling blocks, pyramid
//! pooling and a dense head ending in a softmax over the three conditions.

use darts_core::condition::Condition;
use darts_core::pipeline::TrajectoryImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{relu_backward, relu_inplace, Cbam, CbamCache, Conv2d, Dense, Multiscale, MultiscaleCache, Param, Spp, SppCache};
use crate::tensor::{Scalar, Tensor};
use crate::TcdError;

pub const CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub block_widths: Vec<usize>,
    pub multiscale_kernels: Vec<usize>,
    pub spp_grids: Vec<usize>,
    pub dense_widths: Vec<usize>,
    pub classes: usize,
    /// Hidden width of the channel-attention perceptron is `width / reduction`.
    pub attention_reduction: usize,
    pub attention_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_channels: 1,
            block_widths: vec![32, 64, 128],
            multiscale_kernels: vec![1, 3, 5, 7],
            spp_grids: vec![1, 2, 4],
            dense_widths: vec![256, 64],
            classes: CLASSES,
            attention_reduction: 8,
            attention_kernel: 7,
        }
    }
}

impl ModelConfig {
    /// Small variant used for numerical checks.
    pub fn reduced(input_channels: usize) -> Self {
        ModelConfig { input_channels, block_widths: vec![4, 8, 8], dense_widths: vec![16, 8], ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), TcdError> {
        let bad = |m: String| Err(TcdError::Config(m));
        if !matches!(self.input_channels, 1 | 3) {
            return bad(format!("input_channels must be 1 or 3, got {}", self.input_channels));
        }
        if self.block_widths.len() != 3 {
            return bad(format!("expected 3 feature blocks, got {}", self.block_widths.len()));
        }
        if self.multiscale_kernels.len() != 4 || self.multiscale_kernels.iter().any(|k| k % 2 == 0) {
            return bad("expected 4 odd multiscale kernel sizes".into());
        }
        if let Some(w) = self.block_widths.iter().find(|&&w| w == 0 || w % self.multiscale_kernels.len() != 0) {
            return bad(format!("block width {w} not divisible across {} kernels", self.multiscale_kernels.len()));
        }
        if self.spp_grids.len() != 3 || self.spp_grids.contains(&0) {
            return bad("expected 3 non-zero pyramid grids".into());
        }
        if self.classes != CLASSES {
            return bad(format!("expected {CLASSES} classes, got {}", self.classes));
        }
        if self.dense_widths.contains(&0) || self.attention_reduction == 0 || self.attention_kernel % 2 == 0 {
            return bad("dense widths, attention reduction and kernel must be positive (kernel odd)".into());
        }
        Ok(())
    }

    pub fn spp_len(&self) -> usize {
        self.block_widths.last().copied().unwrap_or(0) * self.spp_grids.iter().map(|g| g * g).sum::<usize>()
    }

    /// Smallest image side that survives the downsamplings with room for the
    /// finest pyramid grid.
    pub fn min_input_size(&self) -> usize {
        let grid = self.spp_grids.iter().copied().max().unwrap_or(1);
        (1usize..).find(|&s| self.block_widths.iter().fold(s, |v, _| v.div_ceil(2)) >= grid).expect("finite")
    }

    pub fn check_input(&self, channels: usize, height: usize, width: usize) -> Result<(), TcdError> {
        if channels != self.input_channels {
            return Err(TcdError::ChannelMismatch { expected: self.input_channels, got: channels });
        }
        let min = self.min_input_size();
        if height < min || width < min {
            return Err(TcdError::InputTooSmall { height, width, min });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub multiscale: Multiscale<T>,
    pub attention: Cbam<T>,
    pub down: Conv2d<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub blocks: Vec<Block<T>>,
    pub spp: Spp,
    pub head: Vec<Dense<T>>,
}

struct BlockTrace<T> {
    multiscale: MultiscaleCache<T>,
    attention: CbamCache<T>,
    attended: Tensor<T>,
    down: Tensor<T>,
}

struct Trace<T> {
    blocks: Vec<BlockTrace<T>>,
    spp: SppCache,
    /// Input to each dense layer; entry 0 is the pyramid vector.
    dense_in: Vec<Vec<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self, TcdError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::new();
        let mut in_c = config.input_channels;
        for (b, &w) in config.block_widths.iter().enumerate() {
            blocks.push(Block {
                multiscale: Multiscale::new(&format!("block{b}.multiscale"), in_c, w, &config.multiscale_kernels, &mut rng),
                attention: Cbam::new(&format!("block{b}.attention"), w, config.attention_reduction, config.attention_kernel, &mut rng),
                down: Conv2d::new(&format!("block{b}.down"), w, w, 3, 2, 1, 2.0, &mut rng),
            });
            in_c = w;
        }
        let spp = Spp { grids: config.spp_grids.clone() };
        let mut head = Vec::new();
        let mut width = config.spp_len();
        for (i, &d) in config.dense_widths.iter().enumerate() {
            head.push(Dense::new(&format!("dense{i}"), width, d, 2.0, &mut rng));
            width = d;
        }
        head.push(Dense::new("output", width, config.classes, 1.0, &mut rng));
        Ok(Model { config, blocks, spp, head })
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            for c in &b.multiscale.branches {
                out.extend([&c.weight, &c.bias]);
            }
            let a = &b.attention;
            out.extend([&a.w1, &a.b1, &a.w2, &a.b2, &a.spatial.weight, &a.spatial.bias]);
            out.extend([&b.down.weight, &b.down.bias]);
        }
        for d in &self.head {
            out.extend([&d.weight, &d.bias]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            for c in &mut b.multiscale.branches {
                out.extend([&mut c.weight, &mut c.bias]);
            }
            let a = &mut b.attention;
            out.extend([&mut a.w1, &mut a.b1, &mut a.w2, &mut a.b2, &mut a.spatial.weight, &mut a.spatial.bias]);
            out.extend([&mut b.down.weight, &mut b.down.bias]);
        }
        for d in &mut self.head {
            out.extend([&mut d.weight, &mut d.bias]);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn check(&self, x: &Tensor<T>) -> Result<(), TcdError> {
        self.config.check_input(x.c, x.h, x.w)
    }

    fn trace(&self, x: &Tensor<T>) -> (Vec<T>, Trace<T>) {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut cur = x.clone();
        for b in &self.blocks {
            let (ms, multiscale) = b.multiscale.forward(&cur);
            let (attended, attention) = b.attention.forward(&ms);
            let mut down = b.down.forward(&attended);
            relu_inplace(&mut down.data);
            cur = down.clone();
            blocks.push(BlockTrace { multiscale, attention, attended, down });
        }
        let (pooled, spp) = self.spp.forward(&cur);
        let mut dense_in = vec![pooled];
        let last = self.head.len() - 1;
        let mut logits = Vec::new();
        for (i, d) in self.head.iter().enumerate() {
            let mut y = d.forward(dense_in.last().expect("input"), x.n);
            if i < last {
                relu_inplace(&mut y);
                dense_in.push(y);
            } else {
                logits = y;
            }
        }
        (logits, Trace { blocks, spp, dense_in })
    }

    /// Mean cross-entropy together with a hash of every rectifier mask and
    /// max-pooling choice. The loss is smooth in the parameters wherever the
    /// hash stays constant.
    pub fn loss_with_pattern(&self, x: &Tensor<T>, labels: &[usize]) -> Result<(f64, u64), TcdError> {
        use std::hash::Hasher;
        self.check(x)?;
        let (logits, trace) = self.trace(x);
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for b in &trace.blocks {
            b.multiscale.signature(&mut h);
            b.attention.signature(&mut h);
            crate::layers::hash_signs(&b.down.data, &mut h);
        }
        trace.spp.signature(&mut h);
        for d in &trace.dense_in[1..] {
            crate::layers::hash_signs(d, &mut h);
        }
        Ok((mean_cross_entropy(&logits, labels).0.f64(), h.finish()))
    }

    /// Pyramid-pooled feature vectors, `[n][spp_len]`.
    pub fn features(&self, x: &Tensor<T>) -> Result<Vec<T>, TcdError> {
        self.check(x)?;
        let (_, trace) = self.trace(x);
        Ok(trace.dense_in.into_iter().next().expect("pooled"))
    }

    pub fn logits(&self, x: &Tensor<T>) -> Result<Vec<T>, TcdError> {
        self.check(x)?;
        Ok(self.trace(x).0)
    }

    /// Softmax probabilities per sample.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<[f64; CLASSES]>, TcdError> {
        Ok(self.logits(x)?.chunks(CLASSES).map(softmax).collect())
    }

    /// Mean cross-entropy without touching gradients.
    pub fn loss(&self, x: &Tensor<T>, labels: &[usize]) -> Result<f64, TcdError> {
        let logits = self.logits(x)?;
        Ok(mean_cross_entropy(&logits, labels).0.f64())
    }

    /// Zeroes gradients, runs forward and backward, and returns the mean
    /// cross-entropy and per-sample probabilities.
    pub fn loss_and_backward(&mut self, x: &Tensor<T>, labels: &[usize]) -> Result<(f64, Vec<[f64; CLASSES]>), TcdError> {
        self.check(x)?;
        assert_eq!(labels.len(), x.n, "one label per sample");
        for p in self.params_mut() {
            p.zero_grad();
        }
        let (logits, trace) = self.trace(x);
        let (loss, mut grad) = mean_cross_entropy(&logits, labels);
        let probs = logits.chunks(CLASSES).map(softmax).collect();

        for (i, d) in self.head.iter_mut().enumerate().rev() {
            let input = &trace.dense_in[i];
            let mut dx = d.backward(input, &grad, x.n);
            if i > 0 {
                relu_backward(input, &mut dx);
            }
            grad = dx;
        }
        let mut g = self.spp.backward(&trace.spp, &grad);
        for (bi, (b, t)) in self.blocks.iter_mut().zip(&trace.blocks).enumerate().rev() {
            relu_backward(&t.down.data, &mut g.data);
            let d_att = b.down.backward(&t.attended, &g, true).expect("downsample gradient");
            let d_ms = b.attention.backward(&t.attention, &d_att);
            match b.multiscale.backward(&t.multiscale, &d_ms, bi > 0) {
                Some(d) => g = d,
                None => break,
            }
        }
        Ok((loss.f64(), probs))
    }

    /// Probabilities for a batch of images.
    pub fn predict_images(&self, images: &[TrajectoryImage]) -> Result<Vec<[f64; CLASSES]>, TcdError> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(32) {
            let refs: Vec<&TrajectoryImage> = chunk.iter().collect();
            out.extend(self.predict(&images_to_tensor(&refs)?)?);
        }
        Ok(out)
    }

    pub fn classify(&self, image: &TrajectoryImage) -> Result<(Condition, [f64; CLASSES]), TcdError> {
        let p = self.predict(&images_to_tensor(&[image])?)?[0];
        Ok((decide(&p), p))
    }

    /// Order-preserving batch classification.
    pub fn classify_batch(&self, images: &[TrajectoryImage]) -> Result<Vec<(Condition, [f64; CLASSES])>, TcdError> {
        Ok(self.predict_images(images)?.into_iter().map(|p| (decide(&p), p)).collect())
    }

    /// Same weights at another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut out = Model::<U>::build(self.config.clone(), 0).expect("validated config");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            dst.value = src.value.iter().map(|v| U::of(v.f64())).collect();
        }
        out
    }
}

/// Arg-max with ties going to the higher label.
pub fn decide(p: &[f64; CLASSES]) -> Condition {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v >= p[best] {
            best = i;
        }
    }
    Condition::from_label(best as u8).expect("three classes")
}

pub fn softmax<T: Scalar>(logits: &[T]) -> [f64; CLASSES] {
    let z: Vec<f64> = logits.iter().map(|v| v.f64()).collect();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let mut out = [0.0; CLASSES];
    for (o, v) in out.iter_mut().zip(&e) {
        *o = v / s;
    }
    out
}

/// Mean cross-entropy over rows of `logits` and its gradient.
pub fn mean_cross_entropy<T: Scalar>(logits: &[T], labels: &[usize]) -> (T, Vec<T>) {
    let n = labels.len();
    let inv_n = T::of(1.0 / n as f64);
    let mut grad = vec![T::zero(); logits.len()];
    let mut total = T::zero();
    for (i, (row, &y)) in logits.chunks(CLASSES).zip(labels).enumerate() {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - m).exp()).sum();
        let log_z = m + sum.ln();
        total = total + (log_z - row[y]);
        for (k, &v) in row.iter().enumerate() {
            let p = (v - log_z).exp();
            let target = if k == y { T::one() } else { T::zero() };
            grad[i * CLASSES + k] = (p - target) * inv_n;
        }
    }
    (total * inv_n, grad)
}

/// Stacks images into one batch; all must share size and channel count.
pub fn images_to_tensor<T: Scalar>(images: &[&TrajectoryImage]) -> Result<Tensor<T>, TcdError> {
    let first = images.first().ok_or(TcdError::EmptyDataset("batch"))?;
    let (c, h, w) = (first.channels, first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if img.channels != c {
            return Err(TcdError::ChannelMismatch { expected: c, got: img.channels });
        }
        if (img.height, img.width) != (h, w) {
            return Err(TcdError::Config(format!("mixed image sizes {}x{} and {}x{}", w, h, img.width, img.height)));
        }
        data.extend(img.pixels.iter().map(|&v| T::of(v as f64)));
    }
    Ok(Tensor::from_vec(images.len(), c, h, w, data))
}
