use rand::Rng;

use super::Param;
use crate::tensor::{gemm, Scalar};

/// Fully connected layer, weights `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(name: &str, inputs: usize, outputs: usize, gain: f64, rng: &mut impl Rng) -> Self {
        Dense {
            inputs,
            outputs,
            weight: Param::normal(format!("{name}.weight"), vec![outputs, inputs], inputs, gain, rng),
            bias: Param::zeros(format!("{name}.bias"), vec![outputs]),
        }
    }

    /// `x` is `[n][inputs]`.
    pub fn forward(&self, x: &[T], n: usize) -> Vec<T> {
        let mut y = vec![T::zero(); n * self.outputs];
        gemm(x, false, &self.weight.value, true, &mut y, n, self.inputs, self.outputs, T::zero());
        for row in y.chunks_mut(self.outputs) {
            row.iter_mut().zip(&self.bias.value).for_each(|(v, b)| *v = *v + *b);
        }
        y
    }

    pub fn backward(&mut self, x: &[T], dy: &[T], n: usize) -> Vec<T> {
        gemm(dy, true, x, false, &mut self.weight.grad, self.outputs, n, self.inputs, T::one());
        for row in dy.chunks(self.outputs) {
            self.bias.grad.iter_mut().zip(row).for_each(|(b, v)| *b = *b + *v);
        }
        let mut dx = vec![T::zero(); n * self.inputs];
        gemm(dy, false, &self.weight.value, false, &mut dx, n, self.outputs, self.inputs, T::zero());
        dx
    }
}
