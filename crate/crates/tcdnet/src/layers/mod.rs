//! Network layers with hand-written backward passes. Every layer's forward
//! returns its output plus whatever the backward pass needs; backward
//! accumulates parameter gradients and returns the input gradient.

mod cbam;
mod conv;
mod dense;
mod multiscale;
mod spp;

pub use cbam::{Cbam, CbamCache};
pub use conv::Conv2d;
pub use dense::Dense;
pub use multiscale::{Multiscale, MultiscaleCache};
pub use spp::{Spp, SppCache};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Scalar;

/// A named weight tensor and its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Param { name: name.into(), shape, value: vec![T::zero(); len], grad: vec![T::zero(); len] }
    }

    /// Zero-mean normal fill with standard deviation `sqrt(gain / fan_in)`.
    pub fn normal(name: impl Into<String>, shape: Vec<usize>, fan_in: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(name, shape);
        let dist = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
        for v in &mut p.value {
            *v = T::of(dist.sample(rng));
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Feeds which side of every rectifier kink the values sit on.
pub(crate) fn hash_signs<T: Scalar>(v: &[T], h: &mut impl std::hash::Hasher) {
    for chunk in v.chunks(64) {
        let mut bits = 0u64;
        for (i, x) in chunk.iter().enumerate() {
            bits |= u64::from(*x > T::zero()) << i;
        }
        h.write_u64(bits);
    }
}

pub(crate) fn relu_inplace<T: Scalar>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Zero `grad` wherever the post-activation output was not positive.
pub(crate) fn relu_backward<T: Scalar>(out: &[T], grad: &mut [T]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
