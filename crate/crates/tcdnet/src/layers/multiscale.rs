use rand::Rng;

use super::{relu_backward, relu_inplace, Conv2d};
use crate::tensor::{Scalar, Tensor};

/// Parallel same-padded convolutions of different kernel sizes whose outputs
/// are stacked along the channel axis and rectified.
#[derive(Debug, Clone, PartialEq)]
pub struct Multiscale<T> {
    pub branches: Vec<Conv2d<T>>,
}

pub struct MultiscaleCache<T> {
    input: Tensor<T>,
    output: Tensor<T>,
}

impl<T: Scalar> MultiscaleCache<T> {
    pub(crate) fn signature(&self, h: &mut impl std::hash::Hasher) {
        super::hash_signs(&self.output.data, h);
    }
}

impl<T: Scalar> Multiscale<T> {
    /// `out_c` is split evenly across `kernels`.
    pub fn new(name: &str, in_c: usize, out_c: usize, kernels: &[usize], rng: &mut impl Rng) -> Self {
        let per = out_c / kernels.len();
        let branches = kernels
            .iter()
            .map(|&k| Conv2d::new(&format!("{name}.k{k}"), in_c, per, k, 1, k / 2, 2.0, rng))
            .collect();
        Multiscale { branches }
    }

    pub fn out_channels(&self) -> usize {
        self.branches.iter().map(|b| b.out_c).sum()
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, MultiscaleCache<T>) {
        let mut y = Tensor::zeros(x.n, self.out_channels(), x.h, x.w);
        let plane = x.plane();
        let mut offset = 0;
        for b in &self.branches {
            let part = b.forward(x);
            for i in 0..x.n {
                let dst = &mut y.sample_mut(i)[offset * plane..(offset + b.out_c) * plane];
                dst.copy_from_slice(part.sample(i));
            }
            offset += b.out_c;
        }
        relu_inplace(&mut y.data);
        (y.clone(), MultiscaleCache { input: x.clone(), output: y })
    }

    pub fn backward(&mut self, cache: &MultiscaleCache<T>, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let mut g = dy.clone();
        relu_backward(&cache.output.data, &mut g.data);
        let x = &cache.input;
        let plane = x.plane();
        let mut dx: Option<Tensor<T>> = None;
        let mut offset = 0;
        for b in &mut self.branches {
            let mut part = Tensor::zeros(x.n, b.out_c, x.h, x.w);
            for i in 0..x.n {
                part.sample_mut(i).copy_from_slice(&g.sample(i)[offset * plane..(offset + b.out_c) * plane]);
            }
            offset += b.out_c;
            if let Some(d) = b.backward(x, &part, need_dx) {
                match dx.as_mut() {
                    Some(acc) => acc.data.iter_mut().zip(&d.data).for_each(|(a, v)| *a = *a + *v),
                    None => dx = Some(d),
                }
            }
        }
        dx
    }
}
