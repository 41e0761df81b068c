use rand::Rng;

use super::Param;
use crate::tensor::{gemm, Scalar, Tensor};

/// 2-D convolution with square kernel, lowered to a matrix product over
/// im2col patches. Weights are `[out][in][k][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_c * k * k;
        Conv2d {
            in_c,
            out_c,
            k,
            stride,
            pad,
            weight: Param::normal(format!("{name}.weight"), vec![out_c, in_c, k, k], fan_in, gain, rng),
            bias: Param::zeros(format!("{name}.bias"), vec![out_c]),
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * self.pad - self.k) / self.stride + 1, (w + 2 * self.pad - self.k) / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch_len(&self) -> usize {
        self.in_c * self.k * self.k
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.in_c, "conv input channels");
        let (ho, wo) = self.out_size(x.h, x.w);
        let mut y = Tensor::zeros(x.n, self.out_c, ho, wo);
        let kk = self.patch_len();
        let mut cols = if self.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * ho * wo] };
        for i in 0..x.n {
            let patches: &[T] = if self.is_pointwise() {
                x.sample(i)
            } else {
                self.im2col(x.sample(i), x.h, x.w, ho, wo, &mut cols);
                &cols
            };
            let out = y.sample_mut(i);
            gemm(&self.weight.value, false, patches, false, out, self.out_c, kk, ho * wo, T::zero());
            for (o, plane) in out.chunks_mut(ho * wo).enumerate() {
                let b = self.bias.value[o];
                plane.iter_mut().for_each(|v| *v = *v + b);
            }
        }
        y
    }

    /// Accumulates weight and bias gradients; returns the input gradient
    /// when `need_dx`.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, need_dx: bool) -> Option<Tensor<T>> {
        let (ho, wo) = (dy.h, dy.w);
        let kk = self.patch_len();
        let hw = ho * wo;
        let mut cols = if self.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * hw] };
        let mut dcols = vec![T::zero(); kk * hw];
        let mut dx = need_dx.then(|| x.same_shape());
        for i in 0..x.n {
            let g = dy.sample(i);
            let patches: &[T] = if self.is_pointwise() {
                x.sample(i)
            } else {
                self.im2col(x.sample(i), x.h, x.w, ho, wo, &mut cols);
                &cols
            };
            gemm(g, false, patches, true, &mut self.weight.grad, self.out_c, hw, kk, T::one());
            for (o, plane) in g.chunks(hw).enumerate() {
                self.bias.grad[o] = self.bias.grad[o] + plane.iter().copied().sum::<T>();
            }
            if let Some(dx) = dx.as_mut() {
                if self.is_pointwise() {
                    gemm(&self.weight.value, true, g, false, dx.sample_mut(i), kk, self.out_c, hw, T::zero());
                } else {
                    gemm(&self.weight.value, true, g, false, &mut dcols, kk, self.out_c, hw, T::zero());
                    self.col2im(&dcols, x.h, x.w, ho, wo, dx.sample_mut(i));
                }
            }
        }
        dx
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, ho: usize, wo: usize, cols: &mut [T]) {
        let (k, s, p) = (self.k, self.stride, self.pad as isize);
        for c in 0..self.in_c {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + ky) * k + kx) * ho * wo;
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p;
                        let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            dst.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            *d = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [T]) {
        let (k, s, p) = (self.k, self.stride, self.pad as isize);
        for c in 0..self.in_c {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + ky) * k + kx) * ho * wo;
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] = dst[ix as usize] + v;
                            }
                        }
                    }
                }
            }
        }
    }
}
