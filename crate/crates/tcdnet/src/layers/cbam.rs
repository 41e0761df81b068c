use rand::Rng;

use super::{relu_backward, relu_inplace, sigmoid, Conv2d, Param};
use crate::tensor::{gemm, Scalar, Tensor};

/// Channel attention followed by spatial attention. The channel gate comes
/// from a shared two-layer perceptron applied to the average- and
/// max-pooled channel descriptors; the spatial gate from a convolution over
/// the stacked channel-wise average and max maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Cbam<T> {
    pub channels: usize,
    pub hidden: usize,
    pub w1: Param<T>,
    pub b1: Param<T>,
    pub w2: Param<T>,
    pub b2: Param<T>,
    pub spatial: Conv2d<T>,
}

pub struct CbamCache<T> {
    input: Tensor<T>,
    /// `[2n][c]`: average descriptors then max descriptors.
    desc: Vec<T>,
    desc_argmax: Vec<usize>,
    hidden: Vec<T>,
    /// Channel gate `[n][c]`.
    pub channel_gate: Vec<T>,
    gated: Tensor<T>,
    maps: Tensor<T>,
    map_argmax: Vec<usize>,
    /// Spatial gate `[n][1][h][w]`.
    pub spatial_gate: Tensor<T>,
}

impl<T: Scalar> CbamCache<T> {
    pub(crate) fn signature(&self, h: &mut impl std::hash::Hasher) {
        use std::hash::Hash;
        super::hash_signs(&self.hidden, h);
        self.desc_argmax.hash(h);
        self.map_argmax.hash(h);
    }
}

impl<T: Scalar> Cbam<T> {
    pub fn new(name: &str, channels: usize, reduction: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        let hidden = (channels / reduction.max(1)).max(1);
        Cbam {
            channels,
            hidden,
            w1: Param::normal(format!("{name}.mlp1.weight"), vec![hidden, channels], channels, 2.0, rng),
            b1: Param::zeros(format!("{name}.mlp1.bias"), vec![hidden]),
            w2: Param::normal(format!("{name}.mlp2.weight"), vec![channels, hidden], hidden, 1.0, rng),
            b2: Param::zeros(format!("{name}.mlp2.bias"), vec![channels]),
            spatial: Conv2d::new(&format!("{name}.spatial"), 2, 1, kernel, 1, kernel / 2, 1.0, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> (Tensor<T>, CbamCache<T>) {
        let (n, c, hw) = (x.n, x.c, x.plane());
        assert_eq!(c, self.channels, "attention channels");
        let inv_hw = T::of(1.0 / hw as f64);

        let mut desc = vec![T::zero(); 2 * n * c];
        let mut desc_argmax = vec![0usize; n * c];
        for i in 0..n {
            for (ch, plane) in x.sample(i).chunks(hw).enumerate() {
                let (mut best, mut arg) = (plane[0], 0);
                let mut sum = T::zero();
                for (p, &v) in plane.iter().enumerate() {
                    sum = sum + v;
                    if v > best {
                        best = v;
                        arg = p;
                    }
                }
                desc[i * c + ch] = sum * inv_hw;
                desc[(n + i) * c + ch] = best;
                desc_argmax[i * c + ch] = arg;
            }
        }

        let h = self.hidden;
        let mut hidden = vec![T::zero(); 2 * n * h];
        gemm(&desc, false, &self.w1.value, true, &mut hidden, 2 * n, c, h, T::zero());
        for row in hidden.chunks_mut(h) {
            row.iter_mut().zip(&self.b1.value).for_each(|(v, b)| *v = *v + *b);
        }
        relu_inplace(&mut hidden);
        let mut logits = vec![T::zero(); 2 * n * c];
        gemm(&hidden, false, &self.w2.value, true, &mut logits, 2 * n, h, c, T::zero());
        let mut channel_gate = vec![T::zero(); n * c];
        for i in 0..n {
            for ch in 0..c {
                let z = logits[i * c + ch] + logits[(n + i) * c + ch] + self.b2.value[ch] + self.b2.value[ch];
                channel_gate[i * c + ch] = sigmoid(z);
            }
        }

        let mut gated = x.clone();
        for i in 0..n {
            for (ch, plane) in gated.sample_mut(i).chunks_mut(hw).enumerate() {
                let g = channel_gate[i * c + ch];
                plane.iter_mut().for_each(|v| *v = *v * g);
            }
        }

        let inv_c = T::of(1.0 / c as f64);
        let mut maps = Tensor::zeros(n, 2, x.h, x.w);
        let mut map_argmax = vec![0usize; n * hw];
        for i in 0..n {
            let f = gated.sample(i);
            let m = maps.sample_mut(i);
            for p in 0..hw {
                let (mut best, mut arg) = (f[p], 0);
                let mut sum = T::zero();
                for ch in 0..c {
                    let v = f[ch * hw + p];
                    sum = sum + v;
                    if v > best {
                        best = v;
                        arg = ch;
                    }
                }
                m[p] = sum * inv_c;
                m[hw + p] = best;
                map_argmax[i * hw + p] = arg;
            }
        }
        let mut spatial_gate = self.spatial.forward(&maps);
        spatial_gate.data.iter_mut().for_each(|v| *v = sigmoid(*v));

        let mut y = gated.clone();
        for i in 0..n {
            let s = &spatial_gate.data[i * hw..(i + 1) * hw];
            for plane in y.sample_mut(i).chunks_mut(hw) {
                plane.iter_mut().zip(s).for_each(|(v, g)| *v = *v * *g);
            }
        }
        let cache = CbamCache {
            input: x.clone(),
            desc,
            desc_argmax,
            hidden,
            channel_gate,
            gated,
            maps,
            map_argmax,
            spatial_gate,
        };
        (y, cache)
    }

    pub fn backward(&mut self, cache: &CbamCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let x = &cache.input;
        let (n, c, hw) = (x.n, x.c, x.plane());
        let one = T::one();

        // spatial gate
        let mut dgated = dy.clone();
        let mut dmap_raw = Tensor::zeros(n, 1, x.h, x.w);
        for i in 0..n {
            let s = &cache.spatial_gate.data[i * hw..(i + 1) * hw];
            let f = cache.gated.sample(i);
            let g = dy.sample(i);
            let dm = &mut dmap_raw.data[i * hw..(i + 1) * hw];
            for ch in 0..c {
                for p in 0..hw {
                    dm[p] = dm[p] + g[ch * hw + p] * f[ch * hw + p];
                }
            }
            for p in 0..hw {
                dm[p] = dm[p] * s[p] * (one - s[p]);
            }
            for plane in dgated.sample_mut(i).chunks_mut(hw) {
                plane.iter_mut().zip(s).for_each(|(v, g)| *v = *v * *g);
            }
        }
        let dmaps = self.spatial.backward(&cache.maps, &dmap_raw, true).expect("map gradient");
        let inv_c = T::of(1.0 / c as f64);
        for i in 0..n {
            let dm = dmaps.sample(i);
            let df = dgated.sample_mut(i);
            for p in 0..hw {
                let avg = dm[p] * inv_c;
                for ch in 0..c {
                    df[ch * hw + p] = df[ch * hw + p] + avg;
                }
                let arg = cache.map_argmax[i * hw + p];
                df[arg * hw + p] = df[arg * hw + p] + dm[hw + p];
            }
        }

        // channel gate
        let mut dx = dgated.clone();
        let mut dlogits = vec![T::zero(); 2 * n * c];
        for i in 0..n {
            let f = x.sample(i);
            let dg = dgated.sample(i);
            for ch in 0..c {
                let g = cache.channel_gate[i * c + ch];
                let dot: T = (0..hw).map(|p| dg[ch * hw + p] * f[ch * hw + p]).sum();
                let dz = dot * g * (one - g);
                dlogits[i * c + ch] = dz;
                dlogits[(n + i) * c + ch] = dz;
            }
            for (ch, plane) in dx.sample_mut(i).chunks_mut(hw).enumerate() {
                let g = cache.channel_gate[i * c + ch];
                plane.iter_mut().for_each(|v| *v = *v * g);
            }
        }
        let h = self.hidden;
        gemm(&dlogits, true, &cache.hidden, false, &mut self.w2.grad, c, 2 * n, h, one);
        for row in dlogits.chunks(c) {
            self.b2.grad.iter_mut().zip(row).for_each(|(b, v)| *b = *b + *v);
        }
        let mut dhidden = vec![T::zero(); 2 * n * h];
        gemm(&dlogits, false, &self.w2.value, false, &mut dhidden, 2 * n, c, h, T::zero());
        relu_backward(&cache.hidden, &mut dhidden);
        gemm(&dhidden, true, &cache.desc, false, &mut self.w1.grad, h, 2 * n, c, one);
        for row in dhidden.chunks(h) {
            self.b1.grad.iter_mut().zip(row).for_each(|(b, v)| *b = *b + *v);
        }
        let mut ddesc = vec![T::zero(); 2 * n * c];
        gemm(&dhidden, false, &self.w1.value, false, &mut ddesc, 2 * n, h, c, T::zero());
        let inv_hw = T::of(1.0 / hw as f64);
        for i in 0..n {
            for (ch, plane) in dx.sample_mut(i).chunks_mut(hw).enumerate() {
                let avg = ddesc[i * c + ch] * inv_hw;
                plane.iter_mut().for_each(|v| *v = *v + avg);
                let arg = cache.desc_argmax[i * c + ch];
                plane[arg] = plane[arg] + ddesc[(n + i) * c + ch];
            }
        }
        dx
    }
}
