use crate::tensor::{Scalar, Tensor};

/// Spatial pyramid max pooling. Each grid `g` splits the map into `g x g`
/// cells (row `i` spans `floor(i*h/g)..ceil((i+1)*h/g)`), so the output
/// length is `c * sum(g^2)` whatever the input size.
#[derive(Debug, Clone, PartialEq)]
pub struct Spp {
    pub grids: Vec<usize>,
}

pub struct SppCache {
    shape: (usize, usize, usize, usize),
    argmax: Vec<usize>,
}

impl SppCache {
    pub(crate) fn signature(&self, h: &mut impl std::hash::Hasher) {
        use std::hash::Hash;
        self.argmax.hash(h);
    }
}

impl Spp {
    pub fn out_len(&self, channels: usize) -> usize {
        channels * self.grids.iter().map(|g| g * g).sum::<usize>()
    }

    /// Output rows are `[grid][channel][cell]`, flattened per sample.
    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> (Vec<T>, SppCache) {
        let (n, c, h, w) = (x.n, x.c, x.h, x.w);
        let max_grid = self.grids.iter().copied().max().unwrap_or(1);
        assert!(h >= max_grid && w >= max_grid, "map {h}x{w} smaller than pyramid grid {max_grid}");
        let len = self.out_len(c);
        let mut out = vec![T::zero(); n * len];
        let mut argmax = vec![0usize; n * len];
        for i in 0..n {
            let s = x.sample(i);
            let mut k = i * len;
            for &g in &self.grids {
                for ch in 0..c {
                    let plane = &s[ch * h * w..(ch + 1) * h * w];
                    for gy in 0..g {
                        let (y0, y1) = (gy * h / g, ((gy + 1) * h).div_ceil(g));
                        for gx in 0..g {
                            let (x0, x1) = (gx * w / g, ((gx + 1) * w).div_ceil(g));
                            let mut best = plane[y0 * w + x0];
                            let mut arg = y0 * w + x0;
                            for yy in y0..y1 {
                                for xx in x0..x1 {
                                    let v = plane[yy * w + xx];
                                    if v > best {
                                        best = v;
                                        arg = yy * w + xx;
                                    }
                                }
                            }
                            out[k] = best;
                            argmax[k] = ch * h * w + arg;
                            k += 1;
                        }
                    }
                }
            }
        }
        (out, SppCache { shape: (n, c, h, w), argmax })
    }

    pub fn backward<T: Scalar>(&self, cache: &SppCache, dy: &[T]) -> Tensor<T> {
        let (n, c, h, w) = cache.shape;
        let mut dx = Tensor::zeros(n, c, h, w);
        let len = self.out_len(c);
        for i in 0..n {
            let d = dx.sample_mut(i);
            for k in 0..len {
                let at = cache.argmax[i * len + k];
                d[at] = d[at] + dy[i * len + k];
            }
        }
        dx
    }
}
