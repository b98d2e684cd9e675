//! Spatial resampling: bilinear ×2 upsampling and average pooling.

use crate::{Real, Tensor};

/// Source taps of one output coordinate for half-pixel-centred ×2 upsampling
/// (`align_corners = false`), negative source coordinates clamped to zero.
#[inline]
fn taps(o: usize, n_in: usize) -> (usize, usize, f64) {
    let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(n_in - 1);
    let i1 = (i0 + 1).min(n_in - 1);
    (i0, i1, src - i0 as f64)
}

pub fn upsample2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (2 * h, 2 * w);
    let ys: Vec<_> = (0..ho).map(|o| taps(o, h)).collect();
    let xs: Vec<_> = (0..wo).map(|o| taps(o, w)).collect();
    let mut out = Tensor::zeros([n, c, ho, wo]);
    for b in 0..n {
        for ch in 0..c {
            let src = &x.item(b)[ch * h * w..(ch + 1) * h * w];
            let dst = &mut out.item_mut(b)[ch * ho * wo..(ch + 1) * ho * wo];
            for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
                let ly = T::from_f64(ly);
                for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                    let lx = T::from_f64(lx);
                    let top = src[y0 * w + x0] * (T::ONE - lx) + src[y0 * w + x1] * lx;
                    let bot = src[y1 * w + x0] * (T::ONE - lx) + src[y1 * w + x1] * lx;
                    dst[oy * wo + ox] = top * (T::ONE - ly) + bot * ly;
                }
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Real>(x_shape: [usize; 4], dout: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x_shape;
    let (ho, wo) = (2 * h, 2 * w);
    let ys: Vec<_> = (0..ho).map(|o| taps(o, h)).collect();
    let xs: Vec<_> = (0..wo).map(|o| taps(o, w)).collect();
    let mut dx = Tensor::zeros(x_shape);
    for b in 0..n {
        for ch in 0..c {
            let g = &dout.item(b)[ch * ho * wo..(ch + 1) * ho * wo];
            let d = &mut dx.item_mut(b)[ch * h * w..(ch + 1) * h * w];
            for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
                let ly = T::from_f64(ly);
                for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                    let lx = T::from_f64(lx);
                    let gv = g[oy * wo + ox];
                    d[y0 * w + x0] += gv * (T::ONE - ly) * (T::ONE - lx);
                    d[y0 * w + x1] += gv * (T::ONE - ly) * lx;
                    d[y1 * w + x0] += gv * ly * (T::ONE - lx);
                    d[y1 * w + x1] += gv * ly * lx;
                }
            }
        }
    }
    dx
}

/// 2×2 average pooling with stride 2; odd trailing rows/columns are dropped.
pub fn avg_pool2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (h / 2, w / 2);
    let q = T::from_f64(0.25);
    Tensor::from_fn([n, c, ho, wo], |[b, ch, y, xx]| {
        (x.at([b, ch, 2 * y, 2 * xx])
            + x.at([b, ch, 2 * y, 2 * xx + 1])
            + x.at([b, ch, 2 * y + 1, 2 * xx])
            + x.at([b, ch, 2 * y + 1, 2 * xx + 1]))
            * q
    })
}

pub fn avg_pool2_backward<T: Real>(x_shape: [usize; 4], dout: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(x_shape);
    let [n, c, ho, wo] = dout.shape();
    let q = T::from_f64(0.25);
    for b in 0..n {
        for ch in 0..c {
            for y in 0..ho {
                for xx in 0..wo {
                    let g = dout.at([b, ch, y, xx]) * q;
                    for (dy, dxo) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let i = dx.index([b, ch, 2 * y + dy, 2 * xx + dxo]);
                        dx.data_mut()[i] += g;
                    }
                }
            }
        }
    }
    dx
}

/// Global average pooling to `[n, c, 1, 1]`.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, _, _] = x.shape();
    let p = x.plane();
    let inv = T::from_f64(1.0 / p as f64);
    let mut out = Tensor::zeros([n, c, 1, 1]);
    for b in 0..n {
        for ch in 0..c {
            let s: T = x.item(b)[ch * p..(ch + 1) * p].iter().copied().sum();
            out.set([b, ch, 0, 0], s * inv);
        }
    }
    out
}

pub fn global_avg_pool_backward<T: Real>(x_shape: [usize; 4], dout: &Tensor<T>) -> Tensor<T> {
    let p = x_shape[2] * x_shape[3];
    let inv = T::from_f64(1.0 / p as f64);
    let mut dx = Tensor::zeros(x_shape);
    for b in 0..x_shape[0] {
        for ch in 0..x_shape[1] {
            let g = dout.at([b, ch, 0, 0]) * inv;
            dx.item_mut(b)[ch * p..(ch + 1) * p].fill(g);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_of_constant_is_constant() {
        let x = Tensor::<f64>::full([1, 2, 3, 4], 0.7);
        let y = upsample2(&x);
        assert_eq!(y.shape(), [1, 2, 6, 8]);
        assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn upsample_interpolates_between_neighbours() {
        // 1-D ramp 0, 1: output samples sit at -0.25 (clamped), 0.25, 0.75, 1.25 (clamped).
        let x = Tensor::<f64>::from_vec([1, 1, 1, 2], vec![0.0, 1.0]);
        let y = upsample2(&x);
        assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn global_pool_of_constant_equals_constant() {
        let x = Tensor::<f64>::full([1, 3, 5, 5], -1.25);
        let one = Tensor::<f64>::full([1, 3, 1, 1], -1.25);
        assert_eq!(global_avg_pool(&x), global_avg_pool(&one));
    }
}
