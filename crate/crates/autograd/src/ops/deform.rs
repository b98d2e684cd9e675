//! Modulated deformable convolution (stride 1, "same" padding).
//!
//! Offsets are laid out as `[n, 2 * groups * taps, h, w]` with channel
//! `2 * (g * taps + t)` holding the x displacement and `+1` the y
//! displacement of tap `t` in offset group `g`. Masks are `[n, groups * taps, h, w]`.
//! Bilinear samples outside the image read as zero.

use crate::{Real, Tensor};

#[derive(Clone, Copy)]
struct Corner<T> {
    idx: Option<usize>,
    w: T,
    dwdy: T,
    dwdx: T,
}

#[inline]
fn corners<T: Real>(y: T, x: T, h: usize, w: usize) -> [Corner<T>; 4] {
    let y0 = y.floor();
    let x0 = x.floor();
    let ly = y - y0;
    let lx = x - x0;
    let hy = T::ONE - ly;
    let hx = T::ONE - lx;
    let y0i = y0.to_f64() as isize;
    let x0i = x0.to_f64() as isize;
    let at = |yy: isize, xx: isize| {
        (yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w).then(|| yy as usize * w + xx as usize)
    };
    [
        Corner { idx: at(y0i, x0i), w: hy * hx, dwdy: -hx, dwdx: -hy },
        Corner { idx: at(y0i, x0i + 1), w: hy * lx, dwdy: -lx, dwdx: hy },
        Corner { idx: at(y0i + 1, x0i), w: ly * hx, dwdy: hx, dwdx: -ly },
        Corner { idx: at(y0i + 1, x0i + 1), w: ly * lx, dwdy: lx, dwdx: ly },
    ]
}

#[inline]
fn sample<T: Real>(plane: &[T], cs: &[Corner<T>; 4]) -> T {
    let mut v = T::ZERO;
    for c in cs {
        if let Some(i) = c.idx {
            v += c.w * plane[i];
        }
    }
    v
}

struct Geom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    groups: usize,
}

impl Geom {
    fn taps(&self) -> usize {
        self.kh * self.kw
    }

    fn sample_pos<T: Real>(&self, off: &[T], b_off: usize, g: usize, t: usize, p: usize) -> (T, T) {
        let plane = self.h * self.w;
        let ch = 2 * (g * self.taps() + t);
        let dx = off[b_off + ch * plane + p];
        let dy = off[b_off + (ch + 1) * plane + p];
        let (py, px) = (p / self.w, p % self.w);
        let ky = t / self.kw;
        let kx = t % self.kw;
        let y = T::from_f64(py as f64 + ky as f64 - (self.kh / 2) as f64) + dy;
        let x = T::from_f64(px as f64 + kx as f64 - (self.kw / 2) as f64) + dx;
        (y, x)
    }
}

fn geom<T: Real>(x: &Tensor<T>, off: &Tensor<T>, mask: &Tensor<T>, w: &Tensor<T>, groups: usize) -> Geom {
    let [n, c, h, wd] = x.shape();
    let [_, wc, kh, kw] = w.shape();
    assert_eq!(wc, c, "deform conv weight expects {wc} channels, input has {c}");
    assert!(kh % 2 == 1 && kw % 2 == 1, "deform conv needs odd kernels");
    assert!(groups >= 1 && c % groups == 0, "channels {c} not divisible by groups {groups}");
    let taps = kh * kw;
    assert_eq!(off.shape(), [n, 2 * groups * taps, h, wd], "offset shape");
    assert_eq!(mask.shape(), [n, groups * taps, h, wd], "mask shape");
    Geom { c, h, w: wd, kh, kw, groups }
}

fn build_cols<T: Real>(gm: &Geom, x: &Tensor<T>, off: &Tensor<T>, mask: &Tensor<T>, b: usize, cols: &mut [T]) {
    let plane = gm.h * gm.w;
    let taps = gm.taps();
    let cpg = gm.c / gm.groups;
    let xb = x.item(b);
    let b_off = b * off.shape()[1] * plane;
    let b_mask = b * mask.shape()[1] * plane;
    for g in 0..gm.groups {
        for t in 0..taps {
            for p in 0..plane {
                let (y, xx) = gm.sample_pos(off.data(), b_off, g, t, p);
                let cs = corners(y, xx, gm.h, gm.w);
                let m = mask.data()[b_mask + (g * taps + t) * plane + p];
                for c in g * cpg..(g + 1) * cpg {
                    let v = sample(&xb[c * plane..(c + 1) * plane], &cs);
                    cols[(c * taps + t) * plane + p] = m * v;
                }
            }
        }
    }
}

pub fn deform_conv2d<T: Real>(
    x: &Tensor<T>,
    off: &Tensor<T>,
    mask: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    groups: usize,
) -> Tensor<T> {
    let gm = geom(x, off, mask, w, groups);
    let n = x.shape()[0];
    let cout = w.shape()[0];
    let plane = gm.h * gm.w;
    let k = gm.c * gm.taps();
    let mut cols = vec![T::ZERO; k * plane];
    let mut out = Tensor::zeros([n, cout, gm.h, gm.w]);
    for b in 0..n {
        build_cols(&gm, x, off, mask, b, &mut cols);
        let dst = out.item_mut(b);
        T::gemm(cout, k, plane, w.data(), k as isize, 1, &cols, plane as isize, 1, T::ZERO, dst);
        if let Some(bias) = bias {
            for (co, &bv) in bias.data().iter().enumerate() {
                for v in &mut dst[co * plane..(co + 1) * plane] {
                    *v += bv;
                }
            }
        }
    }
    out
}

pub struct DeformGrads<T> {
    pub dx: Tensor<T>,
    pub doff: Tensor<T>,
    pub dmask: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn deform_conv2d_backward<T: Real>(
    x: &Tensor<T>,
    off: &Tensor<T>,
    mask: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
    groups: usize,
) -> DeformGrads<T> {
    let gm = geom(x, off, mask, w, groups);
    let n = x.shape()[0];
    let cout = w.shape()[0];
    let plane = gm.h * gm.w;
    let taps = gm.taps();
    let cpg = gm.c / gm.groups;
    let k = gm.c * taps;
    let mut cols = vec![T::ZERO; k * plane];
    let mut dcols = vec![T::ZERO; k * plane];
    let mut dx = Tensor::zeros(x.shape());
    let mut doff = Tensor::zeros(off.shape());
    let mut dmask = Tensor::zeros(mask.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros([cout, 1, 1, 1]);
    for b in 0..n {
        let dy = dout.item(b);
        for co in 0..cout {
            db.data_mut()[co] += dy[co * plane..(co + 1) * plane].iter().copied().sum::<T>();
        }
        build_cols(&gm, x, off, mask, b, &mut cols);
        T::gemm(cout, plane, k, dy, plane as isize, 1, &cols, 1, plane as isize, T::ONE, dw.data_mut());
        T::gemm(k, cout, plane, w.data(), 1, k as isize, dy, plane as isize, 1, T::ZERO, &mut dcols);

        let xb_off = b * gm.c * plane;
        let b_off = b * off.shape()[1] * plane;
        let b_mask = b * mask.shape()[1] * plane;
        for g in 0..gm.groups {
            for t in 0..taps {
                let ch = 2 * (g * taps + t);
                for p in 0..plane {
                    let (y, xx) = gm.sample_pos(off.data(), b_off, g, t, p);
                    let cs = corners(y, xx, gm.h, gm.w);
                    let mi = b_mask + (g * taps + t) * plane + p;
                    let m = mask.data()[mi];
                    let mut gmask = T::ZERO;
                    let mut gy = T::ZERO;
                    let mut gx = T::ZERO;
                    for c in g * cpg..(g + 1) * cpg {
                        let gcol = dcols[(c * taps + t) * plane + p];
                        let xplane = &x.data()[xb_off + c * plane..xb_off + (c + 1) * plane];
                        let gs = gcol * m;
                        let mut v = T::ZERO;
                        let mut vy = T::ZERO;
                        let mut vx = T::ZERO;
                        for cr in &cs {
                            if let Some(i) = cr.idx {
                                let xv = xplane[i];
                                v += cr.w * xv;
                                vy += cr.dwdy * xv;
                                vx += cr.dwdx * xv;
                                dx.data_mut()[xb_off + c * plane + i] += gs * cr.w;
                            }
                        }
                        gmask += gcol * v;
                        gy += gs * vy;
                        gx += gs * vx;
                    }
                    dmask.data_mut()[mi] += gmask;
                    doff.data_mut()[b_off + ch * plane + p] += gx;
                    doff.data_mut()[b_off + (ch + 1) * plane + p] += gy;
                }
            }
        }
    }
    DeformGrads { dx, doff, dmask, dw, db }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::conv::conv2d;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_offsets_unit_masks_is_plain_conv() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::<f64>::from_fn([1, 4, 6, 7], |_| rng.random_range(-1.0..1.0));
        let w = Tensor::<f64>::from_fn([3, 4, 3, 3], |_| rng.random_range(-1.0..1.0));
        let off = Tensor::zeros([1, 2 * 2 * 9, 6, 7]);
        let mask = Tensor::full([1, 2 * 9, 6, 7], 1.0);
        let a = deform_conv2d(&x, &off, &mask, &w, None, 2);
        let b = conv2d(&x, &w, None, 1, 1);
        assert!(a.max_abs_diff(&b) < 1e-12);
    }
}
