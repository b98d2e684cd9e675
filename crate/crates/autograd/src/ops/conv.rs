//! Dense 2-D convolution and its transpose via im2col + GEMM.

use crate::{Real, Tensor};

/// Geometry of a convolution from an image `[c, h, w]` onto an output grid `[ho, wo]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(c: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Self {
        assert!(stride >= 1);
        assert!(
            h + 2 * pad >= kh && w + 2 * pad >= kw,
            "kernel {kh}x{kw} larger than padded input {h}x{w} (pad {pad})"
        );
        ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Output columns `lo..hi` whose tap `kx` lands inside the input row.
    #[inline]
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        // ix = ox*stride + kx - pad must lie in [0, w)
        let lo = self.pad.saturating_sub(kx).div_ceil(self.stride);
        let hi = if self.w + self.pad > kx { (self.w + self.pad - kx).div_ceil(self.stride) } else { 0 };
        (lo.min(self.wo), hi.min(self.wo).max(lo.min(self.wo)))
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds `x: [c, h, w]` into `cols: [c*kh*kw, ho*wo]`.
pub fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let p = g.cols();
    let pad = g.pad as isize;
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let (lo, hi) = g.valid_cols(kx);
                    line[..lo].fill(T::ZERO);
                    line[hi..].fill(T::ZERO);
                    let ix0 = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        line[lo..hi].copy_from_slice(&src[ix0..ix0 + hi - lo]);
                    } else {
                        for (i, d) in line[lo..hi].iter_mut().enumerate() {
                            *d = src[ix0 + i * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` back into `x`.
pub fn col2im<T: Real>(g: &ConvGeom, cols: &[T], x: &mut [T]) {
    let p = g.cols();
    let pad = g.pad as isize;
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let line = &src[oy * g.wo..(oy + 1) * g.wo];
                    let (lo, hi) = g.valid_cols(kx);
                    let ix0 = (lo * g.stride + kx).wrapping_sub(g.pad);
                    if lo < hi {
                        for (i, &v) in line[lo..hi].iter().enumerate() {
                            dst[ix0 + i * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (c, &b) in bias.iter().enumerate() {
        for v in &mut out[c * plane..(c + 1) * plane] {
            *v += b;
        }
    }
}

fn bias_grad<T: Real>(dout: &Tensor<T>) -> Tensor<T> {
    let [n, c, _, _] = dout.shape();
    let p = dout.plane();
    let mut db = Tensor::zeros([c, 1, 1, 1]);
    for b in 0..n {
        let item = dout.item(b);
        for ch in 0..c {
            db.data_mut()[ch] += item[ch * p..(ch + 1) * p].iter().copied().sum::<T>();
        }
    }
    db
}

/// `w: [cout, cin, kh, kw]`, `bias: [cout, 1, 1, 1]`.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Tensor<T> {
    let [n, cin, h, wd] = x.shape();
    let [cout, wcin, kh, kw] = w.shape();
    assert_eq!(cin, wcin, "conv2d: input has {cin} channels, weight expects {wcin}");
    let g = ConvGeom::new(cin, h, wd, kh, kw, stride, pad);
    let (k, p) = (g.rows(), g.cols());
    let mut out = Tensor::zeros([n, cout, g.ho, g.wo]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::ZERO; k * p] };
    for b in 0..n {
        let src: &[T] = if g.is_pointwise() {
            x.item(b)
        } else {
            im2col(&g, x.item(b), &mut cols);
            &cols
        };
        let dst = out.item_mut(b);
        T::gemm(cout, k, p, w.data(), k as isize, 1, src, p as isize, 1, T::ZERO, dst);
        if let Some(bias) = bias {
            add_bias(dst, bias.data(), p);
        }
    }
    out
}

pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> ConvGrads<T> {
    let [n, cin, h, wd] = x.shape();
    let [cout, _, kh, kw] = w.shape();
    let g = ConvGeom::new(cin, h, wd, kh, kw, stride, pad);
    let (k, p) = (g.rows(), g.cols());
    let mut dw = Tensor::zeros(w.shape());
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut cols = vec![T::ZERO; k * p];
    for b in 0..n {
        let dy = dout.item(b);
        let src: &[T] = if g.is_pointwise() {
            x.item(b)
        } else {
            im2col(&g, x.item(b), &mut cols);
            &cols
        };
        // dW += dY · colsᵀ
        T::gemm(cout, p, k, dy, p as isize, 1, src, 1, p as isize, T::ONE, dw.data_mut());
        if let Some(dx) = dx.as_mut() {
            if g.is_pointwise() {
                T::gemm(cin, cout, p, w.data(), 1, k as isize, dy, p as isize, 1, T::ONE, dx.item_mut(b));
            } else {
                // dcols = Wᵀ · dY
                T::gemm(k, cout, p, w.data(), 1, k as isize, dy, p as isize, 1, T::ZERO, &mut cols);
                col2im(&g, &cols, dx.item_mut(b));
            }
        }
    }
    ConvGrads {
        dx,
        dw,
        db: bias_grad(dout),
    }
}

fn transpose_geom(
    cout: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> ConvGeom {
    assert!(out_pad < stride.max(1), "output padding must be smaller than stride");
    let ho = (h - 1) * stride + kh + out_pad - 2 * pad;
    let wo = (w - 1) * stride + kw + out_pad - 2 * pad;
    let g = ConvGeom::new(cout, ho, wo, kh, kw, stride, pad);
    debug_assert_eq!((g.ho, g.wo), (h, w));
    g
}

/// Transposed convolution, `w: [cin, cout, kh, kw]`.
pub fn conv_transpose2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Tensor<T> {
    let [n, cin, h, wd] = x.shape();
    let [wcin, cout, kh, kw] = w.shape();
    assert_eq!(cin, wcin, "conv_transpose2d: input has {cin} channels, weight expects {wcin}");
    let g = transpose_geom(cout, h, wd, kh, kw, stride, pad, out_pad);
    let (k, p) = (g.rows(), g.cols());
    let mut out = Tensor::zeros([n, cout, g.h, g.w]);
    let mut cols = vec![T::ZERO; k * p];
    for b in 0..n {
        // cols = Wᵀ · x
        T::gemm(k, cin, p, w.data(), 1, k as isize, x.item(b), p as isize, 1, T::ZERO, &mut cols);
        let dst = out.item_mut(b);
        col2im(&g, &cols, dst);
        if let Some(bias) = bias {
            add_bias(dst, bias.data(), g.h * g.w);
        }
    }
    out
}

pub fn conv_transpose2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
    stride: usize,
    pad: usize,
    out_pad: usize,
    need_dx: bool,
) -> ConvGrads<T> {
    let [n, cin, h, wd] = x.shape();
    let [_, cout, kh, kw] = w.shape();
    let g = transpose_geom(cout, h, wd, kh, kw, stride, pad, out_pad);
    let (k, p) = (g.rows(), g.cols());
    let mut dw = Tensor::zeros(w.shape());
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let mut cols = vec![T::ZERO; k * p];
    for b in 0..n {
        im2col(&g, dout.item(b), &mut cols);
        // dW += x · dcolsᵀ
        T::gemm(cin, p, k, x.item(b), p as isize, 1, &cols, 1, p as isize, T::ONE, dw.data_mut());
        if let Some(dx) = dx.as_mut() {
            T::gemm(cin, k, p, w.data(), k as isize, 1, &cols, p as isize, 1, T::ZERO, dx.item_mut(b));
        }
    }
    ConvGrads {
        dx,
        dw,
        db: bias_grad(dout),
    }
}

/// Depthwise convolution with per-sample kernels `k: [n, c, kh, kw]` (stride 1).
pub fn depthwise_dyn<T: Real>(x: &Tensor<T>, k: &Tensor<T>, pad: usize) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let [kn, kc, kh, kw] = k.shape();
    assert_eq!((kn, kc), (n, c), "depthwise kernel shape {:?} vs input {:?}", k.shape(), x.shape());
    let ho = h + 2 * pad - kh + 1;
    let wo = w + 2 * pad - kw + 1;
    let mut out = Tensor::zeros([n, c, ho, wo]);
    for b in 0..n {
        for ch in 0..c {
            let xp = &x.item(b)[ch * h * w..(ch + 1) * h * w];
            let kbase = (b * c + ch) * kh * kw;
            let kern = &k.data()[kbase..kbase + kh * kw];
            let o = &mut out.item_mut(b)[ch * ho * wo..(ch + 1) * ho * wo];
            for ky in 0..kh {
                for kx in 0..kw {
                    let kv = kern[ky * kw + kx];
                    for oy in 0..ho {
                        let iy = (oy + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &xp[iy as usize * w..(iy as usize + 1) * w];
                        let orow = &mut o[oy * wo..(oy + 1) * wo];
                        for (ox, ov) in orow.iter_mut().enumerate() {
                            let ix = (ox + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *ov += kv * row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn depthwise_dyn_backward<T: Real>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    dout: &Tensor<T>,
    pad: usize,
) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = x.shape();
    let [_, _, kh, kw] = k.shape();
    let [_, _, ho, wo] = dout.shape();
    let mut dx = Tensor::zeros(x.shape());
    let mut dk = Tensor::zeros(k.shape());
    for b in 0..n {
        for ch in 0..c {
            let xoff = (b * c + ch) * h * w;
            let ooff = (b * c + ch) * ho * wo;
            let kbase = (b * c + ch) * kh * kw;
            for ky in 0..kh {
                for kx in 0..kw {
                    let kv = k.data()[kbase + ky * kw + kx];
                    let mut acc = T::ZERO;
                    for oy in 0..ho {
                        let iy = (oy + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let xi = xoff + iy as usize * w + ix as usize;
                            let g = dout.data()[ooff + oy * wo + ox];
                            acc += g * x.data()[xi];
                            dx.data_mut()[xi] += g * kv;
                        }
                    }
                    dk.data_mut()[kbase + ky * kw + kx] = acc;
                }
            }
        }
    }
    (dx, dk)
}
