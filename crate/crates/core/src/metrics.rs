//! Quality metrics, RD curves and Bjøntegaard deltas.
//!
//! PSNR and MS-SSIM are computed in RGB on [0, 1], averaged over the three planes.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video_io::Frame;

pub const PSNR_CAP: f64 = 100.0;

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check_same(a: &Frame, b: &Frame) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("frames {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    check_same(a, b)?;
    let s: f64 = a.data.iter().zip(&b.data).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    Ok(s / a.data.len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Normalised 1-D Gaussian window (11 taps, sigma 1.5).
pub fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

#[derive(Clone, Debug)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    /// Separable valid-region filtering.
    fn blur(&self, k: &[f64; WINDOW]) -> Plane {
        let (ow, oh) = (self.w + 1 - WINDOW, self.h + 1 - WINDOW);
        let mut tmp = vec![0.0; ow * self.h];
        for y in 0..self.h {
            for x in 0..ow {
                tmp[y * ow + x] = (0..WINDOW).map(|i| k[i] * self.v[y * self.w + x + i]).sum();
            }
        }
        let mut v = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                v[y * ow + x] = (0..WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
            }
        }
        Plane { w: ow, h: oh, v }
    }

    fn zip(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            v: self.v.iter().zip(&o.v).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// 2×2 mean; an odd trailing row or column averages the pixels it has.
    fn halve(&self) -> Plane {
        let (w, h) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut v = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let (mut s, mut n) = (0.0, 0.0);
                for yy in 2 * y..(2 * y + 2).min(self.h) {
                    for xx in 2 * x..(2 * x + 2).min(self.w) {
                        s += self.v[yy * self.w + xx];
                        n += 1.0;
                    }
                }
                v[y * w + x] = s / n;
            }
        }
        Plane { w, h, v }
    }
}

/// Mean SSIM and mean contrast-structure term of one plane pair.
fn ssim_cs(a: &Plane, b: &Plane, k: &[f64; WINDOW]) -> (f64, f64) {
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mu1 = a.blur(k);
    let mu2 = b.blur(k);
    let s11 = a.zip(a, |x, y| x * y).blur(k);
    let s22 = b.zip(b, |x, y| x * y).blur(k);
    let s12 = a.zip(b, |x, y| x * y).blur(k);
    let n = mu1.v.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu1.v.len() {
        let (m1, m2) = (mu1.v[i], mu2.v[i]);
        let v1 = s11.v[i] - m1 * m1;
        let v2 = s22.v[i] - m2 * m2;
        let v12 = s12.v[i] - m1 * m2;
        let csm = (2.0 * v12 + c2) / (v1 + v2 + c2);
        cs += csm;
        ssim += csm * (2.0 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
    }
    (ssim / n, cs / n)
}

/// Largest scale count (≤ 5) whose coarsest level still fits the window.
pub fn ms_ssim_scales(width: usize, height: usize) -> usize {
    let mut side = width.min(height);
    let mut s = 0;
    while s < 5 && side >= WINDOW {
        s += 1;
        side = side.div_ceil(2);
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MsSsim {
    pub score: f64,
    pub scales: usize,
    /// True when fewer than five scales were used.
    pub reduced: bool,
}

/// Five-scale MS-SSIM. Frames too small for five scales are an error unless
/// `allow_reduced`, in which case the scale count shrinks and the weights are renormalised.
pub fn ms_ssim_with(a: &Frame, b: &Frame, allow_reduced: bool) -> Result<MsSsim> {
    check_same(a, b)?;
    let scales = ms_ssim_scales(a.width, a.height);
    if scales == 0 || (scales < 5 && !allow_reduced) {
        return Err(Error::Dimensions {
            width: a.width,
            height: a.height,
            reason: "frame too small for five-scale MS-SSIM",
        });
    }
    if scales < 5 {
        log::warn!("MS-SSIM on {}x{} uses {scales} scales", a.width, a.height);
    }
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let wsum: f64 = weights.iter().sum();
    let k = gaussian_window();
    let plane = |f: &Frame, c: usize| Plane {
        w: f.width,
        h: f.height,
        v: f.plane(c).iter().map(|&v| v as f64).collect(),
    };
    let mut total = 0.0;
    for c in 0..3 {
        let (mut pa, mut pb) = (plane(a, c), plane(b, c));
        let mut score = 1.0;
        for (s, &w) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_cs(&pa, &pb, &k);
            let term = if s + 1 == scales { ssim } else { cs };
            score *= term.max(0.0).powf(w / wsum);
            pa = pa.halve();
            pb = pb.halve();
        }
        total += score;
    }
    Ok(MsSsim {
        score: total / 3.0,
        scales,
        reduced: scales < 5,
    })
}

pub fn ms_ssim(a: &Frame, b: &Frame) -> Result<f64> {
    Ok(ms_ssim_with(a, b, false)?.score)
}

/// Single-scale mean SSIM over the valid region, averaged over planes.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    check_same(a, b)?;
    if a.width.min(a.height) < WINDOW {
        return Err(Error::Dimensions {
            width: a.width,
            height: a.height,
            reason: "frame smaller than the SSIM window",
        });
    }
    let k = gaussian_window();
    let mut s = 0.0;
    for c in 0..3 {
        let p = |f: &Frame| Plane {
            w: f.width,
            h: f.height,
            v: f.plane(c).iter().map(|&v| v as f64).collect(),
        };
        s += ssim_cs(&p(a), &p(b), &k).0;
    }
    Ok(s / 3.0)
}

// ---- RD curves ----

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RDPoint {
    pub lambda: f64,
    pub bpp: f64,
    pub psnr: f64,
    pub msssim: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityMetric {
    #[default]
    Psnr,
    MsSsim,
}

impl RDPoint {
    pub fn quality(&self, metric: QualityMetric) -> f64 {
        match metric {
            QualityMetric::Psnr => self.psnr,
            QualityMetric::MsSsim => self.msssim,
        }
    }
}

/// At least four points with strictly increasing, positive bpp.
#[derive(Clone, Debug, PartialEq)]
pub struct RDCurve {
    points: Vec<RDPoint>,
}

impl RDCurve {
    pub fn new(mut points: Vec<RDPoint>) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::InvalidArgument(format!("RD curve needs 4 points, got {}", points.len())));
        }
        if points.iter().any(|p| !(p.bpp > 0.0 && p.bpp.is_finite())) {
            return Err(Error::InvalidArgument("bpp must be positive and finite".into()));
        }
        points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        if points.windows(2).any(|w| w[0].bpp >= w[1].bpp) {
            return Err(Error::InvalidArgument("bpp values must be distinct".into()));
        }
        Ok(RDCurve { points })
    }

    pub fn points(&self) -> &[RDPoint] {
        &self.points
    }

    /// Same curve with every rate multiplied by `k`.
    pub fn scale_rate(&self, k: f64) -> Result<Self> {
        RDCurve::new(self.points.iter().map(|p| RDPoint { bpp: p.bpp * k, ..*p }).collect())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let points = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<RDPoint>, _>>()
            .map_err(|e| Error::Format(format!("RD csv: {e}")))?;
        RDCurve::new(points)
    }

    pub fn to_csv(&self) -> String {
        points_to_csv(&self.points)
    }
}

/// `lambda,bpp,psnr,msssim` with a header row.
pub fn points_to_csv(points: &[RDPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BdFit {
    /// Piecewise cubic Hermite interpolation.
    #[default]
    Pchip,
    /// Least-squares cubic polynomial.
    Cubic,
}

trait Integrable {
    fn integral(&self, lo: f64, hi: f64) -> f64;
}

struct Poly3([f64; 4]);

impl Poly3 {
    fn fit(x: &[f64], y: &[f64]) -> Result<Self> {
        let a = DMatrix::from_fn(x.len(), 4, |i, j| x[i].powi(j as i32));
        let b = DVector::from_column_slice(y);
        let sol = a
            .svd(true, true)
            .solve(&b, 1e-12)
            .map_err(|e| Error::InvalidArgument(format!("cubic fit failed: {e}")))?;
        Ok(Poly3([sol[0], sol[1], sol[2], sol[3]]))
    }
}

impl Integrable for Poly3 {
    fn integral(&self, lo: f64, hi: f64) -> f64 {
        let p = |x: f64| (0..4).map(|j| self.0[j] * x.powi(j as i32 + 1) / (j as f64 + 1.0)).sum::<f64>();
        p(hi) - p(lo)
    }
}

/// Monotone piecewise cubic Hermite interpolant with the usual
/// harmonic-mean interior slopes and one-sided three-point end slopes.
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n || x.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("pchip needs strictly increasing abscissae".into()));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let m: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d.fill(m[0]);
        } else {
            for i in 1..n - 1 {
                if m[i - 1] * m[i] > 0.0 {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    d[i] = (w1 + w2) / (w1 / m[i - 1] + w2 / m[i]);
                }
            }
            d[0] = end_slope(h[0], h[1], m[0], m[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], m[n - 2], m[n - 3]);
        }
        Ok(Pchip {
            x: x.to_vec(),
            y: y.to_vec(),
            d,
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.y[i]
            + (s3 - 2.0 * s2 + s) * h * self.d[i]
            + (-2.0 * s3 + 3.0 * s2) * self.y[i + 1]
            + (s3 - s2) * h * self.d[i + 1]
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.x.len();
        self.x[1..n - 1].partition_point(|&v| v <= t)
    }

    /// Integral of segment `i` from its left knot to `t`.
    fn partial(&self, i: usize, t: f64) -> f64 {
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (s2, s3, s4) = (s * s, s * s * s, s * s * s * s);
        h * ((s4 / 2.0 - s3 + s) * self.y[i]
            + (s4 / 4.0 - 2.0 * s3 / 3.0 + s2 / 2.0) * h * self.d[i]
            + (-s4 / 2.0 + s3) * self.y[i + 1]
            + (s4 / 4.0 - s3 / 3.0) * h * self.d[i + 1])
    }
}

fn end_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

impl Integrable for Pchip {
    fn integral(&self, lo: f64, hi: f64) -> f64 {
        let (a, b) = (self.segment(lo), self.segment(hi));
        if a == b {
            return self.partial(a, hi) - self.partial(a, lo);
        }
        let mut s = self.partial(a, self.x[a + 1]) - self.partial(a, lo);
        for i in a + 1..b {
            s += self.partial(i, self.x[i + 1]);
        }
        s + self.partial(b, hi)
    }
}

/// Average rate difference of `test` against `anchor` at equal quality, in percent.
/// Negative values are savings.
pub fn bd_rate(anchor: &RDCurve, test: &RDCurve, metric: QualityMetric, fit: BdFit) -> Result<f64> {
    let prep = |c: &RDCurve| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut pts: Vec<(f64, f64)> = c.points.iter().map(|p| (p.quality(metric), p.bpp.ln())).collect();
        if pts.iter().any(|p| !p.0.is_finite()) {
            return Err(Error::InvalidArgument("non-finite quality value".into()));
        }
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidArgument("quality values must be distinct".into()));
        }
        Ok(pts.into_iter().unzip())
    };
    let (qa, ra) = prep(anchor)?;
    let (qt, rt) = prep(test)?;
    let lo = qa[0].max(qt[0]);
    let hi = qa[qa.len() - 1].min(qt[qt.len() - 1]);
    if lo >= hi {
        return Err(Error::InvalidArgument("RD curves do not overlap in quality".into()));
    }
    let (ia, it) = match fit {
        BdFit::Pchip => (Pchip::new(&qa, &ra)?.integral(lo, hi), Pchip::new(&qt, &rt)?.integral(lo, hi)),
        BdFit::Cubic => (Poly3::fit(&qa, &ra)?.integral(lo, hi), Poly3::fit(&qt, &rt)?.integral(lo, hi)),
    };
    let avg = (it - ia) / (hi - lo);
    Ok((avg.exp() - 1.0) * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(w: usize, h: usize) -> Frame {
        let mut f = Frame::filled(w, h, 0.0);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let (xf, yf, cf) = (x as f64, y as f64, c as f64);
                    let check = (((x / 16 + y / 16) % 2) as f64) - 0.5;
                    let v = 0.5 + 0.35 * (0.21 * xf + 0.5 * cf).sin() * (0.13 * yf).cos() + 0.1 * check;
                    f.set(c, y, x, v as f32);
                }
            }
        }
        f
    }

    fn perturbed(a: &Frame) -> Frame {
        let mut b = a.clone();
        for c in 0..3 {
            for y in 0..a.height {
                for x in 0..a.width {
                    let v = a.get(c, y, x) as f64 + 0.05 * (1.7 * x as f64 + 0.9 * y as f64).sin();
                    b.set(c, y, x, v.clamp(0.0, 1.0) as f32);
                }
            }
        }
        b
    }

    #[test]
    fn psnr_examples() {
        let a = Frame::filled(8, 8, 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        assert!((psnr_from_mse(0.01) - 20.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(1.0), 0.0);
        assert!(psnr_from_mse(0.02) < psnr_from_mse(0.01));
        assert!(psnr(&a, &Frame::filled(8, 9, 0.3)).is_err());
    }

    // Reference values from an independent MS-SSIM implementation
    // (gaussian 11/1.5 window, valid filtering, K = 0.01/0.03) on this exact pair.
    #[test]
    fn ms_ssim_matches_reference_values() {
        let a = pattern(256, 256);
        let b = perturbed(&a);
        let s = ms_ssim(&a, &b).unwrap();
        assert!((s - 0.988_495_946_785).abs() < 2e-6, "{s}");
        let s1 = ssim(&a, &b).unwrap();
        assert!((s1 - 0.865_193_654_733).abs() < 2e-6, "{s1}");
        assert_eq!(ms_ssim(&a, &a).unwrap(), 1.0);
        assert_eq!(ms_ssim(&a, &b).unwrap(), ms_ssim(&b, &a).unwrap());
        let mut inv = a.clone();
        inv.data.iter_mut().for_each(|v| *v = 1.0 - *v);
        assert!(ms_ssim(&a, &inv).unwrap() < 0.5);
    }

    #[test]
    fn ms_ssim_scale_reduction() {
        assert_eq!(ms_ssim_scales(256, 256), 5);
        assert_eq!(ms_ssim_scales(161, 300), 5);
        assert_eq!(ms_ssim_scales(64, 64), 3);
        let a = pattern(64, 64);
        assert!(matches!(ms_ssim(&a, &a), Err(Error::Dimensions { .. })));
        let r = ms_ssim_with(&a, &perturbed(&a), true).unwrap();
        assert!(r.reduced && r.scales == 3 && r.score > 0.5 && r.score < 1.0);
    }

    fn curve() -> RDCurve {
        RDCurve::new(
            [(0.05, 30.1), (0.1, 32.4), (0.2, 34.2), (0.4, 36.9), (0.8, 38.3)]
                .iter()
                .enumerate()
                .map(|(i, &(bpp, psnr))| RDPoint {
                    lambda: 256.0 * 2f64.powi(i as i32),
                    bpp,
                    psnr,
                    msssim: 0.9 + 0.01 * i as f64,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn bd_rate_oracles() {
        let a = curve();
        for fit in [BdFit::Pchip, BdFit::Cubic] {
            assert_eq!(bd_rate(&a, &a, QualityMetric::Psnr, fit).unwrap(), 0.0);
            let d = bd_rate(&a, &a.scale_rate(2.0).unwrap(), QualityMetric::Psnr, fit).unwrap();
            assert!((d - 100.0).abs() < 1e-9, "{d}");
            let h = bd_rate(&a, &a.scale_rate(0.5).unwrap(), QualityMetric::Psnr, fit).unwrap();
            assert!((h + 50.0).abs() < 1e-9, "{h}");
            let m = bd_rate(&a, &a.scale_rate(2.0).unwrap(), QualityMetric::MsSsim, fit).unwrap();
            assert!((m - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bd_rate_errors_and_csv() {
        let a = curve();
        let far = RDCurve::new(
            a.points()
                .iter()
                .map(|p| RDPoint { psnr: p.psnr + 50.0, ..*p })
                .collect(),
        )
        .unwrap();
        assert!(bd_rate(&a, &far, QualityMetric::Psnr, BdFit::Pchip).is_err());
        assert!(RDCurve::new(a.points()[..3].to_vec()).is_err());
        let text = a.to_csv();
        assert!(text.starts_with("lambda,bpp,psnr,msssim"));
        assert_eq!(RDCurve::from_csv(&text).unwrap(), a);
    }

    #[test]
    fn pchip_reproduces_cubic_integral_on_linear_data() {
        let x = [0.0, 1.0, 2.5, 4.0];
        let y = x.map(|v| 2.0 * v + 1.0);
        let p = Pchip::new(&x, &y).unwrap();
        assert!((p.eval(1.7) - 4.4).abs() < 1e-12);
        assert!((p.integral(0.5, 3.0) - (9.0 + 3.0 - 0.25 - 0.5)).abs() < 1e-12);
    }

    // Values from scipy's PchipInterpolator on the same knots.
    #[test]
    fn pchip_matches_reference_interpolator() {
        let x = [30.1, 32.4, 34.2, 36.9, 38.3];
        let y = [0.05f64, 0.1, 0.2, 0.4, 0.8].map(f64::ln);
        let p = Pchip::new(&x, &y).unwrap();
        for (t, want) in [(31.0, -2.74839998), (35.0, -1.39760458), (38.0, -0.39408774)] {
            assert!((p.eval(t) - want).abs() < 1e-7);
        }
        assert!((p.integral(30.5, 38.0) + 12.64115375).abs() < 1e-7);
        let p2 = Pchip::new(&[0.0, 1.0, 2.0, 3.0, 4.5], &[0.0, 2.0, 1.0, 1.5, 3.0]).unwrap();
        assert!((p2.eval(0.5) - 1.4375).abs() < 1e-9);
        assert!((p2.eval(3.7) - 2.07847729).abs() < 1e-7);
        assert!((p2.integral(0.2, 4.1) - 6.0739956).abs() < 1e-6);
    }
}
