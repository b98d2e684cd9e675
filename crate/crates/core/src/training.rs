//! Rate-distortion training: loss, differentiable MS-SSIM, the staged loop and
//! a synthetic clip generator for smoke runs.

use std::io::Write;

use ctxvc_autograd::optim::{Adam, GradAccumulator};
use ctxvc_autograd::{Graph, Mode, ParamStore, Real, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::DistortionMetric;
use crate::entropy::Quantizer;
use crate::error::{Error, Result};
use crate::metrics::{gaussian_window, ms_ssim_scales, MS_SSIM_WEIGHTS};
use crate::model::CodecModel;
use crate::video_io::Frame;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStage {
    SingleFrame,
    Cascaded,
    MsssimFinetune,
}

impl std::str::FromStr for TrainStage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_frame" => Ok(TrainStage::SingleFrame),
            "cascaded" => Ok(TrainStage::Cascaded),
            "msssim_finetune" => Ok(TrainStage::MsssimFinetune),
            _ => Err(Error::InvalidArgument(format!("unknown stage {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: TrainStage,
    /// P frames in the loss.
    pub frames: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub lambda: f64,
    /// Clips per optimizer step.
    pub batch: usize,
    /// Square crop side in pixels; a multiple of 64.
    pub crop: usize,
    /// Cut the gradient path through reconstructed references between P frames.
    pub detach_reference: bool,
    pub grad_clip: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale defaults per stage.
    pub fn for_stage(stage: TrainStage) -> Self {
        let (frames, learning_rate, steps, batch) = match stage {
            TrainStage::SingleFrame => (1, 5e-5, 20_000, 4),
            TrainStage::Cascaded => (6, 5e-6, 5_000, 2),
            TrainStage::MsssimFinetune => (6, 5e-6, 2_000, 2),
        };
        TrainConfig {
            stage,
            frames,
            learning_rate,
            steps,
            lambda: 2048.0,
            batch,
            crop: 256,
            detach_reference: false,
            grad_clip: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self.stage {
            TrainStage::SingleFrame if self.frames != 1 => return bad("single_frame stage uses exactly one P frame".into()),
            TrainStage::Cascaded | TrainStage::MsssimFinetune if self.frames < 2 => {
                return bad("cascaded stages need at least two P frames".into())
            }
            _ => {}
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.lambda > 0.0) || self.batch == 0 || self.grad_clip <= 0.0 {
            return bad("lambda, batch and grad_clip must be positive".into());
        }
        if self.crop == 0 || self.crop % 64 != 0 {
            return bad(format!("crop {} is not a positive multiple of 64", self.crop));
        }
        Ok(())
    }

    pub fn metric(&self) -> DistortionMetric {
        match self.stage {
            TrainStage::MsssimFinetune => DistortionMetric::MsSsim,
            _ => DistortionMetric::Mse,
        }
    }
}

/// Rate terms of one P frame: motion latent, motion hyper, context latent, context hyper.
#[derive(Clone, Copy, Debug)]
pub struct RateTerms {
    pub m: Var,
    pub z: Var,
    pub c: Var,
    pub s: Var,
}

impl RateTerms {
    pub fn total<T: Real>(&self, g: &mut Graph<T>) -> Var {
        let a = g.add(self.m, self.z);
        let b = g.add(self.c, self.s);
        g.add(a, b)
    }
}

/// Differentiable MS-SSIM (mean over batch and planes) with as many scales as the
/// frame allows, weights renormalised.
pub fn ms_ssim_var<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let [n, c, h, w] = g.shape(a);
    if g.shape(b) != g.shape(a) {
        return Err(Error::Shape("ms-ssim inputs differ in shape".into()));
    }
    let scales = ms_ssim_scales(w, h);
    if scales == 0 {
        return Err(Error::Dimensions { width: w, height: h, reason: "frame smaller than the SSIM window" });
    }
    let win = gaussian_window();
    let row = g.constant(Tensor::from_vec([1, 1, 1, win.len()], win.iter().map(|&v| T::from_f64(v)).collect()));
    let col = g.constant(Tensor::from_vec([1, 1, win.len(), 1], win.iter().map(|&v| T::from_f64(v)).collect()));
    let blur = |g: &mut Graph<T>, x: Var| {
        let t = g.conv2d(x, row, None, 1, 0);
        g.conv2d(t, col, None, 1, 0)
    };
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let wsum: f64 = weights.iter().sum();
    let (c1, c2) = (1e-4, 9e-4);
    let mut pa = g.reshape(a, [n * c, 1, h, w]);
    let mut pb = g.reshape(b, [n * c, 1, h, w]);
    let mut score: Option<Var> = None;
    for (s, &wt) in weights.iter().enumerate() {
        if s > 0 {
            pa = g.avg_pool2(pa);
            pb = g.avg_pool2(pb);
        }
        let mu1 = blur(g, pa);
        let mu2 = blur(g, pb);
        let aa = g.mul(pa, pa);
        let bb = g.mul(pb, pb);
        let ab = g.mul(pa, pb);
        let s11 = blur(g, aa);
        let s22 = blur(g, bb);
        let s12 = blur(g, ab);
        let m11 = g.mul(mu1, mu1);
        let m22 = g.mul(mu2, mu2);
        let m12 = g.mul(mu1, mu2);
        let v1 = g.sub(s11, m11);
        let v2 = g.sub(s22, m22);
        let v12 = g.sub(s12, m12);
        let num = g.scale(v12, 2.0);
        let num = g.add_scalar(num, c2);
        let den = g.add(v1, v2);
        let den = g.add_scalar(den, c2);
        let mut map = g.div(num, den);
        if s + 1 == scales {
            let ln = g.scale(m12, 2.0);
            let ln = g.add_scalar(ln, c1);
            let ld = g.add(m11, m22);
            let ld = g.add_scalar(ld, c1);
            let l = g.div(ln, ld);
            map = g.mul(map, l);
        }
        let mean = g.global_avg_pool(map);
        let pos = g.relu(mean);
        let pos = g.add_scalar(pos, 1e-8);
        let term = g.pow(pos, wt / wsum);
        score = Some(match score {
            Some(p) => g.mul(p, term),
            None => term,
        });
    }
    Ok(g.mean(score.expect("at least one scale")))
}

pub fn distortion<T: Real>(g: &mut Graph<T>, x: Var, x_hat: Var, metric: DistortionMetric) -> Result<Var> {
    Ok(match metric {
        DistortionMetric::Mse => {
            let d = g.sub(x, x_hat);
            let sq = g.mul(d, d);
            g.mean(sq)
        }
        DistortionMetric::MsSsim => {
            let s = ms_ssim_var(g, x, x_hat)?;
            let neg = g.scale(s, -1.0);
            g.add_scalar(neg, 1.0)
        }
    })
}

/// `(1/T) Σ_t [λ·d(x_t, x̂_t) + Σ rates_t]`. Rates are used in whatever unit the caller supplies.
pub fn rd_loss<T: Real>(
    g: &mut Graph<T>,
    frames: &[Var],
    reconstructions: &[Var],
    rates: &[RateTerms],
    lambda: f64,
    metric: DistortionMetric,
) -> Result<Var> {
    let t = frames.len();
    if t == 0 || reconstructions.len() != t || rates.len() != t {
        return Err(Error::InvalidArgument(format!(
            "rd_loss needs aligned non-empty lists, got {t} frames, {} reconstructions, {} rate sets",
            reconstructions.len(),
            rates.len()
        )));
    }
    let mut acc: Option<Var> = None;
    for i in 0..t {
        let d = distortion(g, frames[i], reconstructions[i], metric)?;
        let d = g.scale(d, lambda);
        let r = rates[i].total(g);
        let term = g.add(d, r);
        acc = Some(match acc {
            Some(a) => g.add(a, term),
            None => term,
        });
    }
    Ok(g.scale(acc.expect("non-empty"), 1.0 / t as f64))
}

/// One clip's loss graph.
pub struct ClipLoss {
    pub loss: Var,
    /// Mean P-frame rate in bpp.
    pub rate: Var,
    /// Mean P-frame distortion.
    pub distortion: Var,
    /// P-frame reconstructions produced (one per unrolled frame).
    pub reconstructions: usize,
    pub p_reconstructions: Vec<Var>,
}

/// I frame plus `frames` unrolled P frames. The intra term joins the P-frame
/// loss as one more frame of the average.
pub fn clip_loss<T: Real>(
    model: &CodecModel,
    g: &mut Graph<T>,
    clip: &[Tensor<T>],
    cfg: &TrainConfig,
    q: &mut Quantizer,
) -> Result<ClipLoss> {
    let t = cfg.frames;
    if clip.len() < t + 1 {
        return Err(Error::InvalidArgument(format!("clip has {} frames, stage needs {}", clip.len(), t + 1)));
    }
    let [_, _, h, w] = clip[0].shape();
    let per_pixel = 1.0 / (h * w) as f64;
    let metric = cfg.metric();

    let x0 = g.constant(clip[0].clone());
    let intra = model.intra.forward(g, x0, q);
    let ir = g.add(intra.bits_y, intra.bits_z);
    let ir = g.scale(ir, per_pixel);
    let id = distortion(g, x0, intra.x_hat, metric)?;
    let id = g.scale(id, cfg.lambda * model.config.intra_lambda_scale);
    let intra_term = g.add(id, ir);

    let mut reference = intra.x_hat;
    let (mut frames, mut recons, mut rates) = (Vec::new(), Vec::new(), Vec::new());
    for x in &clip[1..=t] {
        let xv = g.constant(x.clone());
        let pf = model.p_forward(g, xv, reference, q)?;
        let bpp = |g: &mut Graph<T>, v: Var| g.scale(v, per_pixel);
        rates.push(RateTerms {
            m: bpp(g, pf.bits_m),
            z: bpp(g, pf.bits_z),
            c: bpp(g, pf.bits_c),
            s: bpp(g, pf.bits_s),
        });
        frames.push(xv);
        recons.push(pf.x_hat);
        reference = if cfg.detach_reference { g.detach(pf.x_hat) } else { pf.x_hat };
    }
    let p_loss = rd_loss(g, &frames, &recons, &rates, cfg.lambda, metric)?;
    let weighted = g.scale(p_loss, t as f64);
    let sum = g.add(weighted, intra_term);
    let loss = g.scale(sum, 1.0 / (t + 1) as f64);

    let mut rate_sum = rates[0].total(g);
    let mut dist_sum = distortion(g, frames[0], recons[0], metric)?;
    for i in 1..t {
        let r = rates[i].total(g);
        rate_sum = g.add(rate_sum, r);
        let d = distortion(g, frames[i], recons[i], metric)?;
        dist_sum = g.add(dist_sum, d);
    }
    Ok(ClipLoss {
        loss,
        rate: g.scale(rate_sum, 1.0 / t as f64),
        distortion: g.scale(dist_sum, 1.0 / t as f64),
        reconstructions: t,
        p_reconstructions: recons,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub rate: f64,
    pub distortion: f64,
    #[serde(skip)]
    pub grad_norm: f64,
    /// P-frame reconstructions unrolled in this step, summed over the batch.
    #[serde(skip)]
    pub reconstructions: usize,
}

/// A training clip: frames as `[1, 3, h, w]` tensors.
pub type Clip = Vec<Tensor<f32>>;

pub fn clip_from_frames(frames: &[Frame]) -> Clip {
    frames.iter().map(Frame::to_tensor).collect()
}

fn sample_crop(clips: &[Clip], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Clip> {
    let clip = &clips[rng.random_range(0..clips.len())];
    let need = cfg.frames + 1;
    if clip.len() < need {
        return Err(Error::InvalidArgument(format!("clip has {} frames, stage needs {need}", clip.len())));
    }
    let [_, c, h, w] = clip[0].shape();
    if h < cfg.crop || w < cfg.crop {
        return Err(Error::Dimensions { width: w, height: h, reason: "training frames smaller than the crop" });
    }
    let start = rng.random_range(0..=clip.len() - need);
    let (oy, ox) = (rng.random_range(0..=h - cfg.crop), rng.random_range(0..=w - cfg.crop));
    let s = cfg.crop;
    Ok(clip[start..start + need]
        .iter()
        .map(|f| Tensor::from_fn([1, c, s, s], |[_, ch, y, x]| f.at([0, ch, y + oy, x + ox])))
        .collect())
}

pub struct Trainer<'a> {
    pub model: &'a CodecModel,
    pub store: &'a mut ParamStore<f32>,
    pub optimizer: Adam,
    pub quantizer: Quantizer,
    rng: ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(model: &'a CodecModel, store: &'a mut ParamStore<f32>, cfg: &TrainConfig) -> Self {
        Trainer {
            model,
            store,
            optimizer: Adam::new(cfg.learning_rate),
            quantizer: Quantizer::new(model.config.quant_surrogate, cfg.seed ^ 0x9e37_79b9),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        }
    }

    pub fn step(&mut self, clips: &[Clip], cfg: &TrainConfig) -> Result<StepLog> {
        let mut acc = GradAccumulator::new();
        let (mut loss, mut rate, mut dist, mut recon) = (0.0, 0.0, 0.0, 0);
        let mut buffers = Vec::new();
        for _ in 0..cfg.batch {
            let clip = sample_crop(clips, cfg, &mut self.rng)?;
            let mut g = Graph::new(&*self.store, Mode::Train);
            let cl = clip_loss(self.model, &mut g, &clip, cfg, &mut self.quantizer)?;
            let scaled = g.scale(cl.loss, 1.0 / cfg.batch as f64);
            let l = g.value(cl.loss).data()[0] as f64;
            if !l.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            loss += l / cfg.batch as f64;
            rate += g.value(cl.rate).data()[0] as f64 / cfg.batch as f64;
            dist += g.value(cl.distortion).data()[0] as f64 / cfg.batch as f64;
            recon += cl.reconstructions;
            acc.add(&g.backward(scaled));
            buffers.extend(g.take_buffer_updates());
        }
        let grad_norm = acc.clip_norm(cfg.grad_clip);
        self.optimizer.step(self.store, &acc.into_vec());
        for (id, v) in buffers {
            *self.store.get_mut(id) = v;
        }
        Ok(StepLog {
            step: self.optimizer.steps() as usize,
            loss,
            rate,
            distortion: dist,
            grad_norm,
            reconstructions: recon,
        })
    }
}

/// Runs `cfg.steps` optimizer steps, writing one JSON line per step to `log`.
pub fn train_stage(
    model: &CodecModel,
    store: &mut ParamStore<f32>,
    clips: &[Clip],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(Error::InvalidArgument("no training clips".into()));
    }
    if let Some(short) = clips.iter().find(|c| c.len() < cfg.frames + 1) {
        return Err(Error::InvalidArgument(format!(
            "clip of {} frames is shorter than T + 1 = {}",
            short.len(),
            cfg.frames + 1
        )));
    }
    let mut trainer = Trainer::new(model, store, cfg);
    let mut history = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let entry = trainer.step(clips, cfg)?;
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", serde_json::to_string(&entry)?).map_err(|e| Error::io("training log", e))?;
        }
        history.push(entry);
    }
    Ok(history)
}

/// Trailing mean of the loss over `window` steps ending at `step` (1-based).
pub fn smoothed_loss(history: &[StepLog], step: usize, window: usize) -> f64 {
    let end = step.min(history.len());
    let start = end.saturating_sub(window);
    let s = &history[start..end];
    s.iter().map(|e| e.loss).sum::<f64>() / s.len().max(1) as f64
}

/// A textured background with a bright rectangle moving `velocity` pixels per frame.
pub fn synthetic_clip(n_frames: usize, width: usize, height: usize, seed: u64) -> Vec<Frame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rw, rh) = (width / 4, height / 4);
    let (mut px, mut py) = (rng.random_range(0.0..(width - rw) as f64), rng.random_range(0.0..(height - rh) as f64));
    let (vx, vy) = (rng.random_range(1.0..3.0), rng.random_range(-1.5..1.5));
    let colour = [rng.random_range(0.6..0.95), rng.random_range(0.1..0.5), rng.random_range(0.3..0.9)];
    let phase: f64 = rng.random_range(0.0..6.28);
    (0..n_frames)
        .map(|_| {
            let mut f = Frame::filled(width, height, 0.0);
            for y in 0..height {
                for x in 0..width {
                    let (xf, yf) = (x as f64, y as f64);
                    let inside = xf >= px && xf < px + rw as f64 && yf >= py && yf < py + rh as f64;
                    for c in 0..3 {
                        let bg = 0.35 + 0.15 * (0.15 * xf + phase + c as f64).sin() * (0.11 * yf).cos();
                        f.set(c, y, x, if inside { colour[c] } else { bg } as f32);
                    }
                }
            }
            px = (px + vx).rem_euclid((width - rw) as f64);
            py = (py + vy).clamp(0.0, (height - rh) as f64);
            f
        })
        .collect()
}
