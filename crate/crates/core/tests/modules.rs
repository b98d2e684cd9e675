use ctxvc::contextual::{anchor_mask, is_anchor, segment_schedule, Pass};
use ctxvc::motion_comp::MotionCompensation;
use ctxvc::ms_mam::{FusionBlock, MsMam};
use ctxvc::pipeline::Codec;
use ctxvc::training::synthetic_clip;
use ctxvc::{load_checkpoint, save_checkpoint, CodecConfig, CodecModel, RawSequence};
use ctxvc_autograd::nn::ParamBuilder;
use ctxvc_autograd::{Graph, Mode, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.1 * v
    }
}

/// Largest difference over columns `x >= 1`. At `x = 0` the left taps of the
/// deformable conv land inside the image while the plain conv reads padding.
fn interior_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let [n, c, h, w] = a.shape();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for x in 1..w {
                    worst = worst.max((a.at([i, ch, y, x]) - b.at([i, ch, y, x])).abs());
                }
            }
        }
    }
    worst
}

#[test]
fn dcn_with_unit_offset_samples_the_shifted_reference() {
    let mut ps = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mc = {
        let mut pb = ParamBuilder::new(&mut ps, &mut rng);
        MotionCompensation::new(&mut pb, "mc", 4, 4, 2)
    };
    let (h, w) = (7, 9);
    let f_ref = rand_tensor([1, 4, h, w], &mut rng);
    // x displacement +1 on every tap, no y displacement.
    let off = Tensor::from_fn([1, 36, h, w], |[_, c, _, _]| if c % 2 == 0 { 1.0 } else { 0.0 });
    let shifted = Tensor::from_fn([1, 4, h, w], |[n, c, y, x]| if x + 1 < w { f_ref.at([n, c, y, x + 1]) } else { 0.0 });

    let mut g = Graph::new(&ps, Mode::Eval);
    let (o, m, r, s) = (g.constant(off), g.constant(Tensor::full([1, 18, h, w], 1.0)), g.constant(f_ref.clone()), g.constant(shifted));
    let warped = mc.warp(&mut g, o, m, r).unwrap();
    let (wt, b) = (g.param(mc.dcn.weight), g.param(mc.dcn.bias));
    let conv = g.conv2d(s, wt, Some(b), 1, 1);
    assert!(interior_diff(g.value(warped), g.value(conv)) < 1e-12);

    // Half-pixel offsets average neighbouring columns; masks of 0.5 halve the samples.
    let off = Tensor::from_fn([1, 36, h, w], |[_, c, _, _]| if c % 2 == 0 { 0.5 } else { 0.0 });
    let avg = Tensor::from_fn([1, 4, h, w], |[n, c, y, x]| {
        let right = if x + 1 < w { f_ref.at([n, c, y, x + 1]) } else { 0.0 };
        0.25 * (f_ref.at([n, c, y, x]) + right)
    });
    let (o, m, a) = (g.constant(off), g.constant(Tensor::full([1, 18, h, w], 0.5)), g.constant(avg));
    let warped = mc.warp(&mut g, o, m, r).unwrap();
    let conv = g.conv2d(a, wt, Some(b), 1, 1);
    assert!(interior_diff(g.value(warped), g.value(conv)) < 1e-12);
}

#[test]
fn fusion_modulation_matches_hand_loops() {
    let mut ps = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (c, d) = (3, 5);
    let fb = {
        let mut pb = ParamBuilder::new(&mut ps, &mut rng);
        FusionBlock::new(&mut pb, "fb", c, d)
    };
    let (n, h, w) = (2, 5, 6);
    let v = rand_tensor([n, c, h, w], &mut rng);
    let dv = rand_tensor([n, d, 1, 1], &mut rng);

    let mut g = Graph::new(&ps, Mode::Eval);
    let (vv, dvv) = (g.constant(v.clone()), g.constant(dv));
    let k = fb.predict_kernels(&mut g, dvv);
    let a = fb.predict_coefficients(&mut g, dvv);
    let out = fb.modulate(&mut g, vv, dvv);
    let (k, a, out) = (g.value(k).clone(), g.value(a).clone(), g.value(out).clone());
    assert!(a.data().iter().all(|&x| x >= 0.0));

    let (mw, mb) = (ps.get(fb.mix.weight), ps.get(fb.mix.bias));
    let at = |b, ch, y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            v.at([b, ch, y as usize, x as usize])
        }
    };
    let mut worst: f64 = 0.0;
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let spatial: Vec<f64> = (0..c)
                    .map(|ch| {
                        let mut s = 0.0;
                        for ky in 0..3 {
                            for kx in 0..3 {
                                s += k.at([b, ch, ky, kx]) * at(b, ch, y as isize + ky as isize - 1, x as isize + kx as isize - 1);
                            }
                        }
                        leaky(s)
                    })
                    .collect();
                for co in 0..c {
                    let mixed = mb.data()[co] + (0..c).map(|ci| mw.at([co, ci, 0, 0]) * spatial[ci]).sum::<f64>();
                    let expect = a.at([b, co, 0, 0]) * v.at([b, co, y, x]) + mixed;
                    worst = worst.max((expect - out.at([b, co, y, x])).abs());
                }
            }
        }
    }
    assert!(worst < 1e-12, "max deviation {worst}");
}

#[test]
fn fusion_rejects_mismatched_scales() {
    let mut ps = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fb = {
        let mut pb = ParamBuilder::new(&mut ps, &mut rng);
        FusionBlock::new(&mut pb, "fb", 2, 4)
    };
    let mut g = Graph::new(&ps, Mode::Eval);
    let fine = g.constant(Tensor::zeros([1, 2, 8, 8]));
    let coarse = g.constant(Tensor::zeros([1, 2, 3, 4]));
    assert!(fb.forward(&mut g, fine, coarse).is_err());
}

#[test]
fn single_scale_motion_is_the_initial_estimate() {
    let mut ps = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (ms, single) = {
        let mut pb = ParamBuilder::new(&mut ps, &mut rng);
        let ms = MsMam::new(&mut pb, "m", 3, 4, 4, true);
        let mut single = ms.clone();
        single.multiscale = false;
        (ms, single)
    };
    let levels: Vec<Tensor<f64>> = [8, 4, 2, 8, 4, 2].iter().map(|&s| rand_tensor([1, 3, s, s], &mut rng)).collect();
    let run = |ps: &ParamStore<f64>| {
        let mut g = Graph::new(ps, Mode::Eval);
        let l: Vec<_> = levels.iter().map(|t| g.constant(t.clone())).collect();
        let cur = ctxvc::autoencoder::FeaturePyramid { levels: [l[0], l[1], l[2]] };
        let reference = ctxvc::autoencoder::FeaturePyramid { levels: [l[3], l[4], l[5]] };
        let [v0, _, _] = ms.initial_motion(&mut g, &cur, &reference).unwrap();
        let s = single.estimate(&mut g, &cur, &reference).unwrap();
        let m = ms.estimate(&mut g, &cur, &reference).unwrap();
        (g.value(v0).clone(), g.value(s).clone(), g.value(m).clone())
    };
    let (v0, s, m) = run(&ps);
    assert_eq!(s, v0);
    assert_eq!(m.shape(), v0.shape());
    assert!(m.max_abs_diff(&v0) > 0.0);

    // A zero refinement head collapses the multiscale path onto v^0.
    ps.get_mut(ms.out.weight).data_mut().iter_mut().for_each(|w| *w = 0.0);
    ps.get_mut(ms.out.bias).data_mut().iter_mut().for_each(|w| *w = 0.0);
    let (v0, _, m) = run(&ps);
    assert_eq!(m, v0);
}

#[test]
fn checkerboard_and_segment_order() {
    let m = anchor_mask::<f32>([1, 1, 4, 4]);
    assert_eq!(m.data().iter().sum::<f32>(), 8.0);
    assert!(is_anchor(0, 0) && !is_anchor(0, 1) && !is_anchor(1, 0) && is_anchor(1, 1));
    let s = segment_schedule(4);
    assert_eq!(s.len(), 8);
    assert_eq!(s[0], (0, Pass::Anchor));
    assert_eq!(s[1], (0, Pass::NonAnchor));
    assert_eq!(s[7], (3, Pass::NonAnchor));
}

#[test]
fn checkpoint_reload_reproduces_eval_outputs() {
    let cfg = CodecConfig { seed: 9, ..CodecConfig::tiny() };
    let (model, ps) = CodecModel::new(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt.safetensors");
    save_checkpoint(&path, &cfg, &ps).unwrap();
    let (model2, ps2) = load_checkpoint(&path).unwrap();
    assert_eq!(model2.config, cfg);

    let seq = RawSequence::new(synthetic_clip(3, 64, 64, 2), 30.0).unwrap();
    let a = Codec::new(&model, &ps).encode_sequence(&seq, 10).unwrap();
    let b = Codec::new(&model2, &ps2).encode_sequence(&seq, 10).unwrap();
    assert_eq!(a.container.to_bytes(), b.container.to_bytes());
    assert_eq!(a.reconstructions, b.reconstructions);
}
