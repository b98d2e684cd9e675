use ctxvc::entropy::Quantizer;
use ctxvc::training::{
    clip_from_frames, clip_loss, distortion, smoothed_loss, synthetic_clip, train_stage, StepLog, TrainConfig, TrainStage, Trainer,
};
use ctxvc::{CodecConfig, CodecModel, DistortionMetric, QuantSurrogate};
use ctxvc_autograd::{Graph, Mode};

#[test]
fn smoothed_loss_decreases_over_200_steps() {
    let (model, mut ps) = CodecModel::new(&CodecConfig::tiny()).unwrap();
    let clips = vec![clip_from_frames(&synthetic_clip(7, 64, 64, 0))];
    let cfg = TrainConfig {
        steps: 200,
        crop: 64,
        batch: 1,
        ..TrainConfig::for_stage(TrainStage::SingleFrame)
    };
    let mut log = Vec::new();
    let history = train_stage(&model, &mut ps, &clips, &cfg, Some(&mut log)).unwrap();
    let early = smoothed_loss(&history, 20, 20);
    let late = smoothed_loss(&history, 200, 20);
    assert!(late < early, "smoothed loss {early} at step 20, {late} at step 200");

    let lines: Vec<StepLog> = String::from_utf8(log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 200);
    assert_eq!(lines[0].step, 1);
    assert_eq!(lines[199].loss, history[199].loss);
    let keys: serde_json::Value = serde_json::to_value(&history[0]).unwrap();
    let mut names: Vec<_> = keys.as_object().unwrap().keys().cloned().collect();
    names.sort();
    assert_eq!(names, ["distortion", "loss", "rate", "step"]);
}

#[test]
fn cascaded_step_unrolls_t_frames() {
    let (model, mut ps) = CodecModel::new(&CodecConfig::tiny()).unwrap();
    let frames = synthetic_clip(4, 64, 64, 1);
    let cfg = TrainConfig {
        frames: 3,
        batch: 2,
        crop: 64,
        steps: 1,
        ..TrainConfig::for_stage(TrainStage::Cascaded)
    };
    let mut trainer = Trainer::new(&model, &mut ps, &cfg);
    let log = trainer.step(&[clip_from_frames(&frames)], &cfg).unwrap();
    assert_eq!(log.reconstructions, cfg.frames * cfg.batch);

    let short = vec![clip_from_frames(&frames[..3])];
    assert!(train_stage(&model, &mut ps, &short, &cfg, None).is_err());
}

fn intra_grad_norm(detach: bool) -> f64 {
    let (model, ps) = CodecModel::new(&CodecConfig::tiny()).unwrap();
    let clip = clip_from_frames(&synthetic_clip(3, 64, 64, 2));
    let cfg = TrainConfig {
        frames: 2,
        detach_reference: detach,
        ..TrainConfig::for_stage(TrainStage::Cascaded)
    };
    let mut g = Graph::new(&ps, Mode::Train);
    let mut q = Quantizer::new(QuantSurrogate::Noise, 0);
    let cl = clip_loss(&model, &mut g, &clip, &cfg, &mut q).unwrap();
    assert_eq!(cl.reconstructions, 2);
    // Distortion of the second P frame alone: reaches the intra codec only through
    // the first P frame's reconstruction.
    let x2 = g.constant(clip[2].clone());
    let d = distortion(&mut g, x2, cl.p_reconstructions[1], DistortionMetric::Mse).unwrap();
    let grads = g.backward(d);
    ps.entries()
        .filter(|(_, e)| e.name.starts_with("intra."))
        .filter_map(|(id, _)| grads.param(id))
        .map(|t| t.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

#[test]
fn cascaded_gradients_cross_frame_boundaries() {
    assert!(intra_grad_norm(false) > 0.0);
    assert_eq!(intra_grad_norm(true), 0.0);
}
