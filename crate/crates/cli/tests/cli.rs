use std::fs;
use std::path::Path;
use std::process::Command;

fn ctxvc(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_ctxvc")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "ctxvc {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn init_encode_decode_stats_metrics_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (ckpt, src, bin, dec) = (d.join("m.safetensors"), d.join("src"), d.join("s.ctxv"), d.join("dec"));

    ctxvc(&["init", "--tiny", "--seed", "4", "--lambda", "1024", "--out", s(&ckpt)]);
    let seq = ctxvc::RawSequence::new(ctxvc::training::synthetic_clip(3, 64, 48, 1), 30.0).unwrap();
    ctxvc::video_io::write_png_dir(&seq, &src).unwrap();

    ctxvc(&["encode", "--input", s(&src), "--format", "png", "--gop", "2", "--lambda", "1024", "--checkpoint", s(&ckpt), "--out", s(&bin)]);
    ctxvc(&["decode", "--in", s(&bin), "--checkpoint", s(&ckpt), "--out", s(&dec)]);
    assert_eq!(fs::read_dir(&dec).unwrap().count(), 3);

    let stats: serde_json::Value = serde_json::from_str(&ctxvc(&["stats", "--in", s(&bin)])).unwrap();
    let types: Vec<_> = stats.as_array().unwrap().iter().map(|f| f["frame_type"].as_str().unwrap().to_string()).collect();
    assert_eq!(types, ["I", "P", "I"]);

    let m: serde_json::Value = serde_json::from_str(&ctxvc(&["metrics", "--ref", s(&src), "--dist", s(&dec)])).unwrap();
    assert_eq!(m["frames"].as_array().unwrap().len(), 3);
    assert!(m["psnr"].as_f64().unwrap() > 0.0);

    let (report, csv) = (d.join("r.json"), d.join("rd.csv"));
    ctxvc(&["report", "--container", s(&bin), "--source", s(&src), "--checkpoint", s(&ckpt), "--out", s(&report), "--csv", s(&csv)]);
    ctxvc(&["report", "--container", s(&bin), "--source", s(&src), "--checkpoint", s(&ckpt), "--out", s(&report), "--csv", s(&csv)]);
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let bits = r["payload_bits"].as_u64().unwrap() as f64;
    assert_eq!(r["bpp"].as_f64().unwrap(), bits / (64.0 * 48.0 * 3.0));
    assert_eq!(r["channel_groups"]["group_sizes"], serde_json::json!([16, 16, 32, 64]));
    let rows: Vec<_> = fs::read_to_string(&csv).unwrap().lines().map(String::from).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0], "lambda,bpp,psnr,msssim");
}

#[test]
fn lambda_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (ckpt, src) = (d.join("m.safetensors"), d.join("src"));
    ctxvc(&["init", "--tiny", "--out", s(&ckpt)]);
    let seq = ctxvc::RawSequence::new(ctxvc::training::synthetic_clip(2, 64, 64, 0), 30.0).unwrap();
    ctxvc::video_io::write_png_dir(&seq, &src).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ctxvc"))
        .args(["encode", "--input", s(&src), "--lambda", "256", "--checkpoint", s(&ckpt), "--out", s(&d.join("x"))])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn bdrate_of_doubled_rate_is_plus_100() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let rows = [(256, 0.03, 29.0, 0.93), (512, 0.05, 31.0, 0.95), (1024, 0.09, 33.0, 0.96), (2048, 0.17, 34.5, 0.97)];
    let csv = |k: f64| {
        let mut s = String::from("lambda,bpp,psnr,msssim\n");
        for (l, bpp, p, m) in rows {
            s += &format!("{l},{},{p},{m}\n", bpp * k);
        }
        s
    };
    fs::write(&a, csv(1.0)).unwrap();
    fs::write(&b, csv(2.0)).unwrap();
    let v: f64 = ctxvc(&["bdrate", "--anchor", s(&a), "--test", s(&b)]).trim().parse().unwrap();
    assert!((v - 100.0).abs() < 0.1);
    let v: f64 = ctxvc(&["bdrate", "--anchor", s(&a), "--test", s(&a), "--fit", "cubic"]).trim().parse().unwrap();
    assert_eq!(v, 0.0);
}

#[test]
fn short_training_run_writes_checkpoint_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (ckpt, out, log) = (d.join("m.safetensors"), d.join("t.safetensors"), d.join("log.jsonl"));
    ctxvc(&["init", "--tiny", "--out", s(&ckpt)]);
    ctxvc(&["train", "--checkpoint", s(&ckpt), "--out", s(&out), "--steps", "3", "--crop", "64", "--batch", "1", "--log", s(&log)]);
    let lines: Vec<serde_json::Value> =
        fs::read_to_string(&log).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[2]["step"], 3);
    assert!(out.exists());
}
