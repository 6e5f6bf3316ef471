use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mdn::segnet::{Checkpoint, SegModelConfig, SegNet};
use mdn::DatasetManifest;

const GEN: &str = r#"
n_images = 6
image_w = 64
image_h = 64
particles_per_image = [1, 3]
master_seed = 9

[polymer_mix]
PET = 1.0

[background]
base_intensity = 0.05
autofluorescence_blob_count = [1, 2]
blob_intensity = 0.1

[noise]
gaussian_sigma = 0.02
poisson_enabled = false
"#;

const RUN: &str = r#"
[model]
depth = 2
base_channels = 2
input_size = 64

[train]
epochs = 1
batch_size = 2
seed = 3
"#;

fn mdn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdn")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mdn(args);
    assert!(
        out.status.success(),
        "mdn {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn dataset(dir: &Path) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let cfg = dir.join("gen.toml");
    fs::write(&cfg, GEN).unwrap();
    let data = dir.join("data");
    ok(&["generate", "--config", s(&cfg), "--out", s(&data)]);
    data
}

fn run_config(dir: &Path) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, RUN).unwrap();
    p
}

#[test]
fn generate_writes_split_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let m = DatasetManifest::load(data.join("manifest.jsonl")).unwrap();
    assert_eq!(m.count(mdn::Split::Train), 5);
    assert_eq!(m.count(mdn::Split::Test), 1);
    assert!(data.join("gen_config.toml").is_file());
    assert!(data.join("images/img_0000.png").is_file());
}

#[test]
fn generate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dataset(&dir.path().join("a"));
    let b = dataset(&dir.path().join("b"));
    for f in ["images/img_0003.png", "masks/img_0003.png"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn zero_epochs_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let out = dir.path().join("run");
    let run = run_config(dir.path());
    ok(&[
        "train", "--manifest", s(&data.join("manifest.jsonl")), "--config", s(&run),
        "--epochs", "0", "--out", s(&out),
    ]);
    let ckpt = Checkpoint::load(out.join("model.ckpt")).unwrap();
    let cfg = SegModelConfig {
        depth: 2,
        base_channels: 2,
        input_size: 64,
        ..Default::default()
    };
    let init = SegNet::<f32>::new(cfg, 3).unwrap();
    assert_eq!(ckpt.model.params(), init.params());
    assert!(ckpt.history.is_empty());
}

#[test]
fn train_predict_evaluate_report_overlay() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let manifest = data.join("manifest.jsonl");
    let run = run_config(dir.path());
    let out = dir.path().join("run");
    let log = ok(&["train", "--manifest", s(&manifest), "--config", s(&run), "--out", s(&out)]);
    assert!(log.contains("epoch   1"), "{log}");
    let history = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);
    assert!(out.join("train_config.toml").is_file());
    let ckpt = out.join("model.ckpt");

    let preds = dir.path().join("preds");
    ok(&["predict", "--checkpoint", s(&ckpt), "--input", s(&data.join("images")), "--out", s(&preds)]);
    let written = fs::read_dir(&preds).unwrap().count();
    assert_eq!(written, 6);
    let first = fs::read(preds.join("img_0000_mask.png")).unwrap();
    let gray = image::load_from_memory(&first).unwrap().into_luma8();
    assert!(gray.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
    let again = dir.path().join("again");
    ok(&["predict", "--checkpoint", s(&ckpt), "--input", s(&data.join("images/img_0000.png")), "--out", s(&again)]);
    assert_eq!(fs::read(again.join("img_0000_mask.png")).unwrap(), first);

    let eval = dir.path().join("eval");
    let table = ok(&["evaluate", "--checkpoint", s(&ckpt), "--manifest", s(&manifest), "--out", s(&eval)]);
    assert!(table.contains("IoU"), "{table}");
    for f in ["report.json", "report.txt", "metrics.png"] {
        assert!(eval.join(f).is_file(), "{f}");
    }
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["split"], "test");
    assert_eq!(json["per_image"].as_array().unwrap().len(), 1);
    let a = &json["aggregate"];
    let n = |k: &str| a[k].as_u64().unwrap() as f64;
    let (tp, fp, fn_, tn) = (n("tp"), n("fp"), n("fn"), n("tn"));
    let f = |k: &str| a[k].as_f64().unwrap();
    assert!((f("accuracy") - (tp + tn) / (tp + fp + fn_ + tn)).abs() < 1e-9);
    if tp > 0.0 {
        assert!((f("iou") - tp / (tp + fp + fn_)).abs() < 1e-9);
        assert!((f("f1") - 2.0 * tp / (2.0 * tp + fp + fn_)).abs() < 1e-9);
        assert!((f("precision") - tp / (tp + fp)).abs() < 1e-9);
        assert!((f("recall") - tp / (tp + fn_)).abs() < 1e-9);
    }

    let rep = dir.path().join("particles");
    ok(&["report", "--manifest", s(&manifest), "--masks", s(&preds), "--out", s(&rep)]);
    assert!(rep.join("particles.txt").is_file());
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(rep.join("particles.json")).unwrap()).unwrap();
    let detections: usize = json["images"].as_array().unwrap().iter().map(|i| i["detections"].as_array().unwrap().len()).sum();
    let hist: u64 = json["total"]["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(hist as usize, detections);
    assert_eq!(json["total"]["total"], detections);

    let overlay = dir.path().join("overlay.png");
    ok(&[
        "overlay", "--image", s(&data.join("images/img_0000.png")), "--mask",
        s(&data.join("masks/img_0000.png")), "--out", s(&overlay),
    ]);
    let img = image::open(&overlay).unwrap();
    assert_eq!((img.width(), img.height()), (64, 64));
}

#[test]
fn ground_truth_report_counts_generated_particles() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let rep = dir.path().join("rep");
    ok(&["report", "--manifest", s(&data.join("manifest.jsonl")), "--out", s(&rep)]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(rep.join("particles.json")).unwrap()).unwrap();
    for img in json["images"].as_array().unwrap() {
        assert_eq!(img["expected_particles"], img["detections"].as_array().unwrap().len());
    }
}

#[test]
fn predict_continues_past_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let run = run_config(dir.path());
    let out = dir.path().join("run");
    ok(&[
        "train", "--manifest", s(&data.join("manifest.jsonl")), "--config", s(&run),
        "--epochs", "0", "--out", s(&out),
    ]);
    let input = dir.path().join("in");
    fs::create_dir(&input).unwrap();
    fs::copy(data.join("images/img_0001.png"), input.join("a.png")).unwrap();
    fs::write(input.join("b.png"), b"not a png").unwrap();
    let preds = dir.path().join("preds");
    let res = mdn(&[
        "predict", "--checkpoint", s(&out.join("model.ckpt")), "--input", s(&input), "--out", s(&preds),
    ]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("b.png"));
    assert!(preds.join("a_mask.png").is_file());
    assert!(!preds.join("b_mask.png").exists());
}

#[test]
fn overlay_rejects_mismatched_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img.png");
    let mask = dir.path().join("mask.png");
    image::RgbImage::new(8, 8).save(&img).unwrap();
    image::GrayImage::new(8, 9).save(&mask).unwrap();
    let res = mdn(&["overlay", "--image", s(&img), "--mask", s(&mask), "--out", s(&dir.path().join("o.png"))]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error:"));
}

#[test]
fn unknown_preset_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let res = mdn(&["generate", "--preset", "medium", "--out", s(dir.path())]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("medium"));
}

#[test]
fn outputs_stay_under_the_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cwd = dir.path().join("cwd");
    fs::create_dir(&cwd).unwrap();
    let cfg = dir.path().join("gen.toml");
    fs::write(&cfg, GEN).unwrap();
    let out = dir.path().join("out");
    let res = Command::new(env!("CARGO_BIN_EXE_mdn"))
        .current_dir(&cwd)
        .args(["generate", "--config", s(&cfg), "--out", s(&out)])
        .output()
        .unwrap();
    assert!(res.status.success());
    assert_eq!(fs::read_dir(&cwd).unwrap().count(), 0);
    let mut top: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    top.sort();
    assert_eq!(top, ["cwd", "gen.toml", "out"]);
}

#[test]
fn training_twice_gives_the_same_history() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let run = run_config(dir.path());
    let manifest = data.join("manifest.jsonl");
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        ok(&["train", "--manifest", s(&manifest), "--config", s(&run), "--epochs", "2", "--out", s(&out)]);
        let history = fs::read_to_string(out.join("history.csv")).unwrap();
        assert_eq!(history.lines().count(), 3);
        files.push((history, fs::read(out.join("model.ckpt")).unwrap()));
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn empty_masks_report_no_particles() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path());
    let masks = dir.path().join("empty");
    fs::create_dir(&masks).unwrap();
    for i in 0..6 {
        image::GrayImage::new(64, 64).save(masks.join(format!("img_{i:04}_mask.png"))).unwrap();
    }
    let rep = dir.path().join("rep");
    ok(&["report", "--manifest", s(&data.join("manifest.jsonl")), "--masks", s(&masks), "--out", s(&rep)]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(rep.join("particles.json")).unwrap()).unwrap();
    assert_eq!(json["total"]["total"], 0);
    assert_eq!(json["images"].as_array().unwrap().len(), 6);
}

#[test]
fn overlay_tints_exactly_the_mask() {
    let dir = tempfile::tempdir().unwrap();
    let img_path = dir.path().join("img.png");
    let img = image::RgbImage::from_fn(5, 4, |x, y| image::Rgb([(40 * x) as u8, (50 * y) as u8, 200]));
    img.save(&img_path).unwrap();
    for (name, value) in [("empty", 0u8), ("full", 255u8)] {
        let mask = dir.path().join(format!("{name}.png"));
        image::GrayImage::from_pixel(5, 4, image::Luma([value])).save(&mask).unwrap();
        let out = dir.path().join(format!("{name}_overlay.png"));
        ok(&["overlay", "--image", s(&img_path), "--mask", s(&mask), "--out", s(&out)]);
        let got = image::open(&out).unwrap().into_rgb8();
        assert_eq!(got.dimensions(), (5, 4));
        for (a, b) in got.pixels().zip(img.pixels()) {
            if value == 0 {
                assert_eq!(a, b);
            } else {
                assert_ne!(a, b);
            }
        }
    }
}
