use std::path::Path;
use std::process::{Command, Output};

use mcd_core::io::{list_images, load_gray};
use mcd_core::kv::KeyValues;

fn mcd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcd"))
        .args(args)
        .env("MCD_LOG", "error")
        .output()
        .expect("spawn mcd")
}

fn ok(args: &[&str]) -> String {
    let out = mcd(args);
    assert!(
        out.status.success(),
        "mcd {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn corpus(dir: &Path, count: usize) {
    ok(&["synth", "--out", s(dir), "--count", &count.to_string(), "--seed", "11"]);
}

#[test]
fn fallback_segmentation_recovers_the_chamber() {
    let t = tempfile::tempdir().unwrap();
    let c = t.path().join("c");
    corpus(&c, 3);
    let seg = t.path().join("seg");
    ok(&["segment", "--images", s(&c.join("images")), "--out", s(&seg), "--fallback"]);
    let report = t.path().join("seg.txt");
    ok(&[
        "eval",
        "--pred-masks",
        s(&seg),
        "--gt-masks",
        s(&c.join("masks_ac")),
        "--report",
        s(&report),
    ]);
    let kv = KeyValues::load(&report).unwrap();
    assert_eq!(kv.get("segmentation.images"), Some("3"));
    let iou: f64 = kv.parsed("segmentation.iou").unwrap().unwrap();
    assert!(iou >= 0.8, "IoU {iou}");
}

#[test]
fn point_eval_of_ground_truth_against_itself_is_perfect() {
    let t = tempfile::tempdir().unwrap();
    let c = t.path().join("c");
    corpus(&c, 2);
    let ann = c.join("annotations");
    let stdout = ok(&["eval", "--pred", s(&ann), "--gt", s(&ann), "--criteria", "point"]);
    assert!(stdout.contains("point"), "{stdout}");
    let report = t.path().join("r.txt");
    ok(&["eval", "--pred", s(&ann), "--gt", s(&ann), "--criteria", "point", "--report", s(&report)]);
    let kv = KeyValues::load(&report).unwrap();
    let f1: f64 = kv.parsed("point.f1").unwrap().expect("point F1 in report");
    assert_eq!(f1, 1.0);
    assert_eq!(kv.get("point.fp"), Some("0"));
}

#[test]
fn flags_override_the_config_file() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("mcd.conf");
    let out = t.path().join("c");
    std::fs::write(&cfg, format!("count = 4\nseed = 2\nout = {}\n", out.display())).unwrap();
    ok(&["--config", s(&cfg), "synth", "--count", "2"]);
    assert_eq!(list_images(&out.join("images")).unwrap().len(), 2);
    let manifest = KeyValues::load(&out.join("manifest.txt")).unwrap();
    assert_eq!(manifest.get("config.seed"), Some("2"));
}

#[test]
fn proposals_are_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let c = t.path().join("c");
    corpus(&c, 2);
    let (a, b) = (t.path().join("a.csv"), t.path().join("b.csv"));
    for out in [&a, &b] {
        ok(&[
            "propose",
            "--images",
            s(&c.join("images")),
            "--ac-masks",
            s(&c.join("masks_ac")),
            "--lambda",
            "0.9",
            "--out",
            s(out),
        ]);
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert!(String::from_utf8(bytes).unwrap().lines().count() >= 3);
}

#[test]
fn overlay_draws_both_box_sets() {
    let t = tempfile::tempdir().unwrap();
    let c = t.path().join("c");
    corpus(&c, 1);
    let image = list_images(&c.join("images")).unwrap().remove(0);
    let stem = image.file_stem().unwrap().to_str().unwrap().to_string();
    let gt = c.join("annotations").join(format!("{stem}.csv"));
    let out = t.path().join("o.png");
    ok(&["overlay", "--image", s(&image), "--pred", s(&gt), "--gt", s(&gt), "--out", s(&out)]);
    let g = load_gray(&out).unwrap();
    assert!(g.pixels().contains(&255));
    let plain = load_gray(&image).unwrap();
    let changed = g.pixels().iter().zip(plain.pixels()).filter(|(a, b)| a != b).count();
    assert!(changed > 0);
}

#[test]
fn data_problems_exit_two() {
    let t = tempfile::tempdir().unwrap();
    let empty = t.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = mcd(&["propose", "--images", s(&empty), "--out", s(&t.path().join("p.csv"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let c = t.path().join("c");
    corpus(&c, 1);
    let out = mcd(&[
        "detect",
        "--images",
        s(&c.join("images")),
        "--model",
        s(&t.path().join("missing.mcdw")),
        "--lambda",
        "0.9",
        "--out",
        s(&t.path().join("d.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(mcd(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(mcd(&["synth", "--count", "many"]).status.code(), Some(1));
    let out = mcd(&["synth", "--count", "1"]);
    assert_eq!(out.status.code(), Some(1), "missing --out");
    assert!(String::from_utf8_lossy(&out.stderr).contains("--out"));
    assert_eq!(mcd(&["--help"]).status.code(), Some(0));
}

#[test]
fn train_then_sweep_lambda() {
    let t = tempfile::tempdir().unwrap();
    let c = t.path().join("c");
    corpus(&c, 10);
    let model = t.path().join("m.mcdw");
    ok(&["train", "--corpus", s(&c), "--seed", "1", "--max-epochs", "3", "--out", s(&model)]);
    for ext in ["split", "log"] {
        assert!(t.path().join(format!("m.mcdw.{ext}")).is_file(), "missing .{ext} sidecar");
    }
    let report = t.path().join("lambda.txt");
    ok(&["search-lambda", "--corpus", s(&c), "--model", s(&model), "--report", s(&report)]);
    let kv = KeyValues::load(&report).unwrap();
    assert_eq!(kv.get("evaluations"), Some("31"));
    let best: f64 = kv.parsed("best.lambda").unwrap().unwrap();
    assert!((0.7..=1.0).contains(&best));

    let dets = t.path().join("d.csv");
    ok(&[
        "detect",
        "--images",
        s(&c.join("images")),
        "--model",
        s(&model),
        "--lambda",
        &format!("{best}"),
        "--out",
        s(&dets),
    ]);
    let text = std::fs::read_to_string(&dets).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("synth_")).count(), 10);
}
