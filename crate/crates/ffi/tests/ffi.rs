use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use mcd_core::baselines::{detect_threshold, BaselineConfig, ThresholdMethod};
use mcd_core::fof::{field_of_focus, FloodFillSegmenter, I2acpConfig};
use mcd_core::mirp::{propose, MirpConfig};
use mcd_core::pipeline::detect_mcd;
use mcd_core::san::{checkpoint, Architecture, NetworkParams};
use mcd_core::synth::{generate, Span, SynthConfig};
use mcd_ffi::*;

fn small_sample() -> mcd_core::synth::SynthSample {
    let cfg = SynthConfig {
        width: 200,
        height: 180,
        band_axes: (75.0, 55.0),
        band_axes_jitter: 4.0,
        band_thickness: Span::new(12.0, 14.0),
        center_jitter: 5.0,
        cell_count: Span::new(2, 4),
        seed: 11,
        ..SynthConfig::default()
    };
    generate(&cfg, 1).unwrap().remove(0)
}

fn message() -> String {
    unsafe { CStr::from_ptr(mcd_last_error_message()) }.to_string_lossy().into_owned()
}

unsafe fn boxes_of(list: *const McdBoxList) -> Vec<McdBox> {
    (0..mcd_box_list_len(list))
        .map(|i| {
            let mut b = McdBox {
                x_tl: 0,
                y_tl: 0,
                x_br: 0,
                y_br: 0,
                score: 0.0,
            };
            assert_eq!(mcd_box_list_get(list, i, &mut b), McdStatus::Ok);
            b
        })
        .collect()
}

fn as_ffi(d: &[mcd_core::boxes::Detection]) -> Vec<McdBox> {
    d.iter()
        .map(|d| McdBox {
            x_tl: d.bbox.x_tl,
            y_tl: d.bbox.y_tl,
            x_br: d.bbox.x_br,
            y_br: d.bbox.y_br,
            score: d.score,
        })
        .collect()
}

#[test]
fn pipeline_through_the_c_abi_matches_the_library() {
    let s = small_sample();
    let (w, h) = s.image.dims();
    unsafe {
        let mut img = ptr::null_mut();
        assert_eq!(mcd_image_from_gray(s.image.pixels().as_ptr(), w, h, &mut img), McdStatus::Ok);
        let (mut dw, mut dh) = (0, 0);
        assert_eq!(mcd_image_dims(img, &mut dw, &mut dh), McdStatus::Ok);
        assert_eq!((dw, dh), (w, h));

        let mut ac = ptr::null_mut();
        assert_eq!(mcd_field_of_focus(img, 0.65, &mut ac), McdStatus::Ok);
        let expected_ac = field_of_focus(&s.image, &I2acpConfig::default(), &FloodFillSegmenter, "x").unwrap();
        let mut count = 0;
        assert_eq!(mcd_mask_count(ac, &mut count), McdStatus::Ok);
        assert_eq!(count, expected_ac.count_ones());

        let bytes: Vec<u8> = s.ac_mask_gt.bits().iter().map(|&b| b as u8).collect();
        let mut gt = ptr::null_mut();
        assert_eq!(mcd_mask_from_bytes(bytes.as_ptr(), w, h, &mut gt), McdStatus::Ok);
        let (mut iou, mut dice) = (0.0, 0.0);
        assert_eq!(mcd_seg_metrics(ac, gt, &mut iou, &mut dice), McdStatus::Ok);
        let (ei, ed) = mcd_core::eval::seg_metrics(&expected_ac, &s.ac_mask_gt).unwrap();
        assert_eq!((iou, dice), (ei, ed));

        let params = mcd_mirp_default();
        let params = McdMirpParams { lambda: 0.9, ..params };
        let mut props = ptr::null_mut();
        assert_eq!(mcd_propose(img, ac, &params, &mut props), McdStatus::Ok);
        let expected: Vec<McdBox> = propose(&s.image, &expected_ac, &MirpConfig::default().with_lambda(0.9))
            .unwrap()
            .into_iter()
            .map(|b| McdBox {
                x_tl: b.x_tl,
                y_tl: b.y_tl,
                x_br: b.x_br,
                y_br: b.y_br,
                score: 1.0,
            })
            .collect();
        assert!(!expected.is_empty());
        assert_eq!(boxes_of(props), expected);

        let mut base = ptr::null_mut();
        assert_eq!(
            mcd_detect_threshold(img, ac, McdThresholdMethod::Isodata, 2, &mut base),
            McdStatus::Ok
        );
        let eb = detect_threshold(&s.image, &expected_ac, &BaselineConfig::new(ThresholdMethod::Isodata, 2)).unwrap();
        assert_eq!(boxes_of(base), as_ffi(&eb));

        let dir = tempfile::tempdir().unwrap();
        let model_path = dir.path().join("m.mcdw");
        let net = NetworkParams::init(Architecture::default(), 9);
        checkpoint::save(&net, &model_path).unwrap();
        let c_path = CString::new(model_path.to_str().unwrap()).unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(mcd_model_load(c_path.as_ptr(), &mut model), McdStatus::Ok);

        let mut scored = ptr::null_mut();
        assert_eq!(mcd_classify(model, img, props, &mut scored), McdStatus::Ok);
        assert_eq!(mcd_box_list_len(scored), expected.len());
        assert!(boxes_of(scored).iter().all(|b| (0.0..=1.0).contains(&b.score)));

        let mut det = ptr::null_mut();
        assert_eq!(mcd_detect(img, ac, model, 0.9, &mut det), McdStatus::Ok);
        let ed = detect_mcd(&s.image, &expected_ac, &MirpConfig::default().with_lambda(0.9), &net).unwrap();
        assert_eq!(boxes_of(det), as_ffi(&ed));

        for l in [props, base, scored, det] {
            mcd_box_list_free(l);
        }
        mcd_model_free(model);
        mcd_mask_free(ac);
        mcd_mask_free(gt);
        mcd_image_free(img);
    }
}

#[test]
fn failures_report_status_and_message() {
    unsafe {
        let mut img = 1usize as *mut McdImage;
        assert_eq!(mcd_image_from_gray(ptr::null(), 4, 4, &mut img), McdStatus::NullPointer);
        assert!(img.is_null(), "output is cleared on failure");
        assert!(message().contains("null"));

        let px = [0u8; 6];
        assert_eq!(mcd_image_from_gray(px.as_ptr(), 0, 6, &mut img), McdStatus::InvalidArgument);
        assert_eq!(mcd_image_from_gray(px.as_ptr(), 3, 2, &mut img), McdStatus::Ok);
        assert_eq!(message(), "");

        let missing = CString::new("/nonexistent/m.mcdw").unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(mcd_model_load(missing.as_ptr(), &mut model), McdStatus::Io);
        assert!(message().contains("nonexistent"));

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.mcdw");
        std::fs::write(&junk, b"not a model").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(mcd_model_load(junk.as_ptr(), &mut model), McdStatus::Data);

        let mut mask = ptr::null_mut();
        let bits = [1u8; 6];
        assert_eq!(mcd_mask_from_bytes(bits.as_ptr(), 3, 2, &mut mask), McdStatus::Ok);
        let bad = McdMirpParams {
            s_min: 0,
            ..mcd_mirp_default()
        };
        let mut out = ptr::null_mut();
        assert_eq!(mcd_propose(img, mask, &bad, &mut out), McdStatus::InvalidArgument);
        assert_eq!(mcd_propose(img, ptr::null(), &mcd_mirp_default(), &mut out), McdStatus::NullPointer);

        let mut list = ptr::null_mut();
        assert_eq!(mcd_propose(img, mask, &mcd_mirp_default(), &mut list), McdStatus::Ok);
        let mut b = std::mem::zeroed::<McdBox>();
        assert_eq!(mcd_box_list_get(list, 99, &mut b), McdStatus::InvalidArgument);
        assert_eq!(mcd_box_list_len(ptr::null()), 0);

        mcd_box_list_free(list);
        mcd_mask_free(mask);
        mcd_image_free(img);
        mcd_image_free(ptr::null_mut());
    }
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn exported_names() -> Vec<String> {
    let src = std::fs::read_to_string(crate_dir().join("src/lib.rs")).unwrap();
    let mut names = Vec::new();
    let mut after_marker = false;
    for line in src.lines() {
        if line.trim() == "#[no_mangle]" {
            after_marker = true;
            continue;
        }
        if after_marker {
            let name = line.split("fn ").nth(1).and_then(|r| r.split('(').next()).unwrap();
            names.push(name.to_string());
            after_marker = false;
        }
    }
    names
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(crate_dir().join("include/mcd.h")).unwrap();
    let names = exported_names();
    assert!(names.len() >= 20);
    for n in &names {
        assert!(header.contains(&format!("{n}(")), "{n} missing from mcd.h");
    }
    for t in ["typedef struct McdImage McdImage;", "MCD_STATUS_PANIC = 6", "McdMirpParams"] {
        assert!(header.contains(t), "{t}");
    }
}

fn have_cc() -> bool {
    Command::new("cc").arg("--version").output().is_ok_and(|o| o.status.success())
}

const C_SMOKE: &str = r#"
#include <stdio.h>
#include <string.h>
#include "mcd.h"

int main(void) {
    uint8_t px[16 * 16];
    for (int i = 0; i < 16 * 16; i++) px[i] = (uint8_t)(i % 7);
    px[5 * 16 + 5] = 200;
    McdImage *img = NULL;
    if (mcd_image_from_gray(px, 16, 16, &img) != MCD_STATUS_OK) return 1;
    uint8_t bits[16 * 16];
    memset(bits, 1, sizeof bits);
    McdMask *ac = NULL;
    if (mcd_mask_from_bytes(bits, 16, 16, &ac) != MCD_STATUS_OK) return 2;
    McdMirpParams p = mcd_mirp_default();
    McdBoxList *boxes = NULL;
    if (mcd_propose(img, ac, &p, &boxes) != MCD_STATUS_OK) return 3;
    McdBox b;
    if (mcd_box_list_len(boxes) != 1 || mcd_box_list_get(boxes, 0, &b) != MCD_STATUS_OK) return 4;
    if (mcd_propose(NULL, ac, &p, &boxes) != MCD_STATUS_NULL_POINTER || boxes != NULL) return 5;
    printf("%lld %lld %lld %lld %s\n", (long long)b.x_tl, (long long)b.y_tl, (long long)b.x_br,
           (long long)b.y_br, mcd_last_error_message());
    mcd_mask_free(ac);
    mcd_image_free(img);
    return 0;
}
"#;

fn static_lib() -> Option<PathBuf> {
    // The test binary lives in <target>/<profile>/deps.
    let exe = std::env::current_exe().ok()?;
    let lib = exe.parent()?.parent()?.join("libmcd_ffi.a");
    lib.is_file().then_some(lib)
}

#[test]
fn header_compiles_and_links_from_c() {
    if !have_cc() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(&src, C_SMOKE).unwrap();
    let include = crate_dir().join("include");
    let check = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-pedantic", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .output()
        .unwrap();
    assert!(check.status.success(), "{}", String::from_utf8_lossy(&check.stderr));

    let Some(lib) = static_lib() else {
        eprintln!("static library not built; skipping link step");
        return;
    };
    let exe = dir.path().join("smoke");
    let link = Command::new("cc")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(link.status.success(), "{}", String::from_utf8_lossy(&link.stderr));
    let run = Command::new(Path::new(&exe)).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let out = String::from_utf8_lossy(&run.stdout);
    assert!(out.starts_with("0 0 10 10 "), "{out}");
    assert!(out.contains("null"), "{out}");
}
