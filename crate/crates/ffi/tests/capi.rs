use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use amfuse::model::{quad_modalities, ModelConfig};
use amfuse_ffi::*;

fn tiny_json(classes: usize) -> CString {
    let cfg = ModelConfig {
        num_classes: classes,
        ..ModelConfig::tiny(quad_modalities())
    };
    CString::new(cfg.to_json()).unwrap()
}

fn last_error() -> String {
    let p = amfuse_last_error();
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { amfuse_string_free(p) };
    s
}

fn new_model(classes: usize, seed: u64) -> *mut AmfuseModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { amfuse_model_new(tiny_json(classes).as_ptr(), seed, &mut m) }, AmfuseStatus::Ok);
    m
}

#[test]
fn paper_config_increment() {
    let cfg = CString::new(include_str!("../../../configs/paper_b2.json")).unwrap();
    let (mut total, mut inc) = (0u64, 0u64);
    assert_eq!(unsafe { amfuse_count_params(cfg.as_ptr(), &mut total, &mut inc) }, AmfuseStatus::Ok);
    assert_eq!(inc, 11_268);
    assert_eq!(total, 50_610_945);
}

#[test]
fn forward_matches_library_and_survives_save_load() {
    let m = new_model(5, 3);
    let (h, w) = (32, 32);
    let frames: Vec<f64> = (0..4 * 3 * h * w).map(|i| ((i * 31) % 97) as f64 / 96.0).collect();
    let mut logits = vec![0.0; 5 * h * w];
    let st = unsafe { amfuse_model_forward(m, frames.as_ptr(), h, w, logits.as_mut_ptr(), logits.len()) };
    assert_eq!(st, AmfuseStatus::Ok);
    assert!(logits.iter().all(|v| v.is_finite()));

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("w.nnz").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { amfuse_model_save(m, path.as_ptr()) }, AmfuseStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(
        unsafe { amfuse_model_load(tiny_json(5).as_ptr(), path.as_ptr(), &mut back) },
        AmfuseStatus::Ok
    );
    let mut again = vec![0.0; logits.len()];
    unsafe { amfuse_model_forward(back, frames.as_ptr(), h, w, again.as_mut_ptr(), again.len()) };
    assert_eq!(logits, again);

    let mut ids = vec![0u32; h * w];
    assert_eq!(
        unsafe { amfuse_model_segment(back, frames.as_ptr(), h, w, ids.as_mut_ptr(), ids.len()) },
        AmfuseStatus::Ok
    );
    assert!(ids.iter().all(|&c| c < 5));
    assert_eq!(unsafe { amfuse_model_num_classes(back) }, 5);
    assert_eq!(unsafe { amfuse_model_num_modalities(back) }, 4);
    unsafe {
        amfuse_model_free(m);
        amfuse_model_free(back);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let bad = CString::new("{\"stage_channels\": 3}").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { amfuse_model_new(bad.as_ptr(), 0, &mut m) }, AmfuseStatus::Format);
    assert!(m.is_null());
    assert!(last_error().contains("model config"));

    assert_eq!(unsafe { amfuse_model_new(ptr::null(), 0, &mut m) }, AmfuseStatus::NullPointer);

    let model = new_model(3, 0);
    let frames = vec![0.5; 4 * 3 * 32 * 32];
    let mut small = vec![0.0; 10];
    let st = unsafe { amfuse_model_forward(model, frames.as_ptr(), 32, 32, small.as_mut_ptr(), small.len()) };
    assert_eq!(st, AmfuseStatus::BufferTooSmall);

    let missing = CString::new("/nonexistent/w.nnz").unwrap();
    let st = unsafe { amfuse_model_load(tiny_json(3).as_ptr(), missing.as_ptr(), &mut m) };
    assert_eq!(st, AmfuseStatus::Io);
    unsafe { amfuse_model_free(model) };
    unsafe { amfuse_model_free(ptr::null_mut()) };
}

#[test]
fn config_round_trips_through_the_handle() {
    let m = new_model(4, 1);
    let p = unsafe { amfuse_model_config_json(m) };
    let text = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned();
    unsafe { amfuse_string_free(p) };
    assert_eq!(ModelConfig::from_json(&text).unwrap().num_classes, 4);
    unsafe { amfuse_model_free(m) };
}

fn target_dir() -> PathBuf {
    // tests/<exe> lives in target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libamfuse_ffi.a");
    assert!(lib.exists(), "staticlib missing at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "amfuse.h"
int main(void) {
    AmfuseModel *m = NULL;
    AmfuseStatus st = amfuse_model_new("{}", 0, &m);
    if (st != AMFUSE_STATUS_FORMAT || m != NULL) return 1;
    char *msg = amfuse_last_error();
    if (msg == NULL) return 2;
    amfuse_string_free(msg);
    printf("%s\n", amfuse_version());
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("probe");
    let out = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .expect("C compiler available");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "probe exited with {:?}", run.status);
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
