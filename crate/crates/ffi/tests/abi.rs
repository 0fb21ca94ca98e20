use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use gcvit::config::ModelConfig;
use gcvit::model::{save_checkpoint, CheckpointMeta, GcVit};
use gcvit::ImageTensor;
use gcvit_ffi::*;

fn small_config(classes: usize) -> ModelConfig {
    let mut c = ModelConfig::desk_tiny(classes);
    c.input_size = (16, 16);
    c.patch_size = 4;
    c.stem_channels = 4;
    c.embed_dim = 8;
    c.stage_dims = vec![8, 16];
    c.stage_depths = vec![1, 1];
    c.num_heads = vec![2, 2];
    c
}

fn write_model(dir: &Path) -> CString {
    let model = GcVit::init(small_config(3), 5).unwrap();
    let meta = CheckpointMeta {
        class_names: vec!["abyssinian".into(), "bengal".into(), "birman".into()],
        ..CheckpointMeta::default()
    };
    let path = dir.join("m.ckpt");
    save_checkpoint(&path, &model, &meta).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = gcv_last_error_message();
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { gcv_string_free(p) };
    s
}

fn load(path: &CString) -> *mut GcvModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { gcv_model_load(path.as_ptr(), &mut m) }, GcvStatus::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn load_query_and_free() {
    let dir = tempfile::tempdir().unwrap();
    let m = load(&write_model(dir.path()));
    let mut n = 0usize;
    assert_eq!(unsafe { gcv_model_num_classes(m, &mut n) }, GcvStatus::Ok);
    assert_eq!(n, 3);
    let (mut h, mut w) = (0usize, 0usize);
    assert_eq!(unsafe { gcv_model_input_size(m, &mut h, &mut w) }, GcvStatus::Ok);
    assert_eq!((h, w), (16, 16));
    let mut name = ptr::null_mut();
    assert_eq!(unsafe { gcv_model_class_name(m, 1, &mut name) }, GcvStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(name) }.to_str().unwrap(), "bengal");
    unsafe { gcv_string_free(name) };
    assert_eq!(unsafe { gcv_model_class_name(m, 3, &mut name) }, GcvStatus::InvalidArgument);
    assert!(last_error().contains("out of range"));
    unsafe { gcv_model_free(m) };
    unsafe { gcv_model_free(ptr::null_mut()) };
}

#[test]
fn pixel_and_file_predictions_agree() {
    let dir = tempfile::tempdir().unwrap();
    let m = load(&write_model(dir.path()));
    let (h, w) = (20usize, 24usize);
    let pixels: Vec<u8> = (0..h * w * 3).map(|i| (i * 7 % 251) as u8).collect();
    let mut probs = [0.0f64; 3];
    let mut top = usize::MAX;
    let status = unsafe { gcv_model_predict_pixels(m, pixels.as_ptr(), h, w, probs.as_mut_ptr(), 3, &mut top) };
    assert_eq!(status, GcvStatus::Ok);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let best = (0..3).max_by(|&a, &b| probs[a].total_cmp(&probs[b])).unwrap();
    assert_eq!(top, best);

    let img_path = dir.path().join("x.ppm");
    ImageTensor::from_rgb8(h, w, &pixels).unwrap().save(&img_path).unwrap();
    let cpath = CString::new(img_path.to_str().unwrap()).unwrap();
    let mut probs2 = [0.0f64; 3];
    let mut top2 = usize::MAX;
    let status = unsafe { gcv_model_predict_file(m, cpath.as_ptr(), probs2.as_mut_ptr(), 3, &mut top2) };
    assert_eq!(status, GcvStatus::Ok);
    assert_eq!(probs, probs2);
    assert_eq!(top, top2);

    let status = unsafe { gcv_model_predict_pixels(m, pixels.as_ptr(), h, w, probs.as_mut_ptr(), 2, &mut top) };
    assert_eq!(status, GcvStatus::Shape);
    unsafe { gcv_model_free(m) };
}

#[test]
fn failures_report_status_and_message() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { gcv_model_load(ptr::null(), &mut m) }, GcvStatus::NullPointer);
    assert!(last_error().contains("path"));
    let missing = CString::new("/nonexistent/model.ckpt").unwrap();
    let status = unsafe { gcv_model_load(missing.as_ptr(), &mut m) };
    assert_ne!(status, GcvStatus::Ok);
    assert!(m.is_null());
    assert!(last_error().contains("/nonexistent/model.ckpt"));

    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("bad.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let cg = CString::new(garbage.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { gcv_model_load(cg.as_ptr(), &mut m) }, GcvStatus::Checkpoint);

    let mut n = 0usize;
    assert_eq!(unsafe { gcv_model_num_classes(ptr::null(), &mut n) }, GcvStatus::NullPointer);
}

#[test]
fn metric_helpers() {
    let mut lr = 0.0;
    assert_eq!(unsafe { gcv_cosine_lr(0, 10, 0.0, 1e-4, &mut lr) }, GcvStatus::Ok);
    assert_eq!(lr, 1e-4);
    assert_eq!(unsafe { gcv_cosine_lr(5, 10, 0.0, 1e-4, &mut lr) }, GcvStatus::Ok);
    assert!((lr - 5e-5).abs() < 1e-18);
    assert_eq!(unsafe { gcv_cosine_lr(11, 10, 0.0, 1e-4, &mut lr) }, GcvStatus::InvalidArgument);

    let logits = [0.5f64; 12];
    let mut loss = 0.0;
    assert_eq!(unsafe { gcv_smoothed_cross_entropy(logits.as_ptr(), 12, 3, 0.1, &mut loss) }, GcvStatus::Ok);
    assert!((loss - 12f64.ln()).abs() < 1e-12);

    let labels = [0usize, 0, 1, 1];
    let preds = [0usize, 1, 1, 1];
    let mut counts = [0u64; 4];
    assert_eq!(
        unsafe { gcv_confusion_matrix(labels.as_ptr(), preds.as_ptr(), 4, 2, counts.as_mut_ptr()) },
        GcvStatus::Ok
    );
    assert_eq!(counts, [1, 1, 0, 2]);
    let mut r = GcvReportSummary::default();
    assert_eq!(
        unsafe { gcv_classification_report(labels.as_ptr(), preds.as_ptr(), 4, 2, &mut r) },
        GcvStatus::Ok
    );
    assert_eq!(r.accuracy, 0.75);
    assert!((r.macro_precision - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    assert!((r.macro_recall - 0.75).abs() < 1e-15);

    let bad = [5usize];
    assert_eq!(
        unsafe { gcv_confusion_matrix(bad.as_ptr(), bad.as_ptr(), 1, 2, counts.as_mut_ptr()) },
        GcvStatus::InvalidArgument
    );
}

#[test]
fn header_declares_the_interface() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/gcvit.h")).unwrap();
    for symbol in [
        "gcv_model_load",
        "gcv_model_free",
        "gcv_model_predict_file",
        "gcv_model_predict_pixels",
        "gcv_last_error_message",
        "gcv_string_free",
        "GCV_STATUS_NULL_POINTER",
        "typedef struct GcvModel GcvModel",
    ] {
        assert!(header.contains(symbol), "missing {symbol}");
    }
    let v = unsafe { CStr::from_ptr(gcv_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
