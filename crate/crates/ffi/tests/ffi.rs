use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use vflkit::data::{Dataset, PartitionSpec};
use vflkit::protocol::{ModelSpec, SystemCheckpoint, TrainConfig};
use vflkit::variance::{heterolr_variance, splitnn_unit_variance, ScalarMixture, SplitnnMode};
use vflkit::Matrix;
use vflkit_ffi::*;

/// Two parties with two columns each; the label is the sign of column 0.
fn dataset() -> Dataset {
    let rows: Vec<Vec<f64>> = (0..64)
        .map(|i| {
            let t = i as f64 / 63.0 * 4.0 - 2.0;
            vec![
                t,
                0.3 * (i % 5) as f64,
                -0.2 * (i % 3) as f64,
                0.1 * (i % 7) as f64,
            ]
        })
        .collect();
    let labels = rows.iter().map(|r| usize::from(r[0] > 0.0)).collect();
    Dataset::new(Matrix::from_rows(&rows).unwrap(), labels, 2).unwrap()
}

fn checkpoint(dir: &Path) -> CString {
    let spec = PartitionSpec::contiguous(&[2, 2]).unwrap();
    let sys = ModelSpec::Heterolr
        .train(&dataset(), &spec, &TrainConfig::heterolr())
        .unwrap()
        .system;
    let path = dir.join("checkpoint.json");
    SystemCheckpoint::from_system(&sys).save(&path).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    let n = unsafe { vfl_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n >= 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }
        .to_str()
        .unwrap()
        .to_string()
}

fn load(dir: &Path) -> *mut VflSystem {
    let path = checkpoint(dir);
    let mut sys = ptr::null_mut();
    assert_eq!(
        unsafe { vfl_system_load(path.as_ptr(), &mut sys) },
        VflStatus::Ok
    );
    assert!(!sys.is_null());
    sys
}

#[test]
fn load_query_predict_and_free() {
    let dir = tempfile::tempdir().unwrap();
    let sys = load(dir.path());
    let (mut m, mut c, mut w) = (0, 0, 0);
    assert_eq!(
        unsafe { vfl_system_shape(sys, 1, &mut m, &mut c, &mut w) },
        VflStatus::Ok
    );
    assert_eq!((m, c, w), (2, 2, 2));

    let a = [1.5, 0.0, -1.5, 0.0];
    let b = [0.0, 0.0, 0.0, 0.0];
    let views = [a.as_ptr(), b.as_ptr()];
    let mut labels = [9usize; 2];
    assert_eq!(
        unsafe { vfl_system_predict(sys, views.as_ptr(), 2, labels.as_mut_ptr()) },
        VflStatus::Ok
    );
    assert_eq!(labels, [1, 0]);
    unsafe { vfl_system_free(sys) };
    unsafe { vfl_system_free(ptr::null_mut()) };
}

#[test]
fn hit_rate_majority_and_synthesis_agree() {
    let dir = tempfile::tempdir().unwrap();
    let sys = load(dir.path());
    let b: Vec<f64> = (0..8)
        .flat_map(|i| [0.1 * i as f64, -0.1 * i as f64])
        .collect();
    let views = [b.as_ptr()];
    let mut cache = ptr::null_mut();
    assert_eq!(
        unsafe { vfl_benign_new(sys, views.as_ptr(), 8, &mut cache) },
        VflStatus::Ok
    );

    let x = [-1.0, 0.0];
    let (mut label, mut frac) = (9, 0.0);
    assert_eq!(
        unsafe { vfl_majority_label(sys, cache, x.as_ptr(), 2, &mut label, &mut frac) },
        VflStatus::Ok
    );
    let mut rate = 0.0;
    assert_eq!(
        unsafe { vfl_hit_rate(sys, cache, x.as_ptr(), 2, label, &mut rate) },
        VflStatus::Ok
    );
    assert_eq!(rate, frac);

    let target = 1 - label;
    let mut v = [0.0; 2];
    let mut acc = 0.0;
    let status = unsafe {
        vfl_synthesize(
            sys,
            cache,
            views.as_ptr(),
            8,
            x.as_ptr(),
            2,
            target,
            ptr::null(),
            v.as_mut_ptr(),
            &mut acc,
        )
    };
    assert_eq!(status, VflStatus::Ok, "{}", last_error());
    let moved = [x[0] + v[0], x[1] + v[1]];
    let mut check = 0.0;
    assert_eq!(
        unsafe { vfl_hit_rate(sys, cache, moved.as_ptr(), 2, target, &mut check) },
        VflStatus::Ok
    );
    assert_eq!(check, acc);
    assert!(acc >= 0.95);
    unsafe {
        vfl_benign_free(cache);
        vfl_system_free(sys);
    }
}

#[test]
fn errors_set_codes_and_messages() {
    let mut sys = ptr::null_mut();
    assert_eq!(
        unsafe { vfl_system_load(ptr::null(), &mut sys) },
        VflStatus::NullPointer
    );
    assert!(last_error().contains("path"));

    let missing = CString::new("/nonexistent/checkpoint.json").unwrap();
    assert_ne!(
        unsafe { vfl_system_load(missing.as_ptr(), &mut sys) },
        VflStatus::Ok
    );
    assert!(sys.is_null());
    assert!(vfl_last_error_length() > 0);

    let dir = tempfile::tempdir().unwrap();
    let sys = load(dir.path());
    let (mut m, mut c, mut w) = (0, 0, 0);
    assert_eq!(
        unsafe { vfl_system_shape(sys, 5, &mut m, &mut c, &mut w) },
        VflStatus::InvalidArgument
    );
    assert!(last_error().contains("out of range"));

    let b = [0.0, 0.0];
    let views = [b.as_ptr()];
    let mut cache = ptr::null_mut();
    assert_eq!(
        unsafe { vfl_benign_new(sys, views.as_ptr(), 1, &mut cache) },
        VflStatus::Ok
    );
    let x = [0.0, 0.0, 0.0];
    let mut rate = 0.0;
    assert_eq!(
        unsafe { vfl_hit_rate(sys, cache, x.as_ptr(), 3, 0, &mut rate) },
        VflStatus::Shape
    );

    let bad = CString::new(r#"{"rounds": 3, "unknown": 1}"#).unwrap();
    let mut v = [0.0; 2];
    let status = unsafe {
        vfl_synthesize(
            sys,
            cache,
            views.as_ptr(),
            1,
            x.as_ptr(),
            2,
            0,
            bad.as_ptr(),
            v.as_mut_ptr(),
            &mut rate,
        )
    };
    assert_eq!(status, VflStatus::Config);
    assert!(last_error().contains("unknown"));

    assert_eq!(unsafe { vfl_last_error_message(ptr::null_mut(), 4) }, -1);
    let mut tiny = [0 as c_char; 4];
    assert_eq!(unsafe { vfl_last_error_message(tiny.as_mut_ptr(), 4) }, 3);
    assert_eq!(tiny[3], 0);
    unsafe {
        vfl_benign_free(cache);
        vfl_system_free(sys);
    }
}

#[test]
fn success_clears_last_error() {
    let mut out = 0.0;
    assert_eq!(
        unsafe { vfl_heterolr_variance(ptr::null(), ptr::null(), ptr::null(), 1, &mut out) },
        VflStatus::NullPointer
    );
    assert!(vfl_last_error_length() > 0);
    let (w, m, s) = ([1.0], [-1.0], [1.5]);
    assert_eq!(
        unsafe { vfl_heterolr_variance(w.as_ptr(), m.as_ptr(), s.as_ptr(), 1, &mut out) },
        VflStatus::Ok
    );
    assert_eq!(vfl_last_error_length(), 0);
}

#[test]
fn variance_matches_the_library() {
    let (w, m, s) = ([0.3, 0.7], [-1.0, 0.5], [1.5, 0.4]);
    let sm = ScalarMixture::new(w.to_vec(), m.to_vec(), s.to_vec()).unwrap();
    let mut out = 0.0;
    assert_eq!(
        unsafe { vfl_heterolr_variance(w.as_ptr(), m.as_ptr(), s.as_ptr(), 2, &mut out) },
        VflStatus::Ok
    );
    assert_eq!(out, heterolr_variance(&sm).value);
    for (mode, lib) in [
        (VflSplitnnMode::ExactMixture, SplitnnMode::ExactMixture),
        (VflSplitnnMode::PerComponent, SplitnnMode::PerComponent),
    ] {
        assert_eq!(
            unsafe { vfl_splitnn_variance(w.as_ptr(), m.as_ptr(), s.as_ptr(), 2, mode, &mut out) },
            VflStatus::Ok
        );
        assert_eq!(out, splitnn_unit_variance(&sm, lib).value);
    }
    let bad = [-1.0, 2.0];
    assert_eq!(
        unsafe { vfl_heterolr_variance(bad.as_ptr(), m.as_ptr(), s.as_ptr(), 2, &mut out) },
        VflStatus::InvalidArgument
    );
}

#[test]
fn version_is_the_package_version() {
    let v = unsafe { CStr::from_ptr(vfl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api_and_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/vflkit.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "vfl_system_load",
        "vfl_system_free",
        "vfl_system_predict",
        "vfl_benign_new",
        "vfl_synthesize",
        "vfl_last_error_message",
        "VFL_STATUS_NULL_POINTER",
        "typedef struct VflSystem VflSystem",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        "#include \"vflkit.h\"\nint main(void) { return vfl_version() == 0; }\n",
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .status()
        .expect("a C compiler is required to check the header");
    assert!(status.success());
}
