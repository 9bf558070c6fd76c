use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use fedrefine_ffi::*;

fn variant(name: &str) -> CString {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/variants").join(name);
    CString::new(p.to_str().unwrap()).unwrap()
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = fr_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn null_arguments_are_rejected() {
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(fr_scenario_load(ptr::null(), &mut s), FrStatus::InvalidArgument);
        assert!(s.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(fr_scenario_run(ptr::null_mut(), c"x".as_ptr()), FrStatus::InvalidArgument);
        assert_eq!(fr_scenario_sender_count(ptr::null()), 0);
        assert_eq!(fr_model_vocab_size(ptr::null()), 0);
        let mut n = 0usize;
        let st = fr_model_generate(ptr::null(), ptr::null(), 0, 1, ptr::null_mut(), 0, &mut n);
        assert_eq!(st, FrStatus::InvalidArgument);
        fr_scenario_free(ptr::null_mut());
        fr_model_free(ptr::null_mut());
    }
}

#[test]
fn missing_files_map_to_missing_artifact() {
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(fr_scenario_load(c"/nonexistent/scenario.toml".as_ptr(), &mut s), FrStatus::MissingArtifact);
        let mut m = ptr::null_mut();
        assert_eq!(fr_model_load(c"/nonexistent/model.frck".as_ptr(), &mut m), FrStatus::MissingArtifact);
        assert!(m.is_null());
    }
}

#[test]
fn bad_config_maps_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "schema_version = 1\nbogus = 3\n").unwrap();
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(fr_scenario_load(cstr(&p).as_ptr(), &mut s), FrStatus::Config);
    }
}

#[test]
fn status_strings_are_static() {
    for st in [FrStatus::Ok, FrStatus::BufferTooSmall, FrStatus::Panic] {
        let s = unsafe { CStr::from_ptr(fr_status_str(st)) };
        assert!(!s.to_bytes().is_empty());
    }
}

#[test]
fn payload_bytes_match_element_count() {
    // 2 (K and V) x layers x kv heads x head dim x tokens x dtype.
    assert_eq!(fr_kv_payload_bytes(24, 2, 64, 1, 2), 12288);
    assert_eq!(fr_kv_payload_bytes(16, 8, 64, 3, 2), 3 * 32768);
    assert_eq!(fr_kv_payload_bytes(2, 2, 16, 0, 2), 0);
}

#[test]
fn untrained_scenario_cannot_decode() {
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(fr_scenario_load(variant("hetero-cache.toml").as_ptr(), &mut s), FrStatus::Ok);
        assert_eq!(fr_scenario_sender_count(s), 2);
        let q = [4u32, 1];
        let mut out = [0u32; 8];
        let mut n = 0usize;
        let st = fr_scenario_decode(s, FrMedium::Cache, false, 1, q.as_ptr(), 2, out.as_mut_ptr(), 8, &mut n, ptr::null_mut());
        assert_eq!(st, FrStatus::NotTrained);
        fr_scenario_free(s);
    }
}

#[test]
fn run_decode_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir: PathBuf = dir.path().join("hc");
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(fr_scenario_load(variant("hetero-cache.toml").as_ptr(), &mut s), FrStatus::Ok);
        assert_eq!(fr_scenario_run(s, cstr(&out_dir).as_ptr()), FrStatus::Ok, "{}", last_error());

        let mut q = [0u32; 4];
        let mut qn = 0usize;
        assert_eq!(fr_scenario_tokenize(s, c"k0 ?".as_ptr(), q.as_mut_ptr(), 4, &mut qn), FrStatus::Ok);
        assert_eq!(qn, 2);
        assert_eq!(fr_scenario_tokenize(s, c"zzz".as_ptr(), q.as_mut_ptr(), 4, &mut qn), FrStatus::Alphabet);

        // Zero senders reproduces the receiver checkpoint on its own.
        let mut out = [0u32; 8];
        let mut n = 0usize;
        let mut lat = 0.0f64;
        let st = fr_scenario_decode(s, FrMedium::Cache, false, 0, q.as_ptr(), 2, out.as_mut_ptr(), 8, &mut n, &mut lat);
        assert_eq!(st, FrStatus::Ok, "{}", last_error());
        assert!(lat > 0.0);
        let mut m = ptr::null_mut();
        assert_eq!(fr_model_load(cstr(&out_dir.join("models/recv.frck")).as_ptr(), &mut m), FrStatus::Ok);
        assert!(fr_model_vocab_size(m) > 4);
        let mut out2 = [0u32; 8];
        let mut n2 = 0usize;
        assert_eq!(fr_model_generate(m, q.as_ptr(), 2, 3, out2.as_mut_ptr(), 8, &mut n2), FrStatus::Ok);
        assert_eq!(&out[..n], &out2[..n2]);
        fr_model_free(m);

        // Buffer too small still reports the needed length.
        let mut small = [0u32; 0];
        let mut need = 0usize;
        let st = fr_scenario_decode(s, FrMedium::Cache, false, 2, q.as_ptr(), 2, small.as_mut_ptr(), 0, &mut need, ptr::null_mut());
        if st == FrStatus::BufferTooSmall {
            assert!(need > 0);
        } else {
            assert_eq!(st, FrStatus::Ok);
            assert_eq!(need, 0);
        }

        // Cache beats token on latency for the same query.
        let (mut lc, mut lt) = (0.0, 0.0);
        fr_scenario_decode(s, FrMedium::Cache, false, 2, q.as_ptr(), 2, out.as_mut_ptr(), 8, &mut n, &mut lc);
        fr_scenario_decode(s, FrMedium::Token, false, 2, q.as_ptr(), 2, out.as_mut_ptr(), 8, &mut n, &mut lt);
        assert!(lc < lt, "{lc} vs {lt}");

        assert_eq!(
            fr_scenario_decode(s, FrMedium::Cache, false, 3, q.as_ptr(), 2, out.as_mut_ptr(), 8, &mut n, ptr::null_mut()),
            FrStatus::InvalidArgument
        );

        let mut acc = -1.0;
        assert_eq!(fr_scenario_accuracy(s, FrMedium::Cache, true, 2, &mut acc), FrStatus::Ok);
        assert!((0.0..=1.0).contains(&acc));
        fr_scenario_free(s);

        // A fresh handle reloads the same artifacts and decodes identically.
        let mut s2 = ptr::null_mut();
        assert_eq!(fr_scenario_load(variant("hetero-cache.toml").as_ptr(), &mut s2), FrStatus::Ok);
        assert_eq!(fr_scenario_load_artifacts(s2, cstr(&out_dir).as_ptr()), FrStatus::Ok, "{}", last_error());
        let mut acc2 = -1.0;
        assert_eq!(fr_scenario_accuracy(s2, FrMedium::Cache, true, 2, &mut acc2), FrStatus::Ok);
        assert_eq!(acc, acc2);
        fr_scenario_free(s2);
    }
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/fedrefine.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for sym in ["fr_scenario_load", "fr_scenario_decode", "fr_model_generate", "fr_last_error", "FR_STATUS_OK"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let Ok(status) = Command::new("cc").args(["-fsyntax-only", "-x", "c"]).arg(&header).status() else {
        return;
    };
    assert!(status.success());
}
