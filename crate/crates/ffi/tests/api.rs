use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use kws_core::eval::{synth_corpus, SynthSpec};
use kws_core::posterior::PosteriorStream;
use kws_ffi::*;

fn corpus_dir() -> (tempfile::TempDir, kws_core::eval::Corpus) {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        positives: 4,
        negative_hours: 0.0,
        ..SynthSpec::default()
    };
    let corpus = synth_corpus(&spec, 9, None)
        .unwrap()
        .write(dir.path())
        .unwrap();
    (dir, corpus)
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = kws_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn engine(dir: &Path) -> *mut KwsEngine {
    let mut e = ptr::null_mut();
    let cfg = cstr(&dir.join("config.toml"));
    assert_eq!(
        unsafe { kws_engine_new_from_config(cfg.as_ptr(), &mut e) },
        KwsStatus::Ok
    );
    assert!(!e.is_null());
    e
}

fn collect(ds: *const KwsDetections) -> Vec<(String, KwsDetection)> {
    let n = unsafe { kws_detections_len(ds) };
    (0..n)
        .map(|i| {
            let mut d = std::mem::MaybeUninit::<KwsDetection>::uninit();
            assert_eq!(
                unsafe { kws_detections_get(ds, i, d.as_mut_ptr()) },
                KwsStatus::Ok
            );
            let d = unsafe { d.assume_init() };
            let kw = unsafe { CStr::from_ptr(d.keyword) }
                .to_str()
                .unwrap()
                .to_string();
            (kw, d)
        })
        .collect()
}

#[test]
fn files_and_buffers_agree_with_core() {
    let (dir, corpus) = corpus_dir();
    let e = engine(dir.path());
    let core = kws_core::config::CliConfig::load(&dir.path().join("config.toml"))
        .unwrap()
        .engine()
        .unwrap();
    for u in &corpus.utterances {
        let det = PosteriorStream::load(&u.det).unwrap();
        let ali = PosteriorStream::load(&u.ali).unwrap();
        let expected = core.run(&det, &ali).unwrap();

        let mut from_files = ptr::null_mut();
        let (dp, ap) = (cstr(&u.det), cstr(&u.ali));
        let s = unsafe { kws_engine_run_files(e, dp.as_ptr(), ap.as_ptr(), &mut from_files) };
        assert_eq!(s, KwsStatus::Ok);

        let mut from_buffers = ptr::null_mut();
        let s = unsafe {
            kws_engine_run_buffers(
                e,
                det.values().as_ptr(),
                det.num_frames(),
                ali.values().as_ptr(),
                ali.num_frames(),
                det.num_units(),
                det.frame_duration(),
                &mut from_buffers,
            )
        };
        assert_eq!(s, KwsStatus::Ok);

        let a = collect(from_files);
        let b = collect(from_buffers);
        assert_eq!(a.len(), expected.len());
        assert_eq!(b.len(), expected.len());
        for ((ka, da), ((kb, db), x)) in a.iter().zip(b.iter().zip(&expected)) {
            assert_eq!(ka, &x.keyword);
            assert_eq!(kb, &x.keyword);
            assert_eq!(da.t0_frame, x.t0 as i64);
            assert_eq!(da.t_r_frame, x.t_r.map_or(-1, |t| t as i64));
            assert_eq!(da.t_end_frame, db.t_end_frame);
            assert_eq!(da.accepted, x.accepted);
            assert_eq!(db.final_stage_passed, x.final_stage_passed);
            assert_eq!(da.s1.to_bits(), x.s1.unwrap_or(f64::NAN).to_bits());
        }
        assert!(expected.iter().any(|d| d.accepted));
        unsafe {
            kws_detections_free(from_files);
            kws_detections_free(from_buffers);
        }
    }
    let mut units = 0;
    assert_eq!(
        unsafe { kws_engine_num_units(e, &mut units) },
        KwsStatus::Ok
    );
    assert_eq!(units, core.phones.len());
    unsafe { kws_engine_free(e) };
}

#[test]
fn error_codes() {
    let (dir, corpus) = corpus_dir();
    let mut e = ptr::null_mut();
    let s = unsafe { kws_engine_new_from_config(ptr::null(), &mut e) };
    assert_eq!(s, KwsStatus::NullArgument);
    assert!(last_error().contains("config_path"));

    let missing = cstr(&dir.path().join("nope.toml"));
    let s = unsafe { kws_engine_new_from_config(missing.as_ptr(), &mut e) };
    assert_eq!(s, KwsStatus::Io);
    assert!(e.is_null());

    std::fs::write(dir.path().join("bad.toml"), "phones = 3\n").unwrap();
    let bad = cstr(&dir.path().join("bad.toml"));
    let s = unsafe { kws_engine_new_from_config(bad.as_ptr(), &mut e) };
    assert_eq!(s, KwsStatus::Config);

    let e = engine(dir.path());
    let junk = dir.path().join("junk.kwsp");
    std::fs::write(&junk, b"not a stream").unwrap();
    let (jp, ap) = (cstr(&junk), cstr(&corpus.utterances[0].ali));
    let mut out = ptr::null_mut();
    let s = unsafe { kws_engine_run_files(e, jp.as_ptr(), ap.as_ptr(), &mut out) };
    assert_eq!(s, KwsStatus::InvalidStream);
    assert!(out.is_null());

    let mut units = 0;
    unsafe { kws_engine_num_units(e, &mut units) };
    let row: Vec<f32> = vec![0.5; units];
    let s = unsafe {
        kws_engine_run_buffers(e, row.as_ptr(), 1, row.as_ptr(), 1, units, 0.04, &mut out)
    };
    assert_eq!(s, KwsStatus::InvalidStream);
    assert!(last_error().starts_with("det:"));

    let s = unsafe {
        kws_engine_run_buffers(e, ptr::null(), 1, row.as_ptr(), 1, units, 0.04, &mut out)
    };
    assert_eq!(s, KwsStatus::NullArgument);

    let mut row = vec![0.0f32; units];
    row[0] = 1.0;
    let s = unsafe {
        kws_engine_run_buffers(e, row.as_ptr(), 1, row.as_ptr(), 1, units, 0.04, &mut out)
    };
    assert_eq!(s, KwsStatus::Ok);
    let mut d = std::mem::MaybeUninit::<KwsDetection>::uninit();
    let s = unsafe { kws_detections_get(out, kws_detections_len(out), d.as_mut_ptr()) };
    assert_eq!(s, KwsStatus::OutOfRange);
    assert_eq!(unsafe { kws_detections_len(ptr::null()) }, 0);
    unsafe {
        kws_detections_free(out);
        kws_detections_free(ptr::null_mut());
        kws_engine_free(e);
        kws_engine_free(ptr::null_mut());
    }
}
