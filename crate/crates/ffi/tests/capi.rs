use std::ffi::{c_char, CStr, CString};
use std::ptr;

use confdel_ffi::*;

fn last_error() -> String {
    let p = confdel_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn c_tokens(words: &[&str]) -> (Vec<CString>, Vec<*const c_char>) {
    let owned: Vec<CString> = words.iter().map(|w| CString::new(*w).unwrap()).collect();
    let ptrs = owned.iter().map(|c| c.as_ptr()).collect();
    (owned, ptrs)
}

#[test]
fn metrics_through_the_abi() {
    let scores = [0.9, 0.8, 0.3, 0.6];
    let labels = [1u8, 1, 0, 0];
    let mut out = f64::NAN;
    unsafe {
        assert_eq!(confdel_roc_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut out), ConfdelStatus::Ok);
        assert_eq!(out, 1.0);
        assert_eq!(confdel_pr_auc(scores.as_ptr(), labels.as_ptr(), 4, &mut out), ConfdelStatus::Ok);
        assert_eq!(out, 1.0);
        assert_eq!(confdel_nce(scores.as_ptr(), labels.as_ptr(), 4, &mut out), ConfdelStatus::Ok);
        assert!(out > 0.0);
        assert!(confdel_last_error().is_null());

        let one_class = [1u8; 4];
        assert_eq!(
            confdel_roc_auc(scores.as_ptr(), one_class.as_ptr(), 4, &mut out),
            ConfdelStatus::Degenerate
        );
        assert!(!last_error().is_empty());
        assert_eq!(confdel_nce(ptr::null(), labels.as_ptr(), 4, &mut out), ConfdelStatus::NullPointer);
        assert_eq!(
            confdel_nce(scores.as_ptr(), labels.as_ptr(), 4, ptr::null_mut()),
            ConfdelStatus::NullPointer
        );
    }
}

#[test]
fn alignment_and_counts() {
    let (_h, hyp) = c_tokens(&["a", "x", "c"]);
    let (_r, reference) = c_tokens(&["a", "b", "c", "d"]);
    let mut cost = 0u64;
    let mut counts = ConfdelErrorCounts::default();
    unsafe {
        let status = confdel_align(hyp.as_ptr(), 3, reference.as_ptr(), 4, 10, 7, 7, &mut cost, &mut counts);
        assert_eq!(status, ConfdelStatus::Ok);
        assert_eq!(cost, 17);
        assert_eq!((counts.cor, counts.sub, counts.del, counts.ins), (2, 1, 1, 0));

        let status = confdel_align(hyp.as_ptr(), 3, reference.as_ptr(), 4, 0, 7, 7, &mut cost, ptr::null_mut());
        assert_eq!(status, ConfdelStatus::InvalidArgument);

        let bad = [0xffu8, 0];
        let bad_tokens = [bad.as_ptr().cast::<c_char>()];
        let status = confdel_align(bad_tokens.as_ptr(), 1, reference.as_ptr(), 4, 10, 7, 7, &mut cost, ptr::null_mut());
        assert_eq!(status, ConfdelStatus::InvalidUtf8);
    }
}

#[test]
fn selection_scores() {
    let c = [1.0, 0.5];
    let frames = [3u32, 1];
    let mut out = 0.0;
    unsafe {
        assert_eq!(confdel_frame_weighted_conf(c.as_ptr(), frames.as_ptr(), 2, &mut out), ConfdelStatus::Ok);
        assert_eq!(out, 0.875);
        assert_eq!(
            confdel_frame_weighted_conf(c.as_ptr(), frames.as_ptr(), 0, &mut out),
            ConfdelStatus::InvalidArgument
        );

        let c = [0.9, 0.3, 0.8];
        let d = [0.1, 0.95, 0.0];
        let th = ConfdelThresholds {
            theta_c: 0.5,
            theta_d: 0.9,
            theta_s: 0.043,
            theta_p: 0.5,
        };
        assert_eq!(confdel_estimate_wer(c.as_ptr(), d.as_ptr(), 3, 0.02, th, &mut out), ConfdelStatus::Ok);
        assert!((out - 0.8).abs() < 1e-12);
        let bad = ConfdelThresholds { theta_p: -1.0, ..th };
        assert_eq!(
            confdel_estimate_wer(c.as_ptr(), d.as_ptr(), 3, 0.02, bad, &mut out),
            ConfdelStatus::InvalidArgument
        );
    }
}

#[test]
fn corpus_round_trip_and_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let preset = CString::new("matched").unwrap();
    let mut corpus: *mut ConfdelCorpus = ptr::null_mut();
    unsafe {
        assert_eq!(confdel_simulate(preset.as_ptr(), 4, 60, &mut corpus), ConfdelStatus::Ok);
        assert_eq!(confdel_corpus_len(corpus), 60);
        assert_eq!(confdel_corpus_align(corpus), ConfdelStatus::Ok);

        let path = CString::new(dir.path().join("c.jsonl").to_str().unwrap()).unwrap();
        assert_eq!(confdel_corpus_write(corpus, path.as_ptr()), ConfdelStatus::Ok);
        let mut back: *mut ConfdelCorpus = ptr::null_mut();
        assert_eq!(confdel_corpus_read(path.as_ptr(), &mut back), ConfdelStatus::Ok);
        assert_eq!(confdel_corpus_len(back), 60);

        let mut report = ConfdelEvalReport::default();
        assert_eq!(confdel_corpus_evaluate(back, &mut report), ConfdelStatus::InvalidArgument);

        // train a tiny estimator with the library, then load it through the ABI
        let utts = confdel::corpus::read_corpus(dir.path().join("c.jsonl")).unwrap();
        let defaults = confdel::pipeline::PipelineConfig::default();
        let cfg = confdel::pipeline::PipelineConfig {
            embedding_dim: 4,
            train: confdel::birnn::TrainConfig {
                hidden_dim: 4,
                epochs: 1,
                ..defaults.train
            },
            ..defaults
        };
        let (est, _) = confdel::pipeline::train_estimator(&utts, &cfg).unwrap();
        let model_path = dir.path().join("model.json");
        std::fs::write(&model_path, est.to_json().unwrap()).unwrap();

        let cpath = CString::new(model_path.to_str().unwrap()).unwrap();
        let mut handle: *mut ConfdelEstimator = ptr::null_mut();
        assert_eq!(confdel_estimator_load(cpath.as_ptr(), &mut handle), ConfdelStatus::Ok);
        assert_eq!(confdel_estimator_predict(handle, back), ConfdelStatus::Ok);
        assert_eq!(confdel_corpus_evaluate(back, &mut report), ConfdelStatus::Ok);
        assert!(report.words > 0);
        assert!(report.roc_auc > 0.0 && report.roc_auc <= 1.0);
        assert!(report.roc_auc_next_del.is_finite());

        let n = confdel_corpus_utterance_len(back, 0);
        let mut buf = vec![f64::NAN; n];
        assert_eq!(confdel_corpus_confidences(back, 0, buf.as_mut_ptr(), n), ConfdelStatus::Ok);
        let expected = est.predict(&utts[0]).unwrap().c;
        assert_eq!(buf, expected);
        assert_eq!(confdel_corpus_confidences(back, 0, buf.as_mut_ptr(), 0), ConfdelStatus::OutOfRange);
        assert_eq!(confdel_corpus_confidences(back, 60, buf.as_mut_ptr(), n), ConfdelStatus::OutOfRange);

        confdel_estimator_free(handle);
        confdel_corpus_free(back);
        confdel_corpus_free(corpus);
        confdel_corpus_free(ptr::null_mut());
        confdel_estimator_free(ptr::null_mut());
    }
}

#[test]
fn failures_set_status_and_message() {
    let mut corpus: *mut ConfdelCorpus = ptr::dangling_mut::<ConfdelCorpus>();
    unsafe {
        let missing = CString::new("/nonexistent/corpus.jsonl").unwrap();
        assert_eq!(confdel_corpus_read(missing.as_ptr(), &mut corpus), ConfdelStatus::Io);
        assert!(corpus.is_null());
        assert!(!last_error().is_empty());

        let unknown = CString::new("nope").unwrap();
        assert_eq!(confdel_simulate(unknown.as_ptr(), 0, 5, &mut corpus), ConfdelStatus::InvalidArgument);
        assert_eq!(confdel_corpus_read(ptr::null(), &mut corpus), ConfdelStatus::NullPointer);
        assert_eq!(confdel_corpus_len(ptr::null()), 0);
        assert_eq!(confdel_corpus_align(ptr::null_mut()), ConfdelStatus::NullPointer);

        let mut est: *mut ConfdelEstimator = ptr::null_mut();
        let file = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(file.path(), "{}").unwrap();
        let p = CString::new(file.path().to_str().unwrap()).unwrap();
        assert_eq!(confdel_estimator_load(p.as_ptr(), &mut est), ConfdelStatus::Parse);
        assert!(est.is_null());
    }
    let version = unsafe { CStr::from_ptr(confdel_version()) };
    assert_eq!(version.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/confdel.h");
    let source = include_str!("../src/lib.rs");
    let exports: Vec<&str> = source
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 18);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("typedef struct ConfdelCorpus ConfdelCorpus;"));
}
