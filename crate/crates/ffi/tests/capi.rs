use std::ffi::{CStr, CString};
use std::ptr;

use tvsg::dataset::write_corpus;
use tvsg::synth::{synth_corpus, SynthConfig};
use tvsg::models::Architecture;
use tvsg::trainer::{toy_config, train_with_rosters};
use tvsg_ffi::*;

fn last_error() -> String {
    let p = tvsg_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn corpus_file(dir: &std::path::Path) -> CString {
    let (inst, _) = synth_corpus(&SynthConfig { scenes: 30, ..SynthConfig::default() }).unwrap();
    let path = dir.join("c.jsonl");
    write_corpus(&inst, &path).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

#[test]
fn corpus_handle_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = corpus_file(dir.path());
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { tvsg_corpus_read(path.as_ptr(), &mut c) }, TvsgStatus::Ok);
    assert!(tvsg_last_error_message().is_null());
    assert_eq!(unsafe { tvsg_corpus_len(c) }, 30);
    let mut analytic = 0.0;
    let mut simulated = 0.0;
    assert_eq!(unsafe { tvsg_random_baseline(c, 0, 0, &mut analytic) }, TvsgStatus::Ok);
    assert_eq!(unsafe { tvsg_random_baseline(c, 4000, 1, &mut simulated) }, TvsgStatus::Ok);
    assert!(analytic > 0.0 && analytic < 1.0);
    assert!((analytic - simulated).abs() < 0.01, "{analytic} vs {simulated}");
    unsafe { tvsg_corpus_free(c) };
    unsafe { tvsg_corpus_free(ptr::null_mut()) };
    assert_eq!(unsafe { tvsg_corpus_len(ptr::null()) }, 0);
}

#[test]
fn missing_file_sets_error() {
    let path = CString::new("/definitely/not/here.jsonl").unwrap();
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { tvsg_corpus_read(path.as_ptr(), &mut c) }, TvsgStatus::Io);
    assert!(c.is_null());
    assert!(last_error().contains("here.jsonl"));
    assert_eq!(unsafe { tvsg_corpus_read(ptr::null(), &mut c) }, TvsgStatus::NullPointer);
}

#[test]
fn parse_episode_json() {
    let raw = CString::new("[Apartment]\nRoss: Hi.\nRachel: Hey.\n").unwrap();
    let show = CString::new("friends").unwrap();
    let ep = CString::new("s01e01").unwrap();
    let mut out = ptr::null_mut();
    let st = unsafe { tvsg_parse_episode(raw.as_ptr(), ptr::null(), show.as_ptr(), ep.as_ptr(), &mut out) };
    assert_eq!(st, TvsgStatus::Ok);
    let json: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(out) }.to_str().unwrap()).unwrap();
    unsafe { tvsg_string_free(out) };
    let scenes = json.as_array().unwrap();
    assert_eq!(scenes.len(), 1);
    assert_eq!(scenes[0]["lines"].as_array().unwrap().len(), 3);

    let bad_rules = CString::new("speaker_delimiter = \"\"").unwrap();
    let st = unsafe { tvsg_parse_episode(raw.as_ptr(), bad_rules.as_ptr(), show.as_ptr(), ep.as_ptr(), &mut out) };
    assert_eq!(st, TvsgStatus::InvalidArgument);
    assert!(last_error().contains("delimiter"));
}

#[test]
fn kappa_and_pair_count() {
    let a = [1, 1, 0, 0];
    let b = [1, 1, 0, 0];
    let mut k = 0.0;
    assert_eq!(unsafe { tvsg_cohen_kappa(a.as_ptr(), b.as_ptr(), 4, &mut k) }, TvsgStatus::Ok);
    assert_eq!(k, 1.0);
    assert_eq!(unsafe { tvsg_cohen_kappa(a.as_ptr(), b.as_ptr(), 0, &mut k) }, TvsgStatus::InvalidArgument);
    assert_eq!(tvsg_attention_pair_count(10, 0), 100);
    assert_eq!(tvsg_attention_pair_count(10, 1), 28);
}

#[test]
fn model_predicts_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let (inst, roster) = synth_corpus(&SynthConfig { scenes: 30, ..SynthConfig::default() }).unwrap();
    let mut cfg = toy_config(Architecture::LongformerP, 1);
    cfg.epochs = 2;
    let rosters = [("synth".to_owned(), roster)].into();
    let outcome = train_with_rosters(cfg, Some(&rosters), &inst[..24], &inst[24..]).unwrap();
    let model_path = dir.path().join("m.ckpt");
    outcome.model.save(&model_path).unwrap();
    let corpus_path = dir.path().join("c.jsonl");
    write_corpus(&inst[24..], &corpus_path).unwrap();

    let mp = CString::new(model_path.to_str().unwrap()).unwrap();
    let cp = CString::new(corpus_path.to_str().unwrap()).unwrap();
    let (mut m, mut c) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(unsafe { tvsg_model_load(mp.as_ptr(), &mut m) }, TvsgStatus::Ok);
    assert_eq!(unsafe { tvsg_corpus_read(cp.as_ptr(), &mut c) }, TvsgStatus::Ok);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { tvsg_model_predict(m, c, false, &mut out) }, TvsgStatus::Ok);
    let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned();
    unsafe { tvsg_string_free(out) };
    let expected: usize = inst[24..].iter().map(|i| i.gold.len()).sum();
    assert_eq!(text.lines().count(), expected);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["predicted"].is_string());
    }
    unsafe {
        tvsg_model_free(m);
        tvsg_corpus_free(c);
    }

    let bogus = CString::new(corpus_path.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { tvsg_model_load(bogus.as_ptr(), &mut m) }, TvsgStatus::Model);
    assert!(!last_error().is_empty());
}

#[test]
fn header_is_generated() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/tvsg.h")).unwrap();
    for name in ["tvsg_corpus_read", "tvsg_model_predict", "tvsg_last_error_message", "TVSG_STATUS_OK", "typedef struct TvsgCorpus"] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
