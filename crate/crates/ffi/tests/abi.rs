use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use ptagger::input::ModelInput;
use ptagger::scorer::{train_reference_scorer, TrainConfig, TrainTarget, TrainingExample};
use ptagger_ffi::*;

const VOCAB: &str = r#"{"entries":[{"label":"Journal Article","count":100},{"label":"Review","count":20},{"label":"Letter","count":5}],"excluded":[],"base_label":"Journal Article"}"#;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(s: *mut c_char) -> String {
    assert!(!s.is_null());
    let out = CStr::from_ptr(s).to_str().unwrap().to_string();
    pt_string_free(s);
    out
}

fn last_error() -> Option<String> {
    let p = pt_last_error();
    if p.is_null() {
        None
    } else {
        Some(unsafe { take(p) })
    }
}

fn vocab() -> *mut PtVocabulary {
    let mut v = ptr::null_mut();
    assert_eq!(unsafe { pt_vocabulary_from_json(c(VOCAB).as_ptr(), &mut v) }, PtStatus::Ok);
    v
}

fn policy(v: *const PtVocabulary, json: &str) -> *mut PtPolicy {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { pt_policy_from_json(c(json).as_ptr(), v, &mut p) }, PtStatus::Ok);
    p
}

/// Small model where "review" means Review and "letter" means Letter.
fn model_file(dir: &Path) -> PathBuf {
    let data: Vec<TrainingExample> = (0..60)
        .map(|i| {
            let (word, labels) = match i % 3 {
                0 => ("review", vec!["Review".to_string()]),
                1 => ("letter", vec!["Letter".to_string()]),
                _ => ("study", vec![]),
            };
            TrainingExample {
                input: ModelInput {
                    id: i.to_string(),
                    text: format!("J<1>a {word} of x{i}<2>"),
                    token_count: 3,
                    truncated: false,
                },
                labels: labels.into_iter().collect(),
            }
        })
        .collect();
    let target = TrainTarget::Monolithic(vec!["Review".into(), "Letter".into()]);
    let config = TrainConfig {
        hash_dim: 1 << 10,
        epochs: 30,
        ..Default::default()
    };
    let model = train_reference_scorer(&data, &target, &config, 7, None).unwrap();
    let path = dir.join("model.ptsc");
    model.save(&path).unwrap();
    path
}

#[test]
fn normalize_text_round_trip() {
    let mut out = ptr::null_mut();
    let raw = c("<i>Effect</i> of  10\u{b5}g \u{2013} a trial");
    assert_eq!(unsafe { pt_normalize_text(raw.as_ptr(), &mut out) }, PtStatus::Ok);
    assert_eq!(unsafe { take(out) }, "Effect of 10ug - a trial");
}

#[test]
fn null_arguments_are_rejected() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { pt_normalize_text(ptr::null(), &mut out) }, PtStatus::InvalidArgument);
    assert!(last_error().unwrap().contains("null"));
    assert_eq!(unsafe { pt_normalize_text(c("x").as_ptr(), ptr::null_mut()) }, PtStatus::InvalidArgument);
    // a successful call clears the message
    assert_eq!(unsafe { pt_normalize_text(c("x").as_ptr(), &mut out) }, PtStatus::Ok);
    unsafe { pt_string_free(out) };
    assert!(last_error().is_none());
}

#[test]
fn status_codes_follow_error_classes() {
    let mut v = ptr::null_mut();
    assert_eq!(unsafe { pt_vocabulary_from_json(c("{").as_ptr(), &mut v) }, PtStatus::Data);
    let v = vocab();
    assert_eq!(unsafe { pt_vocabulary_len(v) }, 3);
    let mut p = ptr::null_mut();
    let bad = r#"{"rules":[{"kind":"IMPLIES","a":"Review","b":"Nope"}]}"#;
    assert_eq!(unsafe { pt_policy_from_json(c(bad).as_ptr(), v, &mut p) }, PtStatus::Config);
    assert!(last_error().unwrap().contains("Nope"));
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { pt_scorer_load(c("/nonexistent/model.ptsc").as_ptr(), &mut s) }, PtStatus::Backend);
    assert_eq!(unsafe { pt_scorer_connect(c("tcp:127.0.0.1:1").as_ptr(), &mut s) }, PtStatus::Backend);
    unsafe { pt_vocabulary_free(v) };
}

#[test]
fn compile_scores_to_tags() {
    let v = vocab();
    let p = policy(v, r#"{"threshold":0.5,"max_tags":6}"#);
    let mut out = ptr::null_mut();
    let scores = c(r#"{"citation_id":"9","scores":{"Review":0.9,"Letter":0.1}}"#);
    assert_eq!(unsafe { pt_compile_json(p, v, scores.as_ptr(), &mut out) }, PtStatus::Ok);
    let tags: serde_json::Value = serde_json::from_str(&unsafe { take(out) }).unwrap();
    assert_eq!(tags["id"], "9");
    assert_eq!(tags["tags"], serde_json::json!(["Review"]));
    let unknown = c(r#"{"citation_id":"9","scores":{"Nope":0.9}}"#);
    assert_eq!(unsafe { pt_compile_json(p, v, unknown.as_ptr(), &mut out) }, PtStatus::Data);
    unsafe {
        pt_policy_free(p);
        pt_vocabulary_free(v);
    }
}

#[test]
fn tag_with_loaded_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = model_file(dir.path());
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { pt_scorer_load(c(path.to_str().unwrap()).as_ptr(), &mut s) }, PtStatus::Ok);
    let mut desc = ptr::null_mut();
    assert_eq!(unsafe { pt_scorer_descriptor_json(s, &mut desc) }, PtStatus::Ok);
    assert!(unsafe { take(desc) }.contains("monolithic"));

    let v = vocab();
    let p = policy(v, r#"{"threshold":0.5}"#);
    let citation = c(r#"{"id":"x","journal_id":"J","title":"a review of things"}"#);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { pt_tag_json(s, p, v, citation.as_ptr(), 512, &mut out) }, PtStatus::Ok);
    let tags: serde_json::Value = serde_json::from_str(&unsafe { take(out) }).unwrap();
    assert_eq!(tags["tags"], serde_json::json!(["Review"]));

    let mut scored = ptr::null_mut();
    assert_eq!(unsafe { pt_score_json(s, citation.as_ptr(), 512, &mut scored) }, PtStatus::Ok);
    let sv: serde_json::Value = serde_json::from_str(&unsafe { take(scored) }).unwrap();
    assert!(sv["scores"]["Review"].as_f64().unwrap() > 0.5);

    assert_eq!(unsafe { pt_tag_json(s, p, v, citation.as_ptr(), 0, &mut out) }, PtStatus::Config);
    unsafe {
        pt_scorer_free(s);
        pt_policy_free(p);
        pt_vocabulary_free(v);
    }
}

#[test]
fn ranking_metrics() {
    let scores = [0.9, 0.8, 0.7, 0.1];
    let gold = [1u8, 0, 1, 0];
    let mut auc = 0.0;
    assert_eq!(unsafe { pt_auc_roc(scores.as_ptr(), gold.as_ptr(), 4, &mut auc) }, PtStatus::Ok);
    assert_eq!(auc, 0.75);
    assert_eq!(unsafe { pt_auc_pr(scores.as_ptr(), gold.as_ptr(), 3, &mut auc) }, PtStatus::Ok);
    assert!((auc - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
    assert_eq!(unsafe { pt_auc_roc(scores.as_ptr(), [1u8; 4].as_ptr(), 4, &mut auc) }, PtStatus::Data);
    assert_eq!(unsafe { pt_auc_roc(ptr::null(), ptr::null(), 0, &mut auc) }, PtStatus::Data);
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ptagger.h")).unwrap();
    for name in [
        "pt_last_error",
        "pt_string_free",
        "pt_normalize_text",
        "pt_vocabulary_from_json",
        "pt_policy_from_json",
        "pt_scorer_load",
        "pt_scorer_connect",
        "pt_tag_json",
        "pt_compile_json",
        "pt_auc_roc",
        "pt_auc_pr",
        "typedef struct PtScorer PtScorer",
        "PT_STATUS_BACKEND = 3",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

/// Directory holding the built cdylib: `target/<profile>`, two levels above this test binary.
fn library_dir() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?.parent()?.to_path_buf();
    dir.join("libptagger_ffi.so").exists().then_some(dir)
}

#[test]
fn c_program_links_against_the_library() {
    let Some(lib_dir) = library_dir() else {
        eprintln!("shared library not found next to the test binary; skipping C smoke test");
        return;
    };
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <string.h>
#include "ptagger.h"

int main(void) {
    char *out = NULL;
    if (pt_normalize_text("<b>x</b>  \xc2\xb1 1", &out) != PT_STATUS_OK) return 1;
    int ok = strcmp(out, "x +/- 1") == 0;
    pt_string_free(out);
    double scores[] = {0.9, 0.8, 0.7, 0.1};
    unsigned char gold[] = {1, 0, 1, 0};
    double auc = 0;
    if (pt_auc_roc(scores, gold, 4, &auc) != PT_STATUS_OK || auc != 0.75) return 2;
    PtVocabulary *v = NULL;
    if (pt_vocabulary_from_json("nope", &v) != PT_STATUS_DATA) return 3;
    char *msg = pt_last_error();
    if (msg == NULL) return 4;
    pt_string_free(msg);
    printf("%s\n", pt_version());
    return ok ? 0 : 5;
}
"#,
    )
    .unwrap();
    let exe = tmp.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lptagger_ffi")
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .arg("-o")
        .arg(&exe)
        .status();
    match status {
        Ok(s) if s.success() => {}
        Ok(s) => panic!("C compile failed: {s}"),
        Err(e) => {
            eprintln!("no C compiler ({e}); skipping C smoke test");
            return;
        }
    }
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "smoke exited with {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
