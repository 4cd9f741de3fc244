use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use adand::format::write_feature_file;
use adand::pipeline::{run_stream, Injection};
use adand::synth::{mix_streams, synth_noise_bank, synth_stream, SynthSpec};
use adand::{Method, PipelineConfig, Prediction};
use adand_ffi::*;

fn small_spec() -> SynthSpec {
    SynthSpec {
        classes: 4,
        dim: 16,
        n_per_class: 100,
        ood_clusters: 2,
        n_ood: 400,
        ..SynthSpec::default()
    }
}

fn last_error() -> String {
    let mut buf = [0 as std::ffi::c_char; 256];
    unsafe {
        adand_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

#[test]
fn pipeline_matches_core_engine() {
    let stream = synth_stream(&small_spec()).unwrap();
    let records = mix_streams(&stream.id_records, &stream.ood_records, 0.5, 3).unwrap();
    let noise = synth_noise_bank(16, 50, 4.0, 0).unwrap();

    let core_config = PipelineConfig {
        queue_len: 16,
        warmup_steps: 3,
        injection: Injection::On(std::sync::Arc::new(noise.clone())),
        seed: 9,
        ..PipelineConfig::default()
    };
    let expected = run_stream(&stream.bank, &records, &core_config).unwrap();

    let protos: Vec<f64> = stream
        .bank
        .prototypes()
        .iter()
        .flat_map(|p| p.as_slice().to_vec())
        .collect();
    let noise_rows: Vec<f64> = noise
        .features()
        .iter()
        .flat_map(|f| f.as_slice().to_vec())
        .collect();

    unsafe {
        let mut cfg = std::mem::zeroed::<AdandConfig>();
        assert_eq!(adand_config_default(&mut cfg), AdandStatus::Ok);
        cfg.queue_len = 16;
        cfg.warmup_steps = 3;
        cfg.seed = 9;
        let mut p = ptr::null_mut();
        let st = adand_pipeline_new(&cfg, protos.as_ptr(), 4, 16, noise_rows.as_ptr(), 50, &mut p);
        assert_eq!(st, AdandStatus::Ok, "{}", last_error());

        let mut got = Vec::new();
        for r in &records {
            let mut d = std::mem::zeroed::<AdandDecision>();
            let st = adand_pipeline_process(p, r.feature.as_slice().as_ptr(), 16, r.truth.to_label(), &mut d);
            assert_eq!(st, AdandStatus::Ok);
            got.push(d);
            let mut injected = 0u8;
            assert_eq!(adand_pipeline_inject_if_due(p, &mut d, &mut injected), AdandStatus::Ok);
            if injected == 1 {
                got.push(d);
            }
        }
        assert_eq!(adand_pipeline_steps(p), expected.completed_steps);
        assert_eq!(adand_pipeline_stage(p), 2);
        adand_pipeline_free(p);

        assert_eq!(got.len(), expected.decisions.len());
        for (g, e) in got.iter().zip(&expected.decisions) {
            assert_eq!(g.index, e.index);
            assert_eq!(g.injected != 0, e.origin.is_injected());
            let pred = match e.prediction {
                Prediction::IdClass(k) => k as i32,
                Prediction::Noisy => -1,
            };
            assert_eq!(g.prediction, pred);
            assert_eq!(g.mcm_score.to_bits(), e.mcm_score.to_bits());
            match e.detector_score {
                Some(s) => assert_eq!(g.detector_score.to_bits(), s.to_bits()),
                None => assert!(g.detector_score.is_nan()),
            }
            assert_eq!(g.lambda.to_bits(), e.lambda_used.to_bits());
        }
    }
}

#[test]
fn frozen_method_never_trains() {
    let stream = synth_stream(&small_spec()).unwrap();
    let protos: Vec<f64> = stream.bank.prototypes().iter().flat_map(|p| p.as_slice().to_vec()).collect();
    unsafe {
        let mut cfg = std::mem::zeroed::<AdandConfig>();
        adand_config_default(&mut cfg);
        cfg.method = AdandMethod::Frozen;
        cfg.queue_len = 4;
        let mut p = ptr::null_mut();
        assert_eq!(adand_pipeline_new(&cfg, protos.as_ptr(), 4, 16, ptr::null(), 0, &mut p), AdandStatus::Ok);
        for r in stream.id_records.iter().take(64) {
            let mut d = std::mem::zeroed::<AdandDecision>();
            adand_pipeline_process(p, r.feature.as_slice().as_ptr(), 16, r.truth.to_label(), &mut d);
            assert_eq!(d.stage, 1);
            assert!(d.detector_score.is_nan());
        }
        assert_eq!(adand_pipeline_steps(p), 0);
        adand_pipeline_free(p);
    }
    // the core agrees the baseline is stage-1 only
    assert_eq!(Method::FrozenBaseline.to_string(), "frozen");
}

#[test]
fn error_codes_and_messages() {
    unsafe {
        assert_eq!(adand_config_default(ptr::null_mut()), AdandStatus::NullPointer);
        assert!(last_error().contains("null pointer"));

        let mut cfg = std::mem::zeroed::<AdandConfig>();
        adand_config_default(&mut cfg);
        let protos = [1.0, 0.0, 0.0, 1.0];
        let mut p = ptr::null_mut();

        // prototypes not unit norm
        let bad = [2.0, 0.0, 0.0, 1.0];
        assert_eq!(adand_pipeline_new(&cfg, bad.as_ptr(), 2, 2, ptr::null(), 0, &mut p), AdandStatus::InvalidArgument);
        assert!(p.is_null());

        cfg.inject_every = 0;
        assert_eq!(adand_pipeline_new(&cfg, protos.as_ptr(), 2, 2, ptr::null(), 0, &mut p), AdandStatus::InvalidArgument);
        assert!(!last_error().is_empty());
        adand_config_default(&mut cfg);

        assert_eq!(adand_pipeline_new(&cfg, protos.as_ptr(), 2, 2, ptr::null(), 0, &mut p), AdandStatus::Ok);
        let mut d = std::mem::zeroed::<AdandDecision>();
        let f3 = [1.0, 0.0, 0.0];
        assert_eq!(adand_pipeline_process(p, f3.as_ptr(), 3, 0, &mut d), AdandStatus::DimMismatch);
        let nan = [f64::NAN, 1.0];
        assert_eq!(adand_pipeline_process(p, nan.as_ptr(), 2, 0, &mut d), AdandStatus::InvalidArgument);
        let ok = [0.6, 0.8];
        assert_eq!(adand_pipeline_process(p, ok.as_ptr(), 2, -3, &mut d), AdandStatus::Format);
        assert_eq!(adand_pipeline_process(p, ok.as_ptr(), 2, 1, &mut d), AdandStatus::Ok);
        assert_eq!(d.prediction, 1);
        adand_pipeline_free(p);
        adand_pipeline_free(ptr::null_mut());

        let name = CStr::from_ptr(adand_status_name(AdandStatus::DimMismatch));
        assert_eq!(name.to_str().unwrap(), "dimension mismatch");
    }
}

#[test]
fn last_error_truncates_and_reports_length() {
    unsafe {
        adand_config_default(ptr::null_mut());
        let full = adand_last_error(ptr::null_mut(), 0);
        let mut buf = [0x7f as std::ffi::c_char; 5];
        assert_eq!(adand_last_error(buf.as_mut_ptr(), buf.len()), full);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_bytes(), b"null");
    }
}

#[test]
fn ranking_metrics() {
    let scores = [0.9, 0.3, 0.5, 0.1];
    let clean = [1u8, 1, 0, 0];
    let mut v = 0.0;
    unsafe {
        assert_eq!(adand_auroc(scores.as_ptr(), clean.as_ptr(), 4, &mut v), AdandStatus::Ok);
        assert_eq!(v, 0.75);
        assert_eq!(adand_fpr95(scores.as_ptr(), clean.as_ptr(), 4, &mut v), AdandStatus::Ok);
        assert_eq!(v, 0.5);
        let all_clean = [1u8; 4];
        assert_eq!(adand_auroc(scores.as_ptr(), all_clean.as_ptr(), 4, &mut v), AdandStatus::OneClassOnly);
    }
}

#[test]
fn feature_file_handle() {
    let stream = synth_stream(&small_spec()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("id.znta");
    write_feature_file(&stream.bank, &stream.id_records[..10], &path).unwrap();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut f = ptr::null_mut();
        assert_eq!(adand_feature_file_open(c_path.as_ptr(), &mut f), AdandStatus::Ok);
        assert_eq!(adand_feature_file_dim(f), 16);
        assert_eq!(adand_feature_file_classes(f), 4);
        assert_eq!(adand_feature_file_records(f), 10);
        let feats = std::slice::from_raw_parts(adand_feature_file_features(f), 160);
        assert_eq!(&feats[16..32], stream.id_records[1].feature.as_slice());
        let labels = std::slice::from_raw_parts(adand_feature_file_labels(f), 10);
        assert_eq!(labels[0], stream.id_records[0].truth.to_label());
        let protos = std::slice::from_raw_parts(adand_feature_file_prototypes(f), 64);
        assert_eq!(&protos[..16], stream.bank.prototypes()[0].as_slice());
        adand_feature_file_free(f);

        let missing = CString::new(dir.path().join("nope.znta").to_str().unwrap()).unwrap();
        assert_eq!(adand_feature_file_open(missing.as_ptr(), &mut f), AdandStatus::Io);
        std::fs::write(dir.path().join("bad.znta"), b"NOPE").unwrap();
        let bad = CString::new(dir.path().join("bad.znta").to_str().unwrap()).unwrap();
        assert_eq!(adand_feature_file_open(bad.as_ptr(), &mut f), AdandStatus::Format);
        assert_eq!(adand_feature_file_dim(ptr::null()), 0);
    }
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_static_library() {
    let lib = target_dir().join("libadand_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !lib.exists() || Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <math.h>
#include <stdio.h>
#include "adand.h"

int main(void) {
    AdandConfig cfg;
    if (adand_config_default(&cfg) != ADAND_STATUS_OK) return 1;
    cfg.queue_len = 2;
    cfg.warmup_steps = 1;
    double protos[4] = {1.0, 0.0, 0.0, 1.0};
    AdandPipeline *p = NULL;
    if (adand_pipeline_new(&cfg, protos, 2, 2, NULL, 0, &p) != ADAND_STATUS_OK) return 2;
    double xs[4][2] = {{1.0, 0.1}, {0.1, 1.0}, {0.9, 0.2}, {0.2, 0.9}};
    AdandDecision d;
    for (int i = 0; i < 4; i++) {
        if (adand_pipeline_process(p, xs[i], 2, i % 2, &d) != ADAND_STATUS_OK) return 3;
    }
    if (adand_pipeline_steps(p) != 2 || adand_pipeline_stage(p) != 2) return 4;
    if (isnan(d.detector_score)) return 5;
    double bad[3] = {1, 0, 0};
    if (adand_pipeline_process(p, bad, 3, 0, &d) != ADAND_STATUS_DIM_MISMATCH) return 6;
    char msg[128];
    adand_last_error(msg, sizeof msg);
    adand_pipeline_free(p);
    printf("ok %s\n", msg);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exit {:?}", out.status.code());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("ok ") && stdout.contains("dimension"), "{stdout}");
}
