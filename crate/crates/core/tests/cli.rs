use std::path::Path;
use std::process::{Command, Output};

use kws_core::config::CliConfig;
use kws_core::eval::{decode_corpus, eval_negatives, eval_positives, Corpus};

fn kws(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kws"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn synth(dir: &Path) {
    std::fs::write(
        dir.join("spec.toml"),
        "positives = 10\nnegative_hours = 0.05\ndecoys_per_hour = 400.0\ndecoy_support = 0.8\np_hit = 0.8\n",
    )
    .unwrap();
    let out = kws(
        &[
            "--seed",
            "4",
            "synth",
            "--spec",
            "spec.toml",
            "--out-dir",
            "c",
        ],
        dir,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn missing_lexicon_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let c = dir.path().join("c");
    std::fs::remove_file(c.join("lexicon.txt")).unwrap();
    let out = kws(&["--config", "config.toml", "compile-graph"], &c);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.starts_with("error:") && err.contains("lexicon.txt"),
        "{err}"
    );
}

#[test]
fn malformed_stream_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let c = dir.path().join("c");
    std::fs::write(c.join("bad.kwsp"), b"KWSP\x01").unwrap();
    let out = kws(
        &[
            "--config",
            "config.toml",
            "run",
            "--det",
            "bad.kwsp",
            "--ali",
            "bad.kwsp",
        ],
        &c,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.kwsp"));
}

#[test]
fn run_writes_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let c = dir.path().join("c");
    let out = kws(
        &[
            "--config",
            "config.toml",
            "run",
            "--det",
            "streams/pos_00000.det.kwsp",
            "--ali",
            "streams/pos_00000.ali.kwsp",
        ],
        &c,
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(!text.is_empty());
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["keyword", "t0_s", "tr_s", "tend_s", "s1", "s2", "accepted"] {
            assert!(v.get(key).is_some(), "{key} missing in {line}");
        }
    }
}

#[test]
fn roc_matches_direct_runs_per_threshold() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let c = dir.path().join("c");
    let grid = [0.5, 1.0, 1.5, 2.5, 4.0];
    let grid_arg = grid.map(|t| t.to_string()).join(",");
    let out = kws(
        &[
            "--config",
            "config.toml",
            "roc",
            "--manifest",
            "manifest.tsv",
            "--grid",
            &grid_arg,
        ],
        &c,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), grid.len());

    let cfg = CliConfig::load(&c.join("config.toml")).unwrap();
    let base = cfg.engine().unwrap();
    let corpus = Corpus::load(&c.join("manifest.tsv")).unwrap();
    for (row, &tau) in rows.iter().zip(&grid) {
        let mut config = base.config.clone();
        config.aligner.tau = tau;
        let engine = base.with_config(config).unwrap();
        let decoded = decode_corpus(&engine, &corpus, 2).unwrap();
        let p = eval_positives(&decoded, 3).unwrap();
        let n = eval_negatives(&decoded, 3).unwrap();
        assert_eq!(row[0], tau);
        assert!(
            (row[1] - (1.0 - p.accuracy)).abs() < 1e-12,
            "tau {tau}: {row:?} vs {p:?}"
        );
        assert!(
            (row[2] - n.fa_per_hour).abs() < 1e-9,
            "tau {tau}: {row:?} vs {n:?}"
        );
    }
}

#[test]
fn align_and_verify_report_json() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path());
    let c = dir.path().join("c");
    let run = kws(
        &[
            "--config",
            "config.toml",
            "run",
            "--det",
            "streams/pos_00000.det.kwsp",
            "--ali",
            "streams/pos_00000.ali.kwsp",
        ],
        &c,
    );
    let first: serde_json::Value = serde_json::from_str(
        String::from_utf8(run.stdout)
            .unwrap()
            .lines()
            .next()
            .unwrap(),
    )
    .unwrap();
    let kw = first["keyword"].as_str().unwrap().to_string();
    let t0 = (first["t0_s"].as_f64().unwrap() / 0.04).round() as usize;
    let t_end = (first["tend_s"].as_f64().unwrap() / 0.04).round() as usize;
    let (t0s, tes) = (t0.to_string(), t_end.to_string());
    let out = kws(
        &[
            "--config",
            "config.toml",
            "align",
            "--ali",
            "streams/pos_00000.ali.kwsp",
            "--keyword",
            &kw,
            "--t0",
            &t0s,
            "--t-end",
            &tes,
        ],
        &c,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let a: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let span = a["t_end"].as_u64().unwrap() - a["span_start"].as_u64().unwrap() + 1;
    let labels = a["framewise"].as_array().unwrap();
    assert_eq!(labels.len() as u64, span);
    let garbage = labels.iter().filter(|l| *l == "<g>").count() as u64;
    assert_eq!(span - garbage, a["frames"].as_u64().unwrap());
    let t_r = a["t_r"].as_u64().unwrap().to_string();
    let out = kws(
        &[
            "--config",
            "config.toml",
            "verify",
            "--ali",
            "streams/pos_00000.ali.kwsp",
            "--keyword",
            &kw,
            "--start",
            &t_r,
            "--end",
            &tes,
        ],
        &c,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["beam"].as_array().unwrap().len() <= 8);
    assert!(v["verdict"] == "accept" || v["verdict"] == "reject");

    let bad = kws(
        &[
            "--config",
            "config.toml",
            "align",
            "--ali",
            "streams/pos_00000.ali.kwsp",
            "--keyword",
            "nope",
            "--t0",
            "0",
            "--t-end",
            "5",
        ],
        &c,
    );
    assert_eq!(bad.status.code(), Some(1));
}
