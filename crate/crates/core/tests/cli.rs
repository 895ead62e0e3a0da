use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use tempfile::TempDir;
use tpso::cli::{
    format_features, read_features, run_ablation, run_optimize, EvalReport, OptimizeReport, Pipeline, RunConfig,
    SampleReport, SweepKey, EXIT_CHECK_FAILED, EXIT_CONFIG,
};
use tpso::encoder::TextEncoder;
use tpso::metrics::{mean_pairwise_similarity, vendi_score};
use tpso::tpso::{evaluate_offsets, OffsetSet};

const BIN: &str = env!("CARGO_BIN_EXE_tpso");

fn tpso(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, json).unwrap();
    path
}

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const THREE_PROMPTS: &str = r#"{"prompts": [[5, 17, 256], [42, 7, 999, 3], [100, 200]], "tpso": {"variants": 4}}"#;

#[test]
fn optimize_writes_bundles_and_report() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), THREE_PROMPTS);
    let out = dir.path().join("out");
    let o = tpso(&["optimize", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for i in 0..3 {
        assert!(out.join("bundles").join(format!("prompt_{i:03}.json")).exists());
    }
    let report: OptimizeReport = read(&out.join("optimize_report.json"));
    let cosines: Vec<f64> = report.prompts.iter().flat_map(|p| p.cosines.clone()).collect();
    assert_eq!(cosines.len(), 12);
    assert!(cosines.iter().all(|c| (c - 0.80).abs() <= 0.015), "{cosines:?}");
    // default lambda is zero, but the diversity value is still reported
    assert_eq!(report.config.tpso.lambda, 0.0);
    let text = std::fs::read_to_string(out.join("optimize_report.json")).unwrap();
    assert!(text.contains("\"diversity_loss\""));
    // the echoed config re-parses to the config that produced it
    let echoed = RunConfig::from_json(&serde_json::to_string(&report.config).unwrap()).unwrap();
    assert_eq!(echoed, RunConfig::load(&cfg).unwrap());
    assert!(out.join("timings.json").exists());
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    let empty = write_config(dir.path(), "{}");
    let o = tpso(&["optimize", "--config", s(&empty), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no prompts"));

    let typo = write_config(dir.path(), r#"{"prompts": [[1]], "tpso": {"kapa": 0.8}}"#);
    let o = tpso(&["optimize", "--config", s(&typo)]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&o.stderr).contains("kapa"));

    let bad = write_config(dir.path(), r#"{"prompts": [[1]], "tpso": {"kappa": 1.5}}"#);
    let o = tpso(&["optimize", "--config", s(&bad)]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tpso.kappa"));
}

#[test]
fn sample_requires_bundles() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), THREE_PROMPTS);
    let o = tpso(&["sample", "--config", s(&cfg), "--out", s(&dir.path().join("nothing"))]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("bundle"));
}

/// Writes zero-offset bundles so every variant equals the base prompt.
fn write_zero_bundles(cfg: &RunConfig, dir: &Path) {
    let enc = TextEncoder::from_config(&cfg.encoder).unwrap();
    std::fs::create_dir_all(dir).unwrap();
    for (i, ids) in cfg.prompts.iter().enumerate() {
        let tok = enc.encode_tokens(ids).unwrap();
        let zeros = OffsetSet::zeros(ids.len(), cfg.encoder.dim, cfg.tpso.variants);
        let b = evaluate_offsets(&enc, &tok, &zeros, &cfg.tpso, 0, false).unwrap();
        std::fs::write(dir.join(format!("prompt_{i:03}.json")), serde_json::to_string(&b).unwrap()).unwrap();
    }
}

#[test]
fn zero_offsets_and_zero_ratio_reproduce_the_base() {
    let dir = TempDir::new().unwrap();
    let cfg_path = write_config(dir.path(), THREE_PROMPTS);
    let cfg = RunConfig::load(&cfg_path).unwrap();
    let zero = dir.path().join("zero");
    write_zero_bundles(&cfg, &zero.join("bundles"));
    let o = tpso(&["sample", "--config", s(&cfg_path), "--out", s(&zero)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: SampleReport = read(&zero.join("sample_report.json"));
    for p in &report.prompts {
        assert!(p.variant_terminals.iter().all(|v| v == &p.base_terminal));
        assert_eq!(p.terminal_distance, 0.0);
    }

    let opt = dir.path().join("opt");
    assert!(tpso(&["optimize", "--config", s(&cfg_path), "--out", s(&opt)]).status.success());
    let r0 = write_config(
        dir.path(),
        r#"{"prompts": [[5, 17, 256], [42, 7, 999, 3], [100, 200]], "tpso": {"variants": 4}, "schedule": {"ratio": 0.0}}"#,
    );
    assert!(tpso(&["sample", "--config", s(&r0), "--out", s(&opt)]).status.success());
    let report: SampleReport = read(&opt.join("sample_report.json"));
    for p in &report.prompts {
        assert!(p.variant_terminals.iter().all(|v| v == &p.base_terminal));
    }
}

#[test]
fn schedule_sign_changes_terminal_features() {
    let dir = TempDir::new().unwrap();
    let cfg_path = write_config(dir.path(), THREE_PROMPTS);
    let out = dir.path().join("o");
    assert!(tpso(&["optimize", "--config", s(&cfg_path), "--out", s(&out)]).status.success());
    let mut terminals = Vec::new();
    for r in ["0.4", "-0.4"] {
        let c = write_config(
            dir.path(),
            &format!(r#"{{"prompts": [[5, 17, 256], [42, 7, 999, 3], [100, 200]], "tpso": {{"variants": 4}}, "schedule": {{"ratio": {r}}}}}"#),
        );
        assert!(tpso(&["sample", "--config", s(&c), "--out", s(&out)]).status.success());
        let report: SampleReport = read(&out.join("sample_report.json"));
        terminals.push(report.prompts.iter().map(|p| p.variant_terminals.clone()).collect::<Vec<_>>());
    }
    assert_ne!(terminals[0], terminals[1]);
}

#[test]
fn eval_groups_and_malformed_files() {
    let dir = TempDir::new().unwrap();
    let one = dir.path().join("one.txt");
    std::fs::write(&one, format_features(&vec![vec![0.5, -1.0, 2.0]; 5]).unwrap()).unwrap();
    let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64 * 0.1, 1.0 - i as f64]).collect();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    std::fs::write(&a, format_features(&rows).unwrap()).unwrap();
    std::fs::write(&b, format_features(&rows).unwrap()).unwrap();
    let out = dir.path().join("eval");
    let o = tpso(&["eval", s(&a), s(&b), s(&one), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: EvalReport = read(&out.join("eval_report.json"));
    assert_eq!(report.reference, "a");
    let dup = &report.groups[2].metrics;
    assert!((dup.mss.unwrap() - 1.0).abs() < 1e-12);
    assert!((dup.vendi.unwrap() - 1.0).abs() < 1e-12);
    let same = &report.groups[1].metrics;
    assert!(same.frechet.unwrap().abs() <= 1e-8);
    assert_eq!((same.precision, same.recall), (Some(1.0), Some(1.0)));

    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "gendiv-features v1 2 2\n1 2\n3 oops\n").unwrap();
    let o = tpso(&["eval", s(&bad), "--out", s(&out)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("byte 29"));
}

#[test]
fn planted_eval_matches_library_metrics() {
    let dir = TempDir::new().unwrap();
    let rows: Vec<Vec<f64>> = (0..8)
        .map(|i| {
            let t = i as f64;
            vec![t.cos(), (2.0 * t).sin(), 0.1 * t + 0.3]
        })
        .collect();
    let path = dir.path().join("planted.txt");
    std::fs::write(&path, format_features(&rows).unwrap()).unwrap();
    let out = dir.path().join("eval");
    assert!(tpso(&["eval", s(&path), "--out", s(&out)]).status.success());
    let report: EvalReport = read(&out.join("eval_report.json"));
    let fs = read_features(&path).unwrap();
    assert_eq!(report.groups[0].metrics.mss, Some(mean_pairwise_similarity(&fs).unwrap()));
    assert_eq!(report.groups[0].metrics.vendi, Some(vendi_score(&fs).unwrap()));
}

#[test]
fn gradcheck_smoke_and_negative_control() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), r#"{"gradcheck": {"dims": [8], "variants": [2], "instances": 3}}"#);
    let start = Instant::now();
    let o = tpso(&["gradcheck", "--config", s(&cfg), "--out", s(dir.path())]);
    assert!(start.elapsed().as_secs_f64() < 1.0);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
    let o = tpso(&["gradcheck", "--config", s(&cfg), "--out", s(dir.path()), "--inject-adjoint-fault", "1.01"]);
    assert_eq!(o.status.code(), Some(EXIT_CHECK_FAILED));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn ablate_rejects_unknown_sweep_key() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), r#"{"prompts": [[1, 2]], "ablation": {"sweep": "sigma"}}"#);
    let o = tpso(&["ablate", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    let o = tpso(&["ablate", "--config", s(&cfg), "--sweep", "sigma", "--values", "1"]);
    assert!(!o.status.success());
}

#[test]
fn single_value_sweep_equals_optimize_and_eval() {
    let mut cfg = RunConfig::from_json(r#"{"prompts": [[5, 17, 256]], "ablation": {"seeds": [3]}}"#).unwrap();
    let report = run_ablation(&cfg, SweepKey::Kappa, &[0.8]).unwrap();
    assert_eq!(report.rows.len(), 1);
    cfg.tpso.seed = 3;
    cfg.noise.seed = 3;
    let p = Pipeline::new(&cfg).unwrap();
    let (bundles, opt) = run_optimize(&p).unwrap();
    let samples = p.sample_prompt(0, &bundles[0], &cfg.schedule, 3).unwrap();
    let fs = tpso::metrics::FeatureSet::from_rows(&samples.variant_terminals()).unwrap();
    let row = &report.rows[0];
    assert_eq!(row.diversity_loss, opt.prompts[0].diversity_loss);
    assert_eq!(row.band_rate, opt.prompts[0].band_rate);
    assert_eq!(row.mss, mean_pairwise_similarity(&fs).unwrap());
    assert_eq!(row.vendi, vendi_score(&fs).unwrap());
}

#[test]
fn worker_count_does_not_change_reports() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), THREE_PROMPTS);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(tpso(&["optimize", "--config", s(&cfg), "--out", s(&a), "--workers", "1"]).status.success());
    assert!(tpso(&["optimize", "--config", s(&cfg), "--out", s(&b), "--workers", "3"]).status.success());
    for name in ["optimize_report.json", "bundles/prompt_001.json"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn seed_override_changes_results_and_is_echoed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), THREE_PROMPTS);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(tpso(&["optimize", "--config", s(&cfg), "--out", s(&a)]).status.success());
    assert!(tpso(&["optimize", "--config", s(&cfg), "--out", s(&b), "--seed-override", "99"]).status.success());
    let (ra, rb): (OptimizeReport, OptimizeReport) = (read(&a.join("optimize_report.json")), read(&b.join("optimize_report.json")));
    assert_eq!(rb.config.tpso.seed, 99);
    assert_ne!(ra.prompts[0].cosines, rb.prompts[0].cosines);
}
