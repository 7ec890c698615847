use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ensf_da::config::ExperimentConfig;
use ensf_da::osse::{load, CycleRecord};

const SMALL: &str = "cycles = 3\nmembers = 4\n[init]\nspinup_days = 1.0\n";
const DUMPS: &str = "[output]\ndump_every = 1\ndump_from = 1\ndump_members = true\n";

fn ensf_da(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ensf-da"));
    cmd.args(args).env("RUST_LOG", "warn");
    match threads {
        Some(t) => cmd.env("ENSF_DA_THREADS", t),
        None => cmd.env_remove("ENSF_DA_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn same_records(a: &[CycleRecord], b: &[CycleRecord]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_diagnostics(y))
}

#[test]
fn run_writes_a_reproducible_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("a");
    let o = ensf_da(&["run", "--preset", "EXP_L1", "--filter", "ensf", "--seed", "7", "--grid", "32", "--config", &cfg, "--out", s(&out)], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = out.join("EXP_L1_ensf_7");
    assert!(run.join("records.csv").exists() && run.join("manifest.json").exists());
    let (manifest, records) = load(&run).unwrap();
    assert_eq!(records.len(), 3);

    // the manifest alone reproduces the run
    let config: &ExperimentConfig = &manifest.config;
    let replay = write_config(dir.path(), "replay.toml", &config.to_toml().unwrap());
    let out_b = dir.path().join("b");
    let o = ensf_da(&["run", "--config", &replay, "--out", s(&out_b)], Some("1"));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (m2, again) = load(&out_b.join("EXP_L1_ensf_7")).unwrap();
    assert_eq!(m2.config_hash, manifest.config_hash);
    assert!(same_records(&records, &again));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let cases: Vec<(Vec<&str>, Option<&str>)> = vec![
        (vec!["run", "--preset", "EXP_L1", "--bogus"], None),
        (vec!["run", "--preset", "EXP_L1", "--filter", "ensf", "--loc-km", "2000", "--out", s(&out)], None),
        (vec!["run", "--preset", "EXP_L9", "--out", s(&out)], None),
        (vec!["run", "--config", "/nonexistent/cfg.toml", "--out", s(&out)], None),
        (vec!["sweep", "--preset", "EXP_L1", "--filter", "letkf", "--loc-km", "3000:1000:500", "--out", s(&out)], None),
        (vec!["run", "--preset", "EXP_L1", "--out", s(&out)], Some("zero")),
        (vec!["diag", "--out", s(&out)], None),
    ];
    for (args, threads) in cases {
        let o = ensf_da(&args, threads);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
    assert!(!out.exists(), "usage errors must not write outputs");
}

#[test]
fn diag_reports_every_missing_dump_and_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", &format!("{SMALL}{DUMPS}"));
    let out = dir.path().join("runs");
    let o = ensf_da(&["run", "--preset", "EXP_NL1", "--filter", "letkf", "--grid", "32", "--config", &cfg, "--out", s(&out)], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = out.join("EXP_NL1_letkf_0");
    fs::remove_file(run.join("fields/member_0002_01.bin")).unwrap();
    fs::remove_file(run.join("fields/mean_0003.bin")).unwrap();
    let o = ensf_da(&["diag", s(&run), "--from", "1", "--out", s(&dir.path().join("diag"))], None);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("member_0002_01.bin") && err.contains("mean_0003.bin"), "{err}");
}

#[test]
fn diag_outputs_are_complete_and_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", &format!("{SMALL}{DUMPS}"));
    let out = dir.path().join("runs");
    for (preset, filter, members) in [("FREE_RUN", "none", "1"), ("EXP_L1", "letkf", "4"), ("EXP_L1", "ensf", "4")] {
        let o = ensf_da(
            &["run", "--preset", preset, "--filter", filter, "--members", members, "--grid", "32", "--config", &cfg, "--out", s(&out)],
            None,
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }

    let free = out.join("FREE_RUN_none_0");
    let diag_free = dir.path().join("diag_free");
    assert_eq!(code(&ensf_da(&["diag", s(&free), "--from", "1", "--out", s(&diag_free)], None)), 0);
    assert!(diag_free.join("FREE_RUN_none_0_error.csv").exists());
    assert!(!diag_free.join("FREE_RUN_none_0_spread.csv").exists());

    let pair = [out.join("EXP_L1_letkf_0"), out.join("EXP_L1_ensf_0")];
    let diag = dir.path().join("diag");
    let args = ["diag", s(&pair[0]), s(&pair[1]), "--from", "1", "--out", s(&diag)];
    assert_eq!(code(&ensf_da(&args, None)), 0);
    let snapshot = |d: &PathBuf| {
        let mut files = fs::read_dir(d)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.file_name().unwrap().to_owned(), fs::read(&p).unwrap())
            })
            .collect::<Vec<_>>();
        files.sort();
        files
    };
    let first = snapshot(&diag);
    assert_eq!(code(&ensf_da(&args, None)), 0);
    assert_eq!(first, snapshot(&diag));

    let improvement = fs::read_to_string(diag.join("improvement_EXP_L1_ensf_0_vs_EXP_L1_letkf_0.csv")).unwrap();
    // header plus one row per bin, bins 1..=32/3
    assert_eq!(improvement.lines().count(), 1 + 10);
    assert!(diag.join("EXP_L1_ensf_0_ratio.csv").exists());
}

#[test]
fn sweep_writes_one_summary_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("sweep");
    let o = ensf_da(
        &["sweep", "--preset", "EXP_L1", "--filter", "letkf", "--loc-km", "1000:2000:1000", "--rtps", "0.1:0.5:0.4", "--grid", "32", "--config", &cfg, "--jobs", "2", "--out", s(&out)],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    let rows = summary.lines().skip(1).collect::<Vec<_>>();
    assert_eq!(rows.len(), 4);
    assert!(summary.starts_with("loc_km,rtps,time_mean_rmse,status,run_dir"));
    assert!(out.join("loc2000_rtps0.5/EXP_L1_letkf_0/manifest.json").exists());
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let mut records = Vec::new();
    for (name, threads) in [("one", Some("1")), ("two", Some("2")), ("default", None)] {
        let out = dir.path().join(name);
        let o = ensf_da(&["run", "--preset", "EXP_NL1", "--filter", "letkf", "--grid", "32", "--config", &cfg, "--out", s(&out)], threads);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        records.push(load(&out.join("EXP_NL1_letkf_0")).unwrap().1);
    }
    assert!(same_records(&records[0], &records[1]));
    assert!(same_records(&records[0], &records[2]));
}

#[test]
fn spinup_writes_a_nature_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = ensf_da(&["spinup", "--grid", "32", "--seed", "5", "--days", "1", "--out", s(dir.path())], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let field = dir.path().join("nature_32x32_5.bin");
    assert_eq!(fs::metadata(&field).unwrap().len(), 2 * 32 * 32 * 8);
    assert!(field.with_extension("json").exists());
}
