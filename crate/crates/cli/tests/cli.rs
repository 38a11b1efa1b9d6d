mod common;

use std::fs;
use std::path::Path;

use common::*;

const HELP_PAGES: &[&[&str]] = &[
    &[],
    &["capture"],
    &["capture", "ls"],
    &["capture", "show"],
    &["capture", "synth"],
    &["tune"],
    &["wisdom"],
    &["wisdom", "best"],
    &["wisdom", "show"],
    &["wisdom", "merge"],
    &["report"],
    &["report", "histogram"],
    &["report", "matrix"],
    &["report", "ppm"],
];

/// Set `UPDATE_GOLDEN=1` to rewrite the expected help pages.
#[test]
fn help_pages_match_golden_files() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for page in HELP_PAGES {
        let mut args = page.to_vec();
        args.push("--help");
        let out = bin().args(&args).output().unwrap();
        assert!(out.status.success());
        let name = std::iter::once("klaunch").chain(page.iter().copied()).collect::<Vec<_>>().join("_");
        let path = golden.join(format!("{name}.txt"));
        if update {
            fs::create_dir_all(&golden).unwrap();
            fs::write(&path, &out.stdout).unwrap();
            continue;
        }
        let expected = fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing {}", path.display()));
        assert_eq!(stdout(&out), expected, "help for `{}` changed", page.join(" "));
    }
}

#[test]
fn tune_help_lists_every_flag() {
    let out = bin().args(["tune", "--help"]).output().unwrap();
    let text = stdout(&out);
    for flag in [
        "--strategy",
        "--budget-seconds",
        "--max-evals",
        "--backend",
        "--seed",
        "--wisdom",
        "--device",
        "--arch",
        "--session-out",
        "--noise",
        "--model-seed",
        "--compile-cmd",
        "--bench-cmd",
        "--config",
    ] {
        assert!(text.contains(flag), "{flag} missing");
    }
}

#[test]
fn usage_errors_exit_2_domain_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["tune"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run_in(dir.path(), &["tune", "x.klcap", "--strategy", "annealing"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run_in(dir.path(), &["tune", "missing.klcap"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.starts_with("error: cannot read capture missing.klcap"), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn tune_twice_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    synth_capture(dir.path());
    for name in ["a.klsession", "b.klsession"] {
        let out = run_in(
            dir.path(),
            &["tune", "vector_add.klcap", "--backend", "sim", "--seed", "42", "--session-out", name],
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let a = fs::read_to_string(dir.path().join("a.klsession")).unwrap();
    let b = fs::read_to_string(dir.path().join("b.klsession")).unwrap();
    assert!(a.lines().count() > 2);
    assert_eq!(without_timestamps(&a), without_timestamps(&b));
}

#[test]
fn tune_appends_to_wisdom_and_best_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    synth_capture(dir.path());
    let out = run_in(
        dir.path(),
        &["tune", "vector_add.klcap", "--max-evals", "25", "--wisdom", "w", "--device", "A100", "--arch", "Ampere"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let wisdom = dir.path().join("w/vector_add.wisdom");
    assert_eq!(fs::read_to_string(&wisdom).unwrap().lines().count(), 2);

    let args = ["wisdom", "best", "w/vector_add.wisdom", "--device", "A100", "--arch", "Ampere"];
    let out = run_in(dir.path(), &[&args[..], &["--problem", "1000000", "--json"]].concat());
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["match_kind"], "exact");
    assert_eq!(v["record"], 0);

    let out = run_in(dir.path(), &[&args[..], &["--problem", "2000"]].concat());
    assert!(stdout(&out).starts_with("match_kind: same_device_nearest\n"));

    let out = run_in(
        dir.path(),
        &["wisdom", "best", "w/vector_add.wisdom", "--device", "RTX A4000", "--arch", "Ampere", "--problem", "10"],
    );
    assert!(stdout(&out).starts_with("match_kind: same_arch_nearest\n"));
}

#[test]
fn wisdom_best_on_empty_file_prints_default() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.wisdom"), "").unwrap();
    let def = fixture("vector_add.json");
    let out = run_in(
        dir.path(),
        &[
            "wisdom", "best", "empty.wisdom", "--device", "A100", "--arch", "Ampere", "--problem", "256,256,256",
            "--kernel", def.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(
        stdout(&out),
        "match_kind: default\nconfig: {\"block_size\":256,\"cache_hint\":\"none\",\"elements_per_thread\":1,\"unroll\":false}\n"
    );
    let out = run_in(dir.path(), &["wisdom", "best", "empty.wisdom", "--device", "A", "--arch", "B", "--problem", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn report_ppm_fixture() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("m.csv"),
        "row,column,fraction\ntuned,a,0.5\ntuned,b,1.0\nported,a,1.0\nported,b,\n",
    )
    .unwrap();
    let out = run_in(dir.path(), &["report", "ppm", "m.csv"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        stdout(&out),
        "label\tbest\tworst\tppm\ntuned\t1.0000\t0.5000\t0.6667\nported\t1.0000\t1.0000\t0.0000\n"
    );
    let out = run_in(dir.path(), &["report", "ppm", "m.csv", "--json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((v[0]["ppm"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-9);
}

#[test]
fn report_histogram_and_matrix() {
    let dir = tempfile::tempdir().unwrap();
    synth_capture(dir.path());
    for (name, model) in [("a.klsession", "1"), ("b.klsession", "2")] {
        let out = run_in(
            dir.path(),
            &[
                "tune", "vector_add.klcap", "--strategy", "exhaustive", "--budget-seconds", "100000", "--model-seed",
                model, "--device", name, "--session-out", name,
            ],
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let out = run_in(dir.path(), &["report", "histogram", "a.klsession", "--bins", "4"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "bin_low,bin_high,count");
    let counted: u64 = lines[1..5].iter().map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
    // 6 * 4 * 2 * 3 points; only block_size 1024 with 8 elements per thread
    // exceeds 4096, removing 2 * 3 of them
    assert_eq!(counted, 144 - 6);
    assert!(lines[5].ends_with(",marker,default"));

    let out = run_in(dir.path(), &["report", "matrix", "a.klsession", "b.klsession", "-o", "m.csv"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[1].ends_with(",1"));
    assert!(rows[4].ends_with(",1"));
    let out = run_in(dir.path(), &["report", "ppm", "m.csv", "--csv"]);
    assert!(stdout(&out).starts_with("label,best,worst,ppm\n"));
}

#[test]
fn capture_ls_and_show() {
    let dir = tempfile::tempdir().unwrap();
    synth_capture(dir.path());
    let out = run_in(dir.path(), &["capture", "ls", "--json"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v[0]["kernel"], "vector_add");
    assert_eq!(v[0]["payload_bytes"], 3 * 256 * 4);
    let out = run_in(dir.path(), &["capture", "show", "vector_add.klcap"]);
    assert!(stdout(&out).contains("problem:     1000000\n"));
    let out = bin()
        .current_dir(dir.path())
        .env("KERNEL_LAUNCHER_CAPTURE_DIR", dir.path())
        .args(["capture", "ls"])
        .output()
        .unwrap();
    assert!(stdout(&out).starts_with("vector_add.klcap\tvector_add\t1000000\t"));
}

#[test]
fn wisdom_merge_keeps_best() {
    let dir = tempfile::tempdir().unwrap();
    synth_capture(dir.path());
    for (wdir, model) in [("w1", "1"), ("w2", "2")] {
        let out = run_in(
            dir.path(),
            &["tune", "vector_add.klcap", "--max-evals", "10", "--model-seed", model, "--wisdom", wdir],
        );
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let out = run_in(
        dir.path(),
        &["wisdom", "merge", "merged.wisdom", "w1/vector_add.wisdom", "w2/vector_add.wisdom"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let objective = |p: &str| -> f64 {
        let text = fs::read_to_string(dir.path().join(p)).unwrap();
        let record: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        record["objective_seconds"].as_f64().unwrap()
    };
    let merged = objective("merged.wisdom");
    assert_eq!(merged, objective("w1/vector_add.wisdom").min(objective("w2/vector_add.wisdom")));
    let out = run_in(dir.path(), &["wisdom", "show", "merged.wisdom", "--json"]);
    assert_eq!(stdout(&out), fs::read_to_string(dir.path().join("merged.wisdom")).unwrap());
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    synth_capture(dir.path());
    fs::write(
        dir.path().join("klconfig.json"),
        r#"{"wisdom_dir":"cfgwisdom","seed":5,"budget_seconds":40.0}"#,
    )
    .unwrap();
    let out = run_in(dir.path(), &["tune", "vector_add.klcap", "--session-out", "s.klsession"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("cfgwisdom/vector_add.wisdom").exists());
    let text = fs::read_to_string(dir.path().join("s.klsession")).unwrap();
    let header: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(header["header"]["seed"], 5);
    assert_eq!(header["header"]["budget"]["max_wall_seconds"], 40.0);

    fs::write(dir.path().join("bad.json"), "{").unwrap();
    let out = run_in(dir.path(), &["--config", "bad.json", "capture", "ls"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn subprocess_backend_runs_bench_command() {
    let dir = tempfile::tempdir().unwrap();
    synth_capture(dir.path());
    let out = run_in(
        dir.path(),
        &["tune", "vector_add.klcap", "--backend", "subprocess", "--bench-cmd", "echo 0.125", "--max-evals", "3"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("best: 0.125 s"));
    let out = run_in(dir.path(), &["tune", "vector_add.klcap", "--backend", "subprocess"]);
    assert_eq!(out.status.code(), Some(1));
}
