use std::fs;
use std::path::Path;
use std::process::Command;

use feir_cli::config::ExperimentConfig;
use feir_cli::report::{cmd_report, ReportConfig, UNDEFINED};
use feir_cli::run::{cmd_run, SOLUTIONS_FILE};
use feir_cli::solutions::{load_solutions, COLUMNS};

fn write_config(dir: &Path, json: &str) -> ExperimentConfig {
    let path = dir.join("experiment.json");
    fs::write(&path, json).unwrap();
    ExperimentConfig::from_file(&path).unwrap()
}

const SIX_WEIGHTS: &str = r#"{
    "dataset": {"generate": {"family": "su_pair", "m": 6, "n": 12, "seed": 5}},
    "ks": [1, 3],
    "methods": {"feir": {
        "weights": [
            {"w1": 1, "w2": 1, "w3": 1, "w4": 0},
            {"w1": 0.1, "w2": 1, "w3": 1, "w4": 0},
            {"w1": 1, "w2": 0.1, "w3": 1, "w4": 0},
            {"w1": 3, "w2": 1, "w3": 1, "w4": 0},
            {"w1": 1, "w2": 3, "w3": 1, "w4": 0},
            {"w1": 0, "w2": 1, "w3": 1, "w4": 0}
        ],
        "learning_rate": 1.0,
        "max_steps": 60
    }},
    "seed": 11
}"#;

#[test]
fn toy_naive_only_run() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("u.csv"), "0.2,0.6,0.9\n0.1,0.8,0.7\n").unwrap();
    let cfg = write_config(dir.path(), r#"{"dataset": {"files": {"utility": "u.csv"}}, "ks": [1]}"#);
    let summary = cmd_run(&cfg, dir.path()).unwrap();
    assert_eq!(summary.added, 1);
    let points = load_solutions(&summary.path).unwrap();
    assert_eq!(points.len(), 1);
    let m = points[0].metrics.unwrap();
    assert_eq!(points[0].method, "naive");
    assert_eq!(m.envy, 0.0);
    assert_eq!(m.utility_norm, Some(1.0));
}

#[test]
fn weight_grid_rows_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SIX_WEIGHTS);
    let first = cmd_run(&cfg, dir.path()).unwrap();
    let points = load_solutions(&first.path).unwrap();
    assert_eq!(points.iter().filter(|p| p.method == "feir").count(), 12);
    assert_eq!(points.iter().filter(|p| p.method == "naive").count(), 2);
    assert_eq!(first.failed, 0);
    let before = fs::read(&first.path).unwrap();

    let second = cmd_run(&cfg, dir.path()).unwrap();
    assert_eq!(second.added, 0);
    assert_eq!(second.skipped, 14);
    assert_eq!(fs::read(&second.path).unwrap(), before);
}

#[test]
fn interrupted_run_resumes_without_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SIX_WEIGHTS);
    let full = cmd_run(&cfg, dir.path()).unwrap();
    let expected = fs::read_to_string(&full.path).unwrap();
    // keep the header and the first five rows, as if the run stopped part way
    let partial: String = expected.lines().take(6).map(|l| format!("{l}\n")).collect();
    fs::write(&full.path, partial).unwrap();
    let resumed = cmd_run(&cfg, dir.path()).unwrap();
    assert_eq!(resumed.added, 9);
    assert_eq!(fs::read_to_string(&resumed.path).unwrap(), expected);
}

#[test]
fn runs_are_reproducible_across_directories() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let json = SIX_WEIGHTS.replace(r#""learning_rate": 1.0"#, r#""learning_rate": "auto""#);
    let ra = cmd_run(&write_config(a.path(), &json), a.path()).unwrap();
    let rb = cmd_run(&write_config(b.path(), &json), b.path()).unwrap();
    assert_eq!(fs::read(ra.path).unwrap(), fs::read(rb.path).unwrap());
}

#[test]
fn report_marks_undefined_cells() {
    let dir = tempfile::tempdir().unwrap();
    let json = r#"{
        "dataset": {"generate": {"family": "item_groups", "m": 5, "n": 20, "seed": 2}},
        "ks": [2],
        "methods": {"ca": {"epsilons": [0.01, 0.1]}, "rr": {}, "shuffle": {"depths": [20]}}
    }"#;
    let cfg = write_config(dir.path(), json);
    let run = cmd_run(&cfg, dir.path()).unwrap();
    let files = cmd_report(&run.path, dir.path(), &ReportConfig::default()).unwrap();
    let table = fs::read_to_string(files.hv_table).unwrap();
    let header = table.lines().next().unwrap();
    assert!(header.starts_with("k,"));
    for method in ["naive", "shuffle", "ca", "rr"] {
        assert!(header.contains(&format!("HV(g vs u) {method}")), "{header}");
    }
    assert_eq!(table.lines().count(), 2);
    // shuffling over every item loses far more than 5% of utility
    let row: Vec<&str> = table.lines().nth(1).unwrap().split(',').collect();
    let col = |name: &str| header.split(',').position(|h| h == name).unwrap();
    assert_eq!(row[col("min(g|0.95) shuffle")], UNDEFINED);
    assert_eq!(row[col("min(g|0.95) naive")], "1");
    let pareto = fs::read_to_string(files.pareto).unwrap();
    assert!(pareto.starts_with("k,x_metric,y_metric,method,x,y,weights,seed"));
}

#[test]
fn report_rejects_missing_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(SOLUTIONS_FILE);
    let header: Vec<&str> = COLUMNS.iter().copied().filter(|c| *c != "mean_gap").collect();
    fs::write(&path, header.join(",") + "\n").unwrap();
    let err = cmd_report(&path, dir.path(), &ReportConfig::default()).unwrap_err();
    assert!(format!("{err:#}").contains("mean_gap"), "{err:#}");
}

fn feir(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_feir")).args(args).output().unwrap()
}

#[test]
fn generate_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = feir(&["generate", "--family", "su_pair", "--seed", "9", "--m", "8", "--n", "10", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["utility.csv", "suitability.csv", "utility.meta.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert!(!a.join("groups.json").exists());
}

#[test]
fn binary_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    assert!(feir(&["generate", "--family", "user_groups", "--seed", "3", "--m", "6", "--n", "24", "--out", data.to_str().unwrap()])
        .status
        .success());
    assert!(data.join("groups.json").exists());
    fs::write(
        d.join("exp.json"),
        r#"{"dataset": {"files": {"utility": "data/utility.csv"}}, "ks": [2],
            "methods": {"feir": {"weights": [{"w1": 1, "w2": 1, "w3": 1, "w4": 0}],
                                 "learning_rate": 1.0, "max_steps": 30},
                        "ca": {"epsilons": [0.05]}}}"#,
    )
    .unwrap();
    let out = d.join("res");
    let o = feir(&["run", "--config", d.join("exp.json").to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let points = load_solutions(&out.join(SOLUTIONS_FILE)).unwrap();
    assert_eq!(points.len(), 3);
    assert!(feir(&["report", "--results", out.to_str().unwrap()]).status.success());
    assert!(out.join("hv_table.csv").exists());

    let u = data.join("utility.csv");
    let o = feir(&["baseline", "ca", "--utility", u.to_str().unwrap(), "--k", "2", "--out", d.join("ca").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.join("ca/policy.csv").exists() && d.join("ca/counts.csv").exists());
    let o = feir(&[
        "fit", "--utility", u.to_str().unwrap(), "--k", "2", "--weights", "1,1,1,0", "--max-steps", "20",
        "--out", d.join("fit").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(d.join("fit/trace.csv")).unwrap();
    assert!(trace.starts_with("step,"));

    let bad = feir(&["baseline", "rr", "--utility", u.to_str().unwrap(), "--k", "5"]);
    assert!(!bad.status.success());
}

#[test]
fn check_command_passes() {
    let o = feir(&["check", "--samples", "20000"]);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 3);
}
