use std::path::Path;
use std::process::Command;

use snlse_lab::config::{load_config, ConfigSources, Experiment};
use snlse_lab::experiments::execute;

fn run(experiment: Experiment, out: &Path, sets: &[&str], workers: usize) {
    let sources = ConfigSources {
        overrides: sets.iter().map(|s| s.to_string()).collect(),
        workers: Some(workers),
        out: Some(out.to_path_buf()),
        ..ConfigSources::default()
    };
    execute(&load_config(experiment, &sources).unwrap()).unwrap();
}

fn read_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    reader.records().map(|r| r.unwrap()).collect()
}

const SMALL_LONGTERM: [&str; 6] = [
    "grid.modes=16",
    "stats.paths=6",
    "time.horizon=0.4",
    "time.tau=0.02",
    "time.tau_ref=0.002",
    "time.checkpoint_stride=5",
];

#[test]
fn converge_writes_one_row_per_step_and_a_fit() {
    let dir = tempfile::tempdir().unwrap();
    run(Experiment::Converge, dir.path(), &["grid.modes=16", "stats.paths=4"], 1);
    let rows = read_rows(&dir.path().join("converge.csv"));
    assert_eq!(rows.len(), 6);
    let taus: Vec<f64> = rows[..5].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(taus.windows(2).all(|w| w[0] > w[1]));
    assert_eq!(&rows[5][0], "fit:snrli1");
    let slope: f64 = rows[5][8].parse().unwrap();
    assert!(slope > 0.3 && slope < 1.5, "{slope}");
    let manifest: toml::Table = std::fs::read_to_string(dir.path().join("manifest.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["run"]["status"].as_str(), Some("complete"));
    assert!(manifest["outputs"].as_table().unwrap().contains_key("converge.csv"));
}

#[test]
fn longterm_tables_share_their_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    run(Experiment::Longterm, dir.path(), &SMALL_LONGTERM, 1);
    let a = read_rows(&dir.path().join("longterm_snrli1.csv"));
    let b = read_rows(&dir.path().join("longterm_sli1.csv"));
    assert_eq!(a.len(), b.len());
    assert!(a.len() >= 3);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(&x[1], &y[1]);
    }
    assert_eq!(a[0][2].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn longterm_output_does_not_depend_on_worker_count() {
    let one = tempfile::tempdir().unwrap();
    let four = tempfile::tempdir().unwrap();
    run(Experiment::Longterm, one.path(), &SMALL_LONGTERM, 1);
    run(Experiment::Longterm, four.path(), &SMALL_LONGTERM, 4);
    for name in ["longterm_snrli1.csv", "longterm_sli1.csv"] {
        let a = std::fs::read(one.path().join(name)).unwrap();
        let b = std::fs::read(four.path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn cli_reports_configuration_errors_with_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_snlse-lab"))
        .args(["converge", "--set", "grid.modez=16", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("modez"), "{stderr}");
}

#[test]
fn cli_selftest_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_snlse-lab"))
        .args(["selftest", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(dir.path().join("selftest.txt").exists());
}
