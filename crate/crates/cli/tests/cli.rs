use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use boundary_qe::cache::{encode, read_cache, write_cache};

fn bqe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bqe"))
        .args(args)
        .current_dir(dir)
        .env_remove("BQE_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const DISK: &str = "[domain]\nkind = \"disk\"\nradius = 1.0\n[scan]\nk_min = 0.5\nk_max = 16.5\n";

fn disk_setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("disk.toml"), DISK).unwrap();
    let o = bqe(dir.path(), &["spectrum", "compute", "--config", "disk.toml", "--output-dir", "out"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cache = dir.path().join("out/spectrum/disk_dirichlet.qespec");
    (dir, cache)
}

#[test]
fn domain_info_reports_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let o = bqe(dir.path(), &["domain", "info"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["domain"]["kind"], "stadium");
    assert!((v["length"].as_f64().unwrap() - (4.0 + 2.0 * std::f64::consts::PI)).abs() < 1e-12);
    assert_eq!(v["format_version"], 1);
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn exit_codes_for_bad_configuration_and_input() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "threads = \"many\"\n").unwrap();
    assert_eq!(code(&bqe(dir.path(), &["domain", "info", "--config", "bad.toml"])), 2);
    assert_eq!(code(&bqe(dir.path(), &["domain", "info", "--config", "absent.toml"])), 2);
    assert_eq!(code(&bqe(dir.path(), &["billiard", "run", "--bounces", "0"])), 2);
    assert_eq!(code(&bqe(dir.path(), &["domain", "info", "--bc", "robin_multiplier"])), 2);
    assert_eq!(code(&bqe(dir.path(), &["qe", "analyze", "--cache", "absent.qespec"])), 3);
    fs::write(dir.path().join("junk.qespec"), b"not a cache at all, definitely not").unwrap();
    assert_eq!(code(&bqe(dir.path(), &["spectrum", "verify", "--cache", "junk.qespec"])), 3);
    assert_eq!(code(&bqe(dir.path(), &["nonsense"])), 2);
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["billiard", "run", "--dry-run"][..], &["spectrum", "compute", "--dry-run", "--k-max", "30"][..]] {
        let o = bqe(dir.path(), args);
        assert_eq!(code(&o), 0);
        assert!(stdout(&o).contains("config_hash = "));
    }
    assert!(!dir.path().join("bqe-out").exists());
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("elsewhere");
    let o = Command::new(env!("CARGO_BIN_EXE_bqe"))
        .args(["billiard", "run", "--bounces", "500"])
        .current_dir(dir.path())
        .env("BQE_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(root.join("billiard/p.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# bqe format_version=1 config_hash="));
    assert_eq!(lines.next().unwrap(), "n,running_mean,invariant_mean,deviation");
    assert!(root.join("billiard/plot_billiard.py").exists());
}

#[test]
fn disk_pipeline() {
    let (dir, cache) = disk_setup();
    let d = dir.path();
    let c = read_cache(&cache).unwrap();
    assert_eq!(c.modes.len(), 61);

    let o = bqe(d, &["spectrum", "verify", "--cache", "out/spectrum/disk_dirichlet.qespec"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));

    let o = bqe(d, &["qe", "analyze", "--cache", "out/spectrum/disk_dirichlet.qespec", "--suite", "canonical", "--output-dir", "out"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let qe = d.join("out/qe/disk_dirichlet_canonical");
    for f in ["report.json", "cesaro.csv", "variance.csv", "density.csv", "elements.csv", "plot_qe.py"] {
        assert!(qe.join(f).exists(), "{f}");
    }
    let elements = fs::read_to_string(qe.join("elements.csv")).unwrap();
    assert_eq!(elements.lines().nth(1).unwrap(), "mode_index,symbol_id,lambda,value,imag,limit,aliased,label");
    assert_eq!(elements.lines().count(), 2 + 61 * 10);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(qe.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["format_version"], 1);
    assert!(report["notes"].as_array().unwrap().iter().any(|n| n.as_str().unwrap().starts_with("calibration")));

    let o = bqe(d, &["qe", "compare", "--a", "out/qe/disk_dirichlet_canonical/report.json", "--b", "out/qe/disk_dirichlet_canonical/report.json", "--output-dir", "out"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(d.join("out/compare/comparison.csv")).unwrap().contains("sigma2"));

    // a cache whose stored eigenvalue is off fails verification
    let mut bad = c.clone();
    bad.modes[3].lambda *= 1.0 + 1e-4;
    write_cache(&d.join("bad.qespec"), &bad).unwrap();
    assert_eq!(code(&bqe(d, &["spectrum", "verify", "--cache", "bad.qespec"])), 4);

    // a modified byte is refused as invalid input
    let mut bytes = encode(&c);
    let n = bytes.len();
    bytes[n / 2] ^= 0x10;
    fs::write(d.join("tampered.qespec"), bytes).unwrap();
    assert_eq!(code(&bqe(d, &["qe", "analyze", "--cache", "tampered.qespec"])), 3);

    // too few modes for statistics
    let mut small = c.clone();
    small.modes.truncate(20);
    write_cache(&d.join("small.qespec"), &small).unwrap();
    assert_eq!(code(&bqe(d, &["qe", "analyze", "--cache", "small.qespec"])), 3);
}

#[test]
fn recompute_is_deterministic() {
    let (dir, cache) = disk_setup();
    let first = fs::read(&cache).unwrap();
    let o = bqe(dir.path(), &["spectrum", "compute", "--config", "disk.toml", "--output-dir", "out"]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(&cache).unwrap(), first);
    let o = bqe(dir.path(), &["spectrum", "compute", "--config", "disk.toml", "--output-dir", "out", "--threads", "2"]);
    assert_eq!(code(&o), 0);
    let (a, b) = (boundary_qe::cache::decode(&cache, &first).unwrap(), read_cache(&cache).unwrap());
    assert_eq!(a.header.config_hash, b.header.config_hash);
    assert_eq!(a.modes, b.modes);
}
