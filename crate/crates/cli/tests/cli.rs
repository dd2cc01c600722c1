use serde_json::{json, Value};
use std::path::Path;
use std::process::{Command, Output};

fn pairgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pairgen")).args(args).env_remove("PAIRGEN_THREADS").output().unwrap()
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> String {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn malformed_config_exits_2_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cases = [
        ("syntax.json", "{ \"lattice\": ".to_string()),
        (
            "unknown.json",
            json!({"lattice": {"L": 4, "a_Z": 2.0}, "params": {"theta0": 0.0, "colour": 1},
                   "run": {"solver": "bogoliubov-k"}, "output": {"dir": out}})
            .to_string(),
        ),
        (
            "missing_times.json",
            json!({"lattice": {"L": 4, "a_Z": 2.0}, "params": {"theta0": 0.0},
                   "run": {"solver": "dtwa"}, "output": {"dir": out}})
            .to_string(),
        ),
    ];
    for (name, text) in cases {
        let p = tmp.path().join(name);
        std::fs::write(&p, text).unwrap();
        let o = pairgen(&["run", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists(), "{name} left output behind");
    }
    let o = pairgen(&["run", tmp.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solver_failure_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    // 3x3 bilayer is 18 spins, beyond exact diagonalization
    let cfg = json!({"lattice": {"L": 3, "a_Z": 2.0, "boundary": "open"}, "params": {"theta0": 0.0},
                     "run": {"solver": "ed", "t_max": 0.1, "n_t": 2}, "output": {"dir": tmp.path().join("o")}});
    let o = pairgen(&["run", &write_config(tmp.path(), "c.json", &cfg)]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn dispersion_run_reports_arcs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("disp");
    let cfg = json!({"lattice": {"L": 33, "a_Z": 2.0}, "params": {"theta0": 3.0 * std::f64::consts::PI / 8.0},
                     "run": {"solver": "bogoliubov-k"}, "output": {"dir": out}});
    let o = pairgen(&["run", &write_config(tmp.path(), "c.json", &cfg), "--seed", "7"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["topology"], "arcs");
    assert_eq!(report["component_count"], 2);
    let disp = std::fs::read_to_string(out.join("dispersion.csv")).unwrap();
    assert_eq!(disp.lines().count(), 1 + 33 * 33);
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["solver"], "bogoliubov-k");
    assert!(manifest["git_describe"].is_string());
    assert!(manifest["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn dtwa_run_records_t10() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("dtwa");
    let cfg = json!({"lattice": {"L": 8, "a_Z": 2.0}, "params": {"theta0": 3.0 * std::f64::consts::PI / 8.0},
                     "run": {"solver": "dtwa", "t_max": 4.0, "n_t": 17, "n_traj": 64, "seed": 3},
                     "output": {"dir": out}});
    let o = pairgen(&["run", &write_config(tmp.path(), "c.json", &cfg), "--threads", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["nk_t.csv", "npair_t.csv", "cpm_t.csv", "manifest.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["results"]["trajectories"], 64);
    assert!(m["results"]["t10"].is_number(), "t10 not reached: {}", m["results"]);
    assert!(m["results"]["integrator"]["accepted"].as_u64().unwrap() > 0);
}

#[test]
fn every_solver_writes_its_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let base = |solver: &str, l: usize, boundary: &str| {
        json!({"lattice": {"L": l, "a_Z": 2.0, "boundary": boundary}, "params": {"theta0": 0.5},
               "run": {"solver": solver, "t_max": 1.0, "n_t": 5, "n_traj": 32},
               "output": {"dir": tmp.path().join(solver)}})
    };
    let runs = [
        ("bdg-real", base("bdg-real", 4, "periodic"), vec!["nk_t.csv", "npair_t.csv", "cpm_t.csv", "nk_avg.csv"]),
        ("ed", base("ed", 2, "open"), vec!["nk_t.csv", "npair_t.csv", "cpm_t.csv"]),
        (
            "compare",
            base("compare", 4, "periodic"),
            vec!["comparison.json", "bogoliubov-k/dispersion.csv", "bdg-real/nk_t.csv", "dtwa/npair_t.csv"],
        ),
    ];
    for (solver, cfg, files) in runs {
        let o = pairgen(&["run", &write_config(tmp.path(), &format!("{solver}.json"), &cfg)]);
        assert!(o.status.success(), "{solver}: {}", String::from_utf8_lossy(&o.stderr));
        for f in files {
            assert!(tmp.path().join(solver).join(f).exists(), "{solver} missing {f}");
        }
    }
    let mut disorder = base("bdg-real", 4, "periodic");
    disorder["run"]["f"] = json!(0.5);
    disorder["run"]["n_realizations"] = json!(4);
    disorder["output"]["dir"] = json!(tmp.path().join("disorder"));
    let o = pairgen(&["run", &write_config(tmp.path(), "disorder.json", &disorder)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("disorder/nk_avg.csv").exists());
}

#[test]
fn theta_scan_writes_points_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("scan");
    let values: Vec<f64> = (0..9).map(|i| i as f64 * 3.0 * std::f64::consts::PI / 64.0).collect();
    let cfg = json!({"lattice": {"L": 9, "a_Z": 2.0}, "params": {"theta0": 0.0},
                     "run": {"solver": "bogoliubov-k"}, "output": {"dir": out},
                     "scan": {"param": "theta0", "values": values}});
    let path = write_config(tmp.path(), "scan.json", &cfg);
    let o = pairgen(&["scan", &path]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for i in 0..9 {
        assert!(out.join(format!("point_{i:03}/report.json")).exists());
    }
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    // one row per degenerate maximizer
    let params: std::collections::BTreeSet<&str> =
        summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(params.len(), 9);

    let mut empty = cfg.clone();
    empty["scan"]["values"] = json!([]);
    empty["output"]["dir"] = json!(tmp.path().join("empty"));
    let o = pairgen(&["scan", &write_config(tmp.path(), "empty.json", &empty)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!tmp.path().join("empty").exists());
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = json!({"lattice": {"L": 3, "a_Z": 2.0}, "params": {"theta0": 1.0, "eta": 0.3},
                     "run": {"solver": "dtwa", "t_max": 1.0, "n_t": 4, "n_traj": 200, "batch_size": 16}});
    let path = write_config(tmp.path(), "c.json", &cfg);
    let mut payloads = Vec::new();
    for threads in ["1", "3"] {
        let out = tmp.path().join(format!("t{threads}"));
        let o = pairgen(&["run", &path, "--threads", threads, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let files: Vec<Vec<u8>> =
            ["nk_t.csv", "npair_t.csv", "cpm_t.csv"].iter().map(|f| std::fs::read(out.join(f)).unwrap()).collect();
        payloads.push(files);
    }
    assert_eq!(payloads[0], payloads[1]);
}
