use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rotor_cli::error::ErrorRecord;
use rotor_cli::manifest::Manifest;
use tempfile::TempDir;

fn rotor(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rotor")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run_ok(args: &[&str]) -> Output {
    let out = rotor(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn error_record(dir: &Path) -> ErrorRecord {
    serde_json::from_str(&std::fs::read_to_string(dir.join("error.json")).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn map_check_reports_unitary_flux() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("map");
    let output = run_ok(&["map-check", "--out", s(&out)]);
    assert_eq!(String::from_utf8_lossy(&output.stdout).trim(), "unitary / not gauge-reducible");
    assert_eq!(std::fs::read_to_string(out.join("report.txt")).unwrap().trim(), "unitary / not gauge-reducible");
    let manifest = Manifest::read(&out).unwrap();
    manifest.verify(&out).unwrap();
    assert!(manifest.file("lattice.csv").is_some());
}

#[test]
fn pi0_trace_has_peaks_at_six_and_ten() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "trace.toml", "preset = \"pi0-trace\"\nn_disorder = 300\n");
    let out = tmp.path().join("trace");
    run_ok(&["simulate", "--config", s(&config), "--out", s(&out)]);
    let peaks = std::fs::read_to_string(out.join("peaks.csv")).unwrap();
    assert!(peaks.contains("\n6,cbs\n") && peaks.contains("\n10,cfs\n") && peaks.contains("\n16,cbs\n"));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["class"], "orthogonal");
    assert_eq!(summary["first_cbs"], 6);
    assert!(summary["first_cbs_contrast"].as_f64().unwrap() > 0.3);
    assert_eq!(summary["aliasing_ok"], true);
    let contrasts = std::fs::read_to_string(out.join("contrasts.csv")).unwrap();
    let late_cfs: Vec<f64> = contrasts
        .lines()
        .filter(|l| l.contains(",cfs,"))
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .skip(3)
        .collect();
    assert!(late_cfs.iter().all(|&c| c > 0.0), "{late_cfs:?}");
    let series = std::fs::read_to_string(out.join("series.csv")).unwrap();
    assert_eq!(series.lines().next(), Some("t,pi0,p2"));
    assert_eq!(series.lines().count(), 102);
}

#[test]
fn reruns_are_byte_identical_for_any_worker_count() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(
        tmp.path(),
        "c.toml",
        "preset = \"contrast-dynamics\"\nn_disorder = 40\nn_beta = 2\nbeta_sigma_zone = 0.05\ndecoherence_per_kick = 0.01\n",
    );
    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|n| tmp.path().join(n)).collect();
    run_ok(&["contrast", "--config", s(&config), "--seed", "11", "--workers", "1", "--out", s(&dirs[0])]);
    run_ok(&["contrast", "--config", s(&config), "--seed", "11", "--workers", "3", "--out", s(&dirs[1])]);
    run_ok(&["contrast", "--config", s(&config), "--seed", "12", "--workers", "2", "--out", s(&dirs[2])]);
    let a = Manifest::read(&dirs[0]).unwrap();
    let b = Manifest::read(&dirs[1]).unwrap();
    let c = Manifest::read(&dirs[2]).unwrap();
    let strip = |m: &Manifest| {
        let mut m = m.clone();
        if let Some(cfg) = m.config.as_mut() {
            cfg.output_dir = PathBuf::new();
        }
        m.config_sha256.clear();
        m
    };
    assert_eq!(strip(&a), strip(&b));
    for entry in &a.files {
        let x = std::fs::read(dirs[0].join(&entry.path)).unwrap();
        let y = std::fs::read(dirs[1].join(&entry.path)).unwrap();
        assert_eq!(x, y, "{}", entry.path);
    }
    assert_ne!(a.file("series.csv").unwrap().sha256, c.file("series.csv").unwrap().sha256);
    for (dir, m) in dirs.iter().zip([&a, &b, &c]) {
        m.verify(dir).unwrap();
        assert_eq!(m.config.as_ref().unwrap().checksum(), m.config_sha256);
    }
    assert!(a.file("fits.json").is_some());
}

#[test]
fn tampering_is_detected() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("map");
    run_ok(&["map-check", "--out", s(&out)]);
    std::fs::write(out.join("report.txt"), "orthogonal\n").unwrap();
    assert!(Manifest::read(&out).unwrap().verify(&out).is_err());
}

#[test]
fn config_errors_leave_a_record() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "bad.toml", "horizon = 100\n");
    let out = tmp.path().join("bad");
    let output = rotor(&["simulate", "--config", s(&config), "--out", s(&out)]);
    assert_eq!(output.status.code(), Some(2));
    let record = error_record(&out);
    assert_eq!(record.kind, "config");
    assert!(record.message.contains("horizon"));

    let out = tmp.path().join("mismatch");
    let output = rotor(&["beta", "--preset", "pi0-trace", "--out", s(&out)]);
    assert_eq!(output.status.code(), Some(2));
    assert_eq!(error_record(&out).command, "beta");
}

#[test]
fn runtime_errors_leave_a_record() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "c.toml", "preset = \"pi0-trace\"\nlattice_sites = 1000\n");
    let out = tmp.path().join("bad");
    let output = rotor(&["simulate", "--config", s(&config), "--out", s(&out)]);
    assert_eq!(output.status.code(), Some(1));
    assert_eq!(error_record(&out).kind, "engine");
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn beta_runs_merge_into_one_table() {
    let tmp = TempDir::new().unwrap();
    let common = "preset = \"beta-g\"\nn_disorder = 8\nhorizon_kicks = 250\nlattice_sites = 4096\n";
    let runs = [("o.toml", "kick_strength = 4.5\nperiod_kicks = 4\n"), ("u.toml", "kick_strength = 4.0\nperiod_kicks = 4\nantisymmetric = false\n")];
    let mut dirs = Vec::new();
    for (name, extra) in runs {
        let config = write_config(tmp.path(), name, &format!("{common}{extra}"));
        let out = tmp.path().join(name.trim_end_matches(".toml"));
        run_ok(&["beta", "--config", s(&config), "--out", s(&out)]);
        dirs.push(out);
    }
    let m1 = tmp.path().join("m1");
    let m2 = tmp.path().join("m2");
    run_ok(&["merge", s(&dirs[0]), s(&dirs[1]), "--out", s(&m1)]);
    run_ok(&["merge", s(&dirs[1]), s(&dirs[0]), "--out", s(&m2)]);
    let t1 = std::fs::read_to_string(m1.join("beta_g.csv")).unwrap();
    assert_eq!(t1, std::fs::read_to_string(m2.join("beta_g.csv")).unwrap());
    assert_eq!(Manifest::read(&m1).unwrap(), Manifest::read(&m2).unwrap());
    assert!(t1.contains("K4.5_N4_orthogonal,orthogonal,") && t1.contains("K4_N4_unitary,unitary,"));
    assert_eq!(t1.lines().filter(|l| l.starts_with("label,")).count(), 1);
    // merging again into the same place changes nothing
    run_ok(&["merge", s(&dirs[0]), s(&dirs[1]), "--out", s(&m1)]);
    assert_eq!(t1, std::fs::read_to_string(m1.join("beta_g.csv")).unwrap());
}

#[test]
fn merge_refuses_mismatched_runs() {
    let tmp = TempDir::new().unwrap();
    let mk = |name: &str, extra: &str| {
        let config = write_config(tmp.path(), &format!("{name}.toml"), &format!("preset = \"pi0-trace\"\nn_disorder = 4\nhistogram_stride_kicks = 0\n{extra}"));
        let out = tmp.path().join(name);
        run_ok(&["simulate", "--config", s(&config), "--out", s(&out)]);
        out
    };
    let base = mk("base", "");
    let fine = mk("fine", "pi0_bins_per_site = 2\n");
    let other_kbar = mk("kbar", "kbar = 2.0\n");
    let shifted = mk("shifted", "control_phase_rad = 1.2566370614359172\n");

    for (other, needle) in [(&fine, "bin width"), (&other_kbar, "kbar")] {
        let out = tmp.path().join(format!("merge-{needle}"));
        let output = rotor(&["merge", s(&base), s(other), "--out", s(&out)]);
        assert_eq!(output.status.code(), Some(2));
        let record = error_record(&out);
        assert_eq!(record.kind, "merge");
        assert!(record.message.contains(needle), "{}", record.message);
    }
    let out = tmp.path().join("ok");
    run_ok(&["merge", s(&base), s(&shifted), "--out", s(&out)]);
    let table = std::fs::read_to_string(out.join("contrasts.csv")).unwrap();
    assert!(table.starts_with("control_phase_rad,t,kind,contrast,background,stderr\n"));
    assert!(table.lines().any(|l| l.starts_with("0,6,cbs,")));
    assert!(table.lines().any(|l| l.starts_with("1.2566370614359172,10,cbs,")));
}

#[test]
fn contrast_sweep_covers_the_grid() {
    let tmp = TempDir::new().unwrap();
    let config = write_config(tmp.path(), "s.toml", "preset = \"contrast-sweep\"\nn_disorder = 10\nsweep_points = 5\n");
    let out = tmp.path().join("sweep");
    run_ok(&["contrast", "--config", s(&config), "--out", s(&out)]);
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 5);
    // -π, -3π/5, -π/5, π/5, 3π/5: none of them symmetric
    assert!(rows.iter().all(|r| r.split(',').nth(1) == Some("unitary")));
    assert!(rows.iter().all(|r| r.split(',').nth(5) == Some("70")));
}
