//! End-to-end tests of the `phcert` binary: exit codes, output files, and
//! determinism of the emitted artifacts.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_phcert"))
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("phcert-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

#[test]
fn certify_msd1_succeeds_and_is_deterministic() {
    let dir = workdir("certify-msd1");
    let out = dir.to_str().unwrap();
    let args = ["certify", "--model", "msd1", "--out", out];
    let first = run(&args);
    assert!(first.status.success(), "stderr: {}", String::from_utf8_lossy(&first.stderr));
    let cert_path = dir.join("certificate.txt");
    let a = fs::read(&cert_path).unwrap();
    for key in ["epsilon = ", "rate_paper = ", "rate_sound = ", "k1 = ", "k2 = "] {
        assert!(
            String::from_utf8_lossy(&a).contains(key),
            "certificate missing {key}"
        );
    }
    let second = run(&args);
    assert!(second.status.success());
    let b = fs::read(&cert_path).unwrap();
    assert_eq!(a, b, "certificate not byte-identical across runs");
    assert_eq!(first.stdout, second.stdout, "stdout differs across runs");
}

#[test]
fn certify_infeasible_exits_2() {
    // pendulum with weak integral action at the inverted configuration:
    // the shaped potential is not convex there
    let dir = workdir("certify-infeasible");
    let out = run(&[
        "certify", "--model", "pendulum", "--ki", "0.1", "--qr", "3.2",
        "--out", dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_arguments_exit_1() {
    let dir = workdir("bad-args");
    let out = run(&[
        "simulate", "--model", "msd1", "--horizon", "0", "--out", dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let unknown = run(&["demo", "no-such-demo", "--out", dir.to_str().unwrap()]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(
        String::from_utf8_lossy(&unknown.stderr).contains("pera-fig2a"),
        "error should list available demos"
    );
}

#[test]
fn simulate_writes_trajectory_csv() {
    let dir = workdir("simulate-msd1");
    let out = run(&[
        "simulate", "--model", "msd1", "--q0", "1", "--p0", "0", "--horizon", "5",
        "--h", "0.001", "--out", dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,q1,p1,Hd,S,normx"));
    assert_eq!(csv.lines().count(), 5002); // header + 5001 samples
    assert!(!csv.contains('\r'));
    // final sample decayed well below the initial displacement
    let last = csv.lines().last().unwrap();
    let q_final: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!(q_final.abs() < 0.05);
}

#[test]
fn tune_ranks_scenarios_with_s1_first() {
    let dir = workdir("tune-sets");
    let out = run(&[
        "tune", "--model", "pera", "--sets", "s1,s2,s3", "--grid-points", "3",
        "--out", dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let rank_line = stdout
        .lines()
        .find(|l| l.contains("ranking"))
        .expect("ranking line");
    let s1 = rank_line.find("s1").unwrap();
    assert!(s1 < rank_line.find("s2").unwrap());
    assert!(s1 < rank_line.find("s3").unwrap());
    let csv = fs::read_to_string(dir.join("tuning.csv")).unwrap();
    assert!(csv.starts_with("label,beta_max,normA,mu,epsilon,rate_paper,rate_sound,certified"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn tune_grid_search_msd1() {
    let dir = workdir("tune-grid");
    let out = run(&[
        "tune", "--model", "msd1", "--grid", "default", "--out", dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("best = kp"), "best candidate line:\n{stdout}");
}

#[test]
fn config_file_drives_certify() {
    let dir = workdir("config-file");
    // a config file stands in for a model name; it defines the msd1 system
    // symbolically plus gains and region
    let cfg = dir.join("run.cfg");
    fs::write(
        &cfg,
        "# 1-DoF mass-spring-damper\n\
         [model]\n\
         n = 1\n\
         m = 1\n\
         inertia_1_1 = 1\n\
         potential = 2*q1*q1\n\
         damping_1 = 0.5\n\
         [gains]\n\
         kp = 1\n\
         ki = 2\n\
         kd = 0\n\
         q_star = 0\n\
         [region]\n\
         qr = 0.3\n\
         pr = 0.5\n",
    )
    .unwrap();
    let out = run(&[
        "certify", "--model", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.join("certificate.txt")).unwrap();
    // same numbers as the builtin msd1 model
    let dir2 = workdir("config-file-builtin");
    let out2 = run(&[
        "certify", "--model", "msd1", "--kp", "1", "--ki", "2",
        "--out", dir2.to_str().unwrap(),
    ]);
    assert!(out2.status.success());
    let text2 = fs::read_to_string(dir2.join("certificate.txt")).unwrap();
    // the config path differentiates the potential by finite differences,
    // so agreement with the analytic builtin is to FD accuracy only
    let get = |t: &str, k: &str| -> f64 {
        t.lines()
            .find(|l| l.starts_with(&format!("{k} = ")))
            .unwrap()
            .split(" = ")
            .nth(1)
            .unwrap()
            .parse()
            .unwrap()
    };
    for key in ["epsilon", "k1", "k2", "rate_sound"] {
        let (a, b) = (get(&text, key), get(&text2, key));
        assert!(
            (a - b).abs() <= 1e-6 * (1.0 + b.abs()),
            "mismatch on {key}: {a} vs {b}"
        );
    }
}
