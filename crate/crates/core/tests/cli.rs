use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tfd_relax::config::{parse_config, Scenario};
use tfd_relax::run::{emit_plot_scripts, RunError};

const PAPER: &str = "N_total = 10\nbeta = 1\nDelta = 10\ngbar_before = 0.2\ngbar_after = 0.1\n";

fn tfd(dir: &Path, scenario: &str, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_tfd-relax"))
        .arg(scenario)
        .arg("--config")
        .arg(&cfg)
        .arg("--output")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn column(path: &Path, col: usize) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
        .collect()
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .map(|rd| {
            rd.map(|e| e.unwrap().file_name().into_string().unwrap())
                .collect()
        })
        .unwrap_or_default();
    v.sort();
    v
}

#[test]
fn quench_writes_figures_in_band() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tfd(tmp.path(), "quench", PAPER, &[]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let dir = tmp.path().join("out");
    for f in [
        "timeseries.csv",
        "fig2.csv",
        "fig3a.csv",
        "fig3b.csv",
        "fig2.gp",
        "fig3b.gp",
        "metadata.txt",
        "config.resolved",
    ] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let v = column(&dir.join("fig2.csv"), 1);
    assert_eq!(v.len(), 3001);
    assert!(v.iter().all(|x| (0.498..=0.502).contains(x)));

    let ts = fs::read_to_string(dir.join("timeseries.csv")).unwrap();
    assert!(ts.lines().all(|l| l.split(',').count() == 29));
    assert!(ts.starts_with("tJ,abs_v_p1_g,abs_v_p1_o,abs_v_p1_e,"));
    assert!(!ts.contains('\r'));

    let gp = fs::read_to_string(dir.join("fig2.gp")).unwrap();
    assert!(gp.contains("set yrange [0.498:0.502]"));
    let gp = fs::read_to_string(dir.join("fig3b.gp")).unwrap();
    assert!(gp.contains("set logscale y") && gp.contains("set yrange [1e-4:1e0]"));
    let meta = fs::read_to_string(dir.join("metadata.txt")).unwrap();
    assert!(meta.contains("mu = -1.50100477"));
}

#[test]
fn identical_configs_give_identical_csvs() {
    let cfg = format!("{PAPER}t_max = 20\n");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(tfd(a.path(), "quench", &cfg, &[]).status.success());
    assert!(tfd(b.path(), "quench", &cfg, &[]).status.success());
    for f in ["timeseries.csv", "fig2.csv", "fig3a.csv", "fig3b.csv"] {
        let x = fs::read(a.path().join("out").join(f)).unwrap();
        let y = fs::read(b.path().join("out").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn sweep_is_monotone_and_parallel_agrees() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(tfd(a.path(), "sweep-g", PAPER, &[]).status.success());
    assert!(tfd(b.path(), "sweep-g", PAPER, &["--parallel"])
        .status
        .success());
    let u = column(&a.path().join("out/fig1.csv"), 1);
    assert_eq!(u.len(), 7);
    assert!(u.iter().all(|x| (0.4994..=0.5).contains(x)));
    assert!(u.windows(2).all(|w| w[1] <= w[0]));
    let up = column(&b.path().join("out/fig1.csv"), 1);
    for (x, y) in u.iter().zip(&up) {
        assert!((x - y).abs() < 1e-12);
    }
    let gp = fs::read_to_string(a.path().join("out/fig1.gp")).unwrap();
    assert!(gp.contains("set yrange [0.4994:0.5]"));
}

#[test]
fn validate_reports_all_pass() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tfd(tmp.path(), "validate", PAPER, &[]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(tmp.path().join("out/validate.txt")).unwrap();
    assert!(text.lines().count() >= 5);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn init_eq_and_memory_check_tables() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(tfd(tmp.path(), "init-eq", PAPER, &[]).status.success());
    let mu = column(&tmp.path().join("out/equilibrium.csv"), 1);
    assert_eq!(mu.len(), 1);
    assert!((mu[0] + 1.501).abs() < 1e-3);
    assert!(tfd(tmp.path(), "memory-check", PAPER, &[]).status.success());
    let table = fs::read_to_string(tmp.path().join("out/memory_check.csv")).unwrap();
    let labels: Vec<&str> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(labels.len(), 5);
    assert_eq!(&labels[3..], ["extrapolated", "markovian"]);
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tfd(tmp.path(), "quench", "# empty\n", &[]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    for key in ["N_total", "beta", "Delta", "gbar_before", "gbar_after"] {
        assert!(msg.contains(key), "{msg}");
    }
    let out = tfd(
        tmp.path(),
        "quench",
        &PAPER.replace("Delta = 10", "Delta = -1"),
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Delta"));
}

#[test]
fn failures_map_to_exit_codes_and_leave_no_files() {
    let tmp = tempfile::tempdir().unwrap();
    // no in-band chemical potential reaches such a small particle number
    let cfg = "N_total = 1e-9\nbeta = 1\nDelta = 10\ngbar_before = 0\ngbar_after = 0\n";
    let out = tfd(tmp.path(), "quench", cfg, &[]);
    assert_eq!(out.status.code(), Some(4));
    assert!(files_in(&tmp.path().join("out")).is_empty());

    // the self-consistent step cannot reach this tolerance
    let out = tfd(
        tmp.path(),
        "quench",
        &format!("{PAPER}sc_tol = 1e-300\nsc_max_iter = 3\n"),
        &[],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at tJ = 0"));
    assert!(files_in(&tmp.path().join("out")).is_empty());
}

#[test]
fn plot_scripts_need_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(matches!(
        emit_plot_scripts(tmp.path()),
        Err(RunError::MissingInput(_))
    ));
    assert!(files_in(tmp.path()).is_empty());
    fs::write(tmp.path().join("fig2.csv"), "tJ,a,b\n0,0.5,0.5\n").unwrap();
    let written = emit_plot_scripts(tmp.path()).unwrap();
    assert_eq!(written, vec![tmp.path().join("fig2.gp")]);
}

#[test]
fn resolved_config_parses_back() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(
        tfd(tmp.path(), "init-eq", &format!("{PAPER}dt = 0.02\n"), &[])
            .status
            .success()
    );
    let echo = fs::read_to_string(tmp.path().join("out/config.resolved")).unwrap();
    let cfg = parse_config(&echo).unwrap();
    assert_eq!(cfg.scenario, Scenario::InitEq);
    assert_eq!(cfg.evolution.dt, 0.02);
    assert_eq!(cfg.output_dir, tmp.path().join("out"));
    assert_eq!(parse_config(&cfg.render()).unwrap(), cfg);
}
