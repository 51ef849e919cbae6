use std::process::{Command, Output};

use mlmc::experiments::{read_csv, CostRow, EstimateRow, VarianceRow, WorkRow};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlmc-bench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn body(text: &str) -> &str {
    assert!(text.starts_with("# mlmc-bench "), "missing version stamp: {text}");
    text.split_once('\n').unwrap().1
}

#[test]
fn cost_scan_is_thread_count_independent() {
    let args = |threads: &'static str| {
        vec![
            "cost-scan", "--scheme", "euler", "--scheme", "antithetic", "--scheme", "approx-milstein",
            "--refine", "2", "--refine", "4", "--eps", "0.01", "--eps", "0.003", "--seed", "17",
            "--threads", threads,
        ]
    };
    let one = bench(&args("1"));
    let eight = bench(&args("8"));
    assert_eq!(one.status.code(), Some(0), "{}", String::from_utf8_lossy(&one.stderr));
    assert_eq!(eight.status.code(), Some(0));
    let (a, b) = (String::from_utf8(one.stdout).unwrap(), String::from_utf8(eight.stdout).unwrap());
    assert_eq!(body(&a), body(&b));
    let rows: Vec<CostRow> = read_csv(a.as_bytes()).unwrap();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.converged));
}

#[test]
fn writes_files_that_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("var.csv");
    let out = bench(&[
        "variance-scan", "--scheme", "antithetic", "--refine", "2", "--samples", "2000", "--levels", "1-3",
        "--out", path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<VarianceRow> = read_csv(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    assert_eq!(rows.iter().map(|r| r.level).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert!(rows.iter().all(|r| r.samples == 2000 && r.variance > 0.0));

    let path = dir.path().join("work.csv");
    let out = bench(&[
        "work-profile", "--scheme", "euler", "--scheme", "antithetic", "--ito-linearize", "--refine", "2",
        "--eps", "0.003", "--out", path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let rows: Vec<WorkRow> = read_csv(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    for scheme in ["euler+ito", "antithetic+ito"] {
        let fractions: Vec<f64> = rows.iter().filter(|r| r.scheme == scheme).map(|r| r.fraction).collect();
        assert!((fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(fractions[0], 0.0);
    }
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    std::fs::write(
        &cfg,
        "# gbm oracle\nmodel = gbm\npayoff = linear\nscheme = euler, milstein\nrefine = 2\neps = 0.5\nsigma = 0.2\n",
    )
    .unwrap();
    let out = bench(&["estimate", "--config", cfg.to_str().unwrap(), "--eps", "0.005", "--seed", "4"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<EstimateRow> = read_csv(out.stdout.as_slice()).unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert_eq!(r.epsilon, 0.005);
        assert!((r.estimate - 0.125f64.exp()).abs() < 3.0 * 0.005, "{r:?}");
    }
}

#[test]
fn configuration_errors_exit_with_one() {
    for args in [
        vec!["estimate", "--model", "cir"],
        vec!["estimate", "--scheme", "rk4"],
        vec!["estimate", "--payoff", "call", "--ito-linearize", "--eps", "0.01"],
        vec!["estimate", "--scheme", "milstein", "--eps", "0.01"],
        vec!["estimate", "--param", "eta"],
        vec!["estimate", "--refine", "1"],
        vec!["estimate", "--config", "/nonexistent/file.conf"],
        vec!["no-such-subcommand"],
    ] {
        let out = bench(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(bench(&["--help"]).status.code(), Some(0));
}

#[test]
fn non_convergence_exits_with_two() {
    // deterministic paths keep the run cheap; the bias never drops below 1e-9 by level 2
    let out = bench(&[
        "cost-scan", "--model", "gbm", "--payoff", "linear", "--param", "sigma=0", "--scheme", "euler",
        "--refine", "2", "--eps", "1e-9", "--max-level", "2",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<CostRow> = read_csv(out.stdout.as_slice()).unwrap();
    assert!(!rows[0].converged);
    assert_eq!(rows[0].final_level, 2);
}
