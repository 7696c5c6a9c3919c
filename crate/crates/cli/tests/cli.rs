use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn redopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_redopt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Asserts a single-line JSON diagnostic with the given exit code.
fn assert_diagnostic(out: &Output, code: i32) -> Value {
    assert_eq!(out.status.code(), Some(code), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let last = stderr.lines().last().expect("diagnostic line");
    let v: Value = serde_json::from_str(last).expect("diagnostic is JSON");
    assert_eq!(v["exit_code"], code);
    assert_eq!(v["status"], "error");
    v
}

fn without_version(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with("  \"version\":"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn golden_report_on_noiseless_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let res = redopt(&["fit", "--config", path_str(&fixture("noiseless_first_order.ini")), "--out", path_str(&out)]);
    assert!(res.status.success());
    assert!(res.stderr.is_empty());
    let got = std::fs::read_to_string(&out).unwrap();
    let want = std::fs::read_to_string(fixture("noiseless_first_order.report.json")).unwrap();
    assert_eq!(without_version(&got), without_version(&want));
}

#[test]
fn noiseless_fixture_recovers_truth_with_every_method() {
    let dir = tempfile::tempdir().unwrap();
    for method in ["ia", "ib", "full"] {
        let out = dir.path().join(format!("{method}.json"));
        let res = redopt(&[
            "fit",
            "--config",
            path_str(&fixture("noiseless_first_order.ini")),
            "--method",
            method,
            "--out",
            path_str(&out),
        ]);
        assert!(res.status.success(), "{method}");
        let r = read_json(&out);
        assert_eq!(r["method"], method);
        assert!((r["k_star"].as_f64().unwrap() - 0.01).abs() <= 1e-10, "{method}: {}", r["k_star"]);
        assert!((r["params"]["lambda_inf"].as_f64().unwrap() - 0.9).abs() <= 1e-10);
        assert!(r["fd"].as_f64().unwrap() <= 1e-10);
        assert_eq!(r["residuals"].as_array().unwrap().len(), 11);
    }
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let jobs: [(&str, &str, &[&str]); 4] = [
        ("fit", "noiseless_first_order.ini", &[]),
        ("fit", "second_order.ini", &["--method", "ib"]),
        ("fit", "second_order.ini", &["--method", "full"]),
        ("scan", "himmelblau.ini", &[]),
    ];
    for (i, (cmd, cfg, extra)) in jobs.iter().enumerate() {
        let mut reports = Vec::new();
        for threads in ["1", "2", "5"] {
            let out = dir.path().join(format!("{i}-{threads}.json"));
            let mut args: Vec<String> = vec![cmd.to_string(), "--config".into(), path_str(&fixture(cfg)).into()];
            args.extend(["--out".into(), path_str(&out).into(), "--threads".into(), threads.into()]);
            args.extend(extra.iter().map(|s| s.to_string()));
            let args: Vec<&str> = args.iter().map(String::as_str).collect();
            assert!(redopt(&args).status.success(), "{args:?}");
            reports.push(std::fs::read(&out).unwrap());
        }
        assert!(reports.windows(2).all(|w| w[0] == w[1]), "{cmd} {cfg} {extra:?}");
    }
}

#[test]
fn curve_with_two_grid_points() {
    let dir = tempfile::tempdir().unwrap();
    let curve = dir.path().join("curve.csv");
    let res = redopt(&[
        "fit",
        "--config",
        path_str(&fixture("noiseless_first_order.ini")),
        "--out",
        path_str(&dir.path().join("r.json")),
        "--emit-curve",
        path_str(&curve),
        "--grid",
        "2",
    ]);
    assert!(res.status.success());
    let text = std::fs::read_to_string(&curve).unwrap();
    assert!(!text.contains('\r'));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,y_fit,y_exp"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 + 11);
    let grid: Vec<f64> = rows.iter().filter(|r| r[2].is_empty()).map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(grid, vec![0.0, 600.0]);
    let ts: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(ts.windows(2).all(|w| w[0] <= w[1]));
    for r in rows.iter().filter(|r| !r[2].is_empty()) {
        let (fit, exp): (f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap());
        assert!((fit - exp).abs() <= 1e-10);
        // 17 significant digits.
        assert_eq!(r[1].split('e').next().unwrap().replace(['.', '-'], "").len(), 17);
    }
}

#[test]
fn second_order_curve_stays_near_data() {
    let dir = tempfile::tempdir().unwrap();
    let (out, curve) = (dir.path().join("r.json"), dir.path().join("c.csv"));
    let res = redopt(&[
        "fit",
        "--config",
        path_str(&fixture("second_order.ini")),
        "--out",
        path_str(&out),
        "--emit-curve",
        path_str(&curve),
    ]);
    assert!(res.status.success());
    let r = read_json(&out);
    assert_eq!(r["model"]["constants"]["y0"], 0.043);
    let fd = r["fd"].as_f64().unwrap();
    let text = std::fs::read_to_string(&curve).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 200 + 17);
    for row in rows.iter().filter(|r| !r[2].is_empty()) {
        let (fit, exp): (f64, f64) = (row[1].parse().unwrap(), row[2].parse().unwrap());
        assert!((fit - exp).abs() <= 4.0 * fd);
    }
}

#[test]
fn initial_value_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.ini");
    let out = dir.path().join("r.json");
    let fit = |data: &Path| redopt(&["fit", "--config", path_str(&cfg), "--data", path_str(data), "--out", path_str(&out)]);
    let lambda0 = || read_json(&out)["model"]["constants"]["lambda0"].as_f64().unwrap();

    // The t = 0 row wins over the config.
    std::fs::write(&cfg, "model = first-order\nk_min = 0.001\nk_max = 0.1\n[first-order]\nlambda0 = 0.2\n").unwrap();
    assert!(fit(&fixture("noiseless_first_order.csv")).status.success());
    assert!((lambda0() - 0.1).abs() < 1e-15);

    let no_zero = dir.path().join("d.csv");
    std::fs::write(&no_zero, "60,0.46\n120,0.66\n180,0.77\n").unwrap();
    let res = fit(&no_zero);
    assert!(res.status.code() != Some(1), "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(lambda0(), 0.2);

    std::fs::write(&cfg, "model = first-order\nk_min = 0.001\nk_max = 0.1\n").unwrap();
    std::fs::remove_file(&out).unwrap();
    assert_diagnostic(&fit(&no_zero), 1);
    assert!(!out.exists());
}

#[test]
fn usage_and_parse_errors_exit_one_without_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let cfg = dir.path().join("c.ini");
    for text in [
        "[job\nmodel = first-order\n",
        "model = first-order\nk_mni = 0.1\n",
        "model = first-order\ndata = missing.csv\n",
        "model = first-order\nmethod = scan\ndata = x.csv\n",
        "model = himmelblau\ndata = x.csv\n",
        "model = first-order\n",
    ] {
        std::fs::write(&cfg, text).unwrap();
        std::fs::write(dir.path().join("x.csv"), "0,1\n1,2\n2,3\n").unwrap();
        let res = redopt(&["fit", "--config", path_str(&cfg), "--out", path_str(&out)]);
        assert_diagnostic(&res, 1);
        assert!(!out.exists(), "{text}");
    }
    let bad_data = dir.path().join("bad.csv");
    std::fs::write(&bad_data, "0,0.043\nbad,1\n").unwrap();
    std::fs::write(&cfg, "model = first-order\n").unwrap();
    let res = redopt(&["fit", "--config", path_str(&cfg), "--data", path_str(&bad_data)]);
    let v = assert_diagnostic(&res, 1);
    assert_eq!(v["kind"], "parse_error");
    assert!(v["message"].as_str().unwrap().contains("line 2"));

    assert_diagnostic(&redopt(&["fit"]), 1);
    assert_diagnostic(&redopt(&["frobnicate"]), 1);
    assert!(redopt(&["--help"]).status.success());
}

#[test]
fn solver_failure_exits_two_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.ini");
    std::fs::write(&cfg, "model = first-order\nk_min = 0.02\nk_max = 0.05\ngrid_size = 10\n").unwrap();
    let (out, curve) = (dir.path().join("r.json"), dir.path().join("c.csv"));
    let res = redopt(&[
        "fit",
        "--config",
        path_str(&cfg),
        "--data",
        path_str(&fixture("noiseless_first_order.csv")),
        "--out",
        path_str(&out),
        "--emit-curve",
        path_str(&curve),
    ]);
    let v = assert_diagnostic(&res, 2);
    assert_eq!(v["kind"], "no_root_in_range");
    let r = read_json(&out);
    assert_eq!(r["status"], "error");
    assert_eq!(r["error"]["kind"], "no_root_in_range");
    assert!(r.get("k_star").is_none());
    assert!(!curve.exists());
}

#[test]
fn scan_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.ini");
    let out = dir.path().join("r.json");
    let scan = |text: &str| {
        std::fs::write(&cfg, text).unwrap();
        redopt(&["scan", "--config", path_str(&cfg), "--out", path_str(&out)])
    };

    assert!(scan("model = bowl\n").status.success());
    let r = read_json(&out);
    let recs = r["records"].as_array().unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0]["kind"], "min");
    assert!((recs[0]["k_i"].as_f64().unwrap() - 3.0).abs() < 1e-8);
    assert!((recs[0]["p_at_k"]["p"].as_f64().unwrap() - 2.0).abs() < 1e-8);

    // Minimum outside the scanned range: empty but successful.
    assert!(scan("model = bowl\nk_min = 4\nk_max = 6\n").status.success());
    let r = read_json(&out);
    assert_eq!(r["status"], "ok");
    assert!(r["records"].as_array().unwrap().is_empty());
    assert_eq!(r["cost"]["bounds"][0], serde_json::json!([4.0, 6.0]));

    std::fs::remove_file(&out).unwrap();
    assert_diagnostic(&scan("model = bowl\nk_min = 3\nk_max = 1\n"), 1);
    assert_diagnostic(&scan("model = rosenbrock\n"), 1);
    assert_diagnostic(&scan("model = bowl\nmethod = ia\n"), 1);
    assert_diagnostic(&scan("model = bowl\nscan_coordinate = 2\n"), 1);
    assert!(!out.exists());
}

#[test]
fn himmelblau_scan_lists_the_four_minima() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let res = redopt(&["scan", "--config", path_str(&fixture("himmelblau.ini")), "--out", path_str(&out)]);
    assert!(res.status.success());
    let r = read_json(&out);
    let recs = r["records"].as_array().unwrap();
    let ks: Vec<f64> = recs.iter().map(|r| r["k_i"].as_f64().unwrap()).collect();
    assert!(ks.windows(2).all(|w| w[0] < w[1]));
    let mins: Vec<f64> = recs
        .iter()
        .filter(|r| r["kind"] == "min")
        .map(|r| r["k_i"].as_f64().unwrap())
        .collect();
    let known = [-3.779310253377747, -2.805118086952745, 3.0, 3.584428340330492];
    assert_eq!(mins.len(), 4);
    for (m, k) in mins.iter().zip(known) {
        assert!((m - k).abs() < 1e-6, "{m} vs {k}");
    }
}

#[test]
fn provenance_is_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let cfg = path_str(&fixture("himmelblau.ini")).to_owned();
    assert!(redopt(&["scan", "--config", &cfg, "--out", path_str(&out)]).status.success());
    assert!(read_json(&out).get("provenance").is_none());
    assert!(redopt(&["scan", "--config", &cfg, "--out", path_str(&out), "--provenance"]).status.success());
    assert!(read_json(&out)["provenance"]["unix_time"].as_u64().unwrap() > 0);
}
