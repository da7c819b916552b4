use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fomcell(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fomcell"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = fomcell(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json_lines(s: &str) -> Vec<Value> {
    s.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn error_json(out: &Output) -> Value {
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(err.lines().last().unwrap()).unwrap_or_else(|_| panic!("not JSON: {err}"))
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let soc: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
        let v: Vec<f64> = soc.iter().map(|s| 3.3 + 0.8 * s + 0.05 * (6.0 * s).sin()).collect();
        let model = serde_json::json!({
            "R0": 1.2e-3,
            "Qn": 36000.0,
            "T": 1.0,
            "sign": "charge-positive",
            "branches": [{"R": 2e-3, "C": 15000.0, "alpha": 0.7}],
            "ocv": {"soc": soc, "v": v},
        });
        std::fs::write(dir.path().join("truth.json"), model.to_string()).unwrap();
        let hppc = serde_json::json!({
            "kind": "hppc",
            "pulse_current": -40.0,
            "pulse_duration": 30.0,
            "relax_duration": 400.0,
            "soc_steps": [0.8, 0.6, 0.4],
            "settle": 200.0,
            "T": 1.0,
            "soc0": 0.8,
            "method": "analytic-per-interval",
            "tol": 1e-12,
        });
        std::fs::write(dir.path().join("hppc.json"), hppc.to_string()).unwrap();
        let drive = serde_json::json!({"kind": "drive_cycle", "samples": 600, "peak_current": 60.0, "T": 1.0, "soc0": 0.5});
        std::fs::write(dir.path().join("drive.json"), drive.to_string()).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn gen(&self, protocol: &str, out: &str, extra: &[&str]) -> String {
        let mut args = vec![
            "gen".to_string(),
            "--model".into(),
            self.p("truth.json"),
            "--protocol".into(),
            self.p(protocol),
            "--out".into(),
            self.p(out),
            "--truth".into(),
            self.p(&format!("{out}.truth.json")),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
    }
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn ml_eval_prints_one_object_per_argument() {
    let out = ok(&["ml-eval", "--alpha", "1", "--z", "-1", "--z", "0.5"]);
    let lines = json_lines(&out);
    assert_eq!(lines.len(), 2);
    assert!((lines[0]["value"].as_f64().unwrap() - (-1f64).exp()).abs() < 1e-6);
    assert!(lines[0]["converged"].as_bool().unwrap());
    assert!(lines[1]["terms_used"].as_u64().unwrap() > 0);

    let two = json_lines(&ok(&["ml-eval", "--alpha", "0.8", "--beta", "0.8", "--z", "0", "--tol", "1e-12"]));
    assert!((two[0]["value"].as_f64().unwrap() - 1.0 / 1.1642297137253033).abs() < 1e-12);
}

#[test]
fn errors_are_json_with_a_kind() {
    let out = fomcell(&["ml-eval", "--alpha", "1.5", "--z", "-1"]);
    assert_eq!(error_json(&out)["kind"], "domain");

    let out = fomcell(&["ml-eval", "--alpha", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["kind"], "usage");

    let out = fomcell(&["evaluate", "--pred", "/nonexistent/a.csv", "--meas", "/nonexistent/b.csv"]);
    let e = error_json(&out);
    assert!(e["kind"] == "io" || e["kind"] == "csv", "{e}");
}

#[test]
fn generate_then_identify_recovers_the_truth() {
    let f = Fixture::new();
    let info = json_lines(&f.gen("hppc.json", "hppc.csv", &["--ocv-out", &f.p("ocv.csv")]));
    assert_eq!(info[0]["pulses"], 3);
    assert!(read(&f.path("hppc.csv")).starts_with("t,i,v,v_true\n"));
    let truth: Value = serde_json::from_str(&read(&f.path("hppc.csv.truth.json"))).unwrap();
    assert_eq!(truth["pulses"].as_array().unwrap().len(), 3);

    let out = ok(&[
        "identify",
        "--trace",
        &f.p("hppc.csv"),
        "--ocv",
        &f.p("ocv.csv"),
        "--branches",
        "1",
        "--soc0",
        "0.8",
        "--capacity-ah",
        "10",
        "--out",
        &f.p("fitted.json"),
    ]);
    let fits = json_lines(&out);
    assert_eq!(fits.len(), 3);
    for (k, fit) in fits.iter().enumerate() {
        assert_eq!(fit["index"], k);
        assert!(fit["converged"].as_bool().unwrap());
        let p = &fit["params"][0];
        assert!((p["R"].as_f64().unwrap() / 2e-3 - 1.0).abs() < 1e-3, "{fit}");
        assert!((p["tau"].as_f64().unwrap() / 30.0 - 1.0).abs() < 1e-3, "{fit}");
        assert!((p["alpha"].as_f64().unwrap() / 0.7 - 1.0).abs() < 1e-3, "{fit}");
    }
    let doc: Value = serde_json::from_str(&read(&f.path("fitted.json"))).unwrap();
    assert_eq!(doc["segments"].as_array().unwrap().len(), 3);
    assert_eq!(doc["T"], 1.0);
    assert_eq!(doc["sign"], "charge-positive");
}

#[test]
fn simulate_methods_and_evaluate() {
    let f = Fixture::new();
    f.gen("drive.json", "drive.csv", &[]);
    let mut rmse = Vec::new();
    for method in ["caputo", "gl", "analytic"] {
        let out = f.p(&format!("sim_{method}.csv"));
        let summary = json_lines(&ok(&[
            "simulate",
            "--model",
            &f.p("truth.json"),
            "--trace",
            &f.p("drive.csv"),
            "--out",
            &out,
            "--method",
            method,
            "--soc0",
            "0.5",
        ]));
        assert_eq!(summary[0]["samples"], 600);
        assert!(read(Path::new(&out)).starts_with("t,i,v,soc,u1\n"));
        let r = json_lines(&ok(&["evaluate", "--pred", &out, "--meas", &f.p("drive.csv"), "--meas-column", "v_true"]));
        rmse.push(r[0]["rmse"].as_f64().unwrap());
    }
    // the generator's default method is the recursion itself
    assert!(rmse[0] < 1e-12, "{rmse:?}");
    assert!(rmse[1] > 0.0 && rmse[2] > 0.0 && rmse[1] < 0.05 && rmse[2] < 0.05, "{rmse:?}");
}

#[test]
fn benchmark_reports_buffer_counts_and_config_defaults() {
    let f = Fixture::new();
    f.gen("drive.json", "drive.csv", &[]);
    let base = [
        "benchmark",
        "--model",
        &f.p("truth.json"),
        "--trace",
        &f.p("drive.csv"),
        "--soc0",
        "0.5",
        "--repeats",
        "1",
    ];
    let r = json_lines(&ok(&base))[0].clone();
    assert_eq!(r["caputo"]["retained_per_branch"], 2);
    assert_eq!(r["gl"]["retained_per_branch"], 64);
    assert_eq!(r["steps"], 599);

    std::fs::write(f.path("cfg.json"), r#"{"memory": 16, "threads": 1}"#).unwrap();
    let cfg = f.p("cfg.json");
    let mut args = base.to_vec();
    args.extend(["--config", &cfg]);
    assert_eq!(json_lines(&ok(&args))[0]["gl"]["retained_per_branch"], 16);
    args.extend(["--memory", "32", "--out", "both"]);
    let both = f.p("both.csv");
    *args.last_mut().unwrap() = &both;
    assert_eq!(json_lines(&ok(&args))[0]["gl"]["retained_per_branch"], 32);
    assert!(read(Path::new(&both)).starts_with("t,i,v_caputo,v_gl\n"));

    std::fs::write(f.path("bad.json"), r#"{"memroy": 16}"#).unwrap();
    let bad = f.p("bad.json");
    let mut args = base.to_vec();
    args.extend(["--config", &bad]);
    assert_eq!(error_json(&fomcell(&args))["kind"], "json");
}

#[test]
fn generation_is_deterministic_and_seed_flag_wins() {
    let f = Fixture::new();
    let noisy = serde_json::json!({"kind": "drive_cycle", "samples": 200, "T": 1.0, "soc0": 0.5, "noise_sigma": 1e-3, "seed": 3});
    std::fs::write(f.path("noisy.json"), noisy.to_string()).unwrap();
    f.gen("noisy.json", "a.csv", &[]);
    f.gen("noisy.json", "b.csv", &[]);
    f.gen("noisy.json", "c.csv", &["--seed", "4"]);
    assert_eq!(read(&f.path("a.csv")), read(&f.path("b.csv")));
    assert_ne!(read(&f.path("a.csv")), read(&f.path("c.csv")));
    let truth: Value = serde_json::from_str(&read(&f.path("c.csv.truth.json"))).unwrap();
    assert_eq!(truth["spec"]["seed"], 4);
}

#[test]
fn drive_cycle_template_from_csv() {
    let f = Fixture::new();
    std::fs::write(f.path("cycle.csv"), "t,i\n0,10\n5,-20\n10,0\n").unwrap();
    f.gen("drive.json", "tpl.csv", &["--cycle", &f.p("cycle.csv")]);
    let text = read(&f.path("tpl.csv"));
    let currents: Vec<f64> = text
        .lines()
        .skip(1)
        .take(11)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(currents, vec![10.0, 10.0, 10.0, 10.0, 10.0, -20.0, -20.0, -20.0, -20.0, -20.0, 10.0]);

    let out = fomcell(&[
        "gen",
        "--model",
        &f.p("truth.json"),
        "--protocol",
        &f.p("hppc.json"),
        "--out",
        &f.p("x.csv"),
        "--truth",
        &f.p("x.json"),
        "--cycle",
        &f.p("cycle.csv"),
    ]);
    assert_eq!(error_json(&out)["kind"], "other");
}
