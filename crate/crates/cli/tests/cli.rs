use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kreinmap"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn scalar_block(re: f64, im: f64) -> Value {
    json!([[[re, im]]])
}

fn accelerant_file(dir: &Path, name: &str, n: usize, f: impl Fn(f64) -> (f64, f64)) -> PathBuf {
    let data: Vec<Value> = (0..=4 * n)
        .map(|k| {
            let (re, im) = f(-1.0 + k as f64 / (2 * n) as f64);
            scalar_block(re, im)
        })
        .collect();
    let v = json!({"kind": "accelerant", "r": 1, "N": n, "domain": [-1, 1], "data": data, "meta": name});
    let p = dir.join(name);
    std::fs::write(&p, v.to_string()).unwrap();
    p
}

fn potential_file(
    dir: &Path,
    name: &str,
    n: usize,
    plus: impl Fn(f64) -> f64,
    minus: impl Fn(f64) -> f64,
) -> PathBuf {
    let side = |f: &dyn Fn(f64) -> f64| -> Vec<Value> {
        (0..=n).map(|i| scalar_block(f(i as f64 / n as f64), 0.0)).collect()
    };
    let v = json!({"kind": "potential", "r": 1, "N": n, "domain": [0, 1],
                   "data": [side(&plus), side(&minus)], "meta": ""});
    let p = dir.join(name);
    std::fs::write(&p, v.to_string()).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn theta_of_constant_matches_closed_form() {
    let d = TempDir::new().unwrap();
    let h = accelerant_file(d.path(), "h.json", 200, |_| (0.5, 0.0));
    let out = d.path().join("q.json");
    let o = run(&["theta", "--in", s(&h), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("accelerant margin"));
    let q = read_json(&out);
    assert_eq!(q["kind"], "potential");
    let q0 = &q["data"][0][0][0][0];
    assert!(q0[0].as_f64().unwrap().abs() < 1e-3);
    assert!((q0[1].as_f64().unwrap() + 0.5).abs() < 1e-3);
}

#[test]
fn theta_rejects_non_accelerant_with_critical_alpha() {
    let d = TempDir::new().unwrap();
    let h = accelerant_file(d.path(), "h.json", 40, |_| (-1.25, 0.0));
    let o = run(&["theta", "--in", s(&h), "--out", s(&d.path().join("q.json"))]);
    assert_eq!(code(&o), 2);
    let msg = stderr(&o);
    let alpha: f64 = msg
        .split("alpha = ")
        .nth(1)
        .and_then(|t| t.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((alpha - 0.8).abs() < 0.05, "{msg}");
}

#[test]
fn corrupt_and_missing_inputs_exit_3() {
    let d = TempDir::new().unwrap();
    let empty = d.path().join("empty.json");
    std::fs::write(&empty, "").unwrap();
    let out = d.path().join("o.json");
    assert_eq!(code(&run(&["theta", "--in", s(&empty), "--out", s(&out)])), 3);
    let garbage = d.path().join("g.json");
    std::fs::write(&garbage, "{\"kind\": \"accelerant\", \"r\": 1").unwrap();
    assert_eq!(code(&run(&["upsilon", "--in", s(&garbage), "--out", s(&out)])), 3);
    assert_eq!(code(&run(&["check-accelerant", "--in", s(&d.path().join("nope.json"))])), 3);
    assert_eq!(code(&run(&["theta", "--bogus"])), 3);
}

#[test]
fn decimation_only_between_nested_grids() {
    let d = TempDir::new().unwrap();
    let h = accelerant_file(d.path(), "h.json", 40, |x| (0.2 * x, 0.0));
    let out = d.path().join("q.json");
    let o = run(&["theta", "--in", s(&h), "--out", s(&out), "--n", "20"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(read_json(&out)["N"], 20);
    let o = run(&["theta", "--in", s(&h), "--out", s(&out), "--n", "16"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn upsilon_of_zero_is_zero() {
    let d = TempDir::new().unwrap();
    let q = potential_file(d.path(), "q.json", 16, |_| 0.0, |_| 0.0);
    let out = d.path().join("h.json");
    let o = run(&["upsilon", "--in", s(&q), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("eta_spread"));
    let h = read_json(&out);
    assert_eq!(h["kind"], "accelerant");
    for b in h["data"].as_array().unwrap() {
        assert_eq!(b[0][0], json!([0.0, 0.0]));
    }
}

#[test]
fn theta_then_upsilon_recovers_h() {
    let d = TempDir::new().unwrap();
    let h = accelerant_file(d.path(), "h.json", 200, |_| (0.5, 0.0));
    let q = d.path().join("q.json");
    let back = d.path().join("back.json");
    assert_eq!(code(&run(&["theta", "--in", s(&h), "--out", s(&q)])), 0);
    let o = run(&["upsilon", "--in", s(&q), "--out", s(&back)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = read_json(&back);
    let vals = v["data"].as_array().unwrap();
    let l1: f64 = vals.iter().map(|b| (b[0][0][0].as_f64().unwrap() - 0.5).abs()).sum::<f64>() / vals.len() as f64;
    assert!(l1 / 0.5 < 5e-3, "{l1}");
}

#[test]
fn diagonal_potential_blocks_are_rejected() {
    let d = TempDir::new().unwrap();
    let n = 8;
    let data: Vec<Value> = (0..=n)
        .map(|_| json!([[[0.1, 0.0], [0.3, 0.0]], [[0.2, 0.0], [0.0, 0.0]]]))
        .collect();
    let v = json!({"kind": "potential", "r": 1, "N": n, "domain": [0, 1], "data": data, "meta": ""});
    let p = d.path().join("q.json");
    std::fs::write(&p, v.to_string()).unwrap();
    let o = run(&["upsilon", "--in", s(&p), "--out", s(&d.path().join("h.json"))]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("QJ = -JQ"));
}

#[test]
fn check_accelerant_exit_codes_and_csv() {
    let d = TempDir::new().unwrap();
    let zero = accelerant_file(d.path(), "z.json", 16, |_| (0.0, 0.0));
    assert_eq!(code(&run(&["check-accelerant", "--in", s(&zero)])), 0);
    let bad = accelerant_file(d.path(), "b.json", 16, |_| (-1.25, 0.0));
    assert_eq!(code(&run(&["check-accelerant", "--in", s(&bad)])), 2);
    let half = accelerant_file(d.path(), "h.json", 16, |_| (0.5, 0.0));
    let o = run(&["check-accelerant", "--in", s(&half), "--csv"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("alpha,sigma_min,sigma_max"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 16);
    assert!(rows.iter().all(|r| r[1] > 0.4));
}

#[test]
fn roundtrip_report_and_tolerance() {
    let d = TempDir::new().unwrap();
    let q = potential_file(d.path(), "q.json", 64, |x| 0.3 * (1.0 + x), |_| 0.2);
    let o = run(&["roundtrip", "--in", s(&q), "--ladder", "16,32,64", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rep["command"], "roundtrip");
    assert_eq!(rep["seed"], 3);
    assert_eq!(rep["ladder"], json!([16, 32, 64]));
    let o = run(&["roundtrip", "--in", s(&q), "--ladder", "16,32,64", "--tol", "1e-12"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("N64.rel_error"));
    assert_eq!(code(&run(&["roundtrip", "--in", s(&q), "--ladder", "24"])), 3);
}

#[test]
fn verify_zero_and_smooth_potentials() {
    let d = TempDir::new().unwrap();
    let zero = potential_file(d.path(), "z.json", 16, |_| 0.0, |_| 0.0);
    let o = run(&["verify", "--in", s(&zero)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep: Value = serde_json::from_str(&stdout(&o)).unwrap();
    for e in rep["report"]["entries"].as_array().unwrap() {
        assert!(e["value"].as_f64().unwrap() <= 1e-10, "{e}");
    }
    let smooth = potential_file(d.path(), "s.json", 64, |x| 0.3 * (1.0 + x), |_| 0.2);
    let kernel = d.path().join("k.json");
    let o = run(&["verify", "--in", s(&smooth), "--lambda", "1+0.5i", "--kernel-out", s(&kernel)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let k = read_json(&kernel);
    assert_eq!(k["kind"], "kernel");
    assert_eq!(k["data"].as_array().unwrap().len(), 65 * 65);
}

#[test]
fn verify_names_failing_residual_for_step_potential() {
    let d = TempDir::new().unwrap();
    let step = potential_file(d.path(), "s.json", 32, |x| if x < 0.5 { 0.0 } else { 5.0 }, |_| 0.0);
    let o = run(&["verify", "--in", s(&step)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("FAILED A"), "{}", stderr(&o));
}

#[test]
fn verify_accelerant_adds_forward_checks() {
    let d = TempDir::new().unwrap();
    let h = accelerant_file(d.path(), "h.json", 32, |x| (0.3 * (-x * x).exp(), 0.1 * x));
    let o = run(&["verify", "--in", s(&h)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let names: Vec<&str> = rep["report"]["entries"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["name"].as_str().unwrap())
        .collect();
    for want in ["verR", "GLM_L_h", "Q.AK", "Q.KL_left"] {
        assert!(names.contains(&want), "{names:?}");
    }
}

fn parse_sections(text: &str) -> Vec<(String, Vec<Vec<f64>>)> {
    let mut out: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    for line in text.lines() {
        if let Some(l) = line.strip_prefix("# lambda = ") {
            out.push((l.to_string(), Vec::new()));
        } else if !line.is_empty() && !line.starts_with('i') {
            out.last_mut().unwrap().1.push(line.split(',').map(|x| x.parse().unwrap()).collect());
        }
    }
    out
}

#[test]
fn solve_dirac_free_evolution() {
    let d = TempDir::new().unwrap();
    let q = potential_file(d.path(), "q.json", 20, |_| 0.0, |_| 0.0);
    let csv = d.path().join("y.csv");
    let o = run(&["solve-dirac", "--in", s(&q), "--lambda", "1", "--lambda", "0", "--out", s(&csv)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let sections = parse_sections(&std::fs::read_to_string(&csv).unwrap());
    assert_eq!(sections.len(), 2);
    assert_eq!(sections[0].0, "1+0i");
    for row in &sections[0].1 {
        let x = row[1];
        assert!((row[2] - x.cos()).abs() < 1e-8 && (row[3] - x.sin()).abs() < 1e-8);
    }
    for row in &sections[1].1 {
        assert_eq!(&row[2..], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }
    assert_eq!(code(&run(&["solve-dirac", "--in", s(&q), "--lambda", "1+zi"])), 3);
}

#[test]
fn thread_cap_does_not_change_results() {
    let d = TempDir::new().unwrap();
    let h = accelerant_file(d.path(), "h.json", 32, |x| (0.3 * (-x * x).exp(), 0.1 * x));
    let a = d.path().join("a.json");
    let b = d.path().join("b.json");
    let o = bin().env("KREINMAP_THREADS", "1").args(["theta", "--in", s(&h), "--out", s(&a)]).output().unwrap();
    assert_eq!(code(&o), 0);
    let o = bin().env("KREINMAP_THREADS", "3").args(["theta", "--in", s(&h), "--out", s(&b)]).output().unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let o = bin().env("KREINMAP_THREADS", "many").args(["theta", "--in", s(&h), "--out", s(&b)]).output().unwrap();
    assert_eq!(code(&o), 3);
}
