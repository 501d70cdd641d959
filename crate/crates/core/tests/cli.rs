use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dyadic-tents"))
}

fn run(args: &[&str], dir: &Path) -> (i32, String, String) {
    let out = bin().args(args).current_dir(dir).env("DYADIC_TENTS_WORKERS", "2").output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into(), String::from_utf8_lossy(&out.stderr).into())
}

fn write_domains(dir: &Path) {
    fs::write(dir.join("ball2.json"), r#"{"kind":"ball","n":2,"nbhd_width":0.3}"#).unwrap();
    fs::write(dir.join("narrow.json"), r#"{"kind":"ball","n":2,"nbhd_width":0.1}"#).unwrap();
}

fn build_grid(dir: &Path) {
    let (code, _, err) = run(&["grid", "build", "--domain", "ball2.json", "--points", "600", "--depth", "2", "--grids", "2", "--voronoi-extra", "5", "--seed", "3", "--waive-delta-conditions", "--out", "grid.json"], dir);
    assert_eq!(code, 0, "{err}");
}

#[test]
fn domain_check_passes_on_the_default_band() {
    let dir = tempfile::tempdir().unwrap();
    write_domains(dir.path());
    let (code, out, _) = run(&["domain", "check", "--domain", "narrow.json", "--out", "dom.csv"], dir.path());
    assert_eq!(code, 0, "{out}");
    let text = fs::read_to_string(dir.path().join("dom.csv")).unwrap();
    assert!(text.starts_with("# config={"));
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("dom.json")).unwrap()).unwrap();
    assert_eq!(side["status"], "pass");
    assert_eq!(side["config"]["args"]["seed"], 1);
}

#[test]
fn delta_refusal_and_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    write_domains(dir.path());
    let (code, _, err) = run(&["grid", "build", "--domain", "ball2.json", "--points", "600", "--out", "g.json"], dir.path());
    assert_eq!(code, 2);
    assert!(err.contains("96*kappa^6*delta"), "{err}");
    let rec: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("g.report.json")).unwrap()).unwrap();
    assert_eq!(rec["error"]["code"], "delta_condition");
    assert!(!dir.path().join("g.json").exists());

    let (code, _, _) = run(&["weighted", "run", "--grid", "missing.json", "--out", "w.csv"], dir.path());
    assert_eq!(code, 2);
    let (code, _, _) = run(&["tents", "verify", "--grid", "missing.json", "--checks", "bogus", "--out", "t.csv"], dir.path());
    assert_eq!(code, 2);
    let out = bin().args(["domain", "check", "--domain", "narrow.json"]).current_dir(dir.path()).env("DYADIC_TENTS_WORKERS", "zero").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pipeline_on_a_small_grid_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_domains(d);
    build_grid(d);
    let grid1 = fs::read(d.join("grid.json")).unwrap();
    build_grid(d);
    assert_eq!(grid1, fs::read(d.join("grid.json")).unwrap(), "grid rebuild differs");

    let (code, out, err) = run(&["tents", "verify", "--grid", "grid.json", "--samples", "400", "--seed", "2", "--out", "tents.csv"], d);
    assert_eq!(code, 0, "{out}{err}");
    let (code, out, err) = run(&["geometry", "verify", "--grid", "grid.json", "--checks", "curvature,evolution", "--out", "geom.csv"], d);
    assert_eq!(code, 0, "{out}{err}");

    // the kernel-tent bound is red at this resolution: exit 1, report still written
    let (code, _, err) = run(&["bergman", "scan", "--grid", "grid.json", "--pairs", "40", "--seed", "2", "--out", "a.csv"], d);
    assert!(code == 0 || code == 1, "{err}");
    assert!(fs::read_to_string(d.join("a.csv")).unwrap().lines().nth(1).unwrap().starts_with("rung,depth_z"));

    let args = ["weighted", "run", "--grid", "grid.json", "--p", "2", "--alphas", "-0.4:0.4:0.2", "--trials", "20", "--seed", "5", "--quad-draws", "20000", "--out", "w1.csv"];
    let (code, out, err) = run(&args, d);
    assert!(code == 0 || code == 1, "{out}{err}");
    let mut again = args;
    again[again.len() - 1] = "w2.csv";
    run(&again, d);
    let body = |p: &str| fs::read_to_string(d.join(p)).unwrap().lines().skip(1).collect::<Vec<_>>().join("\n");
    assert_eq!(body("w1.csv"), body("w2.csv"));
    let header = fs::read_to_string(d.join("w1.csv")).unwrap();
    assert!(header.lines().nth(1).unwrap().starts_with("alpha,ap_constant,norm_lower_bound,contributing_trial"));
    assert_eq!(header.lines().count(), 2 + 5);

    let (code, out, err) = run(&["sparse", "check", "--grid", "grid.json", "--seed", "1", "--quad-draws", "20000", "--out", "s.csv"], d);
    assert!(code == 0 || code == 1, "{out}{err}");
    assert!(out.contains("C_s"));
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_domains(d);
    build_grid(d);
    for w in ["1", "3"] {
        let out = bin()
            .args(["tents", "verify", "--grid", "grid.json", "--checks", "flow,equivalence", "--samples", "300", "--out", &format!("t{w}.csv")])
            .current_dir(d)
            .env("DYADIC_TENTS_WORKERS", w)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
    }
    let body = |p: &str| fs::read_to_string(d.join(p)).unwrap().lines().skip(1).collect::<Vec<_>>().join("\n");
    assert_eq!(body("t1.csv"), body("t3.csv"));
}
