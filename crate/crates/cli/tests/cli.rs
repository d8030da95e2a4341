use std::path::Path;
use std::process::{Command, Output};

const HFLOW: &str = env!("CARGO_BIN_EXE_hflow");

fn hflow(args: &[&str]) -> Output {
    Command::new(HFLOW).args(args).output().expect("hflow runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

const CHAIN: &str = r#"
name: chain
steps:
  - id: a
    command: echo 1
    out: {o: {capture: stdout}}
  - id: b
    command: echo {x}
    in: {x: {from: a.o}}
    out: {o: {capture: stdout}}
outputs: {b: b.o}
"#;

const LOCAL_ENV: &str = r#"
deployments:
  here:
    connector: local
    services:
      s: {resources: 1, slots: 2}
bindings:
  - {step: "*", target: here/s}
staging_dir: staging
"#;

#[test]
fn validate_clean_pair_is_silent() {
    let dir = tempfile::tempdir().unwrap();
    let w = write(dir.path(), "w.yaml", CHAIN);
    let e = write(dir.path(), "e.yaml", LOCAL_ENV);
    let o = hflow(&["validate", "-w", &w, "-e", &e]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
}

#[test]
fn validate_reports_unbound_steps() {
    let dir = tempfile::tempdir().unwrap();
    let w = write(dir.path(), "w.yaml", CHAIN);
    let e = write(dir.path(), "e.yaml", &LOCAL_ENV.replace("step: \"*\"", "step: a"));
    let o = hflow(&["validate", "-w", &w, "-e", &e]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("unbound step(s): b"), "{}", stdout(&o));
}

#[test]
fn validate_reports_cycles() {
    let dir = tempfile::tempdir().unwrap();
    let cyclic = r#"
name: loop
steps:
  - id: a
    command: echo {x}
    in: {x: {from: b.o}}
    out: {o: {capture: stdout}}
  - id: b
    command: echo {x}
    in: {x: {from: a.o}}
    out: {o: {capture: stdout}}
"#;
    let w = write(dir.path(), "w.yaml", cyclic);
    let o = hflow(&["validate", "-w", &w]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    assert!(text.contains('a') && text.contains('b') && text.contains("cycle"), "{text}");
}

#[test]
fn syntax_and_io_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let w = write(dir.path(), "w.yaml", "steps: [");
    assert_eq!(hflow(&["validate", "-w", &w]).status.code(), Some(2));
    assert_eq!(hflow(&["validate", "-w", "/nonexistent/w.yaml"]).status.code(), Some(2));
    assert_eq!(hflow(&["estimate", "--variants", "x", "--hours", "1", "--slots", "1"]).status.code(), Some(2));
    assert_eq!(hflow(&["estimate", "--variants", "1", "--hours", "-1", "--slots", "1"]).status.code(), Some(2));
    assert_eq!(hflow(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn estimate_rows_do_not_increase() {
    let o = hflow(&["estimate", "--variants", "990", "--hours", "15", "--slots", "1,180,990"]);
    assert_eq!(o.status.code(), Some(0));
    let hours: Vec<f64> = stdout(&o)
        .lines()
        .map(|l| l.split(": ").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(hours, vec![14850.0, 90.0, 15.0]);
}

#[test]
fn plan_shows_broadcast_into_folds_and_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    let gs = g.display().to_string();
    let o = hflow(&["gridgen", "--networks", "n", "--datasets", "d", "--folds", "2", "-o", &gs]);
    assert_eq!(o.status.code(), Some(0));
    let w = g.join("workflow.yaml").display().to_string();
    let e = g.join("environment.yaml").display().to_string();
    let first = hflow(&["plan", "-w", &w, "-e", &e]);
    let second = hflow(&["plan", "-w", &w, "-e", &e]);
    assert_eq!(first.stdout, second.stdout);
    let text = stdout(&first);
    let classify = text.lines().find(|l| l.starts_with("classify")).unwrap();
    let cols: Vec<&str> = classify.split_whitespace().collect();
    assert_eq!(cols[3], "2");
    assert_eq!(classify.matches("[broadcast]").count(), 1);
    assert!(text.contains("pretrain -> classify"));
}

#[test]
fn plan_of_plain_chain_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let w = write(dir.path(), "w.yaml", CHAIN);
    let e = write(dir.path(), "e.yaml", LOCAL_ENV);
    let text = stdout(&hflow(&["plan", "-w", &w, "-e", &e]));
    for line in text.lines().skip(1).take(2) {
        assert_eq!(line.split_whitespace().nth(3), Some("0"), "{line}");
    }
}

#[test]
fn failing_step_with_one_retry() {
    let dir = tempfile::tempdir().unwrap();
    let wf = "name: bad\nsteps:\n  - id: x\n    command: \"false\"\n    out: {o: {capture: stdout}}\n";
    let w = write(dir.path(), "w.yaml", wf);
    let e = write(dir.path(), "e.yaml", LOCAL_ENV);
    let report = dir.path().join("report.json");
    let o = hflow(&["run", "-w", &w, "-e", &e, "--retries", "1", "--report", &report.display().to_string()]);
    assert_eq!(o.status.code(), Some(1));
    let r = hflow_core::provenance::Report::from_json(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(r.instances[0].attempts, 2);
    assert_eq!(r.run.status, "failed");
}

#[test]
fn normalized_report_has_no_times() {
    let dir = tempfile::tempdir().unwrap();
    let w = write(dir.path(), "w.yaml", CHAIN);
    let e = write(dir.path(), "e.yaml", LOCAL_ENV);
    let report = dir.path().join("r.json");
    let rs = report.display().to_string();
    let o = hflow(&["run", "-w", &w, "-e", &e, "--report", &rs, "--normalize-times", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let r = hflow_core::provenance::Report::from_json(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r.run.seed, 3);
    assert_eq!(r.run.started.timestamp(), 0);
    assert!(r.instances.iter().all(|i| i.started.map(|t| t.timestamp()) == Some(0)));
}

#[test]
fn empty_grid_runs_to_an_empty_ranking() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    let gs = g.display().to_string();
    let o = hflow(&["gridgen", "--hyperparams", "2", "--datasets", "d", "--folds", "2", "-o", &gs]);
    assert_eq!(o.status.code(), Some(0));
    let w = g.join("workflow.yaml").display().to_string();
    let e = g.join("environment.yaml").display().to_string();
    let out = g.join("out");
    assert_eq!(hflow(&["validate", "-w", &w, "-e", &e]).status.code(), Some(0));
    let o = hflow(&["run", "-w", &w, "-e", &e, "-o", &out.display().to_string()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(out.join("ranking.json")).unwrap().trim(), "[]");
}

#[test]
fn run_setup_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let w = write(dir.path(), "w.yaml", CHAIN);
    let e = write(dir.path(), "e.yaml", &LOCAL_ENV.replace("step: \"*\"", "step: a"));
    assert_eq!(hflow(&["run", "-w", &w, "-e", &e]).status.code(), Some(2));
}

#[test]
fn concurrency_limit_leaves_outputs_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g");
    let gs = g.display().to_string();
    hflow(&["gridgen", "--networks", "a,b", "--hyperparams", "2", "--datasets", "d", "--folds", "2", "-o", &gs]);
    let w = g.join("workflow.yaml").display().to_string();
    let e = g.join("environment.yaml").display().to_string();
    let mut seen = Vec::new();
    for limit in [Some("1"), None] {
        let out = dir.path().join(format!("out-{}", limit.unwrap_or("all")));
        let os = out.display().to_string();
        let mut args = vec!["run", "-w", &w, "-e", &e, "-o", &os, "--seed", "11"];
        if let Some(l) = limit {
            args.extend(["--max-concurrency", l]);
        }
        assert_eq!(hflow(&args).status.code(), Some(0));
        seen.push((
            std::fs::read(out.join("ranking.json")).unwrap(),
            std::fs::read(out.join("summaries.json")).unwrap(),
        ));
    }
    assert_eq!(seen[0], seen[1]);
}
