use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ecov(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecov")).args(args).current_dir(dir).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_manifest(dir: &Path, d: usize) {
    let header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    for t in 0..3 {
        let mut body = format!("y,{}\n", header.join(","));
        for i in 0..25 {
            let xs: Vec<f64> = (0..d).map(|j| (((i * 7 + j * 3 + t) % 13) as f64 - 6.0) / 4.0).collect();
            let y: f64 = xs.iter().enumerate().map(|(j, x)| x * (1.0 + j as f64 * 0.1 + t as f64 * 0.05)).sum::<f64>() + ((i * 17) % 7) as f64 * 0.05;
            let row: Vec<String> = xs.iter().map(|v| v.to_string()).collect();
            body.push_str(&format!("{y},{}\n", row.join(",")));
        }
        fs::write(dir.join(format!("t{t}.csv")), body).unwrap();
    }
    fs::write(
        dir.join("m.json"),
        r#"{"response_column":"y","task_kind":"regression","datasets":[{"name":"a","path":"t0.csv"},{"name":"b","path":"t1.csv"},{"name":"c","path":"t2.csv"}]}"#,
    )
    .unwrap();
}

#[test]
fn help_lists_estimators() {
    let dir = tempfile::tempdir().unwrap();
    let o = ecov(&["fit", "--help"], dir.path());
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for name in ["ecov-em", "ecov-mm", "ecov-mm-practical", "edata-em", "edata-mm", "ls", "ls-pooled", "id"] {
        assert!(text.contains(name), "missing {name}");
    }
}

#[test]
fn gain_of_diagonal_covariance_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.csv"), "2,0,0\n0,1,0\n0,0,0.5\n").unwrap();
    let o = ecov(&["--format", "json", "gain", "--sigma-file", "s.csv", "--noise", "1"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["gain"].as_f64(), Some(0.0));
}

#[test]
fn risk_study_without_seed_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = ecov(&["risk-study", "--check", "dominance", "--d", "10", "--q", "3"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("code="), "{}", stderr(&o));
}

#[test]
fn simulate_without_seed_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = ecov(&["simulate", "--dims", "3", "--replicates", "2"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn risk_identity_in_infinite_regime_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let o = ecov(&["risk-study", "--check", "lemma-risk", "--d", "4", "--q", "4", "--seed", "1"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("infinite-risk regime"), "{}", stderr(&o));
}

#[test]
fn edata_moment_fit_with_more_covariates_than_tasks_fails() {
    let dir = tempfile::tempdir().unwrap();
    write_manifest(dir.path(), 5);
    let o = ecov(&["fit", "--manifest", "m.json", "--estimator", "edata-mm", "--out", "b.csv"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("infinite-risk"), "{}", stderr(&o));
}

#[test]
fn fit_then_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    write_manifest(dir.path(), 2);
    let o = ecov(&["fit", "--manifest", "m.json", "--estimator", "ecov-em", "--out", "b.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let betas = fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert!(betas.lines().next().unwrap().contains('b'));
    fs::write(dir.path().join("new.csv"), "x0,x1\n1,0\n0,1\n").unwrap();
    let o = ecov(&["predict", "--model", "b.csv.model.json", "--data", "new.csv", "--task", "b"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    let preds: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let coef: Vec<Vec<String>> = betas.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    let header: Vec<&str> = betas.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "b").unwrap();
    for (i, p) in preds.iter().enumerate() {
        let expect: f64 = coef[i][col].parse().unwrap();
        assert!((p - expect).abs() <= 1e-12 * expect.abs().max(1.0), "{p} vs {expect}");
    }
}

#[test]
fn predict_rejects_unknown_task() {
    let dir = tempfile::tempdir().unwrap();
    write_manifest(dir.path(), 2);
    assert!(ecov(&["fit", "--manifest", "m.json", "--estimator", "ls", "--out", "b.csv"], dir.path()).status.success());
    fs::write(dir.path().join("new.csv"), "x0,x1\n1,0\n").unwrap();
    let o = ecov(&["predict", "--model", "b.csv.model.json", "--data", "new.csv", "--task", "zzz"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown task"));
}
