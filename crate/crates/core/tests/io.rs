use std::fs;

use ecov::eval::{load_csv_collection, Manifest};
use ecov::persist::{FitSettings, ModelFile};
use ecov::{fit, Error, EstimatorKind, FitOptions};

fn write_tasks(dir: &std::path::Path) {
    for t in 0..2 {
        let mut body = String::from("a,y,b\n");
        for i in 0..30 {
            let a = i as f64 / 10.0;
            let b = ((i * 7 + t) % 11) as f64 / 5.0;
            body.push_str(&format!("{a},{},{b}\n", 1.5 * a - 0.5 * b + 0.01 * ((i * 13) % 5) as f64));
        }
        fs::write(dir.join(format!("t{t}.csv")), body).unwrap();
    }
}

#[test]
fn manifest_loads_and_model_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    write_tasks(dir.path());
    let path = dir.path().join("m.json");
    fs::write(
        &path,
        r#"{"response_column":"y","task_kind":"regression","datasets":[{"name":"first","path":"t0.csv"},{"name":"second","path":"t1.csv"}]}"#,
    )
    .unwrap();
    let loaded = load_csv_collection(&Manifest::load(&path).unwrap()).unwrap();
    assert_eq!(loaded.covariate_names, vec!["a", "b"]);
    assert_eq!(loaded.dataset_names, vec!["first", "second"]);
    let m = fit(EstimatorKind::EcovEm, &loaded.collection, None, &FitOptions::default()).unwrap();
    let settings = FitSettings {
        max_iterations: 500,
        tolerance: 1e-8,
        solver: "auto".into(),
    };
    let file = ModelFile::new(&m, settings, loaded.covariate_names.clone(), loaded.dataset_names.clone());
    let out = dir.path().join("model.json");
    file.write(&out).unwrap();
    let back = ModelFile::read(&out).unwrap();
    assert_eq!(back.beta, file.beta);
    assert_eq!(back.covariance, file.covariance);
    assert_eq!(back.traces[0].log_marginal_likelihoods, file.traces[0].log_marginal_likelihoods);
    assert_eq!(back.beta().unwrap(), m.beta);
    assert_eq!(back.task_index("second").unwrap(), 1);
}

#[test]
fn mismatched_headers_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_tasks(dir.path());
    fs::write(dir.path().join("t1.csv"), "b,y,a\n1,2,3\n").unwrap();
    let path = dir.path().join("m.json");
    fs::write(
        &path,
        r#"{"response_column":"y","task_kind":"regression","datasets":[{"name":"first","path":"t0.csv"},{"name":"second","path":"t1.csv"}]}"#,
    )
    .unwrap();
    let err = load_csv_collection(&Manifest::load(&path).unwrap()).unwrap_err();
    assert!(!matches!(err, Error::Io { .. }), "{err}");
}
