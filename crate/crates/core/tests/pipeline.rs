use roughsk::harness::cli::cli_main_with;
use roughsk::harness::config::ExperimentConfig;
use roughsk::harness::report::to_json_bytes;
use roughsk::harness::run::run_convergence;

fn small(n_paths: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        model_name: "const_iso".into(),
        epsilons: vec![0.5, 0.25],
        n_paths,
        seed,
        ..Default::default()
    }
}

#[test]
fn convergence_report_is_reproducible() {
    let a = to_json_bytes(&run_convergence(&small(6, 3)).unwrap()).unwrap();
    let b = to_json_bytes(&run_convergence(&small(6, 3)).unwrap()).unwrap();
    assert_eq!(a, b);
    let c = to_json_bytes(&run_convergence(&small(6, 4)).unwrap()).unwrap();
    assert_ne!(a, c);
}

#[test]
fn stderr_shrinks_like_inverse_root_of_paths() {
    let few = run_convergence(&small(16, 11)).unwrap();
    let many = run_convergence(&small(64, 11)).unwrap();
    for (a, b) in few.per_epsilon.iter().zip(&many.per_epsilon) {
        let (a, b) = (
            a.metric("sup_error", 2).unwrap(),
            b.metric("sup_error", 2).unwrap(),
        );
        assert_eq!((a.n, b.n), (16, 64));
        let ratio = a.stderr / b.stderr;
        assert!((1.0..=4.0).contains(&ratio), "stderr ratio {ratio}");
    }
}

#[test]
fn cli_writes_reports_and_reports_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let run = |args: &[&str]| {
        let (mut so, mut se) = (Vec::new(), Vec::new());
        let mut full = vec!["roughsk"];
        full.extend_from_slice(args);
        cli_main_with(full, &mut so, &mut se)
    };
    let config = dir.path().join("small.json");
    std::fs::write(
        &config,
        r#"{"model_name": "const_iso", "epsilons": [0.5], "n_paths": 4}"#,
    )
    .unwrap();
    let config = config.to_str().unwrap();
    assert_eq!(
        run(&["--config", config, "--out", out, "--quiet", "converge"]),
        0
    );
    let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert!(csv.starts_with("epsilon,metric,mean,stderr,n"));
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("convergence.json")).unwrap())
            .unwrap();
    assert_eq!(json["meta"]["n_paths"], 4);
    assert_eq!(run(&["--model", "const_iso", "--quiet", "check"]), 0);
    assert_eq!(run(&["--model", "nope", "check"]), 1);
    assert_eq!(run(&["--config", config, "--eps", "2", "converge"]), 1);
}
