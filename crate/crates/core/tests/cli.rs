use std::fs;
use std::path::{Path, PathBuf};

use markov_subgrad::cli::output::{parse_csv, trajectory_file_name, TRAJECTORY_COLUMNS};
use markov_subgrad::cli::{cmd_lemma1, cmd_run, main_with_args, ExperimentConfig, Lemma1Args, Overrides};
use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn run_quad(out: &Path, extra: &[&str]) -> i32 {
    let cfg = configs().join("quad.cfg");
    let mut args = vec![
        "markov-subgrad",
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--horizon",
        "2000",
        "--runs",
        "2",
    ];
    args.extend_from_slice(extra);
    main_with_args(args)
}

#[test]
fn quad_run_writes_parseable_outputs() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_quad(dir.path(), &["--dump-states"]), 0);
    for r in 0..2 {
        let text = fs::read_to_string(dir.path().join(trajectory_file_name(r))).unwrap();
        let t = parse_csv(&text).unwrap();
        assert_eq!(&t.header[..6], TRAJECTORY_COLUMNS);
        assert_eq!(t.header.len(), 6 + 5 * 2);
        let ks: Vec<f64> = t.column("k").unwrap().into_iter().map(Option::unwrap).collect();
        assert_eq!(ks[0], 0.0);
        assert_eq!(*ks.last().unwrap(), 2000.0);
        assert!(ks.windows(2).all(|w| w[0] < w[1]));
        let dist = t.column("dist_to_opt").unwrap();
        assert!(dist.iter().all(Option::is_some));
        assert!(dist.last().unwrap().unwrap() < dist[0].unwrap());
    }
    let summary = read_json(&dir.path().join("summary.json"));
    // no seed in quad.cfg
    assert_eq!(summary["config"]["seed"], 0);
    assert_eq!(summary["overrides"]["runs"], 2);
    assert_eq!(summary["ensemble"]["runs"].as_array().unwrap().len(), 2);
    assert_eq!(summary["metadata"]["subgradient_bound"]["l"], 5f64.sqrt());
}

#[test]
fn echoed_config_reproduces_the_run() {
    let first = tempfile::tempdir().unwrap();
    assert_eq!(run_quad(first.path(), &["--seed", "5"]), 0);
    let summary = read_json(&first.path().join("summary.json"));
    let mut config: ExperimentConfig = serde_json::from_value(summary["config"].clone()).unwrap();
    let second = tempfile::tempdir().unwrap();
    config.output.dir = second.path().to_path_buf();
    cmd_run(&config, &Overrides::default()).unwrap();
    let again = read_json(&second.path().join("summary.json"));
    assert_eq!(summary["ensemble"], again["ensemble"]);
    assert_eq!(summary["seeds"], again["seeds"]);
    for r in 0..2 {
        let a = fs::read(first.path().join(trajectory_file_name(r))).unwrap();
        let b = fs::read(second.path().join(trajectory_file_name(r))).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    let mut v: Value = serde_json::from_str(&fs::read_to_string(configs().join("quad.cfg")).unwrap()).unwrap();
    v["horizn"] = 5.into();
    fs::write(&path, v.to_string()).unwrap();
    assert_eq!(
        main_with_args(["markov-subgrad", "run", "--config", path.to_str().unwrap()]),
        2
    );

    // column sums broken
    let mut v: Value = serde_json::from_str(&fs::read_to_string(configs().join("quad.cfg")).unwrap()).unwrap();
    v["graphs"][0][0] = serde_json::json!([0.0, 0.0, 0.0, 0.3, 0.7]);
    fs::write(&path, v.to_string()).unwrap();
    assert_eq!(
        main_with_args(["markov-subgrad", "run", "--config", path.to_str().unwrap()]),
        2
    );
}

#[test]
fn reference_box_too_small_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("example5.cfg");
    let code = main_with_args([
        "markov-subgrad",
        "reference",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--box",
        "-0.1,0.1",
        "--grid",
        "50",
        "--polish",
        "1000",
    ]);
    assert_eq!(code, 3);
}

fn identity_config(out: &Path) -> ExperimentConfig {
    let text = serde_json::json!({
        "graphs": [[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]],
        "chain": {"transition": [[1.0]]},
        "objective": {"kind": "quadratic", "centers": [[0.0], [1.0], [2.0]], "weights": [1.0, 1.0, 1.0]},
        "step": {"a1": 1.0, "a2": 1.0, "delta1": 0.3, "delta2": 0.9},
        "output": {"dir": out},
    })
    .to_string();
    ExperimentConfig::from_json(&text).unwrap()
}

#[test]
fn disconnected_identity_graph_has_no_decay() {
    let dir = tempfile::tempdir().unwrap();
    let args = Lemma1Args {
        ks: Some(vec![10, 100, 1000]),
        replications: Some(3),
        sum_horizon: Some(0),
        ..Default::default()
    };
    let path = cmd_lemma1(&identity_config(dir.path()), &Overrides::default(), &args).unwrap();
    let report = read_json(&path);
    for e in report["estimates"].as_array().unwrap() {
        assert!((e["mean_norm"].as_f64().unwrap() - 1.0).abs() <= 1e-12);
    }
    assert_eq!(report["strictly_decreasing"], false);
    assert_eq!(report["fit"]["verdict"], "no_decay");
    assert!(!report["warnings"].as_array().unwrap().is_empty());
    // a disconnected graph is still refused by `run`
    assert!(cmd_run(&identity_config(dir.path()), &Overrides::default()).is_err());
}

#[test]
fn single_replication_has_no_interval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("example5.cfg");
    let code = main_with_args([
        "markov-subgrad",
        "lemma1",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--k",
        "10,100",
        "--replications",
        "1",
        "--sum-horizon",
        "0",
    ]);
    assert_eq!(code, 0);
    let report = read_json(&dir.path().join("lemma1.json"));
    for e in report["estimates"].as_array().unwrap() {
        assert!(e["half_width"].is_null());
        assert_eq!(e["replications"], 1);
    }
    let curve = parse_csv(&fs::read_to_string(dir.path().join("lemma1_curve.csv")).unwrap()).unwrap();
    assert!(curve.column("half_width").unwrap().iter().all(Option::is_none));
}
