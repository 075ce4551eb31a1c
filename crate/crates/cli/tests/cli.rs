use std::path::Path;
use std::process::{Command, Output};

use dwafm::data::synthetic::SyntheticSpec;
use dwafm::data::{save_dataset_dir, PredefinedGraph};
use serde_json::Value;

const TINY: &[&str] = &[
    "model.d_f=3",
    "model.t_in=4",
    "model.t_out=2",
    "train.epochs=2",
    "train.batch_size=8",
    "train.lr=0.01",
    "synthetic.n_nodes=4",
    "synthetic.len=120",
    "synthetic.sample_rate_minutes=60",
    "synthetic.fast_period=4",
];

fn dwafm(args: &[&str], sets: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dwafm"));
    cmd.args(args);
    for s in sets {
        cmd.args(["--set", s]);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn train_writes_artifacts_and_eval_reproduces_the_test_report() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&dwafm(&["train", "--out-dir", p(&run)], TINY));
    for f in ["config.toml", "epochs.csv", "report.json", "best/manifest.toml", "last/manifest.toml"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let log = std::fs::read_to_string(run.join("epochs.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let ev = dir.path().join("eval");
    ok(&dwafm(&["eval", p(&run), "--out-dir", p(&ev)], &[]));
    let train_report = json(&run.join("report.json"));
    let eval_report = json(&ev.join("eval.json"));
    for k in ["mae", "rmse", "mape_pct", "count"] {
        assert_eq!(train_report["test"][k], eval_report[k], "{k}");
    }
    assert_eq!(train_report["test"]["per_horizon"], eval_report["per_horizon"]);
}

#[test]
fn snapshot_materializes_defaults_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let mut sets = TINY.to_vec();
    sets.push("model.t_out=4");
    ok(&dwafm(&["baseline", "--out-dir", p(dir.path())], &sets));
    let snap = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
    let cfg = dwafm::RunConfig::from_toml_str(&snap).unwrap();
    assert_eq!(cfg.model.d_f, 3);
    assert_eq!(cfg.synthetic.n_nodes, 4);
    assert_eq!(cfg.train.eval_batch_size, dwafm::RunConfig::default().train.eval_batch_size);
    assert!(snap.contains("eval_batch_size"));
    let report = json(&dir.path().join("baseline.json"));
    assert!(report["mae"].as_f64().unwrap() > 0.0);
}

#[test]
fn config_file_is_overridden_by_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[model]\nd_f = 5\nt_in = 4\nt_out = 4\n").unwrap();
    let out = dir.path().join("out");
    let sets = ["model.d_f=2", "synthetic.n_nodes=4", "synthetic.len=100"];
    ok(&dwafm(&["baseline", "--config", p(&cfg), "--out-dir", p(&out)], &sets));
    let snap = dwafm::RunConfig::from_toml_str(&std::fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
    assert_eq!(snap.model.d_f, 2);
    assert_eq!(snap.model.t_in, 4);
}

#[test]
fn unknown_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dwafm(&["baseline", "--out-dir", p(dir.path())], &["model.d_ff=3"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.starts_with("error[config]: "), "{err}");
    assert!(err.contains("d_ff"));
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn unknown_key_in_config_file_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[train]\nlearning_rate = 0.1\n").unwrap();
    let out = dwafm(&["baseline", "--config", p(&cfg), "--out-dir", p(dir.path())], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let out = dwafm(&["baseline", "--data-dir", p(&missing), "--out-dir", p(dir.path())], &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).starts_with("error[data]: "));
}

#[test]
fn divergent_training_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut sets = TINY.to_vec();
    sets.push("train.lr=1e30");
    let out = dwafm(&["train", "--out-dir", p(dir.path())], &sets);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    let err = stderr(&out);
    let last = err.trim_end().lines().last().unwrap();
    assert!(last.starts_with("error[numerical]: non-finite loss"), "{last}");
}

#[test]
fn gradcheck_passes_for_two_variants() {
    let dir = tempfile::tempdir().unwrap();
    let out = dwafm(&["gradcheck", "--variants", "full,no_fft", "--out-dir", p(dir.path())], &[]);
    ok(&out);
    let reports = json(&dir.path().join("gradcheck.json"));
    assert_eq!(reports.as_array().unwrap().len(), 2);
    assert!(reports[0]["passed"].as_bool().unwrap());
}

#[test]
fn bad_variant_name_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dwafm(&["gradcheck", "--variants", "no_such", "--out-dir", p(dir.path())], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn export_graph_on_three_node_path_is_symmetric_and_sparse() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let spec = SyntheticSpec {
        n_nodes: 3,
        len: 120,
        sample_rate_minutes: 60,
        fast_period: 4,
        ..SyntheticSpec::default()
    };
    let (series, _) = spec.generate().unwrap();
    let path = PredefinedGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 2.0)]).unwrap();
    save_dataset_dir(&data, &series, &path).unwrap();

    let run = dir.path().join("run");
    let sets = ["model.d_f=3", "model.t_in=4", "model.t_out=2", "train.epochs=1", "train.batch_size=8"];
    ok(&dwafm(&["train", "--data-dir", p(&data), "--out-dir", p(&run)], &sets));
    let exp = dir.path().join("graphs");
    ok(&dwafm(
        &["export-graph", p(&run), "--samples", "0,2", "--timesteps", "1,3", "--out-dir", p(&exp)],
        &[],
    ));
    assert!(exp.join("config.toml").is_file());
    let mut files: Vec<_> = std::fs::read_dir(&exp)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    assert_eq!(files.len(), 4);
    for f in files {
        let mut r = csv::Reader::from_path(&f).unwrap();
        let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
        assert_eq!(header, ["node", "0", "1", "2"]);
        let m: Vec<Vec<f64>> = r
            .records()
            .map(|row| row.unwrap().iter().skip(1).map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(m.len(), 3);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m[i][j].to_bits(), m[j][i].to_bits(), "{f:?} ({i},{j})");
            }
        }
        assert_eq!(m[0][2], 0.0);
        assert!(m[0][1] > 0.0 && m[1][2] > 0.0 && m[1][1] > 0.0);
    }
}

#[test]
fn export_graph_node_window_and_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let mut sets = TINY.to_vec();
    sets.push("train.epochs=1");
    ok(&dwafm(&["train", "--out-dir", p(&run)], &sets));
    let exp = dir.path().join("g");
    ok(&dwafm(&["export-graph", p(&run), "--timesteps", "0", "--nodes", "1:3", "--out-dir", p(&exp)], &[]));
    let f = std::fs::read_to_string(exp.join("adjacency_test_s0_t0.csv")).unwrap();
    assert_eq!(f.lines().next().unwrap(), "node,1,2");
    assert_eq!(f.lines().count(), 3);

    let out = dwafm(&["export-graph", p(&run), "--timesteps", "9", "--out-dir", p(&exp)], &[]);
    assert_eq!(out.status.code(), Some(2));
    let out = dwafm(&["export-graph", p(&run), "--nodes", "2:9", "--out-dir", p(&exp)], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn resume_continues_to_the_requested_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let mut four = TINY.to_vec();
    four.push("train.epochs=4");
    ok(&dwafm(&["train", "--out-dir", p(&a)], &four));
    ok(&dwafm(&["train", "--out-dir", p(&b)], TINY));
    ok(&dwafm(&["train", "--resume", "--out-dir", p(&b)], &four));
    let strip = |path: &Path| -> Vec<String> {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(strip(&a.join("epochs.csv")), strip(&b.join("epochs.csv")));
    for f in std::fs::read_dir(a.join("last")).unwrap() {
        let f = f.unwrap();
        let x = std::fs::read(f.path()).unwrap();
        let y = std::fs::read(b.join("last").join(f.file_name())).unwrap();
        assert!(x == y, "{:?} differs", f.file_name());
    }
}

#[test]
fn ablate_and_bench_write_tables() {
    let dir = tempfile::tempdir().unwrap();
    let mut sets = TINY.to_vec();
    sets.push("train.epochs=1");
    let ab = dir.path().join("ab");
    ok(&dwafm(&["--threads", "1", "ablate", "--variants", "full,no_temporal", "--out-dir", p(&ab)], &sets));
    let table = std::fs::read_to_string(ab.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(ab.join("no_temporal/report.json").is_file());

    let bench = dir.path().join("bench");
    ok(&dwafm(&["bench-temporal", "--out-dir", p(&bench)], &sets));
    let table = std::fs::read_to_string(bench.join("bench_temporal.csv")).unwrap();
    let kinds: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(kinds, ["cnn", "attention", "fre_mlp"]);
}
