use std::path::Path;
use std::process::Command;

use radiotwin::precoder::MacProblem;

fn cli(args: &[&str], cwd: &Path) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_radiotwin"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap(), text)
}

#[test]
fn precode_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    MacProblem::siso(&[1.0], 1.0, vec![2.0], vec![1.0])
        .unwrap()
        .save(dir.path().join("ok.json"))
        .unwrap();
    let (code, text) = cli(&["precode", "--config", "ok.json", "--out", "sol"], dir.path());
    assert_eq!(code, 0, "{text}");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sol/solution.json")).unwrap()).unwrap();
    assert!((summary["objective"].as_f64().unwrap() - 3.0).abs() < 1e-6);

    MacProblem::siso(&[0.0, 1.0], 1.0, vec![1.0, 1.0], vec![1.0, 1.0])
        .unwrap()
        .save(dir.path().join("dead.json"))
        .unwrap();
    assert_eq!(cli(&["precode", "--config", "dead.json"], dir.path()).0, 3);
    assert_eq!(cli(&["precode", "--config", "missing.json"], dir.path()).0, 2);
    assert_eq!(cli(&["precode"], dir.path()).0, 2);
}

#[test]
fn bad_flags_and_configs_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["pipeline", "--mode", "sometimes"], dir.path()).0, 2);
    std::fs::write(dir.path().join("bad.json"), r#"{"grf": {"refresh_period": 0}}"#).unwrap();
    assert_eq!(cli(&["pipeline", "--config", "bad.json"], dir.path()).0, 2);
    assert_eq!(cli(&["export", "no-such-run"], dir.path()).0, 2);
}

#[test]
fn pipeline_then_export() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("p.json"),
        r#"{"default_script": {"slots_per_segment": 8}, "grf": {"num_primitives": 8}}"#,
    )
    .unwrap();
    let (code, text) = cli(&["pipeline", "--config", "p.json", "--seed", "4", "--oracle-csi", "--out", "run"], dir.path());
    assert_eq!(code, 0, "{text}");
    for f in ["metrics.csv", "timings.csv", "config.json", "grf.ckpt", "replay.ckpt"] {
        assert!(dir.path().join("run").join(f).is_file(), "{f}");
    }
    let saved = radiotwin::pipeline::PipelineConfig::load(dir.path().join("run/config.json")).unwrap();
    assert_eq!(saved.seed, 4);
    assert!(saved.oracle_csi);
    let (code, text) = cli(&["export", "run"], dir.path());
    assert_eq!(code, 0, "{text}");
    let est = std::fs::read_to_string(dir.path().join("run/estimation_snr.csv")).unwrap();
    assert_eq!(est.lines().count(), 4);
}

#[test]
fn scene_and_render_write_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = cli(&["scene", "--preset", "umi-dense", "--links", "5", "--seed", "2", "--out", "s"], dir.path());
    assert_eq!(code, 0, "{text}");
    let t = radiotwin::tensor_io::Tensor::load(dir.path().join("s/channels.bin")).unwrap();
    assert_eq!(t.header.shape[0], 5);
    let cfg = radiotwin::scene::SceneConfig::from_json_file(dir.path().join("s/scene.json")).unwrap();
    assert_eq!(cfg.rng_seed, 2);
    assert_eq!(std::fs::read_to_string(dir.path().join("s/links.csv")).unwrap().lines().count(), 6);

    std::fs::write(dir.path().join("p.json"), r#"{"default_script": {"slots_per_segment": 4}, "grf": {"num_primitives": 4}}"#).unwrap();
    assert_eq!(cli(&["pipeline", "--config", "p.json", "--out", "run"], dir.path()).0, 0);
    let (code, text) = cli(
        &["render", "--checkpoint", "run/grf.ckpt", "--tx", "0,0,1", "--rx", "1,0,0", "--rx", "0,1,0", "--out", "r.bin"],
        dir.path(),
    );
    assert_eq!(code, 0, "{text}");
    let r = radiotwin::tensor_io::Tensor::load(dir.path().join("r.bin")).unwrap();
    assert_eq!(r.header.shape[0], 2);
    assert!(r.matrix_at(1).unwrap().iter().all(|z| z.re.is_finite()));
}

#[test]
fn sweep_and_bench_outputs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("sw.json"), r#"{"points": 3, "snr_start_db": 0, "snr_stop_db": 10}"#).unwrap();
    assert_eq!(cli(&["sweep", "--config", "sw.json", "--out", "o"], dir.path()).0, 0);
    assert_eq!(std::fs::read_to_string(dir.path().join("o/sweep.csv")).unwrap().lines().count(), 4);
    std::fs::write(
        dir.path().join("b.json"),
        r#"{"primitives": [4, 8], "antennas": [[1, 1]], "render_calls": 2, "repeats": 1, "users": [2, 3], "rx_dim": 2, "mmse_calls": 1}"#,
    )
    .unwrap();
    let (code, text) = cli(&["bench", "--config", "b.json", "--out", "o"], dir.path());
    assert_eq!(code, 0, "{text}");
    assert!(dir.path().join("o/bench_report.json").is_file());
    assert_eq!(std::fs::read_to_string(dir.path().join("o/bench.csv")).unwrap().lines().count(), 7);
}
