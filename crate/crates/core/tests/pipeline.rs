use std::path::Path;

use radiotwin::continual::{ContinualMode, ReplayBuffer, ReplayEntry};
use radiotwin::grf::GrfModel;
use radiotwin::pipeline::*;
use radiotwin::precoder::{sweep_snr, write_sweep_csv, MacProblem, SolverConfig};
use radiotwin::TwinError;

fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.default_script.slots_per_segment = 24;
    cfg.grf.num_primitives = 16;
    cfg.grf.warmup_slots = 4;
    cfg.grf.history = 16;
    cfg.predictor.buffer_capacity = 32;
    cfg.predictor.warmup_slots = 8;
    cfg.predictor.batch_current = 4;
    cfg.predictor.batch_replay = 4;
    cfg
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn one_record_per_slot_in_order() {
    let cfg = small_config();
    let run = run_pipeline(&cfg, None).unwrap();
    assert_eq!(run.records.len(), 72);
    for (i, r) in run.records.iter().enumerate() {
        assert_eq!(r.t, i as u64);
        assert_eq!(r.status, SlotStatus::Ok);
        assert!(r.objective_w.unwrap() > 0.0);
        assert!(r.estimate_snr_db.unwrap().is_finite());
    }
    assert!(run.records[0].nmse_db.is_none());
    assert!(run.records.iter().skip(cfg.predictor.window + 1).all(|r| r.nmse_db.is_some()));
}

#[test]
fn fixed_seed_runs_write_identical_metrics() {
    let cfg = small_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(&cfg, Some(a.path())).unwrap();
    run_pipeline(&cfg, Some(b.path())).unwrap();
    let ma = read(&a.path().join("metrics.csv"));
    assert_eq!(ma, read(&b.path().join("metrics.csv")));
    assert_eq!(ma.lines().count(), 73);
    assert_eq!(ma.lines().next().unwrap(), METRICS_HEADER.join(","));

    let mut other = cfg.clone();
    other.seed = 2;
    let c = tempfile::tempdir().unwrap();
    run_pipeline(&other, Some(c.path())).unwrap();
    assert_ne!(ma, read(&c.path().join("metrics.csv")));
}

#[test]
fn saved_config_replays_records() {
    let cfg = small_config();
    let dir = tempfile::tempdir().unwrap();
    let first = run_pipeline(&cfg, Some(dir.path())).unwrap();
    let replay = PipelineConfig::load(dir.path().join("config.json")).unwrap();
    assert_eq!(replay, cfg);
    let second = run_pipeline(&replay, None).unwrap();
    let strip = |rs: &[SlotRecord]| -> Vec<SlotRecord> {
        rs.iter()
            .cloned()
            .map(|mut r| {
                r.timings = StageTimings::default();
                r
            })
            .collect()
    };
    assert_eq!(strip(&first.records), strip(&second.records));

    let grf = GrfModel::load(dir.path().join("grf.ckpt")).unwrap();
    assert!(grf.steps() > 0);
    let buf = ReplayBuffer::<ReplayEntry>::load(dir.path().join("replay.ckpt")).unwrap();
    assert_eq!(buf.len(), first.records.last().unwrap().buffer_fill);
}

#[test]
fn refresh_every_slot() {
    let mut cfg = small_config();
    cfg.grf.refresh_period = 1;
    cfg.grf.warmup_slots = 0;
    let run = run_pipeline(&cfg, None).unwrap();
    assert!(run.records.iter().all(|r| r.grf_updated));
}

#[test]
fn refresh_schedule_follows_period_and_warmup() {
    let mut cfg = small_config();
    cfg.grf.refresh_period = 5;
    cfg.grf.warmup_slots = 3;
    let run = run_pipeline(&cfg, None).unwrap();
    for r in &run.records {
        let k = r.t % 24;
        assert_eq!(r.grf_updated, k < 3 || r.t % 5 == 0, "slot {}", r.t);
    }
}

#[test]
fn buffer_fill_survives_handovers() {
    let cfg = small_config();
    let run = run_pipeline(&cfg, None).unwrap();
    let labels: Vec<_> = run.records.iter().map(|r| r.scenario_label).collect();
    assert!(labels.windows(2).filter(|w| w[0] != w[1]).count() == 2);
    for w in run.records.windows(2) {
        assert!(w[1].buffer_fill >= w[0].buffer_fill, "fill dropped at slot {}", w[1].t);
    }
    assert_eq!(run.records.last().unwrap().buffer_fill, 32);
}

#[test]
fn stage_timings_cover_slot_time() {
    let cfg = small_config();
    let run = run_pipeline(&cfg, None).unwrap();
    let (mut stages, mut total) = (0u64, 0u64);
    for r in &run.records {
        let s = r.timings;
        stages += s.measure_us + s.grf_us + s.predict_us + s.precode_us;
        total += s.total_us;
        assert!(s.measure_us + s.grf_us + s.predict_us + s.precode_us <= s.total_us);
    }
    assert!(stages as f64 >= 0.95 * total as f64, "{stages} of {total} us");
}

#[test]
fn oracle_csi_meets_rate_target_on_true_channel() {
    let mut cfg = small_config();
    cfg.oracle_csi = true;
    let run = run_pipeline(&cfg, None).unwrap();
    for r in &run.records {
        assert!(r.achieved_rate.unwrap() >= cfg.precoder.b_min - 1e-6, "slot {}", r.t);
    }
}

#[test]
fn frozen_mode_is_labelled() {
    let mut cfg = small_config();
    cfg.predictor.mode = ContinualMode::Frozen;
    let run = run_pipeline(&cfg, None).unwrap();
    assert!(run.records.iter().all(|r| r.mode == ContinualMode::Frozen));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = small_config();
    cfg.grf.refresh_period = 0;
    assert!(matches!(run_pipeline(&cfg, None), Err(TwinError::Config(_))));
    let mut cfg = small_config();
    cfg.script = Some("/nonexistent/script.json".into());
    assert!(matches!(cfg.validate(), Err(TwinError::Config(_))));
    let mut cfg = small_config();
    cfg.precoder.weights = Some(vec![1.0]);
    assert!(cfg.validate().is_err());
}

#[test]
fn relative_script_path_resolves_against_config() {
    let dir = tempfile::tempdir().unwrap();
    let script = radiotwin::scene::ScenarioScript::umi_shift(3, 5, 10.0, 10.0);
    std::fs::write(dir.path().join("walk.json"), serde_json::to_string(&script).unwrap()).unwrap();
    std::fs::write(dir.path().join("cfg.json"), r#"{"script": "walk.json", "grf": {"num_primitives": 8}}"#).unwrap();
    let cfg = PipelineConfig::load(dir.path().join("cfg.json")).unwrap();
    assert_eq!(cfg.script.as_deref(), Some(dir.path().join("walk.json").as_path()));
    assert_eq!(cfg.grf.num_primitives, 8);
    assert_eq!(run_pipeline(&cfg, None).unwrap().records.len(), 15);
}

fn tiny_bench() -> BenchConfig {
    BenchConfig {
        primitives: vec![8, 16, 32],
        antennas: vec![(2, 2), (4, 2), (2, 4)],
        render_calls: 4,
        repeats: 1,
        users: vec![2, 3, 4],
        rx_dim: 2,
        mmse_calls: 2,
        seed: 0,
    }
}

#[test]
fn bench_counts_are_exact() {
    let report = bench_complexity(&tiny_bench()).unwrap();
    let render: Vec<&BenchRow> = report.rows.iter().filter(|r| r.kind == BenchKind::Render).collect();
    assert_eq!(render.len(), 5);
    assert_eq!(render[1].count, 2 * render[0].count);
    assert_eq!(render[2].count, 2 * render[1].count);
    assert_eq!(render[3].accumulate_flops, 2 * render[0].accumulate_flops);
    assert_eq!(render[4].accumulate_flops, 2 * render[0].accumulate_flops);
    assert!((report.render_flop_slope - 1.0).abs() < 1e-12);
    let subsets: Vec<u64> = report
        .rows
        .iter()
        .filter(|r| r.kind == BenchKind::SubsetCheck)
        .map(|r| r.count)
        .collect();
    assert_eq!(subsets, vec![3, 7, 15]);
    assert!((report.subset_growth - 1.0).abs() < 1e-12);
    let mmse: Vec<u64> = report.rows.iter().filter(|r| r.kind == BenchKind::MmseSic).map(|r| r.count).collect();
    assert_eq!(mmse, vec![2, 3, 4]);
    assert!(report.rows.iter().all(|r| r.seconds.is_finite() && r.seconds >= 0.0));

    let mut buf = Vec::new();
    write_bench_csv(&report.rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 1 + report.rows.len());
    assert!(text.starts_with("kind,primitives,nt,nr,users,rx_dim,count,accumulate_flops,seconds\n"));
}

#[test]
fn bench_rejects_bad_grid() {
    let mut cfg = tiny_bench();
    cfg.primitives.clear();
    assert!(bench_complexity(&cfg).is_err());
    let mut cfg = tiny_bench();
    cfg.users = vec![13];
    assert!(bench_complexity(&cfg).is_err());
}

#[test]
fn fit_slope_recovers_line() {
    let x = [1.0, 2.0, 3.0, 4.0];
    let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
    assert!((fit_slope(&x, &y) - 3.0).abs() < 1e-12);
    assert!(fit_slope(&[1.0], &[1.0]).is_nan());
}

#[test]
fn export_of_missing_run_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert!(export_curves(&dir.path().join("nope"), None).is_err());
}

#[test]
fn export_of_empty_run_writes_headers() {
    let dir = tempfile::tempdir().unwrap();
    let s = export_curves(dir.path(), None).unwrap();
    assert_eq!(s.metrics_files, 0);
    assert_eq!(read(&s.nmse_curves), format!("{}\n", NMSE_HEADER.join(",")));
    assert_eq!(read(&s.power_curves), format!("{}\n", POWER_HEADER.join(",")));
    assert_eq!(read(&s.estimation_snr), format!("{}\n", ESTIMATION_HEADER.join(",")));
}

#[test]
fn export_groups_modes_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for (mode, name) in [(ContinualMode::Lars, "metrics_lars.csv"), (ContinualMode::Uniform, "metrics_uniform.csv")] {
        let mut cfg = small_config();
        cfg.predictor.mode = mode;
        let run = run_pipeline(&cfg, None).unwrap();
        write_records(dir.path().join(name), &run.records).unwrap();
    }
    let template = MacProblem::siso(&[1.0, 0.5], 1.0, vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
    let rows = sweep_snr(&template, &[0.0, 10.0], &SolverConfig::default(), 1).unwrap();
    write_sweep_csv(&rows, std::fs::File::create(dir.path().join("sweep_siso.csv")).unwrap()).unwrap();

    let out = dir.path().join("curves");
    let s = export_curves(dir.path(), Some(&out)).unwrap();
    assert_eq!((s.metrics_files, s.sweep_files), (2, 1));
    let nmse = read(&s.nmse_curves);
    let modes: std::collections::BTreeSet<&str> =
        nmse.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(modes.into_iter().collect::<Vec<_>>(), vec!["lars", "uniform"]);
    let power = read(&s.power_curves);
    assert_eq!(power.lines().count(), 3);
    assert!(power.lines().skip(1).all(|l| l.starts_with("sweep_siso,")));
    assert_eq!(read(&s.estimation_snr).lines().count(), 4);

    let first: Vec<String> = [&s.nmse_curves, &s.power_curves, &s.estimation_snr].iter().map(|p| read(p)).collect();
    let again = export_curves(dir.path(), Some(&out)).unwrap();
    let second: Vec<String> =
        [&again.nmse_curves, &again.power_curves, &again.estimation_snr].iter().map(|p| read(p)).collect();
    assert_eq!(first, second);
}
