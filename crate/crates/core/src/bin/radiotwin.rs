use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use radiotwin::continual::{write_metrics_csv, ContinualMode};
use radiotwin::grf::{write_telemetry, GrfModel};
use radiotwin::linalg::C64;
use radiotwin::pipeline::{
    bench_complexity, export_curves, run_continual_modes, run_pipeline, run_reconstruction, write_bench_csv,
    BenchConfig, ContinualTask, PipelineConfig, ReconstructionConfig, SweepTask,
};
use radiotwin::precoder::{save_solution, solve_min_energy, sweep_snr, write_sweep_csv, MacProblem, SolverConfig};
use radiotwin::scene::{generate_scene, ground_truth_channel, LinkGeometry, ScenarioLabel, SceneConfig, Vec3};
use radiotwin::tensor_io::Tensor;
use radiotwin::{Result, TwinError};

#[derive(Parser)]
#[command(name = "radiotwin", version, about = "Radio digital twin: GRF estimation, continual prediction, min-energy precoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scene and ground-truth channels for random receivers.
    Scene {
        #[command(flatten)]
        common: Common,
        /// Preset used when no scene config is given.
        #[arg(long, default_value = "indoor")]
        preset: ScenarioLabel,
        #[arg(long, default_value_t = 16)]
        links: usize,
    },
    /// Fit a GRF on synthetic pilots and score held-out links.
    TrainGrf {
        #[command(flatten)]
        common: Common,
    },
    /// Render channels from a GRF checkpoint.
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Transmitter position x,y,z.
        #[arg(long, value_parser = parse_point)]
        tx: Vec3,
        /// Receiver positions x,y,z (repeatable).
        #[arg(long, value_parser = parse_point, required = true)]
        rx: Vec<Vec3>,
        /// Output tensor file.
        #[arg(long, default_value = "render.bin")]
        out: PathBuf,
    },
    /// Run the continual predictor over a scenario script.
    Continual {
        #[command(flatten)]
        common: Common,
        /// Runs every mode when absent.
        #[arg(long)]
        mode: Option<ContinualMode>,
    },
    /// Solve a min-energy MAC problem file.
    Precode {
        #[command(flatten)]
        common: Common,
        /// Solver settings file.
        #[arg(long)]
        solver: Option<PathBuf>,
    },
    /// Total power and energy efficiency over an SNR grid.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Closed loop: GRF estimation, prediction and precoding every slot.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<ContinualMode>,
        /// Precode on the true channel.
        #[arg(long)]
        oracle_csi: bool,
    },
    /// Render, subset-check and MMSE-SIC scaling benchmark.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Turn run outputs into curve tables.
    Export {
        /// Run directory holding metrics*.csv and sweep*.csv.
        run: PathBuf,
        /// Defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_point(s: &str) -> std::result::Result<Vec3, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<std::result::Result<_, _>>()?;
    match v.as_slice() {
        [x, y, z] => Ok([*x, *y, *z]),
        _ => Err(format!("expected x,y,z, got {s:?}")),
    }
}

fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => Ok(T::default()),
    }
}

fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn scene_cmd(common: &Common, preset: ScenarioLabel, links: usize) -> Result<()> {
    let mut cfg = match &common.config {
        Some(p) => SceneConfig::from_json_file(p)?,
        None => SceneConfig::preset(preset, 0),
    };
    if let Some(s) = common.seed {
        cfg.rng_seed = s;
    }
    let scene = generate_scene(&cfg)?;
    std::fs::create_dir_all(&common.out)?;
    write_json(common.out.join("scene.json"), &cfg)?;
    let r = scene.radius();
    let tx = [0.0, 0.0, 0.05 * r];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut w = csv::Writer::from_path(common.out.join("links.csv"))?;
    w.write_record(["index", "tx_x", "tx_y", "tx_z", "rx_x", "rx_y", "rx_z"])?;
    let mut data: Vec<C64> = Vec::new();
    for i in 0..links {
        let rx = [rng.random_range(-0.4..0.4) * r, rng.random_range(-0.4..0.4) * r, 0.0];
        let h = ground_truth_channel(&scene, &LinkGeometry::new(tx, rx))?.entries;
        for a in 0..h.nrows() {
            for b in 0..h.ncols() {
                data.push(h[(a, b)]);
            }
        }
        let mut row = vec![i.to_string()];
        row.extend(tx.iter().chain(rx.iter()).map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    let meta = serde_json::json!({ "kind": "ground_truth", "links": "links.csv" });
    Tensor::complex(vec![links, scene.tx_elements(), scene.rx_elements()], data, meta)?
        .save(common.out.join("channels.bin"))?;
    println!("scene with {} scatterers, {links} links -> {}", cfg.num_scatterers, common.out.display());
    Ok(())
}

fn train_grf_cmd(common: &Common) -> Result<()> {
    let mut cfg: ReconstructionConfig = load_or_default(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.model_seed = s;
    }
    let (model, fit, report) = run_reconstruction(&cfg)?;
    std::fs::create_dir_all(&common.out)?;
    model.save(common.out.join("grf.ckpt"))?;
    write_telemetry(common.out.join("telemetry.csv"), &fit.telemetry)?;
    write_json(common.out.join("report.json"), &report)?;
    println!(
        "held-out SNR {:.2} dB, nearest neighbour {:.2} dB, {:.1} s",
        report.held_out_snr_db, report.nearest_neighbor_snr_db, report.seconds
    );
    Ok(())
}

fn render_cmd(checkpoint: &Path, tx: Vec3, rx: &[Vec3], out: &Path) -> Result<()> {
    let model = GrfModel::load(checkpoint)?;
    let snap = model.snapshot(tx)?;
    let (nt, nr) = model.shape();
    let mut data = Vec::with_capacity(rx.len() * nt * nr);
    for p in rx {
        let h = snap.render(*p);
        for a in 0..nt {
            for b in 0..nr {
                data.push(h[(a, b)]);
            }
        }
    }
    let meta = serde_json::json!({ "tx": tx, "rx": rx });
    Tensor::complex(vec![rx.len(), nt, nr], data, meta)?.save(out)?;
    println!("{} channels -> {}", rx.len(), out.display());
    Ok(())
}

fn continual_cmd(common: &Common, mode: Option<ContinualMode>) -> Result<()> {
    let mut task: ContinualTask = load_or_default(common.config.as_deref())?;
    if let Some(s) = common.seed {
        task.seed = s;
    }
    let modes = match mode {
        Some(m) => vec![m],
        None => vec![ContinualMode::Frozen, ContinualMode::Uniform, ContinualMode::Lars],
    };
    let runs = run_continual_modes(&task, &modes)?;
    std::fs::create_dir_all(&common.out)?;
    for (mode, run) in modes.iter().zip(&runs) {
        write_metrics_csv(common.out.join(format!("metrics_{mode}.csv")), &run.rows)?;
        run.learner.buffer.save(common.out.join(format!("replay_{mode}.ckpt")))?;
        let db: Vec<f64> = run.rows.iter().filter_map(|r| r.nmse_db).collect();
        let med = radiotwin::metrics::median(&db).unwrap_or(f64::NAN);
        println!("{mode}: {} slots, median NMSE {med:.2} dB", run.rows.len());
    }
    Ok(())
}

fn precode_cmd(common: &Common, solver: Option<&Path>) -> Result<()> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| TwinError::Config("precode needs --config <problem.json>".into()))?;
    let problem = MacProblem::load(path)?;
    let cfg: SolverConfig = load_or_default(solver)?;
    let sol = solve_min_energy(&problem, &cfg)?;
    std::fs::create_dir_all(&common.out)?;
    save_solution(&sol, common.out.join("solution.json"))?;
    println!(
        "objective {:.6e} W, order {:?}, status {}",
        sol.objective,
        sol.order.order,
        sol.diagnostics.status.as_str()
    );
    Ok(())
}

fn sweep_cmd(common: &Common) -> Result<()> {
    let mut task: SweepTask = load_or_default(common.config.as_deref())?;
    if let Some(s) = common.seed {
        task.scene.seed = s;
    }
    let template = task.template()?;
    let rows = sweep_snr(&template, &task.grid()?, &task.solver, task.threads)?;
    std::fs::create_dir_all(&common.out)?;
    write_sweep_csv(&rows, std::fs::File::create(common.out.join("sweep.csv"))?)?;
    for r in &rows {
        println!("{:>7.2} dB  {:.4e} W  {:.4e} bit/J  {}", r.snr_db, r.total_power_w, r.energy_eff, r.status);
    }
    Ok(())
}

fn pipeline_cmd(common: &Common, mode: Option<ContinualMode>, oracle_csi: bool) -> Result<()> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(m) = mode {
        cfg.predictor.mode = m;
    }
    cfg.oracle_csi |= oracle_csi;
    let run = run_pipeline(&cfg, Some(&common.out))?;
    let flagged = run.records.iter().filter(|r| r.status.as_str() != "ok").count();
    println!("{} slots, {flagged} flagged -> {}", run.records.len(), common.out.display());
    Ok(())
}

fn bench_cmd(common: &Common) -> Result<()> {
    let mut cfg: BenchConfig = load_or_default(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let report = bench_complexity(&cfg)?;
    std::fs::create_dir_all(&common.out)?;
    write_bench_csv(&report.rows, std::fs::File::create(common.out.join("bench.csv"))?)?;
    write_json(common.out.join("bench_report.json"), &report)?;
    println!(
        "render time slope {:.3}, FLOP slope {:.3}, subset growth {:.3}, MMSE-SIC slope {:.3}",
        report.render_time_slope, report.render_flop_slope, report.subset_growth, report.mmse_time_slope
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Scene { common, preset, links } => scene_cmd(&common, preset, links),
        Command::TrainGrf { common } => train_grf_cmd(&common),
        Command::Render { checkpoint, tx, rx, out } => render_cmd(&checkpoint, tx, &rx, &out),
        Command::Continual { common, mode } => continual_cmd(&common, mode),
        Command::Precode { common, solver } => precode_cmd(&common, solver.as_deref()),
        Command::Sweep { common } => sweep_cmd(&common),
        Command::Pipeline { common, mode, oracle_csi } => pipeline_cmd(&common, mode, oracle_csi),
        Command::Bench { common } => bench_cmd(&common),
        Command::Export { run, out } => {
            let s = export_curves(&run, out.as_deref())?;
            println!(
                "{} metrics files, {} sweeps -> {}",
                s.metrics_files,
                s.sweep_files,
                s.nmse_curves.parent().unwrap_or(Path::new(".")).display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
