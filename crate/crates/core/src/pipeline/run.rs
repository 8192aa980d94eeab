use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::PipelineConfig;
use crate::continual::{ContinualLearner, ContinualMode, ContinualSlot};
use crate::error::{Result, TwinError};
use crate::grf::{fit_scene, render_channel, FitConfig, GrfConfig, GrfModel, InitRegion, Observation};
use crate::linalg::{frob_sq, CMat};
use crate::metrics::{channel_snr_db, to_db};
use crate::precoder::{corner_rates, energy_efficiency, solve_min_energy, MacProblem};
use crate::scene::{
    add_measurement_noise, ground_truth_channel, play_script, LinkGeometry, ScenarioLabel, Scene, ScriptEvent,
    Segment, Vec3,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotStatus {
    Ok,
    /// The GRF step failed; the previous estimate was reused.
    GrfError,
    Infeasible,
    SolverError,
}

impl SlotStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SlotStatus::Ok => "ok",
            SlotStatus::GrfError => "grf_error",
            SlotStatus::Infeasible => "infeasible",
            SlotStatus::SolverError => "solver_error",
        }
    }
}

/// Wall-clock microseconds per stage of one slot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub measure_us: u64,
    pub grf_us: u64,
    pub predict_us: u64,
    pub precode_us: u64,
    pub total_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotRecord {
    pub t: u64,
    pub scenario_label: ScenarioLabel,
    /// Pilot measurement SNR.
    pub snr_db: f64,
    pub grf_updated: bool,
    /// Channel SNR of the estimate fed to the predictor.
    pub estimate_snr_db: Option<f64>,
    /// Forecast for this slot against the truth.
    pub nmse_db: Option<f64>,
    pub mode: ContinualMode,
    pub buffer_fill: usize,
    pub objective_w: Option<f64>,
    pub energy_eff: Option<f64>,
    /// Rate the tracked UE gets on the true channel with the precoder
    /// designed on the CSI estimate.
    pub achieved_rate: Option<f64>,
    pub status: SlotStatus,
    #[serde(skip)]
    pub timings: StageTimings,
}

pub struct PipelineRun {
    pub records: Vec<SlotRecord>,
    pub dir: Option<PathBuf>,
}

struct CellState {
    grf: GrfModel,
    history: VecDeque<Observation>,
    extra_channels: Vec<CMat>,
    noise_var: Option<f64>,
    slot_in_cell: usize,
    last_estimate: Option<CMat>,
}

fn us(start: Instant) -> u64 {
    start.elapsed().as_micros() as u64
}

fn cell_state(cfg: &PipelineConfig, scene: &Scene, seg: &Segment, index: usize) -> Result<CellState> {
    let g = &cfg.grf;
    let lambda = scene.config.wavelength;
    let tr = &seg.trajectory;
    let region = InitRegion::bounding_box([&tr.rx_start, &tr.rx_end], g.region_pad_wavelengths * lambda)
        .ok_or_else(|| TwinError::Config("empty trajectory".into()))?;
    let grf_config = GrfConfig {
        num_primitives: g.num_primitives,
        encoding_levels: g.encoding_levels,
        latent_dim: g.latent_dim,
        hidden_width: g.hidden_width,
        hidden_layers: g.hidden_layers,
        tx_elements: scene.tx_elements(),
        rx_elements: scene.rx_elements(),
        learning_rate: g.learning_rate,
        geometry_learning_rate: None,
        output_scale: 1.0,
        init_region: region,
        init_log_scale: Some((g.init_scale_wavelengths * lambda).ln()),
        seed: cfg.seed.wrapping_add(1000 + index as u64),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2000 + index as u64));
    let r = 0.4 * scene.radius();
    let mut extra_channels = Vec::with_capacity(cfg.precoder.extra_users);
    while extra_channels.len() < cfg.precoder.extra_users {
        let p: Vec3 = [rng.random_range(-r..r), rng.random_range(-r..r), 1.5];
        let far = (0..3).map(|k| (p[k] - tr.tx[k]).powi(2)).sum::<f64>().sqrt() > 0.05 * scene.radius();
        if far && scene.contains(p) {
            extra_channels.push(ground_truth_channel(scene, &LinkGeometry::new(tr.tx, p))?.entries);
        }
    }
    Ok(CellState {
        grf: GrfModel::new(grf_config)?,
        history: VecDeque::with_capacity(g.history),
        extra_channels,
        noise_var: None,
        slot_in_cell: 0,
        last_estimate: None,
    })
}

fn grf_update(cfg: &PipelineConfig, cell: &mut CellState, rng: &mut ChaCha8Rng) -> Result<()> {
    let g = &cfg.grf;
    for _ in 0..g.steps_per_update {
        let n = cell.history.len();
        let take = g.batch_size.min(n);
        let idx = rand::seq::index::sample(rng, n, take).into_vec();
        let batch: Vec<Observation> = idx.iter().map(|&i| cell.history[i].clone()).collect();
        let fit = FitConfig {
            epochs: 1,
            batch_size: batch.len(),
            seed: rng.random(),
            auto_scale: true,
            fit_region: None,
            final_lr_factor: 1.0,
        };
        let rep = fit_scene(&mut cell.grf, &batch, &fit)?;
        if rep.rejected_steps > 0 {
            return Err(TwinError::NonFinite("GRF gradient".into()));
        }
    }
    Ok(())
}

/// Runs the closed loop over the whole script. With `out` set, writes
/// `metrics.csv`, `timings.csv`, `config.json` and end-of-run checkpoints
/// (`grf.ckpt` of the last cell, `replay.ckpt`).
pub fn run_pipeline(cfg: &PipelineConfig, out: Option<&Path>) -> Result<PipelineRun> {
    cfg.validate()?;
    let script = cfg.resolve_script()?;
    let mut player = play_script(&script)?;
    let first = script.segments[0].scene.resolve();
    let (nt, nr) = (first.tx_array.elements, first.rx_array.elements);
    let mut learner = ContinualLearner::new(cfg.predictor.continual_config(nt, nr, cfg.seed), None)?;
    let mut meas_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut grf_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let horizon = cfg.predictor.horizon as u64;
    let p = &cfg.precoder;
    let weights = p.weights.clone().unwrap_or_else(|| vec![1.0; 1 + p.extra_users]);
    let mut b_min = vec![p.b_min];
    b_min.extend(std::iter::repeat_n(p.extra_b_min, p.extra_users));

    let mut records = Vec::with_capacity(script.total_slots());
    let mut cell: Option<(usize, CellState)> = None;
    let mut handover = false;
    let mut forecasts: VecDeque<(u64, CMat)> = VecDeque::new();

    while let Some(ev) = player.next() {
        let sample = match ev? {
            ScriptEvent::Handover(_) => {
                handover = true;
                continue;
            }
            ScriptEvent::Slot(s) => s,
        };
        let slot_start = Instant::now();
        let mut timings = StageTimings::default();
        let mut status = SlotStatus::Ok;

        let clock = Instant::now();
        if cell.as_ref().is_none_or(|(i, _)| *i != sample.segment) {
            let seg = &script.segments[sample.segment];
            cell = Some((sample.segment, cell_state(cfg, player.scene(sample.segment), seg, sample.segment)?));
        }
        let (_, state) = cell.as_mut().expect("cell initialised");
        let truth = &sample.h_gt;
        let measured = add_measurement_noise(truth, sample.snr_db, &mut meas_rng);
        if state.noise_var.is_none() {
            let mut gain = frob_sq(truth);
            let mut count = truth.len();
            for h in &state.extra_channels {
                gain += frob_sq(h);
                count += h.len();
            }
            state.noise_var = Some(gain / count as f64 * 10f64.powf(-p.snr_db / 10.0));
        }
        timings.measure_us = us(clock);

        let clock = Instant::now();
        let refresh = state.slot_in_cell < cfg.grf.warmup_slots || sample.t % cfg.grf.refresh_period as u64 == 0;
        let estimate = if refresh {
            if state.history.len() == cfg.grf.history {
                state.history.pop_front();
            }
            state.history.push_back(Observation {
                p_tx: sample.link.p_tx,
                p_rx: sample.link.p_rx,
                h: measured.clone(),
            });
            if grf_update(cfg, state, &mut grf_rng).is_err() {
                status = SlotStatus::GrfError;
            }
            measured.clone()
        } else {
            match render_channel(&state.grf, sample.link.p_tx, sample.link.p_rx) {
                Ok(h) if h.iter().all(|z| z.re.is_finite() && z.im.is_finite()) => h,
                _ => {
                    status = SlotStatus::GrfError;
                    state.last_estimate.clone().unwrap_or_else(|| measured.clone())
                }
            }
        };
        state.slot_in_cell += 1;
        state.last_estimate = Some(estimate.clone());
        timings.grf_us = us(clock);

        let clock = Instant::now();
        let outcome = learner.observe(&ContinualSlot {
            t: sample.t,
            label: sample.label,
            snr_db: sample.snr_db,
            estimate: estimate.clone(),
            measured: estimate.clone(),
            truth: truth.clone(),
            handover,
        })?;
        handover = false;
        while forecasts.front().is_some_and(|(t, _)| *t < sample.t) {
            forecasts.pop_front();
        }
        let csi = if cfg.oracle_csi {
            truth.clone()
        } else if forecasts.front().is_some_and(|(t, _)| *t == sample.t) {
            forecasts.pop_front().unwrap().1
        } else {
            estimate.clone()
        };
        if let Some(f) = outcome.forecast {
            forecasts.push_back((sample.t + horizon, f));
        }
        timings.predict_us = us(clock);

        let clock = Instant::now();
        let noise_var = state.noise_var.expect("noise set");
        let mut channels = vec![vec![csi]];
        channels.extend(state.extra_channels.iter().map(|h| vec![h.clone()]));
        let (mut objective_w, mut energy_eff, mut achieved_rate) = (None, None, None);
        let solved = MacProblem::new(channels, noise_var, b_min.clone(), weights.clone())
            .and_then(|prob| solve_min_energy(&prob, &p.solver));
        match solved {
            Ok(sol) => {
                objective_w = Some(sol.objective);
                energy_eff = Some(energy_efficiency(&sol));
                let mut true_channels = vec![vec![truth.clone()]];
                true_channels.extend(state.extra_channels.iter().map(|h| vec![h.clone()]));
                let true_prob = MacProblem::new(true_channels, noise_var, b_min.clone(), weights.clone())?;
                achieved_rate = corner_rates(&true_prob, &sol.covariances, &sol.order.order)
                    .ok()
                    .map(|r| r.totals[0]);
            }
            Err(TwinError::Infeasible(_)) => status = SlotStatus::Infeasible,
            Err(TwinError::Numerical(_) | TwinError::NonFinite(_)) => status = SlotStatus::SolverError,
            Err(e) => return Err(e),
        }
        timings.precode_us = us(clock);

        records.push(SlotRecord {
            t: sample.t,
            scenario_label: sample.label,
            snr_db: sample.snr_db,
            grf_updated: refresh,
            estimate_snr_db: channel_snr_db(truth, &estimate).ok(),
            nmse_db: outcome.nmse.map(to_db),
            mode: learner.config.mode,
            buffer_fill: outcome.buffer_fill,
            objective_w,
            energy_eff,
            achieved_rate,
            status,
            timings,
        });
        records.last_mut().unwrap().timings.total_us = us(slot_start);
    }

    let dir = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            write_records(dir.join("metrics.csv"), &records)?;
            write_timings(dir.join("timings.csv"), &records)?;
            std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
            if let Some((_, state)) = &cell {
                state.grf.save(dir.join("grf.ckpt"))?;
            }
            learner.buffer.save(dir.join("replay.ckpt"))?;
            Some(dir.to_path_buf())
        }
        None => None,
    };
    Ok(PipelineRun { records, dir })
}

fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => x.to_string(),
        _ => "NA".into(),
    }
}

pub const METRICS_HEADER: [&str; 12] = [
    "t",
    "scenario_label",
    "snr_db",
    "grf_updated",
    "estimate_snr_db",
    "nmse_db",
    "mode",
    "buffer_fill",
    "objective_w",
    "energy_eff",
    "achieved_rate",
    "status",
];

/// Deterministic per-slot metrics; wall-clock timings go to a separate file.
pub fn write_records(path: impl AsRef<Path>, records: &[SlotRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in records {
        w.write_record([
            r.t.to_string(),
            r.scenario_label.to_string(),
            r.snr_db.to_string(),
            (r.grf_updated as u8).to_string(),
            opt(r.estimate_snr_db),
            opt(r.nmse_db),
            r.mode.to_string(),
            r.buffer_fill.to_string(),
            opt(r.objective_w),
            opt(r.energy_eff),
            opt(r.achieved_rate),
            r.status.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_timings(path: impl AsRef<Path>, records: &[SlotRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "measure_us", "grf_us", "predict_us", "precode_us", "total_us"])?;
    for r in records {
        let s = &r.timings;
        w.write_record([r.t, s.measure_us, s.grf_us, s.predict_us, s.precode_us, s.total_us].map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
