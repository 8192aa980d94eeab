use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TwinError};
use crate::scene::{generate_scene, ground_truth_channel, LinkGeometry, ScenarioLabel, SceneConfig};

use super::problem::MacProblem;
use super::solve::{solve_min_energy, PrecoderSolution, SolverConfig};

/// Bits per joule per hertz: total achieved rate over total raw power.
/// Zero power with zero rate is defined as 0.
pub fn energy_efficiency(solution: &PrecoderSolution) -> f64 {
    efficiency(solution.rates.totals.iter().sum(), solution.total_power())
}

pub fn efficiency(total_rate: f64, total_power: f64) -> f64 {
    if total_power > 0.0 {
        total_rate / total_power
    } else {
        0.0
    }
}

/// Noise variance giving mean per-entry channel gain over noise of `snr_db`.
pub fn noise_for_snr(problem: &MacProblem, snr_db: f64) -> f64 {
    problem.mean_gain() * 10f64.powf(-snr_db / 10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub snr_db: f64,
    pub total_power_w: f64,
    pub energy_eff: f64,
    pub status: String,
}

/// Re-solves `template` at every SNR in `grid` (ascending). Points are
/// solved on up to `threads` workers; rows come back in grid order.
pub fn sweep_snr(template: &MacProblem, grid: &[f64], cfg: &SolverConfig, threads: usize) -> Result<Vec<SweepRow>> {
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(TwinError::Config("SNR grid must be strictly ascending".into()));
    }
    template.validate()?;
    let solve_point = |snr: f64| -> SweepRow {
        let res = template
            .with_noise_var(noise_for_snr(template, snr))
            .and_then(|p| solve_min_energy(&p, cfg));
        match res {
            Ok(sol) => SweepRow {
                snr_db: snr,
                total_power_w: sol.total_power(),
                energy_eff: energy_efficiency(&sol),
                status: sol.diagnostics.status.as_str().to_string(),
            },
            Err(e) => SweepRow {
                snr_db: snr,
                total_power_w: f64::NAN,
                energy_eff: f64::NAN,
                status: match e {
                    TwinError::Infeasible(_) => "infeasible".into(),
                    _ => "error".into(),
                },
            },
        }
    };
    let workers = threads.clamp(1, grid.len().max(1));
    let mut rows: Vec<Option<SweepRow>> = vec![None; grid.len()];
    std::thread::scope(|s| {
        let chunks: Vec<_> = rows.chunks_mut(grid.len().div_ceil(workers).max(1)).collect();
        let mut start = 0;
        for chunk in chunks {
            let lo = start;
            start += chunk.len();
            let solve_point = &solve_point;
            s.spawn(move || {
                for (i, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(solve_point(grid[lo + i]));
                }
            });
        }
    });
    Ok(rows.into_iter().map(|r| r.expect("every point solved")).collect())
}

pub fn write_sweep_csv(rows: &[SweepRow], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["snr_db", "total_power_w", "energy_eff", "status"])?;
    for r in rows {
        wr.write_record([
            r.snr_db.to_string(),
            r.total_power_w.to_string(),
            r.energy_eff.to_string(),
            r.status.clone(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// Uplink instance in a generated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneMacConfig {
    pub label: ScenarioLabel,
    pub seed: u64,
    pub users: usize,
    pub tones: usize,
    /// Relative spacing between adjacent tone frequencies.
    pub tone_spacing: f64,
    pub user_antennas: usize,
    pub bs_antennas: usize,
    pub b_min: f64,
    pub snr_db: f64,
}

impl Default for SceneMacConfig {
    fn default() -> Self {
        Self {
            label: ScenarioLabel::Indoor,
            seed: 1,
            users: 3,
            tones: 2,
            tone_spacing: 0.02,
            user_antennas: 2,
            bs_antennas: 2,
            b_min: 2.0,
            snr_db: 10.0,
        }
    }
}

/// Builds a MAC problem from a scene preset: the base station sits near
/// the scene centre, users are drawn inside 40% of the scene radius. Each
/// tone re-evaluates the paths at a shifted wavelength.
pub fn scene_mac_problem(cfg: &SceneMacConfig) -> Result<MacProblem> {
    if cfg.users == 0 || cfg.tones == 0 {
        return Err(TwinError::Config("scene instance needs users and tones".into()));
    }
    let base = SceneConfig::preset(cfg.label, cfg.seed).with_arrays(cfg.user_antennas, cfg.bs_antennas);
    let r = 0.5 * base.diameter;
    let bs = [0.0, 0.0, 0.05 * r];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d61_6321);
    let positions: Vec<[f64; 3]> = (0..cfg.users)
        .map(|_| loop {
            let p = [
                rng.random_range(-0.4..0.4) * r,
                rng.random_range(-0.4..0.4) * r,
                0.0,
            ];
            let d = ((p[0] - bs[0]).powi(2) + (p[1] - bs[1]).powi(2) + bs[2].powi(2)).sqrt();
            if d > 0.1 * r && (p[0] * p[0] + p[1] * p[1]).sqrt() < 0.4 * r {
                break p;
            }
        })
        .collect();
    let mut channels = vec![Vec::with_capacity(cfg.tones); cfg.users];
    for n in 0..cfg.tones {
        let shift = 1.0 + (n as f64 - 0.5 * (cfg.tones as f64 - 1.0)) * cfg.tone_spacing;
        let mut sc = base.clone();
        sc.wavelength = base.wavelength / shift;
        let scene = generate_scene(&sc)?;
        for (u, p) in positions.iter().enumerate() {
            let h = ground_truth_channel(&scene, &LinkGeometry::new(*p, bs))?;
            channels[u].push(h.entries.transpose());
        }
    }
    let weights = vec![1.0; cfg.users];
    let b_min = vec![cfg.b_min; cfg.users];
    let mut p = MacProblem::new(channels, 1.0, b_min, weights)?;
    p.noise_var = noise_for_snr(&p, cfg.snr_db);
    p.validate()?;
    Ok(p)
}
