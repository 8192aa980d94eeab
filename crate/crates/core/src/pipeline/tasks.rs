use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{DefaultScript, PredictorStage};
use crate::continual::{run_continual, script_slots, ContinualMode, ContinualRun};
use crate::error::{Result, TwinError};
use crate::grf::{fit_scene, nearest_neighbor, FitConfig, FitReport, GrfConfig, GrfModel, Observation};
use crate::linalg::CMat;
use crate::metrics::pooled_snr_db;
use crate::precoder::{scene_mac_problem, MacProblem, SceneMacConfig, SolverConfig};
use crate::scene::{
    generate_scene, ground_truth_channel, measure_channel, LinkGeometry, ScenarioLabel, ScenarioScript, Scene,
    SceneConfig, Vec3,
};

/// GRF fit on pilots from one fixed transmitter to receivers on a patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructionConfig {
    pub label: ScenarioLabel,
    pub scene_seed: u64,
    /// Overrides the preset scatterer count.
    pub num_scatterers: Option<usize>,
    pub tx: Vec3,
    pub patch_center: Vec3,
    /// Side of the square receiver patch in meters.
    pub patch_side: f64,
    /// Draw receivers in a cube instead of a horizontal square.
    pub volumetric: bool,
    pub train: usize,
    pub test: usize,
    pub snr_db: f64,
    pub data_seed: u64,
    pub num_primitives: usize,
    pub encoding_levels: usize,
    pub learning_rate: f64,
    /// Initial primitive size in meters.
    pub init_scale: f64,
    pub model_seed: u64,
    pub fit: FitConfig,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            label: ScenarioLabel::Indoor,
            scene_seed: 1,
            num_scatterers: Some(3),
            tx: [-3.0, 0.5, 1.0],
            patch_center: [1.5, -0.5, 0.0],
            patch_side: 0.2,
            volumetric: false,
            train: 200,
            test: 50,
            snr_db: 30.0,
            data_seed: 11,
            num_primitives: 128,
            encoding_levels: 6,
            learning_rate: 3e-3,
            init_scale: 0.05,
            model_seed: 1,
            fit: FitConfig {
                epochs: 200,
                batch_size: 16,
                seed: 1,
                auto_scale: true,
                fit_region: Some(0.0),
                final_lr_factor: 1.0,
            },
        }
    }
}

pub struct ReconstructionData {
    pub scene: Scene,
    pub train: Vec<Observation>,
    /// Held-out links with their noise-free channels.
    pub test: Vec<(Observation, CMat)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructionReport {
    pub held_out_snr_db: f64,
    pub nearest_neighbor_snr_db: f64,
    pub train_snr_db: f64,
    pub seconds: f64,
    pub epoch_loss: Vec<f64>,
}

impl ReconstructionConfig {
    pub fn scene_config(&self) -> SceneConfig {
        let mut cfg = SceneConfig::preset(self.label, self.scene_seed);
        if let Some(n) = self.num_scatterers {
            cfg.num_scatterers = n;
        }
        cfg
    }

    pub fn dataset(&self) -> Result<ReconstructionData> {
        if self.train == 0 || !(self.patch_side > 0.0) {
            return Err(TwinError::Config("reconstruction needs training links and a positive patch".into()));
        }
        let scene = generate_scene(&self.scene_config())?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.data_seed);
        let c = self.patch_center;
        let mut train = Vec::with_capacity(self.train);
        let mut test = Vec::with_capacity(self.test);
        for i in 0..self.train + self.test {
            let mut off = || self.patch_side * (rng.random::<f64>() - 0.5);
            let p = [c[0] + off(), c[1] + off(), if self.volumetric { c[2] + off() } else { c[2] }];
            let link = LinkGeometry::new(self.tx, p);
            let h = measure_channel(&scene, &link, self.snr_db, &mut rng)?.entries;
            let obs = Observation { p_tx: self.tx, p_rx: p, h };
            if i < self.train {
                train.push(obs);
            } else {
                test.push((obs, ground_truth_channel(&scene, &link)?.entries));
            }
        }
        Ok(ReconstructionData { scene, train, test })
    }

    pub fn model(&self, scene: &Scene) -> Result<GrfModel> {
        let mut gc = GrfConfig::for_scene(scene, self.num_primitives, self.model_seed);
        gc.encoding_levels = self.encoding_levels;
        gc.learning_rate = self.learning_rate;
        gc.geometry_learning_rate = Some(self.learning_rate);
        gc.init_log_scale = Some(self.init_scale.ln());
        GrfModel::new(gc)
    }
}

/// Fits a fresh model and scores it on the held-out links against the
/// noise-free channel, next to a nearest-neighbour lookup of the training
/// pilots.
pub fn run_reconstruction(cfg: &ReconstructionConfig) -> Result<(GrfModel, FitReport, ReconstructionReport)> {
    let data = cfg.dataset()?;
    if data.test.is_empty() {
        return Err(TwinError::Config("reconstruction needs held-out links".into()));
    }
    let mut model = cfg.model(&data.scene)?;
    let start = Instant::now();
    let fit = fit_scene(&mut model, &data.train, &cfg.fit)?;
    let seconds = start.elapsed().as_secs_f64();
    let snap = model.snapshot(cfg.tx)?;
    let pred: Vec<CMat> = data.test.iter().map(|(o, _)| snap.render(o.p_rx)).collect();
    let nn: Vec<CMat> = data
        .test
        .iter()
        .map(|(o, _)| nearest_neighbor(&data.train, o.p_tx, o.p_rx).cloned().expect("training set not empty"))
        .collect();
    let fitted: Vec<CMat> = data.train.iter().map(|o| snap.render(o.p_rx)).collect();
    let report = ReconstructionReport {
        held_out_snr_db: pooled_snr_db(data.test.iter().map(|(_, g)| g).zip(&pred))?,
        nearest_neighbor_snr_db: pooled_snr_db(data.test.iter().map(|(_, g)| g).zip(&nn))?,
        train_snr_db: pooled_snr_db(data.train.iter().map(|o| &o.h).zip(&fitted))?,
        seconds,
        epoch_loss: fit.epoch_loss.clone(),
    };
    Ok((model, fit, report))
}

/// Predictor run over a scenario script with pilot measurements as
/// estimates, optionally after a pretraining pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinualTask {
    pub script: Option<PathBuf>,
    pub default_script: DefaultScript,
    pub predictor: PredictorStage,
    /// Uniform-mode pass over the first slots of the script before the run;
    /// every mode starts from the resulting model.
    pub pretrain_slots: usize,
    pub pretrain_updates_per_slot: usize,
    pub seed: u64,
}

impl Default for ContinualTask {
    fn default() -> Self {
        let mut predictor = PredictorStage::default();
        predictor.mode = ContinualMode::Lars;
        Self {
            script: None,
            default_script: DefaultScript {
                slots_per_segment: 400,
                snr_start_db: 5.0,
                snr_end_db: 25.0,
            },
            predictor,
            pretrain_slots: 400,
            pretrain_updates_per_slot: 4,
            seed: 1,
        }
    }
}

impl ContinualTask {
    pub fn resolve_script(&self) -> Result<ScenarioScript> {
        match &self.script {
            Some(p) => ScenarioScript::from_json_file(p),
            None => {
                let d = &self.default_script;
                Ok(ScenarioScript::umi_shift(self.seed, d.slots_per_segment, d.snr_start_db, d.snr_end_db))
            }
        }
    }
}

/// One run per mode, all from the same pretrained model.
pub fn run_continual_modes(task: &ContinualTask, modes: &[ContinualMode]) -> Result<Vec<ContinualRun>> {
    let script = task.resolve_script()?;
    let slots = script_slots(&script, task.seed)?;
    let first = &script.segments[0].scene.resolve();
    let (nt, nr) = (first.tx_array.elements, first.rx_array.elements);
    let base = task.predictor.continual_config(nt, nr, task.seed);
    base.validate()?;
    let initial = if task.pretrain_slots > 0 {
        let mut pre = base.clone();
        pre.mode = ContinualMode::Uniform;
        pre.updates_per_slot = task.pretrain_updates_per_slot;
        let n = task.pretrain_slots.min(slots.len());
        Some(run_continual(slots[..n].iter().cloned().map(Ok), pre, None)?.learner.model)
    } else {
        None
    };
    modes
        .iter()
        .map(|&mode| {
            let mut cfg = base.clone();
            cfg.mode = mode;
            run_continual(slots.iter().cloned().map(Ok), cfg, initial.clone())
        })
        .collect()
}

/// Power/efficiency sweep over an SNR grid for a problem file or a
/// generated scene instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepTask {
    pub problem: Option<PathBuf>,
    pub scene: SceneMacConfig,
    pub snr_start_db: f64,
    pub snr_stop_db: f64,
    pub points: usize,
    pub threads: usize,
    pub solver: SolverConfig,
}

impl Default for SweepTask {
    fn default() -> Self {
        Self {
            problem: None,
            scene: SceneMacConfig::default(),
            snr_start_db: -10.0,
            snr_stop_db: 20.0,
            points: 13,
            threads: 1,
            solver: SolverConfig::default(),
        }
    }
}

impl SweepTask {
    pub fn grid(&self) -> Result<Vec<f64>> {
        if self.points == 0 || !(self.snr_start_db.is_finite() && self.snr_stop_db.is_finite()) {
            return Err(TwinError::Config("sweep grid needs points and finite bounds".into()));
        }
        if self.points == 1 {
            return Ok(vec![self.snr_start_db]);
        }
        let step = (self.snr_stop_db - self.snr_start_db) / (self.points - 1) as f64;
        Ok((0..self.points).map(|i| self.snr_start_db + step * i as f64).collect())
    }

    pub fn template(&self) -> Result<MacProblem> {
        match &self.problem {
            Some(p) => MacProblem::load(p),
            None => scene_mac_problem(&self.scene),
        }
    }
}
