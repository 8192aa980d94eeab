use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::continual::{ContinualConfig, ContinualMode, PredictorConfig};
use crate::error::{Result, TwinError};
use crate::precoder::SolverConfig;
use crate::scene::ScenarioScript;

/// Script used when no script file is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefaultScript {
    pub slots_per_segment: usize,
    pub snr_start_db: f64,
    pub snr_end_db: f64,
}

impl Default for DefaultScript {
    fn default() -> Self {
        Self {
            slots_per_segment: 100,
            snr_start_db: 5.0,
            snr_end_db: 25.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrfStage {
    pub num_primitives: usize,
    pub encoding_levels: usize,
    pub latent_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub learning_rate: f64,
    /// Slots between GRF updates against a fresh measurement (Δ_GRF).
    pub refresh_period: usize,
    /// Every slot of a cell is a refresh slot while fewer than this many
    /// slots of the cell have been played.
    pub warmup_slots: usize,
    /// Most recent measurements kept as GRF training data.
    pub history: usize,
    pub batch_size: usize,
    pub steps_per_update: usize,
    /// Padding of the initial primitive box around the UE track, in
    /// wavelengths.
    pub region_pad_wavelengths: f64,
    /// Initial primitive size, in wavelengths.
    pub init_scale_wavelengths: f64,
}

impl Default for GrfStage {
    fn default() -> Self {
        Self {
            num_primitives: 64,
            encoding_levels: 6,
            latent_dim: 16,
            hidden_width: 32,
            hidden_layers: 2,
            learning_rate: 3e-3,
            refresh_period: 4,
            warmup_slots: 16,
            history: 64,
            batch_size: 8,
            steps_per_update: 2,
            region_pad_wavelengths: 1.0,
            init_scale_wavelengths: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorStage {
    pub window: usize,
    pub horizon: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub buffer_capacity: usize,
    pub epsilon: f64,
    pub batch_current: usize,
    pub batch_replay: usize,
    pub warmup_slots: usize,
    pub updates_per_slot: usize,
    pub mode: ContinualMode,
}

impl Default for PredictorStage {
    fn default() -> Self {
        Self {
            window: 8,
            horizon: 1,
            hidden_width: 64,
            hidden_layers: 2,
            learning_rate: 1e-3,
            lambda: 0.5,
            buffer_capacity: 256,
            epsilon: 1e-3,
            batch_current: 16,
            batch_replay: 16,
            warmup_slots: 32,
            updates_per_slot: 1,
            mode: ContinualMode::Lars,
        }
    }
}

impl PredictorStage {
    pub fn continual_config(&self, nt: usize, nr: usize, seed: u64) -> ContinualConfig {
        let mut predictor = PredictorConfig::new(nt, nr);
        predictor.window = self.window;
        predictor.horizon = self.horizon;
        predictor.hidden_width = self.hidden_width;
        predictor.hidden_layers = self.hidden_layers;
        predictor.learning_rate = self.learning_rate;
        predictor.lambda = self.lambda;
        predictor.seed = seed;
        let mut c = ContinualConfig::new(nt, nr);
        c.predictor = predictor;
        c.buffer_capacity = self.buffer_capacity;
        c.epsilon = self.epsilon;
        c.batch_current = self.batch_current;
        c.batch_replay = self.batch_replay;
        c.warmup_slots = Some(self.warmup_slots);
        c.updates_per_slot = self.updates_per_slot;
        c.mode = self.mode;
        c.seed = seed;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrecoderStage {
    /// Rate target of the tracked UE, bits/s/Hz.
    pub b_min: f64,
    /// Static users sharing the uplink with the tracked UE.
    pub extra_users: usize,
    pub extra_b_min: f64,
    /// Energy weights, tracked UE first; all ones when absent.
    pub weights: Option<Vec<f64>>,
    /// Mean channel gain over noise at the start of each cell.
    pub snr_db: f64,
    pub solver: SolverConfig,
}

impl Default for PrecoderStage {
    fn default() -> Self {
        Self {
            b_min: 2.0,
            extra_users: 2,
            extra_b_min: 1.0,
            weights: None,
            snr_db: 10.0,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Scenario script file; the built-in micro-cell walk when absent.
    pub script: Option<PathBuf>,
    pub default_script: DefaultScript,
    pub grf: GrfStage,
    pub predictor: PredictorStage,
    pub precoder: PrecoderStage,
    /// Precode on the true channel instead of the forecast.
    pub oracle_csi: bool,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            script: None,
            default_script: DefaultScript::default(),
            grf: GrfStage::default(),
            predictor: PredictorStage::default(),
            precoder: PrecoderStage::default(),
            oracle_csi: false,
            seed: 1,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: PipelineConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        // relative script paths are relative to the config file
        if let (Some(s), Some(dir)) = (&cfg.script, path.parent()) {
            if s.is_relative() {
                cfg.script = Some(dir.join(s));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grf;
        if g.refresh_period == 0 {
            return Err(TwinError::Config("GRF refresh period must be >= 1".into()));
        }
        if g.history == 0 || g.batch_size == 0 || g.num_primitives == 0 {
            return Err(TwinError::Config("GRF history, batch size and primitive count must be positive".into()));
        }
        if !(g.region_pad_wavelengths >= 0.0 && g.init_scale_wavelengths > 0.0) {
            return Err(TwinError::Config("GRF region padding must be >= 0 and init scale > 0".into()));
        }
        if let Some(s) = &self.script {
            if !s.exists() {
                return Err(TwinError::Config(format!("script file {} does not exist", s.display())));
            }
        }
        if self.script.is_none() && self.default_script.slots_per_segment == 0 {
            return Err(TwinError::Config("default script needs slots".into()));
        }
        let p = &self.precoder;
        if !(p.b_min >= 0.0 && p.extra_b_min >= 0.0 && p.snr_db.is_finite()) {
            return Err(TwinError::Config("precoder targets must be >= 0 and SNR finite".into()));
        }
        if let Some(w) = &p.weights {
            if w.len() != 1 + p.extra_users {
                return Err(TwinError::shape(1 + p.extra_users, w.len()));
            }
        }
        p.solver.validate()?;
        self.predictor.continual_config(1, 1, self.seed).validate()
    }

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
