use std::collections::VecDeque;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::predictor::{
    predictor_update, sample_batch, EntryMeta, PredictionWindow, PredictorConfig, PredictorModel,
    ReplayEntry, Source,
};
use super::replay::{ReplayBuffer, ReplayMode};
use crate::error::{Result, TwinError};
use crate::linalg::CMat;
use crate::metrics::{nmse, to_db};
use crate::scene::{add_measurement_noise, play_script, ScenarioLabel, ScenarioScript, ScriptEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContinualMode {
    Uniform,
    Lars,
    /// No predictor updates.
    Frozen,
}

impl ContinualMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ContinualMode::Uniform => "uniform",
            ContinualMode::Lars => "lars",
            ContinualMode::Frozen => "frozen",
        }
    }

    fn replay_mode(self) -> ReplayMode {
        match self {
            ContinualMode::Lars => ReplayMode::Lars,
            _ => ReplayMode::Uniform,
        }
    }
}

impl std::fmt::Display for ContinualMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ContinualMode {
    type Err = TwinError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(ContinualMode::Uniform),
            "lars" => Ok(ContinualMode::Lars),
            "frozen" => Ok(ContinualMode::Frozen),
            other => Err(TwinError::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinualConfig {
    pub predictor: PredictorConfig,
    pub buffer_capacity: usize,
    pub epsilon: f64,
    pub batch_current: usize,
    pub batch_replay: usize,
    /// Slots observed before the first update; the buffer capacity when
    /// absent.
    #[serde(default)]
    pub warmup_slots: Option<usize>,
    /// Most recent samples of the current cell kept for the current-data
    /// side of the batch. Cleared at every handover.
    pub current_capacity: usize,
    pub updates_per_slot: usize,
    pub mode: ContinualMode,
    pub seed: u64,
}

impl ContinualConfig {
    pub fn new(tx_elements: usize, rx_elements: usize) -> Self {
        Self {
            predictor: PredictorConfig::new(tx_elements, rx_elements),
            buffer_capacity: 256,
            epsilon: 1e-3,
            batch_current: 16,
            batch_replay: 16,
            warmup_slots: None,
            current_capacity: 64,
            updates_per_slot: 1,
            mode: ContinualMode::Uniform,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.predictor.validate()?;
        if self.buffer_capacity == 0 || self.current_capacity == 0 {
            return Err(TwinError::Config("buffer capacities must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(TwinError::Config("epsilon must be positive".into()));
        }
        if self.batch_current + self.batch_replay == 0 {
            return Err(TwinError::Config("empty batch configuration".into()));
        }
        Ok(())
    }

    pub fn warmup(&self) -> usize {
        self.warmup_slots.unwrap_or(self.buffer_capacity)
    }
}

/// Everything the learner sees in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinualSlot {
    pub t: u64,
    pub label: ScenarioLabel,
    pub snr_db: f64,
    /// Channel estimate fed into the window (GRF render or measurement).
    pub estimate: CMat,
    /// Measured channel used as training target.
    pub measured: CMat,
    /// Noise-free channel used only for scoring.
    pub truth: CMat,
    /// First slot after a handover marker.
    pub handover: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub t: u64,
    /// NMSE of the forecast that targeted this slot, against the truth.
    pub nmse: Option<f64>,
    /// NMSE of repeating the newest frame of the same window.
    pub persistence_nmse: Option<f64>,
    /// Forecast for slot `t + horizon`, once a full window exists.
    pub forecast: Option<CMat>,
    pub buffer_fill: usize,
    pub buffer_seen: u64,
    pub updates: usize,
    pub rejected_updates: usize,
}

#[derive(Clone)]
struct Pending {
    target_t: u64,
    prediction: CMat,
    window: PredictionWindow,
}

/// Stateful per-slot loop: window, forecast, score, store, update.
#[derive(Clone)]
pub struct ContinualLearner {
    pub config: ContinualConfig,
    pub model: PredictorModel,
    pub buffer: ReplayBuffer<ReplayEntry>,
    current: VecDeque<ReplayEntry>,
    history: VecDeque<CMat>,
    pending: VecDeque<Pending>,
    rng: ChaCha8Rng,
    slots: usize,
}

impl ContinualLearner {
    pub fn new(config: ContinualConfig, model: Option<PredictorModel>) -> Result<Self> {
        config.validate()?;
        let model = match model {
            Some(m) => {
                let p = &config.predictor;
                let c = &m.config;
                if (c.window, c.horizon, c.tx_elements, c.rx_elements)
                    != (p.window, p.horizon, p.tx_elements, p.rx_elements)
                {
                    return Err(TwinError::Config("initial predictor shape disagrees with config".into()));
                }
                m
            }
            None => PredictorModel::new(config.predictor.clone())?,
        };
        let buffer = ReplayBuffer::new(
            config.buffer_capacity,
            config.mode.replay_mode(),
            config.epsilon,
            config.seed ^ 0x5eed_b0ff,
        )?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            model,
            buffer,
            current: VecDeque::new(),
            history: VecDeque::new(),
            pending: VecDeque::new(),
            slots: 0,
            config,
        })
    }

    /// Replaces the replay buffer, e.g. with one restored from a checkpoint
    /// carried over from a previous cell.
    pub fn set_buffer(&mut self, buffer: ReplayBuffer<ReplayEntry>) {
        self.buffer = buffer;
    }

    pub fn current_len(&self) -> usize {
        self.current.len()
    }

    pub fn observe(&mut self, slot: &ContinualSlot) -> Result<SlotOutcome> {
        let pc = &self.config.predictor;
        let shape = (pc.tx_elements, pc.rx_elements);
        for m in [&slot.estimate, &slot.measured, &slot.truth] {
            if m.shape() != shape {
                return Err(TwinError::shape(format!("{shape:?}"), format!("{:?}", m.shape())));
            }
        }
        if slot.handover {
            // The replay buffer travels with the UE; only current-cell data
            // is dropped.
            self.current.clear();
        }
        let mut out = SlotOutcome {
            t: slot.t,
            nmse: None,
            persistence_nmse: None,
            forecast: None,
            buffer_fill: 0,
            buffer_seen: 0,
            updates: 0,
            rejected_updates: 0,
        };

        while self.pending.front().is_some_and(|p| p.target_t < slot.t) {
            self.pending.pop_front();
        }
        if self.pending.front().is_some_and(|p| p.target_t == slot.t) {
            let p = self.pending.pop_front().unwrap();
            out.nmse = Some(nmse(&slot.truth, &p.prediction)?);
            out.persistence_nmse = Some(nmse(&slot.truth, p.window.last())?);
            let loss = nmse(&slot.measured, &p.prediction)?;
            let entry = ReplayEntry::new(
                p.window,
                slot.measured.clone(),
                EntryMeta {
                    label: slot.label,
                    snr_db: slot.snr_db,
                    t: slot.t,
                },
            )?;
            self.buffer.insert(entry.clone(), loss)?;
            self.current.push_back(entry);
            while self.current.len() > self.config.current_capacity {
                self.current.pop_front();
            }
        }

        self.slots += 1;
        if self.config.mode != ContinualMode::Frozen
            && self.slots > self.config.warmup()
            && !self.current.is_empty()
        {
            for _ in 0..self.config.updates_per_slot {
                let current: Vec<ReplayEntry> = self.current.iter().cloned().collect();
                let b_curr = self.config.batch_current.min(current.len());
                let batch = sample_batch(
                    &mut self.buffer,
                    &current,
                    b_curr,
                    self.config.batch_replay,
                    &mut self.rng,
                )?;
                let lr = self.model.config.learning_rate;
                let rep = predictor_update(&mut self.model, &batch, lr)?;
                if rep.accepted {
                    out.updates += 1;
                    for (item, loss) in batch.items.iter().zip(&rep.loss.per_item) {
                        if let Source::Replay(i) = item.source {
                            self.buffer.set_loss(i, *loss)?;
                        }
                    }
                } else {
                    out.rejected_updates += 1;
                }
            }
        }

        self.history.push_back(slot.estimate.clone());
        while self.history.len() > pc.window {
            self.history.pop_front();
        }
        if self.history.len() == pc.window {
            let window = PredictionWindow::new(self.history.iter().cloned().collect(), slot.t, pc.horizon)?;
            let prediction = self.model.forecast(&window)?;
            out.forecast = Some(prediction.clone());
            self.pending.push_back(Pending {
                target_t: slot.t + pc.horizon as u64,
                prediction,
                window,
            });
        }
        out.buffer_fill = self.buffer.len();
        out.buffer_seen = self.buffer.seen();
        Ok(out)
    }
}

/// One line of the continual metrics log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub t: u64,
    pub scenario_label: ScenarioLabel,
    pub snr_db: f64,
    pub nmse: Option<f64>,
    pub nmse_db: Option<f64>,
    pub mode: ContinualMode,
    pub buffer_fill: usize,
    #[serde(skip)]
    pub persistence_nmse: Option<f64>,
}

pub struct ContinualRun {
    pub rows: Vec<MetricsRow>,
    pub learner: ContinualLearner,
}

/// Drives a learner over a slot stream.
pub fn run_continual(
    slots: impl IntoIterator<Item = Result<ContinualSlot>>,
    config: ContinualConfig,
    initial: Option<PredictorModel>,
) -> Result<ContinualRun> {
    let mut learner = ContinualLearner::new(config, initial)?;
    let mut rows = Vec::new();
    for slot in slots {
        let slot = slot?;
        let out = learner.observe(&slot)?;
        rows.push(MetricsRow {
            t: slot.t,
            scenario_label: slot.label,
            snr_db: slot.snr_db,
            nmse: out.nmse,
            nmse_db: out.nmse.map(to_db),
            mode: learner.config.mode,
            buffer_fill: out.buffer_fill,
            persistence_nmse: out.persistence_nmse,
        });
    }
    Ok(ContinualRun { rows, learner })
}

/// Plays a script and attaches pilot measurements at each slot's SNR. The
/// measurement doubles as the estimate (oracle estimation).
pub fn script_slots(script: &ScenarioScript, seed: u64) -> Result<Vec<ContinualSlot>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(script.total_slots());
    let mut handover = false;
    for ev in play_script(script)? {
        match ev? {
            ScriptEvent::Handover(_) => handover = true,
            ScriptEvent::Slot(s) => {
                let truth = s.h_gt;
                let measured = add_measurement_noise(&truth, s.snr_db, &mut rng);
                out.push(ContinualSlot {
                    t: s.t,
                    label: s.label,
                    snr_db: s.snr_db,
                    estimate: measured.clone(),
                    measured,
                    truth,
                    handover,
                });
                handover = false;
            }
        }
    }
    Ok(out)
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(["t", "scenario_label", "snr_db", "nmse", "nmse_db", "mode", "buffer_fill"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
