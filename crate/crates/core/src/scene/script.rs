use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{generate_scene, ground_truth_channel, LinkGeometry, ScenarioLabel, Scene, SceneConfig, Vec3};
use crate::error::{Result, TwinError};
use crate::linalg::CMat;

/// Either a named preset or a full inline scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SceneRef {
    Preset {
        preset: ScenarioLabel,
        seed: u64,
        #[serde(default)]
        tx_elements: Option<usize>,
        #[serde(default)]
        rx_elements: Option<usize>,
    },
    Inline(SceneConfig),
}

impl SceneRef {
    pub fn resolve(&self) -> SceneConfig {
        match self {
            SceneRef::Preset {
                preset,
                seed,
                tx_elements,
                rx_elements,
            } => {
                let cfg = SceneConfig::preset(*preset, *seed);
                let (tx, rx) = (
                    tx_elements.unwrap_or(cfg.tx_array.elements),
                    rx_elements.unwrap_or(cfg.rx_array.elements),
                );
                cfg.with_arrays(tx, rx)
            }
            SceneRef::Inline(cfg) => cfg.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrSchedule {
    Constant(f64),
    /// Linear ramp from `start` at the first slot to `end` at the last.
    Ramp { start: f64, end: f64 },
    PerSlot(Vec<f64>),
}

impl SnrSchedule {
    pub fn at(&self, k: usize, slots: usize) -> f64 {
        match self {
            SnrSchedule::Constant(v) => *v,
            SnrSchedule::Ramp { start, end } => {
                if slots <= 1 {
                    *start
                } else {
                    start + (end - start) * k as f64 / (slots - 1) as f64
                }
            }
            SnrSchedule::PerSlot(v) => v[k],
        }
    }

    fn validate(&self, slots: usize) -> Result<()> {
        let ok = match self {
            SnrSchedule::Constant(v) => v.is_finite(),
            SnrSchedule::Ramp { start, end } => start.is_finite() && end.is_finite(),
            SnrSchedule::PerSlot(v) => {
                if v.len() != slots {
                    return Err(TwinError::Config(format!(
                        "per-slot SNR schedule has {} values for {slots} slots",
                        v.len()
                    )));
                }
                v.iter().all(|x| x.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(TwinError::Config("SNR values must be finite".into()))
        }
    }
}

/// Fixed transmitter, receiver moving on a straight line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub tx: Vec3,
    pub rx_start: Vec3,
    pub rx_end: Vec3,
}

impl Trajectory {
    pub fn link_at(&self, k: usize, slots: usize) -> LinkGeometry {
        let f = if slots <= 1 {
            0.0
        } else {
            k as f64 / (slots - 1) as f64
        };
        let p = [
            self.rx_start[0] + f * (self.rx_end[0] - self.rx_start[0]),
            self.rx_start[1] + f * (self.rx_end[1] - self.rx_start[1]),
            self.rx_start[2] + f * (self.rx_end[2] - self.rx_start[2]),
        ];
        LinkGeometry::new(self.tx, p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub slots: usize,
    pub label: ScenarioLabel,
    pub scene: SceneRef,
    pub snr_db: SnrSchedule,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub segments: Vec<Segment>,
}

impl ScenarioScript {
    pub fn validate(&self) -> Result<()> {
        let mut shape = None;
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.slots == 0 {
                return Err(TwinError::Config(format!("segment {i} has zero slots")));
            }
            seg.snr_db.validate(seg.slots)?;
            let cfg = seg.scene.resolve();
            cfg.validate()?;
            let s = (cfg.tx_array.elements, cfg.rx_array.elements);
            if *shape.get_or_insert(s) != s {
                return Err(TwinError::Config(
                    "all segments must share antenna counts".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn total_slots(&self) -> usize {
        self.segments.iter().map(|s| s.slots).sum()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let script: ScenarioScript = serde_json::from_str(&text)?;
        script.validate()?;
        Ok(script)
    }

    /// A UE walking through compact, dense and standard micro cells while
    /// the measurement SNR ramps up inside each cell.
    pub fn umi_shift(seed: u64, slots_per_segment: usize, snr_start: f64, snr_end: f64) -> Self {
        let labels = [
            ScenarioLabel::UmiCompact,
            ScenarioLabel::UmiDense,
            ScenarioLabel::UmiStandard,
        ];
        let segments = labels
            .iter()
            .enumerate()
            .map(|(i, &label)| {
                let cfg = SceneConfig::preset(label, seed.wrapping_add(i as u64));
                let r = 0.5 * cfg.diameter;
                let lambda = cfg.wavelength;
                // 0.1 λ of travel per slot keeps the channel trackable.
                let len = 0.1 * lambda * slots_per_segment as f64;
                let start = [0.3 * r, -0.5 * len, 1.5];
                Segment {
                    slots: slots_per_segment,
                    label,
                    scene: SceneRef::Preset {
                        preset: label,
                        seed: seed.wrapping_add(i as u64),
                        tx_elements: None,
                        rx_elements: None,
                    },
                    snr_db: SnrSchedule::Ramp {
                        start: snr_start,
                        end: snr_end,
                    },
                    trajectory: Trajectory {
                        tx: [-0.3 * r, 0.1 * r, 10.0f64.min(0.2 * r)],
                        rx_start: start,
                        rx_end: [start[0] + 0.3 * len, start[1] + len, start[2]],
                    },
                }
            })
            .collect();
        Self { segments }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotSample {
    /// Global slot index.
    pub t: u64,
    pub segment: usize,
    pub label: ScenarioLabel,
    pub link: LinkGeometry,
    pub h_gt: CMat,
    pub snr_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Handover {
    /// First slot of the new segment.
    pub at: u64,
    pub from: ScenarioLabel,
    pub to: ScenarioLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScriptEvent {
    Slot(SlotSample),
    Handover(Handover),
}

/// Sequential playback of a script. Scenes are generated once per segment.
pub struct ScriptPlayer {
    script: ScenarioScript,
    scenes: Vec<Scene>,
    segment: usize,
    k: usize,
    t: u64,
    pending_handover: bool,
}

impl ScriptPlayer {
    pub fn scene(&self, segment: usize) -> &Scene {
        &self.scenes[segment]
    }

    pub fn script(&self) -> &ScenarioScript {
        &self.script
    }
}

pub fn play_script(script: &ScenarioScript) -> Result<ScriptPlayer> {
    script.validate()?;
    let scenes = script
        .segments
        .iter()
        .map(|s| generate_scene(&s.scene.resolve()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScriptPlayer {
        script: script.clone(),
        scenes,
        segment: 0,
        k: 0,
        t: 0,
        pending_handover: false,
    })
}

impl Iterator for ScriptPlayer {
    type Item = Result<ScriptEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        let seg = self.script.segments.get(self.segment)?;
        if self.pending_handover {
            self.pending_handover = false;
            let prev = &self.script.segments[self.segment - 1];
            return Some(Ok(ScriptEvent::Handover(Handover {
                at: self.t,
                from: prev.label,
                to: seg.label,
            })));
        }
        let link = seg.trajectory.link_at(self.k, seg.slots);
        let h = match ground_truth_channel(&self.scenes[self.segment], &link) {
            Ok(h) => h.entries,
            Err(e) => return Some(Err(e)),
        };
        let sample = SlotSample {
            t: self.t,
            segment: self.segment,
            label: seg.label,
            link,
            h_gt: h,
            snr_db: seg.snr_db.at(self.k, seg.slots),
        };
        self.t += 1;
        self.k += 1;
        if self.k == seg.slots {
            self.k = 0;
            self.segment += 1;
            self.pending_handover = self.segment < self.script.segments.len();
        }
        Some(Ok(ScriptEvent::Slot(sample)))
    }
}
