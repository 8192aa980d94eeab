//! Synthetic ground-truth radio scenes.
//!
//! A scene is a line-of-sight path plus single-bounce specular paths off
//! point scatterers placed inside a ball of diameter `ℓ` centred at the
//! origin. Both ends use uniform linear arrays along the x axis.

mod script;

pub use script::{
    play_script, Handover, ScenarioScript, SceneRef, ScriptEvent, ScriptPlayer, Segment,
    SlotSample, SnrSchedule, Trajectory,
};

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TwinError};
use crate::linalg::{all_finite, frob_sq, CMat, C64};
use crate::tensor_io::Tensor;

pub type Vec3 = [f64; 3];

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Environment classes a scenario segment can be labelled with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioLabel {
    #[serde(rename = "indoor")]
    Indoor,
    #[serde(rename = "umi-compact")]
    UmiCompact,
    #[serde(rename = "umi-dense")]
    UmiDense,
    #[serde(rename = "umi-standard")]
    UmiStandard,
    #[serde(rename = "uma")]
    Uma,
}

impl ScenarioLabel {
    pub const ALL: [ScenarioLabel; 5] = [
        ScenarioLabel::Indoor,
        ScenarioLabel::UmiCompact,
        ScenarioLabel::UmiDense,
        ScenarioLabel::UmiStandard,
        ScenarioLabel::Uma,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioLabel::Indoor => "indoor",
            ScenarioLabel::UmiCompact => "umi-compact",
            ScenarioLabel::UmiDense => "umi-dense",
            ScenarioLabel::UmiStandard => "umi-standard",
            ScenarioLabel::Uma => "uma",
        }
    }
}

impl std::fmt::Display for ScenarioLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ScenarioLabel {
    type Err = TwinError;
    fn from_str(s: &str) -> Result<Self> {
        ScenarioLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| TwinError::Config(format!("unknown scenario label {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub elements: usize,
    /// Element spacing in meters; half a wavelength when absent.
    #[serde(default)]
    pub spacing: Option<f64>,
}

impl ArrayConfig {
    pub fn half_wave(elements: usize) -> Self {
        Self {
            elements,
            spacing: None,
        }
    }
}

fn default_los_gain() -> C64 {
    C64::new(1.0, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Carrier wavelength λ in meters.
    pub wavelength: f64,
    /// Scene diameter ℓ in meters.
    pub diameter: f64,
    pub num_scatterers: usize,
    /// Explicit scatterer positions; drawn from `rng_seed` when absent.
    #[serde(default)]
    pub scatterer_positions: Option<Vec<Vec3>>,
    /// Explicit complex reflection gains; drawn from `rng_seed` when absent.
    #[serde(default)]
    pub scatterer_gains: Option<Vec<C64>>,
    #[serde(default = "default_los_gain")]
    pub los_gain: C64,
    pub tx_array: ArrayConfig,
    pub rx_array: ArrayConfig,
    /// Receiver noise power σ² in watts.
    pub noise_floor: f64,
    pub rng_seed: u64,
}

impl SceneConfig {
    /// Parameterized stand-ins for the named environments. The numbers are
    /// not calibrated to any propagation standard.
    pub fn preset(label: ScenarioLabel, seed: u64) -> Self {
        let (wavelength, diameter, num_scatterers) = match label {
            ScenarioLabel::Indoor => (0.125, 10.0, 24),
            ScenarioLabel::UmiCompact => (0.1, 60.0, 10),
            ScenarioLabel::UmiDense => (0.1, 100.0, 30),
            ScenarioLabel::UmiStandard => (0.1, 100.0, 12),
            ScenarioLabel::Uma => (0.1, 500.0, 6),
        };
        Self {
            wavelength,
            diameter,
            num_scatterers,
            scatterer_positions: None,
            scatterer_gains: None,
            los_gain: default_los_gain(),
            tx_array: ArrayConfig::half_wave(2),
            rx_array: ArrayConfig::half_wave(2),
            noise_floor: 1e-9,
            rng_seed: seed,
        }
    }

    pub fn with_arrays(mut self, tx: usize, rx: usize) -> Self {
        self.tx_array = ArrayConfig::half_wave(tx);
        self.rx_array = ArrayConfig::half_wave(rx);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(TwinError::Config("wavelength must be positive".into()));
        }
        if !(self.diameter > 0.0 && self.diameter.is_finite()) {
            return Err(TwinError::Config("scene diameter must be positive".into()));
        }
        if self.tx_array.elements == 0 || self.rx_array.elements == 0 {
            return Err(TwinError::Config("arrays need at least one element".into()));
        }
        for a in [self.tx_array, self.rx_array] {
            if let Some(s) = a.spacing {
                if !(s >= 0.0 && s.is_finite()) {
                    return Err(TwinError::Config("array spacing must be finite and >= 0".into()));
                }
            }
        }
        if !(self.noise_floor >= 0.0 && self.noise_floor.is_finite()) {
            return Err(TwinError::Config("noise floor must be finite and >= 0".into()));
        }
        if !(self.los_gain.re.is_finite() && self.los_gain.im.is_finite()) {
            return Err(TwinError::Config("LOS gain must be finite".into()));
        }
        if let Some(p) = &self.scatterer_positions {
            if p.len() != self.num_scatterers {
                return Err(TwinError::Config(format!(
                    "{} scatterer positions given for {} scatterers",
                    p.len(),
                    self.num_scatterers
                )));
            }
            let r = 0.5 * self.diameter;
            if p.iter().any(|x| !(norm(*x) <= r * (1.0 + 1e-12))) {
                return Err(TwinError::Config("scatterer outside scene bounds".into()));
            }
        }
        if let Some(g) = &self.scatterer_gains {
            if g.len() != self.num_scatterers {
                return Err(TwinError::Config(format!(
                    "{} scatterer gains given for {} scatterers",
                    g.len(),
                    self.num_scatterers
                )));
            }
            if g.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                return Err(TwinError::Config("scatterer gains must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: SceneConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub position: Vec3,
    pub gain: C64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub config: SceneConfig,
    pub scatterers: Vec<Scatterer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkGeometry {
    pub p_tx: Vec3,
    pub p_rx: Vec3,
}

impl LinkGeometry {
    pub fn new(p_tx: Vec3, p_rx: Vec3) -> Self {
        Self { p_tx, p_rx }
    }

    pub fn swapped(self) -> Self {
        Self {
            p_tx: self.p_rx,
            p_rx: self.p_tx,
        }
    }
}

/// Complex channel matrix plus bookkeeping metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    pub entries: CMat,
    pub t: Option<u64>,
    pub user: Option<usize>,
    pub tone: Option<usize>,
}

impl ChannelMatrix {
    pub fn new(entries: CMat) -> Self {
        Self {
            entries,
            t: None,
            user: None,
            tone: None,
        }
    }

    pub fn at_time(mut self, t: u64) -> Self {
        self.t = Some(t);
        self
    }

    pub fn check(&self, rows: usize, cols: usize) -> Result<()> {
        if self.entries.shape() != (rows, cols) {
            return Err(TwinError::shape(
                format!("{rows}x{cols}"),
                format!("{}x{}", self.entries.nrows(), self.entries.ncols()),
            ));
        }
        if !all_finite(&self.entries) {
            return Err(TwinError::NonFinite("channel entries".into()));
        }
        Ok(())
    }

    pub fn to_tensor(&self) -> Tensor {
        let meta = serde_json::json!({
            "t": self.t,
            "user": self.user,
            "tone": self.tone,
        });
        Tensor::from_matrix(&self.entries, meta)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.header.shape.len() != 2 {
            return Err(TwinError::Format("channel tensor must be 2-D".into()));
        }
        let meta = &t.header.meta;
        Ok(Self {
            entries: t.matrix_at(0)?,
            t: meta.get("t").and_then(|v| v.as_u64()),
            user: meta.get("user").and_then(|v| v.as_u64()).map(|v| v as usize),
            tone: meta.get("tone").and_then(|v| v.as_u64()).map(|v| v as usize),
        })
    }
}

/// Draws a point uniformly inside the ball of radius `r` centred at origin.
fn uniform_in_ball(rng: &mut impl Rng, r: f64) -> Vec3 {
    loop {
        let p = [
            rng.random_range(-r..=r),
            rng.random_range(-r..=r),
            rng.random_range(-r..=r),
        ];
        if norm(p) <= r {
            return p;
        }
    }
}

pub fn generate_scene(config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let r = 0.5 * config.diameter;
    let scatterers = (0..config.num_scatterers)
        .map(|i| {
            let position = match &config.scatterer_positions {
                Some(p) => p[i],
                None => uniform_in_ball(&mut rng, r),
            };
            let gain = match &config.scatterer_gains {
                Some(g) => g[i],
                None => {
                    let mag = rng.random_range(0.2..0.8);
                    let phase = rng.random_range(0.0..2.0 * PI);
                    C64::from_polar(mag, phase)
                }
            };
            Scatterer { position, gain }
        })
        .collect();
    Ok(Scene {
        config: config.clone(),
        scatterers,
    })
}

impl Scene {
    pub fn radius(&self) -> f64 {
        0.5 * self.config.diameter
    }

    pub fn contains(&self, p: Vec3) -> bool {
        norm(p) <= self.radius() * (1.0 + 1e-9)
    }

    pub fn tx_elements(&self) -> usize {
        self.config.tx_array.elements
    }

    pub fn rx_elements(&self) -> usize {
        self.config.rx_array.elements
    }

    /// Returns a copy with every path gain (LOS included) multiplied by `c`.
    pub fn scaled_gains(&self, c: C64) -> Scene {
        let mut s = self.clone();
        s.config.los_gain *= c;
        for sc in &mut s.scatterers {
            sc.gain *= c;
        }
        s
    }
}

/// Per-element phase factors of a uniform linear array along x for a plane
/// wave leaving (or arriving from) unit direction `dir`.
fn steering(array: &ArrayConfig, wavelength: f64, dir: Vec3) -> Vec<C64> {
    let spacing = array.spacing.unwrap_or(0.5 * wavelength);
    let n = array.elements;
    let centre = 0.5 * (n as f64 - 1.0);
    (0..n)
        .map(|k| {
            let offset = (k as f64 - centre) * spacing;
            C64::from_polar(1.0, 2.0 * PI * offset * dir[0] / wavelength)
        })
        .collect()
}

fn unit(v: Vec3, len: f64) -> Vec3 {
    [v[0] / len, v[1] / len, v[2] / len]
}

/// Noise-free channel `H` (N_t × N_r) of `link` in `scene`.
///
/// Each path contributes `g · λ/(4πd) · e^{−j2πd/λ} · a_t ⊗ a_r`, where
/// `a_t` is the transmit steering vector for the departure direction and
/// `a_r` the receive steering vector for the arrival direction.
pub fn ground_truth_channel(scene: &Scene, link: &LinkGeometry) -> Result<ChannelMatrix> {
    let cfg = &scene.config;
    if !scene.contains(link.p_tx) || !scene.contains(link.p_rx) {
        return Err(TwinError::Config("link endpoint outside scene bounds".into()));
    }
    let lambda = cfg.wavelength;
    let (nt, nr) = (cfg.tx_array.elements, cfg.rx_array.elements);
    let mut h = CMat::zeros(nt, nr);

    let mut add_path = |gain: C64, d: f64, dod: Vec3, doa: Vec3| {
        let amp = lambda / (4.0 * PI * d);
        let phase = C64::from_polar(1.0, -2.0 * PI * (d / lambda).fract());
        let coeff = gain * amp * phase;
        let at = steering(&cfg.tx_array, lambda, dod);
        let ar = steering(&cfg.rx_array, lambda, doa);
        for i in 0..nt {
            for j in 0..nr {
                h[(i, j)] += coeff * at[i] * ar[j];
            }
        }
    };

    let los = sub(link.p_rx, link.p_tx);
    let d = norm(los);
    if d <= 0.0 {
        return Err(TwinError::DegenerateGeometry("transmitter and receiver coincide".into()));
    }
    add_path(cfg.los_gain, d, unit(los, d), unit([-los[0], -los[1], -los[2]], d));

    for s in &scene.scatterers {
        let out = sub(s.position, link.p_tx);
        let back = sub(s.position, link.p_rx);
        let (d1, d2) = (norm(out), norm(back));
        if d1 <= 0.0 || d2 <= 0.0 {
            return Err(TwinError::DegenerateGeometry(
                "scatterer coincides with a link endpoint".into(),
            ));
        }
        add_path(s.gain, d1 + d2, unit(out, d1), unit(back, d2));
    }
    Ok(ChannelMatrix::new(h))
}

/// Pilot measurement: ground truth plus circular complex Gaussian noise
/// scaled so that `‖H‖_F² / E‖N‖_F²` equals `snr_db`. An infinite SNR
/// returns the exact channel.
pub fn measure_channel(
    scene: &Scene,
    link: &LinkGeometry,
    snr_db: f64,
    rng: &mut impl Rng,
) -> Result<ChannelMatrix> {
    let h = ground_truth_channel(scene, link)?;
    Ok(ChannelMatrix::new(add_measurement_noise(&h.entries, snr_db, rng)))
}

pub fn add_measurement_noise(h: &CMat, snr_db: f64, rng: &mut impl Rng) -> CMat {
    if snr_db == f64::INFINITY {
        return h.clone();
    }
    let n = h.len() as f64;
    let var = frob_sq(h) / (n * 10f64.powf(snr_db / 10.0));
    let sd = (0.5 * var).sqrt();
    h.map(|z| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        z + C64::new(sd * re, sd * im)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_scene(lambda: f64) -> Scene {
        let mut cfg = SceneConfig::preset(ScenarioLabel::Indoor, 1).with_arrays(1, 1);
        cfg.wavelength = lambda;
        cfg.num_scatterers = 0;
        generate_scene(&cfg).unwrap()
    }

    #[test]
    fn los_only_single_antenna_value() {
        let scene = empty_scene(0.05);
        assert!(scene.scatterers.is_empty());
        let link = LinkGeometry::new([0.0, 0.0, 0.0], [1.0, 0.0, 0.0]);
        let h = ground_truth_channel(&scene, &link).unwrap().entries[(0, 0)];
        assert!((h.norm() - 0.05 / (4.0 * PI)).abs() < 1e-15);
        // 1 m is exactly 20 wavelengths, so the phase wraps to zero.
        assert!(h.arg().abs() < 1e-9);
    }

    #[test]
    fn amplitude_halves_with_distance() {
        let scene = empty_scene(0.05);
        let h1 = ground_truth_channel(&scene, &LinkGeometry::new([0.0; 3], [1.0, 0.5, 0.0])).unwrap();
        let h2 = ground_truth_channel(&scene, &LinkGeometry::new([0.0; 3], [2.0, 1.0, 0.0])).unwrap();
        let r = h2.entries[(0, 0)].norm() / h1.entries[(0, 0)].norm();
        assert!((r - 0.5).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_layout_and_bounds() {
        let mut cfg = SceneConfig::preset(ScenarioLabel::UmiStandard, 9);
        cfg.num_scatterers = 50;
        cfg.diameter = 50.0;
        let a = generate_scene(&cfg).unwrap();
        let b = generate_scene(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.scatterers.iter().all(|s| norm(s.position) <= 25.0));
    }

    #[test]
    fn mirrored_scatterer_gives_equal_magnitude() {
        let mut cfg = SceneConfig::preset(ScenarioLabel::Indoor, 1).with_arrays(1, 1);
        cfg.num_scatterers = 1;
        cfg.scatterer_gains = Some(vec![C64::new(0.5, 0.2)]);
        cfg.scatterer_positions = Some(vec![[0.0, 2.0, 0.5]]);
        let a = generate_scene(&cfg).unwrap();
        cfg.scatterer_positions = Some(vec![[0.0, -2.0, 0.5]]);
        let b = generate_scene(&cfg).unwrap();
        let link = LinkGeometry::new([-1.5, 0.0, 0.0], [1.5, 0.0, 0.0]);
        let ha = ground_truth_channel(&a, &link).unwrap().entries[(0, 0)].norm();
        let hb = ground_truth_channel(&b, &link).unwrap().entries[(0, 0)].norm();
        assert!((ha - hb).abs() < 1e-15);
    }

    #[test]
    fn gains_scale_linearly() {
        let cfg = SceneConfig::preset(ScenarioLabel::Indoor, 4).with_arrays(3, 2);
        let scene = generate_scene(&cfg).unwrap();
        let link = LinkGeometry::new([1.0, -1.0, 0.5], [-2.0, 1.5, 1.0]);
        let c = C64::new(-0.7, 1.3);
        let h = ground_truth_channel(&scene, &link).unwrap().entries;
        let hc = ground_truth_channel(&scene.scaled_gains(c), &link).unwrap().entries;
        assert!((hc - h * c).norm() < 1e-15);
    }

    #[test]
    fn los_reciprocity_is_transpose() {
        let mut cfg = SceneConfig::preset(ScenarioLabel::Indoor, 2).with_arrays(3, 2);
        cfg.num_scatterers = 0;
        let scene = generate_scene(&cfg).unwrap();
        let mut swapped_cfg = cfg.clone();
        swapped_cfg.tx_array = cfg.rx_array;
        swapped_cfg.rx_array = cfg.tx_array;
        let swapped = generate_scene(&swapped_cfg).unwrap();
        let link = LinkGeometry::new([0.3, 0.1, -0.2], [2.0, 1.5, 1.0]);
        let h = ground_truth_channel(&scene, &link).unwrap().entries;
        let hs = ground_truth_channel(&swapped, &link.swapped()).unwrap().entries;
        assert!((hs - h.transpose()).norm() < 1e-15);
    }

    #[test]
    fn degenerate_and_out_of_bounds_links() {
        let scene = empty_scene(0.1);
        let p = [0.5, 0.5, 0.5];
        assert!(matches!(
            ground_truth_channel(&scene, &LinkGeometry::new(p, p)),
            Err(TwinError::DegenerateGeometry(_))
        ));
        assert!(ground_truth_channel(&scene, &LinkGeometry::new(p, [100.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = SceneConfig::preset(ScenarioLabel::Indoor, 1);
        cfg.wavelength = 0.0;
        assert!(generate_scene(&cfg).is_err());
        let mut cfg = SceneConfig::preset(ScenarioLabel::Indoor, 1);
        cfg.rx_array.elements = 0;
        assert!(generate_scene(&cfg).is_err());
        let mut cfg = SceneConfig::preset(ScenarioLabel::Indoor, 1);
        cfg.scatterer_gains = Some(vec![C64::new(f64::NAN, 0.0); cfg.num_scatterers]);
        assert!(generate_scene(&cfg).is_err());
    }

    #[test]
    fn measurement_noise_energy_matches_snr() {
        let cfg = SceneConfig::preset(ScenarioLabel::Indoor, 3).with_arrays(2, 2);
        let scene = generate_scene(&cfg).unwrap();
        let link = LinkGeometry::new([0.0, 0.0, 1.0], [2.0, -1.0, 1.0]);
        let h = ground_truth_channel(&scene, &link).unwrap().entries;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let exact = measure_channel(&scene, &link, f64::INFINITY, &mut rng).unwrap();
        assert_eq!(exact.entries, h);

        let draws = 10_000;
        let mut energy = 0.0;
        for _ in 0..draws {
            let m = measure_channel(&scene, &link, 0.0, &mut rng).unwrap().entries;
            energy += frob_sq(&(m - &h));
        }
        let ratio = energy / draws as f64 / frob_sq(&h);
        assert!((ratio - 1.0).abs() < 0.02, "noise energy ratio {ratio}");

        let mut r1 = ChaCha8Rng::seed_from_u64(11);
        let mut r2 = ChaCha8Rng::seed_from_u64(11);
        assert_eq!(
            measure_channel(&scene, &link, 10.0, &mut r1).unwrap(),
            measure_channel(&scene, &link, 10.0, &mut r2).unwrap()
        );
    }

    #[test]
    fn channel_tensor_round_trip() {
        let cfg = SceneConfig::preset(ScenarioLabel::Indoor, 3).with_arrays(2, 3);
        let scene = generate_scene(&cfg).unwrap();
        let link = LinkGeometry::new([0.0, 0.0, 1.0], [2.0, -1.0, 1.0]);
        let h = ground_truth_channel(&scene, &link).unwrap().at_time(42);
        let back = ChannelMatrix::from_tensor(&h.to_tensor()).unwrap();
        assert_eq!(back, h);
    }
}
