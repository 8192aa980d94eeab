use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TwinError};
use crate::linalg::{all_finite, frob_sq, CMat, C64};
use crate::nn::{l2_norm, Activation, Adam, Mlp};
use crate::scene::ScenarioLabel;

/// The past `T` channel estimates used to forecast `horizon` slots ahead.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionWindow {
    pub frames: Vec<CMat>,
    /// Slot of the newest frame.
    pub t: u64,
    pub horizon: usize,
}

impl PredictionWindow {
    pub fn new(frames: Vec<CMat>, t: u64, horizon: usize) -> Result<Self> {
        if frames.is_empty() {
            return Err(TwinError::Config("window needs at least one frame".into()));
        }
        if horizon == 0 {
            return Err(TwinError::Config("forecast horizon must be >= 1".into()));
        }
        let shape = frames[0].shape();
        for f in &frames {
            if f.shape() != shape {
                return Err(TwinError::shape(format!("{shape:?}"), format!("{:?}", f.shape())));
            }
            if !all_finite(f) {
                return Err(TwinError::NonFinite("window frame".into()));
            }
        }
        Ok(Self { frames, t, horizon })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.frames[0].shape()
    }

    pub fn last(&self) -> &CMat {
        self.frames.last().unwrap()
    }

    /// Entry RMS over the whole window.
    pub fn rms(&self) -> f64 {
        let n: usize = self.frames.iter().map(|f| f.len()).sum();
        (self.frames.iter().map(frob_sq).sum::<f64>() / n as f64).sqrt()
    }

    /// Real tensor of shape `2 × T × N_t × N_r` (real block, then imaginary
    /// block), row-major.
    pub fn to_real_tensor(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.frames.len() * self.frames[0].len());
        for part in 0..2 {
            for f in &self.frames {
                for i in 0..f.nrows() {
                    for j in 0..f.ncols() {
                        let z = f[(i, j)];
                        out.push(if part == 0 { z.re } else { z.im });
                    }
                }
            }
        }
        out
    }
}

/// Context recorded with every stored sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntryMeta {
    pub label: ScenarioLabel,
    pub snr_db: f64,
    pub t: u64,
}

/// Window and the channel observed `horizon` slots after its newest frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayEntry {
    pub window: PredictionWindow,
    pub target: CMat,
    pub meta: EntryMeta,
}

impl ReplayEntry {
    pub fn new(window: PredictionWindow, target: CMat, meta: EntryMeta) -> Result<Self> {
        if target.shape() != window.shape() {
            return Err(TwinError::shape(
                format!("{:?}", window.shape()),
                format!("{:?}", target.shape()),
            ));
        }
        if !all_finite(&target) {
            return Err(TwinError::NonFinite("replay target".into()));
        }
        Ok(Self { window, target, meta })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Learned,
    /// Repeats the newest frame.
    Persistence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub window: usize,
    pub horizon: usize,
    pub tx_elements: usize,
    pub rx_elements: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub learning_rate: f64,
    /// Weight of the current-data term in the mixed loss.
    pub lambda: f64,
    pub kind: PredictorKind,
    pub seed: u64,
}

impl PredictorConfig {
    pub fn new(tx_elements: usize, rx_elements: usize) -> Self {
        Self {
            window: 8,
            horizon: 1,
            tx_elements,
            rx_elements,
            hidden_width: 128,
            hidden_layers: 2,
            learning_rate: 1e-3,
            lambda: 0.5,
            kind: PredictorKind::Learned,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.horizon == 0 {
            return Err(TwinError::Config("window and horizon must be >= 1".into()));
        }
        if self.tx_elements == 0 || self.rx_elements == 0 {
            return Err(TwinError::Config("antenna counts must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(TwinError::Config("mixing weight must lie in [0, 1]".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TwinError::Config("learning rate must be >= 0".into()));
        }
        Ok(())
    }

    fn sizes(&self) -> Vec<usize> {
        let k = self.tx_elements * self.rx_elements;
        let mut s = vec![2 * self.window * k];
        s.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        s.push(2 * k);
        s
    }
}

/// Feed-forward forecaster on RMS-normalised windows.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    pub config: PredictorConfig,
    pub net: Mlp,
    opt: Adam,
}

impl PredictorModel {
    pub fn new(config: PredictorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let net = Mlp::new(&config.sizes(), Activation::Tanh, &mut rng);
        let opt = Adam::new(net.num_params());
        Ok(Self { config, net, opt })
    }

    pub fn persistence(tx_elements: usize, rx_elements: usize, window: usize, horizon: usize) -> Result<Self> {
        let mut cfg = PredictorConfig::new(tx_elements, rx_elements);
        cfg.window = window;
        cfg.horizon = horizon;
        cfg.hidden_width = 1;
        cfg.hidden_layers = 0;
        cfg.kind = PredictorKind::Persistence;
        Self::new(cfg)
    }

    pub fn steps(&self) -> u64 {
        self.opt.steps()
    }

    fn check(&self, w: &PredictionWindow) -> Result<()> {
        let c = &self.config;
        if w.len() != c.window || w.shape() != (c.tx_elements, c.rx_elements) {
            return Err(TwinError::shape(
                format!("{}x{}x{}", c.window, c.tx_elements, c.rx_elements),
                format!("{}x{}x{}", w.len(), w.shape().0, w.shape().1),
            ));
        }
        Ok(())
    }

    fn input(w: &PredictionWindow) -> (Vec<f64>, f64) {
        let rms = w.rms();
        let scale = if rms > 0.0 { rms } else { 1.0 };
        let x = w.to_real_tensor().into_iter().map(|v| v / scale).collect();
        (x, scale)
    }

    fn output(&self, y: &[f64], scale: f64) -> CMat {
        let (nt, nr) = (self.config.tx_elements, self.config.rx_elements);
        let k = nt * nr;
        CMat::from_fn(nt, nr, |i, j| {
            C64::new(scale * y[i * nr + j], scale * y[k + i * nr + j])
        })
    }

    /// Forecast of the channel `horizon` slots after the newest frame.
    pub fn forecast(&self, w: &PredictionWindow) -> Result<CMat> {
        self.check(w)?;
        if self.config.kind == PredictorKind::Persistence {
            return Ok(w.last().clone());
        }
        let (x, scale) = Self::input(w);
        Ok(self.output(&self.net.forward(&x), scale))
    }

    /// NMSE of one item, accumulating `weight · ∂NMSE/∂Φ` into `grad`.
    fn item_grad(&self, w: &PredictionWindow, target: &CMat, weight: f64, grad: &mut [f64]) -> Result<f64> {
        let denom = frob_sq(target);
        if denom <= 0.0 {
            return Err(TwinError::DegenerateInput("target channel has zero energy".into()));
        }
        let (x, scale) = Self::input(w);
        let (y, tape) = self.net.forward_tape(&x);
        let pred = self.output(&y, scale);
        let err = &pred - target;
        let nmse = frob_sq(&err) / denom;
        if weight != 0.0 {
            let (nt, nr) = (self.config.tx_elements, self.config.rx_elements);
            let k = nt * nr;
            let mut d = vec![0.0; 2 * k];
            let c = weight * 2.0 * scale / denom;
            for i in 0..nt {
                for j in 0..nr {
                    d[i * nr + j] = c * err[(i, j)].re;
                    d[k + i * nr + j] = c * err[(i, j)].im;
                }
            }
            self.net.backward(&tape, &d, grad);
        }
        Ok(nmse)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Current,
    /// Index into the replay buffer.
    Replay(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub window: PredictionWindow,
    pub target: CMat,
    pub source: Source,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub items: Vec<BatchItem>,
    /// Fewer replay items than requested were available.
    pub replay_clamped: bool,
    /// The replay side is empty (cold start or no replay requested).
    pub replay_empty: bool,
}

impl Batch {
    pub fn count(&self, replay: bool) -> usize {
        self.items
            .iter()
            .filter(|i| matches!(i.source, Source::Replay(_)) == replay)
            .count()
    }
}

/// Draws `b_curr` current items and up to `b_rep` replay items, each side
/// uniformly without replacement.
pub fn sample_batch(
    buffer: &mut super::ReplayBuffer<ReplayEntry>,
    current: &[ReplayEntry],
    b_curr: usize,
    b_rep: usize,
    rng: &mut impl rand::Rng,
) -> Result<Batch> {
    if b_curr > 0 && current.is_empty() {
        return Err(TwinError::Empty("current data".into()));
    }
    if b_curr > current.len() {
        return Err(TwinError::Config(format!(
            "{b_curr} current items requested from {}",
            current.len()
        )));
    }
    let mut batch = Batch::default();
    for i in rand::seq::index::sample(rng, current.len(), b_curr) {
        batch.items.push(BatchItem {
            window: current[i].window.clone(),
            target: current[i].target.clone(),
            source: Source::Current,
        });
    }
    let (idx, clamped) = buffer.sample_indices(b_rep);
    batch.replay_clamped = clamped;
    batch.replay_empty = idx.is_empty();
    for i in idx {
        let e = &buffer.entries()[i].item;
        batch.items.push(BatchItem {
            window: e.window.clone(),
            target: e.target.clone(),
            source: Source::Replay(i),
        });
    }
    Ok(batch)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedLoss {
    pub total: f64,
    /// Mean NMSE over current items, if any.
    pub current: Option<f64>,
    /// Mean NMSE over replay items, if any.
    pub replay: Option<f64>,
    pub per_item: Vec<f64>,
}

fn side_weights(batch: &Batch, lambda: f64) -> Result<(f64, f64)> {
    let nc = batch.count(false);
    let nr = batch.count(true);
    match (nc, nr) {
        (0, 0) => Err(TwinError::Empty("batch".into())),
        (_, 0) => Ok((1.0 / nc as f64, 0.0)),
        (0, _) => Ok((0.0, 1.0 / nr as f64)),
        _ => Ok((lambda / nc as f64, (1.0 - lambda) / nr as f64)),
    }
}

fn assemble(batch: &Batch, per_item: Vec<f64>, lambda: f64) -> MixedLoss {
    let mean = |replay: bool| {
        let v: Vec<f64> = batch
            .items
            .iter()
            .zip(&per_item)
            .filter(|(i, _)| matches!(i.source, Source::Replay(_)) == replay)
            .map(|(_, l)| *l)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let current = mean(false);
    let replay = mean(true);
    let total = match (current, replay) {
        (Some(c), Some(r)) => lambda * c + (1.0 - lambda) * r,
        (Some(c), None) => c,
        (None, Some(r)) => r,
        (None, None) => 0.0,
    };
    MixedLoss {
        total,
        current,
        replay,
        per_item,
    }
}

/// `λ·L_curr + (1−λ)·L_rep` with both terms mean NMSE; a missing side drops
/// out and the other gets full weight.
pub fn mixed_loss(model: &PredictorModel, batch: &Batch) -> Result<MixedLoss> {
    side_weights(batch, model.config.lambda)?;
    let per_item = batch
        .items
        .iter()
        .map(|it| {
            let pred = model.forecast(&it.window)?;
            crate::metrics::nmse(&it.target, &pred)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(batch, per_item, model.config.lambda))
}

/// Mixed loss and its exact gradient with respect to the network
/// parameters.
pub fn mixed_loss_grad(model: &PredictorModel, batch: &Batch) -> Result<(MixedLoss, Vec<f64>)> {
    let (wc, wr) = side_weights(batch, model.config.lambda)?;
    let mut grad = vec![0.0; model.net.num_params()];
    if model.config.kind == PredictorKind::Persistence {
        return Ok((mixed_loss(model, batch)?, grad));
    }
    let mut per_item = Vec::with_capacity(batch.items.len());
    for it in &batch.items {
        model.check(&it.window)?;
        let w = match it.source {
            Source::Current => wc,
            Source::Replay(_) => wr,
        };
        per_item.push(model.item_grad(&it.window, &it.target, w, &mut grad)?);
    }
    Ok((assemble(batch, per_item, model.config.lambda), grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateReport {
    pub loss: MixedLoss,
    pub grad_norm: f64,
    /// False when the gradient was non-finite and no step was taken.
    pub accepted: bool,
}

/// One optimizer step on the mixed loss.
pub fn predictor_update(model: &mut PredictorModel, batch: &Batch, lr: f64) -> Result<UpdateReport> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(TwinError::Config("learning rate must be >= 0".into()));
    }
    let (loss, grad) = mixed_loss_grad(model, batch)?;
    let grad_norm = l2_norm(&grad);
    let accepted = grad_norm.is_finite() && loss.total.is_finite();
    if accepted && model.config.kind == PredictorKind::Learned {
        model.opt.update(model.net.params_mut(), &grad, lr);
    }
    Ok(UpdateReport {
        loss,
        grad_norm,
        accepted,
    })
}
