use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoding::{encoded_len, positional_encode_backward};
use super::model::{FieldSnapshot, GaussianPrimitive, GrfModel, InitRegion, GEOMETRY_PARAMS};
use super::rotation::{quat_to_rot, quat_to_rot_backward};
use crate::error::{Result, TwinError};
use crate::linalg::CMat;
use crate::nn::{l2_norm, sigmoid};
use crate::scene::Vec3;

/// One supervised sample: a measured channel between two positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub p_tx: Vec3,
    pub p_rx: Vec3,
    pub h: CMat,
}

/// Squared Frobenius error between the rendered and the measured channel.
pub fn grf_loss(model: &GrfModel, p_tx: Vec3, p_rx: Vec3, h_meas: &CMat) -> Result<f64> {
    let (nt, nr) = model.shape();
    if h_meas.nrows() != nt || h_meas.ncols() != nr {
        return Err(TwinError::shape(
            format!("{nt}x{nr}"),
            format!("{}x{}", h_meas.nrows(), h_meas.ncols()),
        ));
    }
    let h = model.snapshot(p_tx)?.render(p_rx);
    Ok((h - h_meas).norm_squared())
}

/// Flat gradient laid out as geometry (10 per primitive: centre, quaternion,
/// log-scales), then attribute network, then decoder network.
#[derive(Debug, Clone, PartialEq)]
pub struct GrfGradient {
    pub geometry: Vec<f64>,
    pub attr: Vec<f64>,
    pub dec: Vec<f64>,
}

impl GrfGradient {
    fn zeros(model: &GrfModel) -> Self {
        Self {
            geometry: vec![0.0; GEOMETRY_PARAMS * model.num_primitives()],
            attr: vec![0.0; model.networks.attr.num_params()],
            dec: vec![0.0; model.networks.dec.num_params()],
        }
    }

    pub fn norm(&self) -> f64 {
        let s = l2_norm(&self.geometry).powi(2) + l2_norm(&self.attr).powi(2) + l2_norm(&self.dec).powi(2);
        s.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.geometry
            .iter()
            .chain(&self.attr)
            .chain(&self.dec)
            .all(|g| g.is_finite())
    }
}

fn check_shape(model: &GrfModel, h: &CMat) -> Result<()> {
    let (nt, nr) = model.shape();
    if h.nrows() != nt || h.ncols() != nr {
        return Err(TwinError::shape(
            format!("{nt}x{nr}"),
            format!("{}x{}", h.nrows(), h.ncols()),
        ));
    }
    if !crate::linalg::all_finite(h) {
        return Err(TwinError::NonFinite("measured channel".into()));
    }
    Ok(())
}

/// Mean of `‖Ĥ − H‖_F²` over the batch and its exact gradient.
///
/// Samples sharing a transmitter position share one network evaluation.
pub fn loss_and_grad(model: &GrfModel, batch: &[&Observation]) -> Result<(f64, GrfGradient)> {
    if batch.is_empty() {
        return Err(TwinError::Empty("training batch".into()));
    }
    for obs in batch {
        check_shape(model, &obs.h)?;
    }
    let (nt, nr) = model.shape();
    let k = nt * nr;
    let ng = model.num_primitives();
    let scale = model.config.output_scale;
    let inv_n = 1.0 / batch.len() as f64;
    let levels = model.networks.encoding_levels;
    let d = model.networks.latent_dim;

    let rots = model
        .primitives
        .iter()
        .map(|p| quat_to_rot(p.rotation))
        .collect::<Result<Vec<_>>>()?;

    let mut grad = GrfGradient::zeros(model);
    let mut loss = 0.0;

    let mut groups: Vec<(Vec3, Vec<&Observation>)> = Vec::new();
    for &obs in batch {
        match groups.iter_mut().find(|(p, _)| *p == obs.p_tx) {
            Some((_, v)) => v.push(obs),
            None => groups.push((obs.p_tx, vec![obs])),
        }
    }

    for (p_tx, members) in groups {
        let pass = model.networks.evaluate(&model.primitives, p_tx, true);
        let mut d_contrib = vec![vec![0.0; 2 * k]; ng];
        let mut d_alpha = vec![0.0; ng];

        for obs in members {
            // Forward: weights and rendered channel.
            let mut gauss = vec![0.0; ng];
            let mut ys = vec![[0.0; 3]; ng];
            let mut deltas = vec![[0.0; 3]; ng];
            let mut rendered = vec![0.0; 2 * k];
            for (i, prim) in model.primitives.iter().enumerate() {
                let delta = [
                    obs.p_rx[0] - prim.center[0],
                    obs.p_rx[1] - prim.center[1],
                    obs.p_rx[2] - prim.center[2],
                ];
                let r = &rots[i];
                let mut m = 0.0;
                let mut y = [0.0; 3];
                for c in 0..3 {
                    y[c] = (0..3).map(|j| r[j][c] * delta[j]).sum();
                    m += (-2.0 * prim.log_scales[c]).exp() * y[c] * y[c];
                }
                gauss[i] = (-0.5 * m).exp();
                ys[i] = y;
                deltas[i] = delta;
                let w = pass.alphas[i] * gauss[i];
                for (acc, c) in rendered.iter_mut().zip(&pass.contributions[i]) {
                    *acc += scale * w * c;
                }
            }
            let mut err = vec![0.0; 2 * k];
            for i in 0..nt {
                for j in 0..nr {
                    let e = i * nr + j;
                    let hm = obs.h[(i, j)];
                    err[e] = rendered[e] - hm.re;
                    err[k + e] = rendered[k + e] - hm.im;
                }
            }
            loss += inv_n * err.iter().map(|e| e * e).sum::<f64>();

            // Backward. dL/dĤ = 2E/n; Ĥ = scale · Σ w_i c_i.
            for i in 0..ng {
                let prim = &model.primitives[i];
                let alpha = pass.alphas[i];
                let w = alpha * gauss[i];
                let c = &pass.contributions[i];
                let mut d_w = 0.0;
                for e in 0..2 * k {
                    let g = 2.0 * inv_n * err[e] * scale;
                    d_w += g * c[e];
                    d_contrib[i][e] += g * w;
                }
                d_alpha[i] += d_w * gauss[i];
                // w = α exp(−m/2).
                let d_m = -0.5 * w * d_w;
                let y = ys[i];
                let mut d_y = [0.0; 3];
                let base = GEOMETRY_PARAMS * i;
                for c in 0..3 {
                    let inv_var = (-2.0 * prim.log_scales[c]).exp();
                    d_y[c] = d_m * 2.0 * inv_var * y[c];
                    grad.geometry[base + 7 + c] += d_m * (-2.0) * inv_var * y[c] * y[c];
                }
                // y = Rᵀ Δ.
                let r = &rots[i];
                let delta = deltas[i];
                let mut d_r = [[0.0; 3]; 3];
                for j in 0..3 {
                    for c in 0..3 {
                        d_r[j][c] = d_y[c] * delta[j];
                    }
                }
                let dq = quat_to_rot_backward(prim.rotation, &d_r)?;
                for q in 0..4 {
                    grad.geometry[base + 3 + q] += dq[q];
                }
                for j in 0..3 {
                    let d_delta: f64 = (0..3).map(|c| r[j][c] * d_y[c]).sum();
                    grad.geometry[base + j] -= d_delta;
                }
            }
        }

        // Through the two networks, once per primitive.
        let enc = encoded_len(levels);
        for i in 0..ng {
            let d_z = model
                .networks
                .dec
                .backward(&pass.dec_tapes[i], &d_contrib[i], &mut grad.dec);
            let mut d_attr_out = d_z;
            d_attr_out.push(d_alpha[i] * sigmoid(pass.raw_alphas[i]));
            debug_assert_eq!(d_attr_out.len(), d + 1);
            let d_in = model
                .networks
                .attr
                .backward(&pass.attr_tapes[i], &d_attr_out, &mut grad.attr);
            let d_mu = positional_encode_backward(model.primitives[i].center, levels, &d_in[..enc]);
            let base = GEOMETRY_PARAMS * i;
            for c in 0..3 {
                grad.geometry[base + c] += d_mu[c];
            }
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Batch-mean squared Frobenius error before the step.
    pub loss: f64,
    pub grad_norm: f64,
    /// False when the gradient was non-finite and the step was skipped.
    pub accepted: bool,
}

/// One optimizer step on every trainable parameter.
pub fn grf_train_step_batch(model: &mut GrfModel, batch: &[&Observation]) -> Result<StepReport> {
    let (loss, grad) = loss_and_grad(model, batch)?;
    let grad_norm = grad.norm();
    if !grad.is_finite() || !loss.is_finite() {
        return Ok(StepReport {
            loss,
            grad_norm,
            accepted: false,
        });
    }
    // The objective is normalised by the output scale so step sizes do not
    // depend on the physical channel magnitude.
    let norm = 1.0 / (model.config.output_scale * model.config.output_scale);
    let scaled = |g: &[f64]| g.iter().map(|x| x * norm).collect::<Vec<_>>();

    let mut geo = vec![0.0; GEOMETRY_PARAMS * model.num_primitives()];
    for (i, p) in model.primitives.iter().enumerate() {
        p.write_params(&mut geo[GEOMETRY_PARAMS * i..GEOMETRY_PARAMS * (i + 1)]);
    }
    let glr = model.config.geometry_lr();
    let lr = model.config.learning_rate;
    model.opt_geometry.update(&mut geo, &scaled(&grad.geometry), glr);
    for (i, p) in model.primitives.iter_mut().enumerate() {
        let mut prim = GaussianPrimitive::from_params(&geo[GEOMETRY_PARAMS * i..GEOMETRY_PARAMS * (i + 1)]);
        let n = prim.rotation.iter().map(|q| q * q).sum::<f64>().sqrt();
        if glr > 0.0 && n > 0.0 && n.is_finite() {
            for q in &mut prim.rotation {
                *q /= n;
            }
        }
        *p = prim;
    }
    model
        .opt_attr
        .update(model.networks.attr.params_mut(), &scaled(&grad.attr), lr);
    model
        .opt_dec
        .update(model.networks.dec.params_mut(), &scaled(&grad.dec), lr);
    Ok(StepReport {
        loss,
        grad_norm,
        accepted: true,
    })
}

/// Single-sample step with an explicit learning rate for both parameter
/// groups.
pub fn grf_train_step(
    model: &mut GrfModel,
    p_tx: Vec3,
    p_rx: Vec3,
    h_meas: &CMat,
    lr: f64,
) -> Result<StepReport> {
    if !(lr >= 0.0) {
        return Err(TwinError::Config("learning rate must be >= 0".into()));
    }
    let obs = Observation {
        p_tx,
        p_rx,
        h: h_meas.clone(),
    };
    let (saved_lr, saved_glr) = (model.config.learning_rate, model.config.geometry_learning_rate);
    model.config.learning_rate = lr;
    model.config.geometry_learning_rate = None;
    let out = grf_train_step_batch(model, &[&obs]);
    model.config.learning_rate = saved_lr;
    model.config.geometry_learning_rate = saved_glr;
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Set the output scale from the RMS of the training entries before the
    /// first step of an untrained model.
    #[serde(default = "default_true")]
    pub auto_scale: bool,
    /// Re-draw primitive centres over the padded bounding box of the training
    /// receivers before the first step of an untrained model.
    #[serde(default)]
    pub fit_region: Option<f64>,
    /// Learning-rate multiplier reached at the last epoch; the schedule is
    /// geometric in the epoch index.
    #[serde(default = "default_one")]
    pub final_lr_factor: f64,
}

fn default_one() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            seed: 0,
            auto_scale: true,
            fit_region: None,
            final_lr_factor: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRow {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitReport {
    /// Mean batch loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub telemetry: Vec<TelemetryRow>,
    pub rejected_steps: usize,
}

/// RMS magnitude of the entries of a set of channels.
pub fn entry_rms<'a>(hs: impl IntoIterator<Item = &'a CMat>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for h in hs {
        s += h.norm_squared();
        n += h.len();
    }
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

/// Shuffled mini-batch training.
pub fn fit_scene(model: &mut GrfModel, data: &[Observation], cfg: &FitConfig) -> Result<FitReport> {
    if data.is_empty() {
        return Err(TwinError::Empty("training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(TwinError::Config("batch size must be positive".into()));
    }
    if !(cfg.final_lr_factor > 0.0 && cfg.final_lr_factor.is_finite()) {
        return Err(TwinError::Config("final learning-rate factor must be positive".into()));
    }
    for obs in data {
        check_shape(model, &obs.h)?;
    }
    let mut report = FitReport::default();
    if cfg.epochs == 0 {
        return Ok(report);
    }
    if model.steps() == 0 {
        if let Some(pad) = cfg.fit_region {
            if let Some(region) = InitRegion::bounding_box(data.iter().map(|o| &o.p_rx), pad) {
                let mut config = model.config.clone();
                config.init_region = region;
                *model = GrfModel::new(config)?;
            }
        }
        if cfg.auto_scale {
            // Match the RMS of the initial render to the training targets.
            let target = entry_rms(data.iter().map(|o| &o.h));
            model.config.output_scale = 1.0;
            let mut snaps: Vec<FieldSnapshot> = Vec::new();
            let mut rendered = Vec::with_capacity(data.len());
            for o in data {
                let snap = match snaps.iter().position(|s| s.p_tx == o.p_tx) {
                    Some(i) => &snaps[i],
                    None => {
                        snaps.push(model.snapshot(o.p_tx)?);
                        snaps.last().unwrap()
                    }
                };
                rendered.push(snap.render(o.p_rx));
            }
            let init = entry_rms(&rendered);
            if target > 0.0 && init > 0.0 && (target / init).is_finite() {
                model.config.output_scale = target / init;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let (base_lr, base_glr) = (model.config.learning_rate, model.config.geometry_learning_rate);
    for epoch in 0..cfg.epochs {
        let f = if cfg.epochs > 1 {
            cfg.final_lr_factor.powf(epoch as f64 / (cfg.epochs - 1) as f64)
        } else {
            1.0
        };
        model.config.learning_rate = base_lr * f;
        model.config.geometry_learning_rate = Some(base_glr.unwrap_or(base_lr) * f);
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Observation> = chunk.iter().map(|&i| &data[i]).collect();
            let step = match grf_train_step_batch(model, &batch) {
                Ok(s) => s,
                Err(e) => {
                    model.config.learning_rate = base_lr;
                    model.config.geometry_learning_rate = base_glr;
                    return Err(e);
                }
            };
            if step.accepted {
                sum += step.loss;
                count += 1;
            } else {
                report.rejected_steps += 1;
            }
            report.telemetry.push(TelemetryRow {
                step: model.steps(),
                loss: step.loss,
                grad_norm: step.grad_norm,
            });
        }
        report
            .epoch_loss
            .push(if count > 0 { sum / count as f64 } else { f64::NAN });
    }
    model.config.learning_rate = base_lr;
    model.config.geometry_learning_rate = base_glr;
    Ok(report)
}

pub fn write_telemetry(path: impl AsRef<Path>, rows: &[TelemetryRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record(["step", "loss", "grad_norm"])?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Nearest-neighbour interpolation: the measured channel of the closest
/// training receiver for the same transmitter.
pub fn nearest_neighbor(train: &[Observation], p_tx: Vec3, p_rx: Vec3) -> Option<&CMat> {
    train
        .iter()
        .filter(|o| o.p_tx == p_tx)
        .min_by(|a, b| {
            crate::scene::norm(crate::scene::sub(a.p_rx, p_rx))
                .total_cmp(&crate::scene::norm(crate::scene::sub(b.p_rx, p_rx)))
        })
        .map(|o| &o.h)
}
