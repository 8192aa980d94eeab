use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoding::{encoded_len, positional_encode_into};
use super::rotation::{quat_to_rot, Mat3, Quat};
use crate::error::{Result, TwinError};
use crate::linalg::{CMat, C64};
use crate::nn::{softplus, softplus_inv, Activation, Adam, Mlp, Tape};
use crate::scene::{norm, Scene, Vec3};

/// Region the primitive centres are drawn from at initialisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitRegion {
    Ball { center: Vec3, radius: f64 },
    Box { center: Vec3, half_extent: Vec3 },
}

impl InitRegion {
    pub fn diameter(&self) -> f64 {
        match self {
            InitRegion::Ball { radius, .. } => 2.0 * radius,
            InitRegion::Box { half_extent, .. } => 2.0 * norm(*half_extent),
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> Vec3 {
        match *self {
            InitRegion::Ball { center, radius } => loop {
                let p = [
                    rng.random_range(-radius..=radius),
                    rng.random_range(-radius..=radius),
                    rng.random_range(-radius..=radius),
                ];
                if norm(p) <= radius {
                    return [center[0] + p[0], center[1] + p[1], center[2] + p[2]];
                }
            },
            InitRegion::Box {
                center,
                half_extent: h,
            } => {
                let mut p = center;
                for k in 0..3 {
                    if h[k] > 0.0 {
                        p[k] += rng.random_range(-h[k]..=h[k]);
                    }
                }
                p
            }
        }
    }

    /// Axis-aligned bounding box of a point set, padded by `pad` on every
    /// side.
    pub fn bounding_box<'a>(points: impl IntoIterator<Item = &'a Vec3>, pad: f64) -> Option<Self> {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut any = false;
        for p in points {
            any = true;
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        any.then(|| InitRegion::Box {
            center: [
                0.5 * (lo[0] + hi[0]),
                0.5 * (lo[1] + hi[1]),
                0.5 * (lo[2] + hi[2]),
            ],
            half_extent: [
                0.5 * (hi[0] - lo[0]) + pad,
                0.5 * (hi[1] - lo[1]) + pad,
                0.5 * (hi[2] - lo[2]) + pad,
            ],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrfConfig {
    pub num_primitives: usize,
    pub encoding_levels: usize,
    pub latent_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub tx_elements: usize,
    pub rx_elements: usize,
    /// Learning rate of the two networks.
    pub learning_rate: f64,
    /// Learning rate of the primitive geometry (centre, rotation, scale).
    /// Falls back to `learning_rate` when absent.
    #[serde(default)]
    pub geometry_learning_rate: Option<f64>,
    /// Fixed factor applied to the rendered sum; sets the physical channel
    /// scale so the networks work with O(1) outputs.
    pub output_scale: f64,
    pub init_region: InitRegion,
    /// Initial isotropic log-scale; `ln(region diameter / 20)` when absent.
    #[serde(default)]
    pub init_log_scale: Option<f64>,
    pub seed: u64,
}

impl GrfConfig {
    pub fn for_scene(scene: &Scene, num_primitives: usize, seed: u64) -> Self {
        Self {
            num_primitives,
            encoding_levels: 16,
            latent_dim: 32,
            hidden_width: 64,
            hidden_layers: 2,
            tx_elements: scene.tx_elements(),
            rx_elements: scene.rx_elements(),
            learning_rate: 1e-3,
            geometry_learning_rate: None,
            output_scale: 1.0,
            init_region: InitRegion::Ball {
                center: [0.0; 3],
                radius: scene.radius(),
            },
            init_log_scale: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_primitives == 0 {
            return Err(TwinError::Config("need at least one Gaussian primitive".into()));
        }
        if self.latent_dim == 0 || self.hidden_width == 0 {
            return Err(TwinError::Config("network widths must be positive".into()));
        }
        if self.tx_elements == 0 || self.rx_elements == 0 {
            return Err(TwinError::Config("antenna counts must be positive".into()));
        }
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return Err(TwinError::Config("output scale must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(TwinError::Config("learning rate must be >= 0".into()));
        }
        Ok(())
    }

    pub(crate) fn attr_sizes(&self) -> Vec<usize> {
        let mut s = vec![2 * encoded_len(self.encoding_levels)];
        s.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        s.push(self.latent_dim + 1);
        s
    }

    pub(crate) fn dec_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.latent_dim];
        s.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        s.push(2 * self.tx_elements * self.rx_elements);
        s
    }

    pub fn geometry_lr(&self) -> f64 {
        self.geometry_learning_rate.unwrap_or(self.learning_rate)
    }
}

/// Pose and shape of one anisotropic Gaussian. Its strength `α` and latent
/// descriptor come from the attribute network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrimitive {
    pub center: Vec3,
    /// Unit quaternion `(w, x, y, z)`; renormalised on use.
    pub rotation: Quat,
    pub log_scales: Vec3,
}

pub(crate) const GEOMETRY_PARAMS: usize = 10;

impl GaussianPrimitive {
    /// Precision matrix `Σ⁻¹ = R diag(e^{−2s}) Rᵀ`.
    pub fn precision(&self) -> Result<Mat3> {
        let r = quat_to_rot(self.rotation)?;
        let inv: [f64; 3] = [
            (-2.0 * self.log_scales[0]).exp(),
            (-2.0 * self.log_scales[1]).exp(),
            (-2.0 * self.log_scales[2]).exp(),
        ];
        let mut p = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                p[i][j] = (0..3).map(|k| r[i][k] * inv[k] * r[j][k]).sum();
            }
        }
        Ok(p)
    }

    /// Covariance `Σ = R diag(e^{2s}) Rᵀ`.
    pub fn covariance(&self) -> Result<Mat3> {
        let r = quat_to_rot(self.rotation)?;
        let var: [f64; 3] = [
            (2.0 * self.log_scales[0]).exp(),
            (2.0 * self.log_scales[1]).exp(),
            (2.0 * self.log_scales[2]).exp(),
        ];
        let mut c = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] = (0..3).map(|k| r[i][k] * var[k] * r[j][k]).sum();
            }
        }
        Ok(c)
    }

    pub(crate) fn write_params(&self, out: &mut [f64]) {
        out[..3].copy_from_slice(&self.center);
        out[3..7].copy_from_slice(&self.rotation);
        out[7..10].copy_from_slice(&self.log_scales);
    }

    pub(crate) fn from_params(p: &[f64]) -> Self {
        Self {
            center: [p[0], p[1], p[2]],
            rotation: [p[3], p[4], p[5], p[6]],
            log_scales: [p[7], p[8], p[9]],
        }
    }
}

fn mahalanobis_sq(precision: &Mat3, delta: Vec3) -> f64 {
    let mut m = 0.0;
    for i in 0..3 {
        let row: f64 = (0..3).map(|j| precision[i][j] * delta[j]).sum();
        m += delta[i] * row;
    }
    m
}

/// Spatial weight `α · exp(−½ Δᵀ Σ⁻¹ Δ)` with `Δ = p_rx − μ`.
pub fn primitive_weight(prim: &GaussianPrimitive, alpha: f64, p_rx: Vec3) -> Result<f64> {
    let p = prim.precision()?;
    let d = [
        p_rx[0] - prim.center[0],
        p_rx[1] - prim.center[1],
        p_rx[2] - prim.center[2],
    ];
    Ok(alpha * (-0.5 * mahalanobis_sq(&p, d)).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldNetworks {
    pub attr: Mlp,
    pub dec: Mlp,
    pub encoding_levels: usize,
    pub latent_dim: usize,
}

/// Per-primitive outputs of the two networks for one transmitter position.
pub(crate) struct AttributePass {
    pub alphas: Vec<f64>,
    pub raw_alphas: Vec<f64>,
    /// Flattened `[re (N_t·N_r, row-major), im (N_t·N_r)]` contributions.
    pub contributions: Vec<Vec<f64>>,
    pub attr_tapes: Vec<Tape>,
    pub dec_tapes: Vec<Tape>,
}

impl FieldNetworks {
    fn attr_input(&self, center: Vec3, p_tx: Vec3) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.attr.input_dim());
        positional_encode_into(center, self.encoding_levels, &mut x);
        positional_encode_into(p_tx, self.encoding_levels, &mut x);
        x
    }

    pub(crate) fn evaluate(&self, prims: &[GaussianPrimitive], p_tx: Vec3, record: bool) -> AttributePass {
        let n = prims.len();
        let mut pass = AttributePass {
            alphas: Vec::with_capacity(n),
            raw_alphas: Vec::with_capacity(n),
            contributions: Vec::with_capacity(n),
            attr_tapes: Vec::new(),
            dec_tapes: Vec::new(),
        };
        for prim in prims {
            let input = self.attr_input(prim.center, p_tx);
            let (attr_out, attr_tape) = if record {
                let (o, t) = self.attr.forward_tape(&input);
                (o, Some(t))
            } else {
                (self.attr.forward(&input), None)
            };
            let raw = attr_out[self.latent_dim];
            let z = &attr_out[..self.latent_dim];
            let (c, dec_tape) = if record {
                let (o, t) = self.dec.forward_tape(z);
                (o, Some(t))
            } else {
                (self.dec.forward(z), None)
            };
            pass.raw_alphas.push(raw);
            pass.alphas.push(softplus(raw));
            pass.contributions.push(c);
            if let (Some(a), Some(d)) = (attr_tape, dec_tape) {
                pass.attr_tapes.push(a);
                pass.dec_tapes.push(d);
            }
        }
        pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrfModel {
    pub config: GrfConfig,
    pub primitives: Vec<GaussianPrimitive>,
    pub networks: FieldNetworks,
    pub(crate) opt_geometry: Adam,
    pub(crate) opt_attr: Adam,
    pub(crate) opt_dec: Adam,
}

impl GrfModel {
    /// Fresh model: centres uniform over the init region, isotropic scales,
    /// identity rotations and every `α` starting at 1.
    pub fn new(config: GrfConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let log_scale = config
            .init_log_scale
            .unwrap_or_else(|| (config.init_region.diameter() / 20.0).ln());
        let primitives = (0..config.num_primitives)
            .map(|_| GaussianPrimitive {
                center: config.init_region.sample(&mut rng),
                rotation: [1.0, 0.0, 0.0, 0.0],
                log_scales: [log_scale; 3],
            })
            .collect();
        let mut attr = Mlp::new(&config.attr_sizes(), Activation::Tanh, &mut rng);
        let alpha_unit = config.latent_dim;
        attr.zero_output_row(alpha_unit);
        attr.set_output_bias(alpha_unit, softplus_inv(1.0));
        let dec = Mlp::new(&config.dec_sizes(), Activation::Tanh, &mut rng);
        let networks = FieldNetworks {
            attr,
            dec,
            encoding_levels: config.encoding_levels,
            latent_dim: config.latent_dim,
        };
        Self::assemble(config, primitives, networks)
    }

    pub(crate) fn assemble(
        config: GrfConfig,
        primitives: Vec<GaussianPrimitive>,
        networks: FieldNetworks,
    ) -> Result<Self> {
        if primitives.len() != config.num_primitives {
            return Err(TwinError::shape(config.num_primitives, primitives.len()));
        }
        let (na, nd) = (networks.attr.num_params(), networks.dec.num_params());
        Ok(Self {
            opt_geometry: Adam::new(GEOMETRY_PARAMS * primitives.len()),
            opt_attr: Adam::new(na),
            opt_dec: Adam::new(nd),
            config,
            primitives,
            networks,
        })
    }

    pub fn num_primitives(&self) -> usize {
        self.primitives.len()
    }

    pub fn steps(&self) -> u64 {
        self.opt_geometry.steps()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.config.tx_elements, self.config.rx_elements)
    }

    /// Evaluates the networks for every primitive at `p_tx` and caches the
    /// results so that rendering costs Θ(N_G·N_t·N_r) per receiver.
    pub fn snapshot(&self, p_tx: Vec3) -> Result<FieldSnapshot> {
        let pass = self.networks.evaluate(&self.primitives, p_tx, false);
        let precisions = self
            .primitives
            .iter()
            .map(|p| p.precision())
            .collect::<Result<Vec<_>>>()?;
        Ok(FieldSnapshot {
            p_tx,
            centers: self.primitives.iter().map(|p| p.center).collect(),
            precisions,
            alphas: pass.alphas,
            contributions: pass.contributions,
            output_scale: self.config.output_scale,
            nt: self.config.tx_elements,
            nr: self.config.rx_elements,
        })
    }

    /// Complex contribution matrix `C_i` of every primitive at `p_tx`
    /// (without the output scale).
    pub fn contributions(&self, p_tx: Vec3) -> Vec<CMat> {
        let pass = self.networks.evaluate(&self.primitives, p_tx, false);
        let (nt, nr) = self.shape();
        pass.contributions
            .iter()
            .map(|c| unflatten(c, nt, nr))
            .collect()
    }

    pub fn alphas(&self, p_tx: Vec3) -> Vec<f64> {
        self.networks.evaluate(&self.primitives, p_tx, false).alphas
    }
}

pub(crate) fn unflatten(c: &[f64], nt: usize, nr: usize) -> CMat {
    let k = nt * nr;
    CMat::from_fn(nt, nr, |i, j| C64::new(c[i * nr + j], c[k + i * nr + j]))
}

/// Operation counts of one render call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlopCount {
    /// Spatial-weight evaluation, constant work per primitive.
    pub weight: u64,
    /// Weighted accumulation of the contributions, 4 real operations per
    /// complex entry per primitive.
    pub accumulate: u64,
}

impl FlopCount {
    pub fn total(&self) -> u64 {
        self.weight + self.accumulate
    }
}

// Δ (3), Σ⁻¹Δ (15), dot (5), scale by −½ (1), exp (1), α· (1).
const WEIGHT_FLOPS: u64 = 26;

/// Network outputs frozen for one transmitter position.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    pub p_tx: Vec3,
    pub centers: Vec<Vec3>,
    pub precisions: Vec<Mat3>,
    pub alphas: Vec<f64>,
    pub contributions: Vec<Vec<f64>>,
    pub output_scale: f64,
    pub nt: usize,
    pub nr: usize,
}

impl FieldSnapshot {
    pub fn weight(&self, i: usize, p_rx: Vec3) -> f64 {
        let c = self.centers[i];
        let d = [p_rx[0] - c[0], p_rx[1] - c[1], p_rx[2] - c[2]];
        self.alphas[i] * (-0.5 * mahalanobis_sq(&self.precisions[i], d)).exp()
    }

    pub fn render(&self, p_rx: Vec3) -> CMat {
        self.render_counted(p_rx, &mut FlopCount::default())
    }

    pub fn render_counted(&self, p_rx: Vec3, flops: &mut FlopCount) -> CMat {
        let k = self.nt * self.nr;
        let mut acc = vec![0.0; 2 * k];
        for i in 0..self.centers.len() {
            let w = self.weight(i, p_rx);
            flops.weight += WEIGHT_FLOPS;
            let c = &self.contributions[i];
            for e in 0..k {
                acc[e] += w * c[e];
                acc[k + e] += w * c[k + e];
                flops.accumulate += 4;
            }
        }
        let mut h = unflatten(&acc, self.nt, self.nr);
        h *= C64::new(self.output_scale, 0.0);
        h
    }

    /// Renders a subset of primitives.
    pub fn render_subset(&self, p_rx: Vec3, subset: &[usize]) -> CMat {
        let k = self.nt * self.nr;
        let mut acc = vec![0.0; 2 * k];
        for &i in subset {
            let w = self.weight(i, p_rx);
            for e in 0..2 * k {
                acc[e] += w * self.contributions[i][e];
            }
        }
        unflatten(&acc, self.nt, self.nr) * C64::new(self.output_scale, 0.0)
    }
}

/// `H(p_rx, p_tx) = Σ_i w_i(p_rx) C_i`.
pub fn render_channel(model: &GrfModel, p_tx: Vec3, p_rx: Vec3) -> Result<CMat> {
    Ok(model.snapshot(p_tx)?.render(p_rx))
}
