use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Result, TwinError};
use crate::linalg::{all_finite, frob_sq, CMat, C64};
use crate::tensor_io::Tensor;

/// Per-user, per-tone transmit covariances, indexed `[u][n]`.
pub type Covariances = Vec<Vec<CMat>>;

/// Minimum weighted-energy problem on the multiple-access channel.
///
/// `channels[u][n]` is the `L_y × L_x,u` matrix from user `u` to the
/// receiver on tone `n`. Noise is white with variance `noise_var`.
#[derive(Debug, Clone, PartialEq)]
pub struct MacProblem {
    pub channels: Vec<Vec<CMat>>,
    pub noise_var: f64,
    pub b_min: Vec<f64>,
    pub weights: Vec<f64>,
}

impl MacProblem {
    pub fn new(channels: Vec<Vec<CMat>>, noise_var: f64, b_min: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let p = Self {
            channels,
            noise_var,
            b_min,
            weights,
        };
        p.validate()?;
        Ok(p)
    }

    /// Single-tone SISO instance with real gains `|h_u|²`.
    pub fn siso(gains: &[f64], noise_var: f64, b_min: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let channels = gains
            .iter()
            .map(|&g| vec![CMat::from_element(1, 1, C64::new(g.sqrt(), 0.0))])
            .collect();
        Self::new(channels, noise_var, b_min, weights)
    }

    pub fn users(&self) -> usize {
        self.channels.len()
    }

    pub fn tones(&self) -> usize {
        self.channels.first().map_or(0, |c| c.len())
    }

    /// Receive dimension L_y.
    pub fn rx_dim(&self) -> usize {
        self.channels[0][0].nrows()
    }

    /// Transmit dimension L_x,u of user `u`.
    pub fn tx_dim(&self, u: usize) -> usize {
        self.channels[u][0].ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let u = self.users();
        if u == 0 {
            return Err(TwinError::Config("problem has no users".into()));
        }
        let n = self.tones();
        if n == 0 {
            return Err(TwinError::Config("problem has no tones".into()));
        }
        if self.b_min.len() != u || self.weights.len() != u {
            return Err(TwinError::shape(
                format!("{u} rate targets and weights"),
                format!("{} and {}", self.b_min.len(), self.weights.len()),
            ));
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return Err(TwinError::Config(format!("noise variance must be positive, got {}", self.noise_var)));
        }
        if self.b_min.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(TwinError::Config("rate targets must be finite and non-negative".into()));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(TwinError::Config("weights must be finite and non-negative".into()));
        }
        if !self.weights.iter().any(|w| *w > 0.0) {
            return Err(TwinError::Config("at least one weight must be positive".into()));
        }
        let ly = self.channels[0][0].nrows();
        for (ui, per_user) in self.channels.iter().enumerate() {
            if per_user.len() != n {
                return Err(TwinError::shape(format!("{n} tones"), format!("{} for user {ui}", per_user.len())));
            }
            let lx = per_user[0].ncols();
            for h in per_user {
                if h.nrows() != ly || h.ncols() != lx || lx == 0 || ly == 0 {
                    return Err(TwinError::shape(format!("{ly}x{lx}"), format!("{}x{}", h.nrows(), h.ncols())));
                }
                if !all_finite(h) {
                    return Err(TwinError::NonFinite(format!("channel of user {ui}")));
                }
            }
        }
        Ok(())
    }

    /// Mean per-entry channel gain over all users and tones.
    pub fn mean_gain(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for per_user in &self.channels {
            for h in per_user {
                total += frob_sq(h);
                count += h.len();
            }
        }
        total / count as f64
    }

    pub fn zero_covariances(&self) -> Covariances {
        (0..self.users())
            .map(|u| vec![CMat::zeros(self.tx_dim(u), self.tx_dim(u)); self.tones()])
            .collect()
    }

    pub fn with_noise_var(&self, noise_var: f64) -> Result<Self> {
        let mut p = self.clone();
        p.noise_var = noise_var;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, json_path: impl AsRef<Path>) -> Result<()> {
        let json_path = json_path.as_ref();
        let sidecar = sidecar_path(json_path);
        let desc = ProblemFile {
            users: self.users(),
            tones: self.tones(),
            rx_dim: self.rx_dim(),
            tx_dims: (0..self.users()).map(|u| self.tx_dim(u)).collect(),
            noise_var: self.noise_var,
            b_min: self.b_min.clone(),
            weights: self.weights.clone(),
            channels: sidecar
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        };
        std::fs::write(json_path, serde_json::to_string_pretty(&desc)?)?;
        let mut data = Vec::new();
        for per_user in &self.channels {
            for h in per_user {
                for i in 0..h.nrows() {
                    for j in 0..h.ncols() {
                        data.push(h[(i, j)]);
                    }
                }
            }
        }
        let n = data.len();
        Tensor::complex(vec![n], data, json!({"layout": "user, tone, row-major L_y x L_x"}))?.save(sidecar)
    }

    /// Loads the JSON description; the channel tensor path is resolved
    /// relative to the JSON file.
    pub fn load(json_path: impl AsRef<Path>) -> Result<Self> {
        let json_path = json_path.as_ref();
        let desc: ProblemFile = serde_json::from_str(&std::fs::read_to_string(json_path)?)?;
        let base = json_path.parent().unwrap_or(Path::new("."));
        let tensor = Tensor::load(base.join(&desc.channels))?;
        let data = tensor.as_complex()?;
        if desc.tx_dims.len() != desc.users {
            return Err(TwinError::Format("tx_dims length differs from users".into()));
        }
        let expected: usize = desc.tx_dims.iter().map(|lx| desc.tones * desc.rx_dim * lx).sum();
        if data.len() != expected {
            return Err(TwinError::shape(expected, data.len()));
        }
        let mut off = 0;
        let mut channels = Vec::with_capacity(desc.users);
        for &lx in &desc.tx_dims {
            let mut per_user = Vec::with_capacity(desc.tones);
            for _ in 0..desc.tones {
                let len = desc.rx_dim * lx;
                per_user.push(CMat::from_row_slice(desc.rx_dim, lx, &data[off..off + len]));
                off += len;
            }
            channels.push(per_user);
        }
        Self::new(channels, desc.noise_var, desc.b_min, desc.weights)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ProblemFile {
    users: usize,
    tones: usize,
    rx_dim: usize,
    tx_dims: Vec<usize>,
    noise_var: f64,
    b_min: Vec<f64>,
    weights: Vec<f64>,
    /// Channel tensor file name, relative to the JSON file.
    channels: String,
}

pub(crate) fn sidecar_path(json_path: &Path) -> PathBuf {
    json_path.with_extension("bin")
}
