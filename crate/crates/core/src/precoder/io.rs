use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::Result;
use crate::linalg::C64;
use crate::tensor_io::Tensor;

use super::problem::sidecar_path;
use super::solve::{PrecoderSolution, SolverDiagnostics};
use super::sweep::energy_efficiency;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub objective: f64,
    pub total_power: f64,
    pub energy_efficiency: f64,
    pub duals: Vec<f64>,
    pub order: Vec<usize>,
    pub tie: bool,
    pub rates: Vec<f64>,
    pub rates_per_tone: Vec<Vec<f64>>,
    pub sinr: Vec<Vec<Vec<f64>>>,
    pub diagnostics: SolverDiagnostics,
    /// Covariance dump, relative to the JSON file.
    pub covariances: String,
}

impl SolutionSummary {
    pub fn new(sol: &PrecoderSolution, covariances: String) -> Self {
        Self {
            objective: sol.objective,
            total_power: sol.total_power(),
            energy_efficiency: energy_efficiency(sol),
            duals: sol.duals.clone(),
            order: sol.order.order.clone(),
            tie: sol.order.tie,
            rates: sol.rates.totals.clone(),
            rates_per_tone: sol.rates.per_tone.clone(),
            sinr: sol
                .decoding
                .iter()
                .map(|u| u.iter().map(|n| n.iter().map(|d| d.sinr).collect()).collect())
                .collect(),
            diagnostics: sol.diagnostics.clone(),
            covariances,
        }
    }
}

/// Writes the JSON summary and a covariance tensor next to it. Covariances
/// are concatenated row-major in user, tone order.
pub fn save_solution(sol: &PrecoderSolution, json_path: impl AsRef<Path>) -> Result<()> {
    let json_path = json_path.as_ref();
    let dump = sidecar_path(json_path);
    let name = dump
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut data: Vec<C64> = Vec::new();
    let mut dims = Vec::new();
    for per_user in &sol.covariances {
        dims.push(per_user.first().map_or(0, |r| r.nrows()));
        for r in per_user {
            for i in 0..r.nrows() {
                for j in 0..r.ncols() {
                    data.push(r[(i, j)]);
                }
            }
        }
    }
    let n = data.len();
    Tensor::complex(
        vec![n],
        data,
        json!({"layout": "user, tone, row-major L_x x L_x", "tx_dims": dims}),
    )?
    .save(dump)?;
    let summary = SolutionSummary::new(sol, name);
    std::fs::write(json_path, serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}
