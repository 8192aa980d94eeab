use crate::error::{Result, TwinError};

use super::problem::MacProblem;

/// Uncertainty description of a predicted channel. Only the margin
/// heuristic below uses it; ellipsoidal and chance-constrained designs
/// are not implemented.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelUncertainty {
    /// Predicted error energy `E‖H − Ĥ‖_F²` per user and tone.
    pub error_energy: Vec<Vec<f64>>,
    /// Ellipsoid radius.
    pub rho: f64,
    /// Allowed violation probability.
    pub violation: f64,
}

/// Inflates the noise variance by `ρ² ·` the mean per-entry predicted error
/// energy, so that a precoder designed on `Ĥ` keeps a power margin.
pub fn margin_inflated(problem: &MacProblem, unc: &ChannelUncertainty) -> Result<MacProblem> {
    if unc.error_energy.len() != problem.users() || unc.error_energy.iter().any(|e| e.len() != problem.tones()) {
        return Err(TwinError::shape(
            format!("{}x{} error energies", problem.users(), problem.tones()),
            "mismatched table",
        ));
    }
    if !(unc.rho >= 0.0 && unc.rho.is_finite()) || !(unc.violation > 0.0 && unc.violation < 1.0) {
        return Err(TwinError::Config("robust margin needs rho >= 0 and violation in (0, 1)".into()));
    }
    let mut total = 0.0;
    let mut count = 0;
    for (u, per_user) in unc.error_energy.iter().enumerate() {
        for (n, &e) in per_user.iter().enumerate() {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(TwinError::NonFinite(format!("error energy of user {u} tone {n}")));
            }
            total += e / problem.channels[u][n].len() as f64;
            count += 1;
        }
    }
    problem.with_noise_var(problem.noise_var + unc.rho * unc.rho * total / count as f64)
}

/// Exact ellipsoidal design. Not implemented.
pub fn ellipsoidal_design(_problem: &MacProblem, _unc: &ChannelUncertainty) -> Result<()> {
    Err(TwinError::Config("ellipsoidal robust design is not implemented".into()))
}
