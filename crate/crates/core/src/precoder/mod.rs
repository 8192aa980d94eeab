//! Minimum weighted-energy transmit covariances on the multiple-access
//! channel, with the successive decoding order read off the duals and
//! MMSE-SIC receive filters.

mod barrier;
pub mod io;
pub mod mmse;
pub mod problem;
pub mod rates;
pub mod robust;
pub mod solve;
pub mod sweep;

pub use io::{save_solution, SolutionSummary};
pub use mmse::{mmse_rates, mmse_sic_vectors, stream_factors, DecodingVector, Stream, STREAM_THRESHOLD};
pub use problem::{Covariances, MacProblem};
pub use rates::{
    check_feasible, corner_rates, is_permutation, subset_members, subset_of, subset_rate_bound, subset_rate_total,
    FeasibilityReport, RateTable, Subset, MAX_CHECK_USERS, PSD_TOL,
};
pub use robust::{ellipsoidal_design, margin_inflated, ChannelUncertainty};
pub use solve::{
    recover_sic_order, solve_fixed_order, solve_min_energy, weighted_energy, FixedOrderSolution, PrecoderSolution,
    SicOrder, SolveStatus, SolverConfig, SolverDiagnostics,
};
pub use sweep::{
    efficiency, energy_efficiency, noise_for_snr, scene_mac_problem, sweep_snr, write_sweep_csv, SceneMacConfig,
    SweepRow,
};
