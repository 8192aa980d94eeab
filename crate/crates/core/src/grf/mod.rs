//! Gaussian radio field: a sparse set of anisotropic 3D Gaussians whose
//! weighted complex contributions sum to the channel at a receiver position.

mod checkpoint;
mod encoding;
mod model;
mod rotation;
mod train;

pub use encoding::{encoded_len, positional_encode};
pub use model::{
    primitive_weight, render_channel, FieldNetworks, FieldSnapshot, FlopCount, GaussianPrimitive,
    GrfConfig, GrfModel, InitRegion,
};
pub use rotation::{det3, quat_to_rot, Mat3, Quat};
pub use train::{
    entry_rms, fit_scene, grf_loss, grf_train_step, grf_train_step_batch, loss_and_grad,
    nearest_neighbor, write_telemetry, FitConfig, FitReport, GrfGradient, Observation, StepReport,
    TelemetryRow,
};
