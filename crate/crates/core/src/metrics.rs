//! Channel accuracy metrics.

use crate::error::{Result, TwinError};
use crate::linalg::{frob_sq, CMat};

fn check_shapes(a: &CMat, b: &CMat) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TwinError::shape(
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(())
}

/// Normalized mean-square error `‖H − Ĥ‖_F² / ‖H‖_F²`.
pub fn nmse(h_true: &CMat, h_pred: &CMat) -> Result<f64> {
    check_shapes(h_true, h_pred)?;
    let denom = frob_sq(h_true);
    if denom <= 0.0 {
        return Err(TwinError::DegenerateInput(
            "reference channel has zero energy".into(),
        ));
    }
    Ok(frob_sq(&(h_true - h_pred)) / denom)
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn nmse_db(h_true: &CMat, h_pred: &CMat) -> Result<f64> {
    nmse(h_true, h_pred).map(to_db)
}

/// Reconstruction SNR in dB: `10 log10(‖H_gt‖² / ‖H_pred − H_gt‖²)`.
///
/// An exact reconstruction returns `f64::INFINITY`.
pub fn channel_snr_db(h_gt: &CMat, h_pred: &CMat) -> Result<f64> {
    check_shapes(h_gt, h_pred)?;
    let signal = frob_sq(h_gt);
    if signal <= 0.0 {
        return Err(TwinError::DegenerateInput(
            "ground-truth channel has zero energy".into(),
        ));
    }
    let err = frob_sq(&(h_pred - h_gt));
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(to_db(signal / err))
}

/// Aggregate SNR over a set of links: total signal energy over total error
/// energy.
pub fn pooled_snr_db<'a>(pairs: impl IntoIterator<Item = (&'a CMat, &'a CMat)>) -> Result<f64> {
    let mut signal = 0.0;
    let mut err = 0.0;
    for (gt, pred) in pairs {
        check_shapes(gt, pred)?;
        signal += frob_sq(gt);
        err += frob_sq(&(pred - gt));
    }
    if signal <= 0.0 {
        return Err(TwinError::DegenerateInput("no signal energy".into()));
    }
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(to_db(signal / err))
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
