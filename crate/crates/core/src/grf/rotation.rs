use crate::error::{Result, TwinError};

pub type Quat = [f64; 4];
pub type Mat3 = [[f64; 3]; 3];

fn normalized(q: Quat) -> Result<(Quat, f64)> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(TwinError::DegenerateInput("zero or non-finite quaternion".into()));
    }
    Ok(([q[0] / n, q[1] / n, q[2] / n, q[3] / n], n))
}

/// Rotation matrix of the quaternion `(w, x, y, z)`, normalised first.
pub fn quat_to_rot(q: Quat) -> Result<Mat3> {
    let ([w, x, y, z], _) = normalized(q)?;
    Ok([
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ])
}

/// Gradient with respect to the raw (unnormalised) quaternion given the
/// gradient `d_r` with respect to the rotation matrix entries.
pub(crate) fn quat_to_rot_backward(q: Quat, d_r: &Mat3) -> Result<Quat> {
    let ([w, x, y, z], n) = normalized(q)?;
    let d = d_r;
    // ∂R/∂q̂ contracted with d_r.
    let gw = 2.0
        * (-z * d[0][1] + y * d[0][2] + z * d[1][0] - x * d[1][2] - y * d[2][0] + x * d[2][1]);
    let gx = 2.0
        * (y * d[0][1] + z * d[0][2] + y * d[1][0] - 2.0 * x * d[1][1] - w * d[1][2]
            + z * d[2][0]
            + w * d[2][1]
            - 2.0 * x * d[2][2]);
    let gy = 2.0
        * (-2.0 * y * d[0][0] + x * d[0][1] + w * d[0][2] + x * d[1][0] + z * d[1][2]
            - w * d[2][0]
            + z * d[2][1]
            - 2.0 * y * d[2][2]);
    let gz = 2.0
        * (-2.0 * z * d[0][0] - w * d[0][1] + x * d[0][2] + w * d[1][0] - 2.0 * z * d[1][1]
            + y * d[1][2]
            + x * d[2][0]
            + y * d[2][1]);
    let g = [gw, gx, gy, gz];
    let qh = [w, x, y, z];
    // Project through the normalisation q̂ = q/‖q‖.
    let dot: f64 = g.iter().zip(&qh).map(|(a, b)| a * b).sum();
    Ok([
        (g[0] - dot * qh[0]) / n,
        (g[1] - dot * qh[1]) / n,
        (g[2] - dot * qh[2]) / n,
        (g[3] - dot * qh[3]) / n,
    ])
}

pub fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}
