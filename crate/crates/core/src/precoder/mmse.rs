
use crate::error::{Result, TwinError};
use crate::linalg::{eigh, inv_hpd, trace_re, CMat, CVec, C64};

use super::problem::{Covariances, MacProblem};
use super::rates::is_permutation;

/// Eigenvalues below this fraction of the trace are not streams.
pub const STREAM_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub power: f64,
    /// Unit-norm transmit direction.
    pub direction: CVec,
}

/// Rank factorisation `R = Σ_s p_s f_s f_sᴴ`, strongest stream first.
pub fn stream_factors(r: &CMat) -> Vec<Stream> {
    let tr = trace_re(r);
    if !(tr > 0.0) {
        return Vec::new();
    }
    let (vals, vecs) = eigh(r);
    (0..vals.len())
        .rev()
        .filter(|&i| vals[i] > STREAM_THRESHOLD * tr)
        .map(|i| {
            let f = vecs.column(i).into_owned();
            let norm = f.norm();
            Stream {
                power: vals[i],
                direction: f / C64::new(norm, 0.0),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodingVector {
    /// Unit-norm receive filter.
    pub theta: CVec,
    /// Post-cancellation SINR of the stream.
    pub sinr: f64,
}

/// MMSE-SIC receive filters for every user, tone and stream.
///
/// The user decoded at stage k sees noise plus the users decoded after it.
/// Streams of one user are decoded strongest first, each seeing the same
/// user's remaining streams as interference, so the per-user sum of
/// `log2(1 + SINR)` equals the successive-decoding rate.
pub fn mmse_sic_vectors(
    problem: &MacProblem,
    covs: &Covariances,
    order: &[usize],
) -> Result<Vec<Vec<Vec<DecodingVector>>>> {
    let users = problem.users();
    if !is_permutation(order, users) {
        return Err(TwinError::Config(format!("{order:?} is not a permutation of {users} users")));
    }
    let ly = problem.rx_dim();
    let mut out = vec![vec![Vec::new(); problem.tones()]; users];
    for n in 0..problem.tones() {
        let mut q = CMat::identity(ly, ly) * C64::new(problem.noise_var, 0.0);
        for &u in order.iter().rev() {
            let h = &problem.channels[u][n];
            let streams = stream_factors(&covs[u][n]);
            let cols: Vec<CVec> = streams.iter().map(|s| h * &s.direction).collect();
            // streams decoded in order 0..; stream s sees q plus streams > s
            let mut qs = q.clone();
            for (s, g) in streams.iter().zip(&cols).skip(1) {
                qs += g * g.adjoint() * C64::new(s.power, 0.0);
            }
            let mut vecs = Vec::with_capacity(streams.len());
            for (i, (s, g)) in streams.iter().zip(&cols).enumerate() {
                if i > 0 {
                    qs -= g * g.adjoint() * C64::new(s.power, 0.0);
                }
                let qinv = inv_hpd(&qs)?;
                let theta = &qinv * g;
                let sinr = s.power * (g.adjoint() * &theta)[(0, 0)].re;
                let norm = theta.norm();
                let theta = if norm > 0.0 { theta / C64::new(norm, 0.0) } else { theta };
                vecs.push(DecodingVector { theta, sinr });
            }
            out[u][n] = vecs;
            q += h * &covs[u][n] * h.adjoint();
        }
    }
    Ok(out)
}

/// Per-user `Σ_n Σ_s log2(1 + SINR)`.
pub fn mmse_rates(decoding: &[Vec<Vec<DecodingVector>>]) -> Vec<f64> {
    decoding
        .iter()
        .map(|per_user| {
            per_user
                .iter()
                .flatten()
                .map(|d| (1.0 + d.sinr).log2())
                .sum()
        })
        .collect()
}
