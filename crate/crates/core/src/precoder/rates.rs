use serde::{Deserialize, Serialize};

use crate::error::{Result, TwinError};
use crate::linalg::{logdet_hpd, min_eigenvalue, trace_re, CMat, C64, LN_2};

use super::problem::{Covariances, MacProblem};

/// Eigenvalue floor accepted as PSD before clipping.
pub const PSD_TOL: f64 = 1e-9;

/// Bitmask over users; bit `u` set means user `u` is in the subset.
pub type Subset = u32;

pub fn subset_members(t: Subset, users: usize) -> impl Iterator<Item = usize> {
    (0..users).filter(move |u| t & (1 << u) != 0)
}

pub fn subset_of(users: &[usize]) -> Subset {
    users.iter().fold(0, |acc, &u| acc | (1 << u))
}

pub(crate) fn check_psd(r: &CMat, what: impl FnOnce() -> String) -> Result<()> {
    if r.nrows() == 0 {
        return Ok(());
    }
    let scale = trace_re(r).abs().max(1.0);
    let m = min_eigenvalue(r);
    if !(m >= -PSD_TOL * scale) {
        return Err(TwinError::Numerical(format!("{} is not PSD (min eigenvalue {m:e})", what())));
    }
    Ok(())
}

/// `I + σ⁻² Σ_{u∈T} H_u R_u H_uᴴ` on tone `n`.
pub(crate) fn whitened(problem: &MacProblem, n: usize, covs: &Covariances, t: Subset) -> CMat {
    let ly = problem.rx_dim();
    let mut m = CMat::identity(ly, ly);
    let s = C64::new(1.0 / problem.noise_var, 0.0);
    for u in subset_members(t, problem.users()) {
        let h = &problem.channels[u][n];
        m += (h * &covs[u][n] * h.adjoint()) * s;
    }
    m
}

fn check_shapes(problem: &MacProblem, covs: &Covariances) -> Result<()> {
    if covs.len() != problem.users() {
        return Err(TwinError::shape(problem.users(), covs.len()));
    }
    for (u, per_user) in covs.iter().enumerate() {
        if per_user.len() != problem.tones() {
            return Err(TwinError::shape(problem.tones(), per_user.len()));
        }
        let lx = problem.tx_dim(u);
        for r in per_user {
            if r.nrows() != lx || r.ncols() != lx {
                return Err(TwinError::shape(format!("{lx}x{lx}"), format!("{}x{}", r.nrows(), r.ncols())));
            }
        }
    }
    Ok(())
}

/// Sum-rate bound of subset `t` on tone `n` in bits/s/Hz.
pub fn subset_rate_bound(problem: &MacProblem, n: usize, covs: &Covariances, t: Subset) -> Result<f64> {
    check_shapes(problem, covs)?;
    if t == 0 || t >> problem.users() != 0 {
        return Err(TwinError::Config(format!("invalid subset mask {t:#b}")));
    }
    for u in subset_members(t, problem.users()) {
        check_psd(&covs[u][n], || format!("covariance of user {u} tone {n}"))?;
    }
    Ok(logdet_hpd(&whitened(problem, n, covs, t))? / LN_2)
}

/// Subset bound summed over tones.
pub fn subset_rate_total(problem: &MacProblem, covs: &Covariances, t: Subset) -> Result<f64> {
    (0..problem.tones()).map(|n| subset_rate_bound(problem, n, covs, t)).sum()
}

pub fn is_permutation(order: &[usize], users: usize) -> bool {
    let mut seen = vec![false; users];
    order.len() == users
        && order.iter().all(|&u| {
            u < users && !std::mem::replace(&mut seen[u], true)
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    /// `per_tone[u][n]`.
    pub per_tone: Vec<Vec<f64>>,
    pub totals: Vec<f64>,
}

/// Successive-decoding rates for `order` (decoded first to decoded last).
pub fn corner_rates(problem: &MacProblem, covs: &Covariances, order: &[usize]) -> Result<RateTable> {
    check_shapes(problem, covs)?;
    let users = problem.users();
    if !is_permutation(order, users) {
        return Err(TwinError::Config(format!("{order:?} is not a permutation of {users} users")));
    }
    for (u, per_user) in covs.iter().enumerate() {
        for (n, r) in per_user.iter().enumerate() {
            check_psd(r, || format!("covariance of user {u} tone {n}"))?;
        }
    }
    let mut per_tone = vec![vec![0.0; problem.tones()]; users];
    for n in 0..problem.tones() {
        // walk from the last-decoded user, which sees no interference
        let mut after: Subset = 0;
        let mut ld_after = 0.0;
        for &u in order.iter().rev() {
            let with = after | (1 << u);
            let ld = logdet_hpd(&whitened(problem, n, covs, with))?;
            per_tone[u][n] = (ld - ld_after) / LN_2;
            after = with;
            ld_after = ld;
        }
    }
    let totals = per_tone.iter().map(|r| r.iter().sum()).collect();
    Ok(RateTable { per_tone, totals })
}

/// Worst violation per constraint family; zero means satisfied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// Single-user rate targets: `max_u (b_min,u − Σ_n f_n({u}))⁺`.
    pub rate_targets: f64,
    /// Multi-user subsets: `max_T (Σ_{u∈T} b_min,u − Σ_n f_n(T))⁺`.
    pub subset_bounds: f64,
    /// `max (−λ_min)⁺` over all covariances.
    pub psd: f64,
    pub subsets_checked: usize,
    pub tol: f64,
}

impl FeasibilityReport {
    pub fn feasible(&self) -> bool {
        self.rate_targets <= self.tol && self.subset_bounds <= self.tol && self.psd <= PSD_TOL.max(self.tol)
    }
}

pub const MAX_CHECK_USERS: usize = 12;

/// Checks whether the rate targets lie in the capacity region spanned by
/// `covs`, subset by subset.
pub fn check_feasible(problem: &MacProblem, covs: &Covariances, tol: f64) -> Result<FeasibilityReport> {
    check_shapes(problem, covs)?;
    let users = problem.users();
    if users > MAX_CHECK_USERS {
        return Err(TwinError::Config(format!(
            "subset enumeration supports at most {MAX_CHECK_USERS} users, got {users}"
        )));
    }
    let mut psd = 0.0f64;
    let mut clipped = covs.clone();
    for per_user in clipped.iter_mut() {
        for r in per_user.iter_mut() {
            if r.nrows() > 0 {
                let (c, m) = crate::linalg::clip_psd(r);
                psd = psd.max(-m);
                *r = c;
            }
        }
    }
    let mut rate_targets = 0.0f64;
    let mut subset_bounds = 0.0f64;
    let full: Subset = (1 << users) - 1;
    for t in 1..=full {
        let bound = subset_rate_total(problem, &clipped, t)?;
        let need: f64 = subset_members(t, users).map(|u| problem.b_min[u]).sum();
        let gap = (need - bound).max(0.0);
        if t.count_ones() == 1 {
            rate_targets = rate_targets.max(gap);
        } else {
            subset_bounds = subset_bounds.max(gap);
        }
    }
    Ok(FeasibilityReport {
        rate_targets,
        subset_bounds,
        psd,
        subsets_checked: full as usize,
        tol,
    })
}
