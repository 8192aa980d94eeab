use serde::{Deserialize, Serialize};

use crate::error::{Result, TwinError};
use crate::linalg::{clip_psd, frob_sq, trace_re, CMat, C64};

use super::barrier::{scaled_identity, trace_cost, Barrier, BarrierSettings, Constraint, Layout};
use super::mmse::{mmse_sic_vectors, stream_factors, DecodingVector, Stream};
use super::problem::{Covariances, MacProblem};
use super::rates::{corner_rates, subset_members, subset_of, RateTable, Subset, MAX_CHECK_USERS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Rate and KKT tolerance.
    pub tol: f64,
    /// Stop when the barrier gap bound falls below this fraction of the
    /// objective.
    pub gap_rel: f64,
    pub barrier_growth: f64,
    pub max_newton: usize,
    pub max_outer: usize,
    /// Largest active-user count solved with every subset constraint
    /// enumerated; above it a working set is grown from decoding chains.
    pub full_enumeration_users: usize,
    pub max_working_set_rounds: usize,
    /// Relative floor applied to zero energy weights.
    pub weight_floor: f64,
    /// Relative tolerance for declaring two duals tied.
    pub tie_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            gap_rel: 1e-9,
            barrier_growth: 10.0,
            max_newton: 200,
            max_outer: 60,
            full_enumeration_users: 6,
            max_working_set_rounds: 32,
            weight_floor: 1e-6,
            tie_tol: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.tol) || !pos(self.gap_rel) || !pos(self.weight_floor) || !pos(self.tie_tol) {
            return Err(TwinError::Config("solver tolerances must be positive".into()));
        }
        if !(self.barrier_growth > 1.0) || self.max_newton == 0 || self.max_outer == 0 {
            return Err(TwinError::Config("barrier growth must exceed 1 and iteration caps be positive".into()));
        }
        Ok(())
    }

    fn barrier(&self) -> BarrierSettings {
        BarrierSettings {
            gap_rel: self.gap_rel,
            mu: self.barrier_growth,
            max_newton: self.max_newton,
            max_outer: self.max_outer,
            newton_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// Iteration cap reached; the best iterate is returned.
    MaxIterations,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub status: SolveStatus,
    pub outer_iterations: usize,
    pub newton_steps: usize,
    /// `‖∇φ‖∞ / t` at the final centering (scaled units).
    pub stationarity: f64,
    /// Barrier bound on the primal-dual gap, in watts.
    pub duality_gap: f64,
    pub constraints: usize,
    pub working_set_rounds: usize,
    /// Objective of the convex relaxation, a lower bound for any order.
    pub convex_objective: f64,
    /// The convex optimum was not a corner point and was re-solved on the
    /// recovered decoding order.
    pub polished: bool,
    /// Largest shortfall of the returned rates below the targets.
    pub rate_shortfall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SicOrder {
    /// Decoded first to decoded last.
    pub order: Vec<usize>,
    /// Two or more active users had equal duals; exact theory would need
    /// time-sharing between the tied corners.
    pub tie: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSolution {
    pub covariances: Covariances,
    pub rates: RateTable,
    /// One dual per rate target, in watts per bit/s/Hz.
    pub duals: Vec<f64>,
    pub order: SicOrder,
    /// `streams[u][n]`.
    pub streams: Vec<Vec<Vec<Stream>>>,
    /// `decoding[u][n][s]`.
    pub decoding: Vec<Vec<Vec<DecodingVector>>>,
    /// `Σ_u w_u Σ_n tr R_xx(u,n)`.
    pub objective: f64,
    pub diagnostics: SolverDiagnostics,
}

impl PrecoderSolution {
    pub fn total_power(&self) -> f64 {
        self.covariances.iter().flatten().map(trace_re).sum()
    }
}

/// Sorts users by dual ascending: the smallest dual is decoded first, the
/// largest last. Users with a zero rate target go to the end.
pub fn recover_sic_order(duals: &[f64], b_min: &[f64], tie_tol: f64) -> SicOrder {
    let (mut active, idle): (Vec<usize>, Vec<usize>) = (0..duals.len()).partition(|&u| b_min[u] > 0.0);
    active.sort_by(|&a, &b| duals[a].total_cmp(&duals[b]).then(a.cmp(&b)));
    let scale = active.iter().map(|&u| duals[u].abs()).fold(0.0, f64::max);
    let tie = active
        .windows(2)
        .any(|p| (duals[p[1]] - duals[p[0]]).abs() <= tie_tol * scale.max(f64::MIN_POSITIVE));
    active.extend(idle);
    SicOrder { order: active, tie }
}

struct Scaled {
    active: Vec<bool>,
    weights: Vec<f64>,
    /// Covariance unit: `R = scale · R̃`.
    scale: f64,
    a: Vec<Vec<CMat>>,
    layout: Layout,
}

fn prepare(problem: &MacProblem, cfg: &SolverConfig) -> Result<Scaled> {
    problem.validate()?;
    cfg.validate()?;
    let users = problem.users();
    let active: Vec<bool> = problem.b_min.iter().map(|&b| b > 0.0).collect();
    for u in 0..users {
        if active[u] && problem.channels[u].iter().all(|h| frob_sq(h) == 0.0) {
            return Err(TwinError::Infeasible(format!(
                "user {u} needs {} bits/s/Hz but has a zero channel on every tone",
                problem.b_min[u]
            )));
        }
    }
    let mut gain = 0.0;
    let mut count = 0;
    for u in (0..users).filter(|&u| active[u]) {
        for h in &problem.channels[u] {
            gain += frob_sq(h);
            count += h.len();
        }
    }
    let scale = if count > 0 { problem.noise_var * count as f64 / gain } else { 1.0 };
    let amp = C64::new((scale / problem.noise_var).sqrt(), 0.0);
    let a = problem
        .channels
        .iter()
        .map(|per_user| per_user.iter().map(|h| h * amp).collect())
        .collect();
    let wmax = problem.weights.iter().cloned().fold(0.0, f64::max);
    let weights = problem.weights.iter().map(|&w| w.max(cfg.weight_floor * wmax)).collect();
    let tx_dims: Vec<usize> = (0..users).map(|u| problem.tx_dim(u)).collect();
    let layout = Layout::new(&tx_dims, problem.tones(), &active);
    Ok(Scaled {
        active,
        weights,
        scale,
        a,
        layout,
    })
}

fn active_mask(active: &[bool]) -> Subset {
    subset_of(&(0..active.len()).filter(|&u| active[u]).collect::<Vec<_>>())
}

fn subset_constraint(problem: &MacProblem, t: Subset) -> Constraint {
    Constraint {
        terms: vec![(t, 1.0)],
        rhs: subset_members(t, problem.users()).map(|u| problem.b_min[u]).sum(),
    }
}

/// Suffixes of the active decoding chain: users decoded at stage k or later.
fn chain_suffixes(order: &[usize], active: &[bool]) -> Vec<Subset> {
    let chain: Vec<usize> = order.iter().copied().filter(|&u| active[u]).collect();
    (0..chain.len()).map(|k| subset_of(&chain[k..])).collect()
}

/// Strictly feasible start: a common multiple of the identity.
fn feasible_start(bar: &Barrier, layout: &Layout, users: usize) -> Result<Vec<f64>> {
    let mut c = 1.0;
    for _ in 0..200 {
        let x = scaled_identity(layout, &vec![c; users]);
        if bar.slacks(&x).is_some_and(|s| s.iter().all(|&g| g > 0.0)) {
            return Ok(x);
        }
        c *= 2.0;
    }
    Err(TwinError::Numerical("no strictly feasible starting point found".into()))
}

fn lin(cost: &[f64], x: &[f64]) -> f64 {
    cost.iter().zip(x).map(|(c, v)| c * v).sum()
}

fn covariances_from(problem: &MacProblem, sc: &Scaled, x: &[f64]) -> Covariances {
    let mut covs = problem.zero_covariances();
    for (b, blk) in sc.layout.blocks.iter().enumerate() {
        let r = sc.layout.block_matrix(x, b) * C64::new(sc.scale, 0.0);
        covs[blk.user][blk.tone] = clip_psd(&r).0;
    }
    covs
}

pub fn weighted_energy(problem: &MacProblem, covs: &Covariances) -> f64 {
    covs.iter()
        .zip(&problem.weights)
        .map(|(per_user, w)| w * per_user.iter().map(trace_re).sum::<f64>())
        .sum()
}

/// Minimum weighted energy covariances meeting the rate targets, with
/// the decoding order read off the duals.
pub fn solve_min_energy(problem: &MacProblem, cfg: &SolverConfig) -> Result<PrecoderSolution> {
    let sc = prepare(problem, cfg)?;
    let users = problem.users();
    let n_active = sc.active.iter().filter(|&&a| a).count();
    if n_active == 0 {
        let covs = problem.zero_covariances();
        let order = SicOrder {
            order: (0..users).collect(),
            tie: false,
        };
        return finish(problem, covs, vec![0.0; users], order, cfg, SolverDiagnostics {
            status: SolveStatus::Optimal,
            outer_iterations: 0,
            newton_steps: 0,
            stationarity: 0.0,
            duality_gap: 0.0,
            constraints: 0,
            working_set_rounds: 0,
            convex_objective: 0.0,
            polished: false,
            rate_shortfall: 0.0,
        });
    }
    let mask = active_mask(&sc.active);
    let cost = trace_cost(&sc.layout, &sc.weights);
    let full = n_active <= cfg.full_enumeration_users;

    let mut sets: Vec<Subset> = if full {
        (1..=mask).filter(|t| t & !mask == 0).collect()
    } else {
        // initial chain: cheapest users decoded first
        let mut order: Vec<usize> = (0..users).filter(|&u| sc.active[u]).collect();
        order.sort_by(|&a, &b| sc.weights[a].total_cmp(&sc.weights[b]).then(a.cmp(&b)));
        let mut s = chain_suffixes(&order, &sc.active);
        s.extend((0..users).filter(|&u| sc.active[u]).map(|u| 1 << u));
        s.sort_unstable();
        s.dedup();
        s
    };

    let mut rounds = 0;
    let mut newton_steps = 0;
    let mut outer_total = 0;
    let mut x_prev: Option<Vec<f64>> = None;
    let (outcome, duals) = loop {
        rounds += 1;
        let constraints: Vec<Constraint> = sets.iter().map(|&t| subset_constraint(problem, t)).collect();
        let bar = Barrier::new(&sc.layout, &sc.a, constraints, cost.clone());
        let x0 = match x_prev.take() {
            Some(x) if bar.slacks(&x).is_some_and(|s| s.iter().all(|&g| g > 0.0)) => x,
            _ => feasible_start(&bar, &sc.layout, users)?,
        };
        let t0 = bar.barrier_terms() / lin(&cost, &x0).max(f64::MIN_POSITIVE);
        let out = bar.solve(x0, t0, &cfg.barrier());
        newton_steps += out.newton_steps;
        outer_total += out.outer_iterations;
        let mut duals = vec![0.0; users];
        for (&t, &g) in sets.iter().zip(&out.slacks) {
            let mu = sc.scale / (out.t * g);
            for u in subset_members(t, users) {
                duals[u] += mu;
            }
        }
        if full || rounds >= cfg.max_working_set_rounds {
            break (out, duals);
        }
        let before = sets.len();
        let order = recover_sic_order(&duals, &problem.b_min, cfg.tie_tol);
        sets.extend(chain_suffixes(&order.order, &sc.active));
        if n_active <= MAX_CHECK_USERS {
            let probe = Barrier::new(
                &sc.layout,
                &sc.a,
                (1..=mask)
                    .filter(|t| t & !mask == 0)
                    .map(|t| subset_constraint(problem, t))
                    .collect(),
                cost.clone(),
            );
            if let Some(sl) = probe.slacks(&out.x) {
                let all: Vec<Subset> = (1..=mask).filter(|t| t & !mask == 0).collect();
                sets.extend(all.iter().zip(&sl).filter(|(_, &g)| g < 0.0).map(|(&t, _)| t));
            }
        }
        sets.sort_unstable();
        sets.dedup();
        if sets.len() == before {
            break (out, duals);
        }
        x_prev = Some(out.x);
    };

    let convex_covs = covariances_from(problem, &sc, &outcome.x);
    let convex_objective = weighted_energy(problem, &convex_covs);
    let order = recover_sic_order(&duals, &problem.b_min, cfg.tie_tol);
    let mut diagnostics = SolverDiagnostics {
        status: if outcome.converged {
            SolveStatus::Optimal
        } else {
            SolveStatus::MaxIterations
        },
        outer_iterations: outer_total,
        newton_steps,
        stationarity: outcome.stationarity,
        duality_gap: sc.scale * outcome.barrier_terms / outcome.t,
        constraints: sets.len(),
        working_set_rounds: rounds,
        convex_objective,
        polished: false,
        rate_shortfall: 0.0,
    };

    let corner = corner_rates(problem, &convex_covs, &order.order)?;
    let meets = corner
        .totals
        .iter()
        .zip(&problem.b_min)
        .all(|(r, b)| *r >= b - cfg.tol);
    let mut order = order;
    let covs = if meets {
        convex_covs
    } else {
        // not a corner: re-solve on the recovered order, and on every
        // arrangement of tied users, keeping the cheapest
        let mut best: Option<(Vec<usize>, FixedOrderSolution)> = None;
        for cand in tie_arrangements(&order.order, &duals, &problem.b_min, cfg.tie_tol) {
            let fixed = solve_fixed_order(problem, &cand, cfg)?;
            diagnostics.newton_steps += fixed.newton_steps;
            if best.as_ref().is_none_or(|(_, b)| fixed.objective < b.objective * (1.0 - 1e-9)) {
                best = Some((cand, fixed));
            }
        }
        let (cand, fixed) = best.expect("at least one arrangement");
        diagnostics.polished = true;
        order.order = cand;
        fixed.covariances
    };
    finish(problem, covs, duals, order, cfg, diagnostics)
}

fn finish(
    problem: &MacProblem,
    covs: Covariances,
    duals: Vec<f64>,
    order: SicOrder,
    cfg: &SolverConfig,
    mut diagnostics: SolverDiagnostics,
) -> Result<PrecoderSolution> {
    let rates = corner_rates(problem, &covs, &order.order)?;
    diagnostics.rate_shortfall = rates
        .totals
        .iter()
        .zip(&problem.b_min)
        .map(|(r, b)| (b - r).max(0.0))
        .fold(0.0, f64::max);
    if diagnostics.rate_shortfall > cfg.tol {
        diagnostics.status = SolveStatus::MaxIterations;
    }
    let streams: Vec<Vec<Vec<Stream>>> = covs
        .iter()
        .map(|per_user| per_user.iter().map(stream_factors).collect())
        .collect();
    let decoding = mmse_sic_vectors(problem, &covs, &order.order)?;
    let objective = weighted_energy(problem, &covs);
    Ok(PrecoderSolution {
        covariances: covs,
        rates,
        duals,
        order,
        streams,
        decoding,
        objective,
        diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedOrderSolution {
    pub covariances: Covariances,
    pub rates: RateTable,
    pub objective: f64,
    pub converged: bool,
    pub newton_steps: usize,
}

/// Minimum weighted energy when users must be decoded in `order`.
///
/// Per-user successive-decoding rates are differences of concave
/// functions, so this is a local solve. It starts from a feasible point
/// built from the last-decoded user backwards.
pub fn solve_fixed_order(problem: &MacProblem, order: &[usize], cfg: &SolverConfig) -> Result<FixedOrderSolution> {
    let sc = prepare(problem, cfg)?;
    let users = problem.users();
    if !super::rates::is_permutation(order, users) {
        return Err(TwinError::Config(format!("{order:?} is not a permutation of {users} users")));
    }
    let chain: Vec<usize> = order.iter().copied().filter(|&u| sc.active[u]).collect();
    if chain.is_empty() {
        let covs = problem.zero_covariances();
        return Ok(FixedOrderSolution {
            rates: corner_rates(problem, &covs, order)?,
            covariances: covs,
            objective: 0.0,
            converged: true,
            newton_steps: 0,
        });
    }
    let suffix = chain_suffixes(order, &sc.active);
    let constraints: Vec<Constraint> = chain
        .iter()
        .enumerate()
        .map(|(k, &u)| {
            let mut terms = vec![(suffix[k], 1.0)];
            if k + 1 < chain.len() {
                terms.push((suffix[k + 1], -1.0));
            }
            Constraint {
                terms,
                rhs: problem.b_min[u],
            }
        })
        .collect();
    let cost = trace_cost(&sc.layout, &sc.weights);
    let bar = Barrier::new(&sc.layout, &sc.a, constraints, cost.clone());

    let mut scales = vec![0.0; users];
    for (k, &u) in chain.iter().enumerate().rev() {
        let mut c = 1.0;
        let mut ok = false;
        for _ in 0..200 {
            scales[u] = c;
            let x = scaled_identity(&sc.layout, &scales);
            // zero blocks upstream make the barrier undefined, so test the
            // rate of user `u` directly
            let covs = covariances_from(problem, &sc, &x);
            let rates = corner_rates(problem, &covs, order)?;
            if rates.totals[u] > problem.b_min[u] * (1.0 + 1e-3) + 1e-9 {
                ok = true;
                break;
            }
            c *= 2.0;
        }
        if !ok {
            return Err(TwinError::Numerical(format!("no feasible start for stage {k}")));
        }
    }
    let x0 = scaled_identity(&sc.layout, &scales);
    let t0 = bar.barrier_terms() / lin(&cost, &x0).max(f64::MIN_POSITIVE);
    let out = bar.solve(x0, t0, &cfg.barrier());
    let covs = covariances_from(problem, &sc, &out.x);
    let rates = corner_rates(problem, &covs, order)?;
    Ok(FixedOrderSolution {
        objective: weighted_energy(problem, &covs),
        rates,
        covariances: covs,
        converged: out.converged,
        newton_steps: out.newton_steps,
    })
}

const MAX_ARRANGEMENTS: usize = 120;

/// `order` followed by every reordering of runs of tied duals, the
/// index-ordered arrangement first.
fn tie_arrangements(order: &[usize], duals: &[f64], b_min: &[f64], tie_tol: f64) -> Vec<Vec<usize>> {
    let active: Vec<usize> = order.iter().copied().filter(|&u| b_min[u] > 0.0).collect();
    let scale = active.iter().map(|&u| duals[u].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &u in &active {
        match groups.last_mut() {
            Some(g) if (duals[u] - duals[*g.last().unwrap()]).abs() <= tie_tol * scale => g.push(u),
            _ => groups.push(vec![u]),
        }
    }
    let count: usize = groups.iter().map(|g| (1..=g.len()).product::<usize>()).product();
    if count > MAX_ARRANGEMENTS {
        return vec![order.to_vec()];
    }
    let mut out: Vec<Vec<usize>> = vec![Vec::new()];
    for g in &groups {
        let perms = permutations_of(g);
        out = out
            .iter()
            .flat_map(|prefix| {
                perms.iter().map(move |p| {
                    let mut v = prefix.clone();
                    v.extend(p);
                    v
                })
            })
            .collect();
    }
    let idle: Vec<usize> = order.iter().copied().filter(|&u| b_min[u] <= 0.0).collect();
    for v in &mut out {
        v.extend(&idle);
    }
    out
}

/// Permutations in lexicographic order of positions, identity first.
fn permutations_of(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations_of(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}
