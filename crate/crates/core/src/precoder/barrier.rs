//! Log-barrier path following over Hermitian covariance coordinates.
//!
//! Every constraint has the form `Σ_j c_j F(S_j) − rhs ≥ 0` where
//! `F(S) = Σ_n log2 det(I + Σ_{u∈S} A_{u,n} R_{u,n} A_{u,n}ᴴ)` and `A` are
//! the noise-whitened channels. A single positive term gives the convex
//! polymatroid constraints; a difference of two terms gives the per-user
//! rate of a fixed decoding order.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::linalg::{CMat, HermitianBasis, LN_2};

use super::rates::{subset_members, Subset};

pub(crate) struct Block {
    pub user: usize,
    pub tone: usize,
    pub basis: HermitianBasis,
    pub offset: usize,
}

pub(crate) struct Layout {
    pub blocks: Vec<Block>,
    /// `index[u][n]` is the block of an optimised user, `None` for users
    /// held at zero.
    pub index: Vec<Vec<Option<usize>>>,
    pub dim: usize,
}

impl Layout {
    pub fn new(tx_dims: &[usize], tones: usize, active: &[bool]) -> Self {
        let mut blocks = Vec::new();
        let mut index = vec![vec![None; tones]; tx_dims.len()];
        let mut offset = 0;
        for (u, &lx) in tx_dims.iter().enumerate() {
            if !active[u] {
                continue;
            }
            for (n, slot) in index[u].iter_mut().enumerate() {
                let basis = HermitianBasis::new(lx);
                *slot = Some(blocks.len());
                let d = basis.dim();
                blocks.push(Block {
                    user: u,
                    tone: n,
                    basis,
                    offset,
                });
                offset += d;
            }
        }
        Self {
            blocks,
            index,
            dim: offset,
        }
    }

    pub fn block_matrix(&self, x: &[f64], b: usize) -> CMat {
        let blk = &self.blocks[b];
        blk.basis.matrix(&x[blk.offset..blk.offset + blk.basis.dim()])
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Constraint {
    pub terms: Vec<(Subset, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct BarrierSettings {
    pub gap_rel: f64,
    pub mu: f64,
    pub max_newton: usize,
    pub max_outer: usize,
    pub newton_tol: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct BarrierOutcome {
    pub x: Vec<f64>,
    pub t: f64,
    /// Constraint slacks `g_c(x)`.
    pub slacks: Vec<f64>,
    pub newton_steps: usize,
    pub outer_iterations: usize,
    pub converged: bool,
    /// `‖∇φ‖∞ / t` at the last centering.
    pub stationarity: f64,
    /// Barrier parameter count `m`; `m/t` bounds the gap in the convex case.
    pub barrier_terms: f64,
}

struct ToneK {
    /// Block indices of the subset members on this tone.
    blocks: Vec<usize>,
    /// `k[i][j] = A_iᴴ M⁻¹ A_j` for members i, j.
    k: Vec<Vec<CMat>>,
}

struct SubsetEval {
    value: f64,
    grad: Vec<f64>,
    tones: Vec<ToneK>,
}

pub(crate) struct Barrier<'a> {
    pub layout: &'a Layout,
    /// Whitened channels `[u][n]`.
    pub a: &'a [Vec<CMat>],
    pub constraints: Vec<Constraint>,
    pub cost: Vec<f64>,
    subsets: Vec<Subset>,
    terms: Vec<Vec<(usize, f64)>>,
}

impl<'a> Barrier<'a> {
    pub fn new(layout: &'a Layout, a: &'a [Vec<CMat>], constraints: Vec<Constraint>, cost: Vec<f64>) -> Self {
        let mut subsets = Vec::new();
        let mut pos: HashMap<Subset, usize> = HashMap::new();
        let terms = constraints
            .iter()
            .map(|c| {
                c.terms
                    .iter()
                    .map(|&(s, coef)| {
                        let i = *pos.entry(s).or_insert_with(|| {
                            subsets.push(s);
                            subsets.len() - 1
                        });
                        (i, coef)
                    })
                    .collect()
            })
            .collect();
        Self {
            layout,
            a,
            constraints,
            cost,
            subsets,
            terms,
        }
    }

    fn users(&self) -> usize {
        self.a.len()
    }

    fn tones(&self) -> usize {
        self.a[0].len()
    }

    fn whitened(&self, s: Subset, n: usize, mats: &[CMat]) -> (CMat, Vec<usize>) {
        let ly = self.a[0][0].nrows();
        let mut m = CMat::identity(ly, ly);
        let mut members = Vec::new();
        for u in subset_members(s, self.users()) {
            if let Some(b) = self.layout.index[u][n] {
                let a = &self.a[u][n];
                m += a * &mats[b] * a.adjoint();
                members.push(b);
            }
        }
        (m, members)
    }

    fn block_mats(&self, x: &[f64]) -> Vec<CMat> {
        (0..self.layout.blocks.len()).map(|b| self.layout.block_matrix(x, b)).collect()
    }

    fn subset_value(&self, s: Subset, mats: &[CMat]) -> Option<f64> {
        let mut total = 0.0;
        for n in 0..self.tones() {
            let (m, _) = self.whitened(s, n, mats);
            total += logdet(&m)?;
        }
        Some(total / LN_2)
    }

    fn subset_eval(&self, s: Subset, mats: &[CMat]) -> Option<SubsetEval> {
        let mut value = 0.0;
        let mut grad = vec![0.0; self.layout.dim];
        let mut tones = Vec::with_capacity(self.tones());
        for n in 0..self.tones() {
            let (m, blocks) = self.whitened(s, n, mats);
            let chol = m.cholesky()?;
            let l = chol.l_dirty();
            value += (0..l.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum::<f64>();
            let minv = chol.inverse();
            let av: Vec<&CMat> = blocks
                .iter()
                .map(|&b| &self.a[self.layout.blocks[b].user][n])
                .collect();
            let minv_a: Vec<CMat> = av.iter().map(|a| &minv * *a).collect();
            let k: Vec<Vec<CMat>> = av
                .iter()
                .map(|ai| minv_a.iter().map(|mj| ai.adjoint() * mj).collect())
                .collect();
            for (i, &b) in blocks.iter().enumerate() {
                let blk = &self.layout.blocks[b];
                let d = blk.basis.dim();
                let g = &mut grad[blk.offset..blk.offset + d];
                blk.basis.coords(&k[i][i], g);
                g.iter_mut().for_each(|v| *v /= LN_2);
            }
            tones.push(ToneK { blocks, k });
        }
        Some(SubsetEval {
            value: value / LN_2,
            grad,
            tones,
        })
    }

    /// Barrier value, or `None` outside the domain.
    pub fn phi(&self, x: &[f64], t: f64) -> Option<f64> {
        let mats = self.block_mats(x);
        let mut psd_logdet = 0.0;
        for r in &mats {
            psd_logdet += logdet(r)?;
        }
        let values: Vec<f64> = self
            .subsets
            .iter()
            .map(|&s| self.subset_value(s, &mats))
            .collect::<Option<_>>()?;
        let mut bar = 0.0;
        for (c, terms) in self.constraints.iter().zip(&self.terms) {
            let g = terms.iter().map(|&(i, coef)| coef * values[i]).sum::<f64>() - c.rhs;
            if !(g > 0.0) {
                return None;
            }
            bar -= g.ln();
        }
        let lin: f64 = self.cost.iter().zip(x).map(|(c, v)| c * v).sum();
        Some(t * lin + bar - psd_logdet)
    }

    pub fn slacks(&self, x: &[f64]) -> Option<Vec<f64>> {
        let mats = self.block_mats(x);
        let values: Vec<f64> = self
            .subsets
            .iter()
            .map(|&s| self.subset_value(s, &mats))
            .collect::<Option<_>>()?;
        Some(
            self.constraints
                .iter()
                .zip(&self.terms)
                .map(|(c, terms)| terms.iter().map(|&(i, coef)| coef * values[i]).sum::<f64>() - c.rhs)
                .collect(),
        )
    }

    pub fn barrier_terms(&self) -> f64 {
        self.constraints.len() as f64
            + self.layout.blocks.iter().map(|b| b.basis.size() as f64).sum::<f64>()
    }

    fn derivatives(&self, x: &[f64], t: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let dim = self.layout.dim;
        let mats = self.block_mats(x);
        let mut grad = DVector::from_iterator(dim, self.cost.iter().map(|c| t * c));
        let mut hess = DMatrix::<f64>::zeros(dim, dim);

        for (b, blk) in self.layout.blocks.iter().enumerate() {
            let rinv = mats[b].clone().cholesky()?.inverse();
            let d = blk.basis.dim();
            let mut buf = vec![0.0; d];
            blk.basis.coords(&rinv, &mut buf);
            for (k, v) in buf.iter().enumerate() {
                grad[blk.offset + k] -= v;
            }
            for k in 0..d {
                let p = &rinv * blk.basis.element(k) * &rinv;
                blk.basis.coords(&p, &mut buf);
                for (l, v) in buf.iter().enumerate() {
                    hess[(blk.offset + k, blk.offset + l)] += v;
                }
            }
        }

        let evals: Vec<SubsetEval> = self
            .subsets
            .iter()
            .map(|&s| self.subset_eval(s, &mats))
            .collect::<Option<_>>()?;
        let mut weight = vec![0.0; self.subsets.len()];
        for (c, terms) in self.constraints.iter().zip(&self.terms) {
            let g = terms.iter().map(|&(i, coef)| coef * evals[i].value).sum::<f64>() - c.rhs;
            if !(g > 0.0) {
                return None;
            }
            let mut dg = DVector::<f64>::zeros(dim);
            for &(i, coef) in terms {
                for (k, v) in evals[i].grad.iter().enumerate() {
                    dg[k] += coef * v;
                }
                weight[i] += coef / g;
            }
            grad.axpy(-1.0 / g, &dg, 1.0);
            hess.ger(1.0 / (g * g), &dg, &dg, 1.0);
        }
        // −ω_S ∇²F(S), with ∇²F = −Re tr(K_vu E_k K_uv E_l)/ln2
        for (ev, &w) in evals.iter().zip(&weight) {
            if w == 0.0 {
                continue;
            }
            let scale = w / LN_2;
            for tk in &ev.tones {
                for (i, &bu) in tk.blocks.iter().enumerate() {
                    let bu_blk = &self.layout.blocks[bu];
                    for (j, &bv) in tk.blocks.iter().enumerate() {
                        let bv_blk = &self.layout.blocks[bv];
                        let kvu = &tk.k[j][i];
                        let kuv = &tk.k[i][j];
                        let mut buf = vec![0.0; bv_blk.basis.dim()];
                        for k in 0..bu_blk.basis.dim() {
                            let p = kvu * bu_blk.basis.element(k) * kuv;
                            bv_blk.basis.coords(&p, &mut buf);
                            for (l, v) in buf.iter().enumerate() {
                                hess[(bu_blk.offset + k, bv_blk.offset + l)] += scale * v;
                            }
                        }
                    }
                }
            }
        }
        Some((grad, hess))
    }

    /// Runs the barrier method from a strictly feasible `x0`.
    pub fn solve(&self, x0: Vec<f64>, t0: f64, cfg: &BarrierSettings) -> BarrierOutcome {
        let m = self.barrier_terms();
        let mut x = x0;
        let mut t = t0;
        let mut newton_steps = 0;
        let mut outer = 0;
        let mut converged = false;
        let mut stationarity;
        loop {
            outer += 1;
            let (steps, stat) = self.center(&mut x, t, cfg);
            newton_steps += steps;
            stationarity = stat;
            let lin: f64 = self.cost.iter().zip(&x).map(|(c, v)| c * v).sum();
            if m / t <= cfg.gap_rel * lin.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
            if outer >= cfg.max_outer {
                break;
            }
            t *= cfg.mu;
        }
        let slacks = self.slacks(&x).unwrap_or_default();
        BarrierOutcome {
            x,
            t,
            slacks,
            newton_steps,
            outer_iterations: outer,
            converged,
            stationarity,
            barrier_terms: m,
        }
    }

    /// Damped Newton centering; returns step count and `‖∇φ‖∞ / t`.
    fn center(&self, x: &mut Vec<f64>, t: f64, cfg: &BarrierSettings) -> (usize, f64) {
        let mut steps = 0;
        let mut stat = f64::INFINITY;
        let Some(mut f) = self.phi(x, t) else {
            return (0, stat);
        };
        while steps < cfg.max_newton {
            let Some((grad, hess)) = self.derivatives(x, t) else {
                break;
            };
            stat = grad.amax() / t;
            let Some(dx) = regularized_solve(&hess, &grad) else {
                break;
            };
            let slope = grad.dot(&dx);
            if -slope / 2.0 <= cfg.newton_tol {
                break;
            }
            if slope >= 0.0 {
                break;
            }
            steps += 1;
            let mut s = 1.0;
            let mut accepted = false;
            let mut stalled = false;
            while s > 1e-10 {
                let trial: Vec<f64> = x.iter().zip(dx.iter()).map(|(a, b)| a + s * b).collect();
                if let Some(ft) = self.phi(&trial, t) {
                    if ft <= f + 0.25 * s * slope {
                        *x = trial;
                        stalled = f - ft <= 1e-15 * f.abs();
                        f = ft;
                        accepted = true;
                        break;
                    }
                }
                s *= 0.5;
            }
            if !accepted || stalled {
                break;
            }
        }
        (steps, stat)
    }
}

/// Solves `(H + δI) dx = −g`, raising δ until the matrix is positive
/// definite (needed for the non-convex fixed-order barrier).
fn regularized_solve(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let n = hess.nrows();
    let sym = (hess + hess.transpose()) * 0.5;
    let scale = (0..n).map(|i| sym[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut delta = 0.0;
    for _ in 0..40 {
        let mut h = sym.clone();
        for i in 0..n {
            h[(i, i)] += delta;
        }
        if let Some(ch) = h.cholesky() {
            let dx = ch.solve(&(-grad));
            if dx.iter().all(|v| v.is_finite()) {
                return Some(dx);
            }
        }
        delta = if delta == 0.0 { 1e-12 * scale } else { delta * 10.0 };
    }
    None
}

fn logdet(m: &CMat) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    let l = chol.l_dirty();
    Some((0..m.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum())
}

/// Cost vector `c` with `cᵀx = Σ_b w_{user(b)} tr R_b`.
pub(crate) fn trace_cost(layout: &Layout, weights: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; layout.dim];
    for blk in &layout.blocks {
        for i in 0..blk.basis.size() {
            c[blk.offset + i] = weights[blk.user];
        }
    }
    c
}

pub(crate) fn scaled_identity(layout: &Layout, scale: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; layout.dim];
    for blk in &layout.blocks {
        for i in 0..blk.basis.size() {
            x[blk.offset + i] = scale[blk.user];
        }
    }
    x
}
