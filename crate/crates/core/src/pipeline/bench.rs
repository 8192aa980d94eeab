use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TwinError};
use crate::grf::{FieldSnapshot, FlopCount, GrfConfig, GrfModel, InitRegion};
use crate::linalg::{CMat, C64};
use crate::precoder::{check_feasible, mmse_sic_vectors, Covariances, MacProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Primitive counts of the render sweep.
    pub primitives: Vec<usize>,
    /// (N_t, N_r) pairs of the antenna sweep, run at the first primitive count.
    pub antennas: Vec<(usize, usize)>,
    /// Renders per timed batch.
    pub render_calls: usize,
    /// Timed batches per point; the fastest is kept.
    pub repeats: usize,
    /// User counts of the subset-check and MMSE-SIC sweeps.
    pub users: Vec<usize>,
    /// Receive dimension L_y of the MMSE-SIC instances.
    pub rx_dim: usize,
    pub mmse_calls: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            primitives: vec![256, 512, 1024, 2048, 4096],
            antennas: vec![(2, 2), (4, 2), (2, 4), (4, 4)],
            render_calls: 2000,
            repeats: 7,
            users: vec![2, 3, 4, 5, 6],
            rx_dim: 4,
            mmse_calls: 50,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() || self.primitives.contains(&0) {
            return Err(TwinError::Config("primitive grid must be non-empty and positive".into()));
        }
        if self.antennas.iter().any(|&(a, b)| a == 0 || b == 0) {
            return Err(TwinError::Config("antenna counts must be positive".into()));
        }
        if self.users.iter().any(|&u| u == 0 || u > 12) {
            return Err(TwinError::Config("user counts must lie in 1..=12".into()));
        }
        if self.render_calls == 0 || self.repeats == 0 || self.mmse_calls == 0 || self.rx_dim == 0 {
            return Err(TwinError::Config("call counts and rx_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchKind {
    Render,
    SubsetCheck,
    MmseSic,
}

impl BenchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchKind::Render => "render",
            BenchKind::SubsetCheck => "subset_check",
            BenchKind::MmseSic => "mmse_sic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub kind: BenchKind,
    pub primitives: usize,
    pub nt: usize,
    pub nr: usize,
    pub users: usize,
    pub rx_dim: usize,
    /// Render: total FLOPs of one call. Subset check: log-det constraints
    /// evaluated. MMSE-SIC: decoding vectors produced.
    pub count: u64,
    /// Render: accumulation FLOPs of one call (the N_t·N_r-dependent part).
    pub accumulate_flops: u64,
    /// Seconds per call.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Log-log slope of render seconds vs N_G.
    pub render_time_slope: f64,
    /// Log-log slope of render FLOPs vs N_G.
    pub render_flop_slope: f64,
    /// Slope of log2(checks + 1) vs U; 1 for 2^U − 1 growth.
    pub subset_growth: f64,
    /// Log-log slope of MMSE-SIC seconds vs U.
    pub mmse_time_slope: f64,
}

/// Least-squares slope of y on x.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return f64::NAN;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for i in 0..n {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    sxy / sxx
}

fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    fit_slope(&lx, &ly)
}

fn snapshot(primitives: usize, nt: usize, nr: usize, seed: u64) -> Result<FieldSnapshot> {
    let model = GrfModel::new(GrfConfig {
        num_primitives: primitives,
        encoding_levels: 2,
        latent_dim: 8,
        hidden_width: 16,
        hidden_layers: 1,
        tx_elements: nt,
        rx_elements: nr,
        learning_rate: 1e-3,
        geometry_learning_rate: None,
        output_scale: 1.0,
        init_region: InitRegion::Ball {
            center: [0.0; 3],
            radius: 5.0,
        },
        init_log_scale: None,
        seed,
    })?;
    model.snapshot([0.0, 0.0, 2.0])
}

fn min_time(repeats: usize, mut f: impl FnMut()) -> f64 {
    (0..repeats)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

fn render_row(cfg: &BenchConfig, primitives: usize, nt: usize, nr: usize) -> Result<BenchRow> {
    let snap = snapshot(primitives, nt, nr, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let points: Vec<[f64; 3]> = (0..cfg.render_calls)
        .map(|_| [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(0.0..3.0)])
        .collect();
    let mut flops = FlopCount::default();
    snap.render_counted(points[0], &mut flops);
    let mut sink = C64::new(0.0, 0.0);
    let secs = min_time(cfg.repeats, || {
        for p in &points {
            sink += snap.render(*p)[(0, 0)];
        }
    });
    std::hint::black_box(sink);
    Ok(BenchRow {
        kind: BenchKind::Render,
        primitives,
        nt,
        nr,
        users: 0,
        rx_dim: 0,
        count: flops.total(),
        accumulate_flops: flops.accumulate,
        seconds: secs / cfg.render_calls as f64,
    })
}

fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn random_instance(rng: &mut ChaCha8Rng, users: usize, ly: usize) -> Result<(MacProblem, Covariances)> {
    let channels = (0..users).map(|_| vec![random_mat(rng, ly, 1)]).collect();
    let problem = MacProblem::new(channels, 1.0, vec![1.0; users], vec![1.0; users])?;
    let covs = (0..users)
        .map(|_| {
            let a = random_mat(rng, 1, 1);
            vec![&a * a.adjoint()]
        })
        .collect();
    Ok((problem, covs))
}

/// Render, subset-check and MMSE-SIC scaling. Points are timed one after
/// another so workers never compete for cores.
pub fn bench_complexity(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let (nt0, nr0) = cfg.antennas.first().copied().unwrap_or((2, 2));
    for &ng in &cfg.primitives {
        rows.push(render_row(cfg, ng, nt0, nr0)?);
    }
    for &(nt, nr) in cfg.antennas.iter().skip(1) {
        rows.push(render_row(cfg, cfg.primitives[0], nt, nr)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    for &u in &cfg.users {
        let (problem, covs) = random_instance(&mut rng, u, cfg.rx_dim)?;
        let mut checked = 0;
        let secs = min_time(cfg.repeats, || {
            checked = check_feasible(&problem, &covs, 1e-9).map(|r| r.subsets_checked).unwrap_or(0);
        });
        rows.push(BenchRow {
            kind: BenchKind::SubsetCheck,
            primitives: 0,
            nt: 1,
            nr: cfg.rx_dim,
            users: u,
            rx_dim: cfg.rx_dim,
            count: checked as u64,
            accumulate_flops: 0,
            seconds: secs,
        });
    }
    for &u in &cfg.users {
        let (problem, covs) = random_instance(&mut rng, u, cfg.rx_dim)?;
        let order: Vec<usize> = (0..u).collect();
        let mut vectors = 0u64;
        let secs = min_time(cfg.repeats, || {
            for _ in 0..cfg.mmse_calls {
                if let Ok(d) = mmse_sic_vectors(&problem, &covs, &order) {
                    vectors = d.iter().flatten().map(|s| s.len() as u64).sum();
                }
            }
        });
        rows.push(BenchRow {
            kind: BenchKind::MmseSic,
            primitives: 0,
            nt: 1,
            nr: cfg.rx_dim,
            users: u,
            rx_dim: cfg.rx_dim,
            count: vectors,
            accumulate_flops: 0,
            seconds: secs / cfg.mmse_calls as f64,
        });
    }

    let ng_rows: Vec<&BenchRow> = rows[..cfg.primitives.len()].iter().collect();
    let ng: Vec<f64> = ng_rows.iter().map(|r| r.primitives as f64).collect();
    let pick = |kind: BenchKind, f: fn(&BenchRow) -> f64| -> Vec<f64> {
        rows.iter().filter(|r| r.kind == kind).map(f).collect()
    };
    let users: Vec<f64> = cfg.users.iter().map(|&u| u as f64).collect();
    let checks: Vec<f64> = pick(BenchKind::SubsetCheck, |r| (r.count as f64 + 1.0).log2());
    Ok(BenchReport {
        render_time_slope: log_log_slope(&ng, &ng_rows.iter().map(|r| r.seconds).collect::<Vec<_>>()),
        render_flop_slope: log_log_slope(&ng, &ng_rows.iter().map(|r| r.count as f64).collect::<Vec<_>>()),
        subset_growth: fit_slope(&users, &checks),
        mmse_time_slope: log_log_slope(&users, &pick(BenchKind::MmseSic, |r| r.seconds)),
        rows,
    })
}

pub fn write_bench_csv(rows: &[BenchRow], w: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["kind", "primitives", "nt", "nr", "users", "rx_dim", "count", "accumulate_flops", "seconds"])?;
    for r in rows {
        w.write_record([
            r.kind.as_str().to_string(),
            r.primitives.to_string(),
            r.nt.to_string(),
            r.nr.to_string(),
            r.users.to_string(),
            r.rx_dim.to_string(),
            r.count.to_string(),
            r.accumulate_flops.to_string(),
            r.seconds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
