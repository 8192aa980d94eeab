//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use radiotwin::continual::{ContinualMode, ReplayBuffer, ReplayMode};
use radiotwin::grf::{grf_loss, loss_and_grad, GrfConfig, GrfModel, InitRegion, Observation};
use radiotwin::linalg::{CMat, C64};
use radiotwin::metrics::{median, to_db};
use radiotwin::pipeline::{
    bench_complexity, run_continual_modes, run_pipeline, run_reconstruction, BenchConfig, BenchKind,
    ContinualTask, PipelineConfig, ReconstructionConfig,
};
use radiotwin::precoder::{
    corner_rates, mmse_rates, mmse_sic_vectors, scene_mac_problem, solve_fixed_order, solve_min_energy, sweep_snr,
    MacProblem, SceneMacConfig, SolverConfig,
};
use radiotwin::scene::ScenarioLabel;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn cmat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> CMat {
    CMat::from_fn(r, c, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut model = GrfModel::new(GrfConfig {
        num_primitives: 2,
        encoding_levels: 2,
        latent_dim: 4,
        hidden_width: 6,
        hidden_layers: 2,
        tx_elements: 2,
        rx_elements: 2,
        learning_rate: 1e-3,
        geometry_learning_rate: None,
        output_scale: 1.0,
        init_region: InitRegion::Ball {
            center: [0.0; 3],
            radius: 0.5,
        },
        init_log_scale: Some(-0.5),
        seed: 5,
    })
    .unwrap();
    for (i, p) in model.primitives.iter_mut().enumerate() {
        let f = i as f64 + 1.0;
        p.rotation = [0.9, 0.2 * f, -0.3, 0.1 * f];
        p.log_scales = [-0.4, -0.7 + 0.1 * f, -0.2];
    }
    for (k, w) in model.networks.attr.params_mut().iter_mut().enumerate() {
        *w += 0.05 * (k as f64 * 0.7).sin();
    }
    let target = CMat::from_fn(2, 2, |i, j| C64::new(0.3 * i as f64 - 0.2, 0.1 + 0.25 * j as f64));
    let data = vec![
        Observation { p_tx: [0.4, -0.3, 0.2], p_rx: [0.1, 0.2, -0.1], h: target.clone() },
        Observation { p_tx: [0.4, -0.3, 0.2], p_rx: [-0.2, 0.05, 0.3], h: &target * C64::new(0.5, 0.2) },
        Observation { p_tx: [-0.1, 0.3, 0.0], p_rx: [0.25, -0.15, 0.1], h: target.transpose() },
    ];
    let refs: Vec<&Observation> = data.iter().collect();
    let (_, grad) = loss_and_grad(&model, &refs).unwrap();
    let loss = |m: &GrfModel| {
        data.iter().map(|o| grf_loss(m, o.p_tx, o.p_rx, &o.h).unwrap()).sum::<f64>() / data.len() as f64
    };
    let h = 1e-5;
    let fd = |apply: &dyn Fn(&mut GrfModel, f64)| {
        let mut p = model.clone();
        apply(&mut p, h);
        let mut m = model.clone();
        apply(&mut m, -h);
        (loss(&p) - loss(&m)) / (2.0 * h)
    };
    let rel = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        d / b.iter().map(|x| x * x).sum::<f64>().sqrt()
    };
    let mut errors = Vec::new();
    for (name, range) in [("center", 0..3), ("rotation", 3..7), ("log_scale", 7..10)] {
        let (mut a, mut f) = (Vec::new(), Vec::new());
        for i in 0..2 {
            for k in range.clone() {
                a.push(grad.geometry[10 * i + k]);
                f.push(fd(&|m: &mut GrfModel, d: f64| {
                    let p = &mut m.primitives[i];
                    match k {
                        0..=2 => p.center[k] += d,
                        3..=6 => p.rotation[k - 3] += d,
                        _ => p.log_scales[k - 7] += d,
                    }
                }));
            }
        }
        errors.push((name, rel(&a, &f)));
    }
    let f: Vec<f64> = (0..model.networks.attr.num_params())
        .map(|k| fd(&|m: &mut GrfModel, d: f64| m.networks.attr.params_mut()[k] += d))
        .collect();
    errors.push(("attribute", rel(&grad.attr, &f)));
    let f: Vec<f64> = (0..model.networks.dec.num_params())
        .map(|k| fd(&|m: &mut GrfModel, d: f64| m.networks.dec.params_mut()[k] += d))
        .collect();
    errors.push(("decoder", rel(&grad.dec, &f)));
    let secs = start.elapsed().as_secs_f64();
    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let list: Vec<String> = errors.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    outcome(
        worst <= 1e-4 && secs < 10.0,
        format!("worst relative error {worst:.2e} (<= 1e-4) [{}], {secs:.2} s (< 10 s)", list.join(", ")),
    )
}

fn reconstruction() -> Outcome {
    let (_, _, r) = run_reconstruction(&ReconstructionConfig::default()).unwrap();
    let margin = r.held_out_snr_db - r.nearest_neighbor_snr_db;
    outcome(
        r.held_out_snr_db >= 15.0 && margin >= 5.0 && r.seconds <= 60.0,
        format!(
            "held-out SNR {:.2} dB (>= 15), nearest neighbour {:.2} dB, margin {margin:.2} dB (>= 5), training {:.1} s (<= 60 s)",
            r.held_out_snr_db, r.nearest_neighbor_snr_db, r.seconds
        ),
    )
}

fn rendering_complexity() -> Outcome {
    let report = bench_complexity(&BenchConfig::default()).unwrap();
    let render: Vec<_> = report.rows.iter().filter(|r| r.kind == BenchKind::Render).collect();
    let ng: Vec<_> = render.iter().filter(|r| (r.nt, r.nr) == (2, 2)).collect();
    let ng_exact = ng.windows(2).all(|w| w[1].count * w[0].primitives as u64 == w[0].count * w[1].primitives as u64);
    let base = render.iter().find(|r| (r.nt, r.nr) == (2, 2) && r.primitives == 256).unwrap();
    let ant_exact = render
        .iter()
        .filter(|r| r.primitives == 256)
        .all(|r| r.accumulate_flops * 4 == base.accumulate_flops * (r.nt * r.nr) as u64);
    let slope = report.render_time_slope;
    outcome(
        ng_exact && ant_exact && (0.9..=1.1).contains(&slope),
        format!(
            "FLOPs proportional to N_G {ng_exact}, to N_t*N_r {ant_exact}; timed slope vs N_G in 256..4096 = {slope:.3} (in [0.9, 1.1])"
        ),
    )
}

fn inclusion_deviation(trials: u64, seed_base: u64) -> f64 {
    let mut hits = [0u64; 100];
    for trial in 0..trials {
        let mut b = ReplayBuffer::new(10, ReplayMode::Uniform, 1e-3, seed_base + trial).unwrap();
        for i in 0..100usize {
            b.insert(i, 0.0).unwrap();
        }
        for e in b.entries() {
            hits[e.item] += 1;
        }
    }
    hits.iter().map(|&h| (h as f64 / trials as f64 - 0.1).abs()).fold(0.0, f64::max)
}

fn reservoir_statistics() -> Outcome {
    let start = Instant::now();
    // With 10^4 trials the per-index standard error is 0.30 points, so the
    // largest of 100 deviations sits near 0.8 points for a perfect
    // reservoir. The verdict uses 10^5 trials (standard error 0.095 points).
    let small = inclusion_deviation(10_000, 0);
    let large = inclusion_deviation(100_000, 1_000_000);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        large <= 0.005 && secs < 30.0,
        format!(
            "max |inclusion - 10%| = {:.3} points over 10^5 trials (<= 0.5); {:.3} points over 10^4 trials; {secs:.1} s (< 30 s)",
            100.0 * large,
            100.0 * small
        ),
    )
}

fn lars_law() -> Outcome {
    let losses = [0.05, 0.2, 1.0, 3.0, 0.0, 0.5];
    let mut b = ReplayBuffer::new(losses.len(), ReplayMode::Lars, 1e-2, 17).unwrap();
    for (i, l) in losses.iter().enumerate() {
        b.insert(i, *l).unwrap();
    }
    let expect: Vec<f64> = {
        let inv: Vec<f64> = losses.iter().map(|l| 1.0 / (l + 1e-2)).collect();
        let s: f64 = inv.iter().sum();
        inv.iter().map(|v| v / s).collect()
    };
    let draws = 20_000;
    let mut counts = vec![0f64; losses.len()];
    for _ in 0..draws {
        counts[b.choose_victim()] += 1.0;
    }
    let chi2: f64 = counts
        .iter()
        .zip(&expect)
        .map(|(o, q)| (o - q * draws as f64).powi(2) / (q * draws as f64))
        .sum();
    let pval = 1.0 - ChiSquared::new((losses.len() - 1) as f64).unwrap().cdf(chi2);

    let mut pair = ReplayBuffer::new(2, ReplayMode::Lars, 1.0, 3).unwrap();
    pair.insert(0usize, 1.0).unwrap();
    pair.insert(1usize, 3.0).unwrap();
    let mut c = [0f64; 2];
    for _ in 0..draws {
        c[pair.choose_victim()] += 1.0;
    }
    let rates = [c[0] / draws as f64, c[1] / draws as f64];
    let pair_ok = (rates[0] - 2.0 / 3.0).abs() <= 0.02 && (rates[1] - 1.0 / 3.0).abs() <= 0.02;
    outcome(
        pval > 0.01 && pair_ok,
        format!(
            "chi-square {chi2:.2} on {} dof, p = {pval:.3} (> 0.01) over {draws} draws; losses (1,3), eps 1: victim rates ({:.4}, {:.4}) vs (0.6667, 0.3333) +- 0.02",
            losses.len() - 1,
            rates[0],
            rates[1]
        ),
    )
}

fn continual_benefit() -> Outcome {
    let start = Instant::now();
    let task = ContinualTask::default();
    let modes = [ContinualMode::Frozen, ContinualMode::Uniform, ContinualMode::Lars];
    let runs = run_continual_modes(&task, &modes).unwrap();
    let slots = task.default_script.slots_per_segment;
    let last_segment = |k: usize| {
        let v: Vec<f64> = runs[k].rows[2 * slots..].iter().filter_map(|r| r.nmse_db).collect();
        median(&v).unwrap()
    };
    let (frozen, uniform) = (last_segment(0), last_segment(1));
    let rows = &runs[0].rows;
    let mut scored: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].persistence_nmse.is_some()).collect();
    scored.sort_by(|&a, &b| rows[b].persistence_nmse.unwrap().total_cmp(&rows[a].persistence_nmse.unwrap()));
    let hard = &scored[..scored.len() / 10];
    let hard_median = |k: usize| {
        let v: Vec<f64> = hard.iter().filter_map(|&i| runs[k].rows[i].nmse_db).collect();
        median(&v).unwrap()
    };
    let (hu, hl) = (hard_median(1), hard_median(2));
    let secs = start.elapsed().as_secs_f64();
    let persistence: Vec<f64> = hard.iter().map(|&i| to_db(rows[i].persistence_nmse.unwrap())).collect();
    outcome(
        frozen - uniform >= 3.0 && hl < hu && secs < 300.0,
        format!(
            "final segment median NMSE: uniform {uniform:.2} dB vs frozen {frozen:.2} dB (gain {:.2} >= 3); hardest decile ({} slots, persistence median {:.2} dB): LARS {hl:.2} dB vs uniform {hu:.2} dB (strictly lower); {secs:.0} s (< 300 s)",
            frozen - uniform,
            hard.len(),
            median(&persistence).unwrap()
        ),
    )
}

fn analytic_siso() -> Outcome {
    let p = MacProblem::siso(&[1.0], 1.0, vec![2.0], vec![1.0]).unwrap();
    let sol = solve_min_energy(&p, &SolverConfig::default()).unwrap();
    outcome(
        (sol.objective - 3.0).abs() <= 1e-6,
        format!("objective {:.10} (3 +- 1e-6)", sol.objective),
    )
}

/// Exact minimum over a grid of step `h`: for every grid p1 the smallest
/// feasible grid p2.
fn grid_oracle(g: [f64; 2], s2: f64, b: [f64; 2], w: [f64; 2], h: f64) -> f64 {
    let g = [g[0] / s2, g[1] / s2];
    let p1_lo = (2f64.powf(b[0]) - 1.0) / g[0];
    let p1_hi = (2f64.powf(b[0] + b[1]) - 1.0) / g[0];
    let mut best = f64::INFINITY;
    let mut k = (p1_lo / h).floor() as i64;
    loop {
        let p1 = k as f64 * h;
        k += 1;
        if (1.0 + g[0] * p1).log2() < b[0] {
            continue;
        }
        let need = ((2f64.powf(b[1]) - 1.0) / g[1])
            .max((2f64.powf(b[0] + b[1]) - 1.0 - g[0] * p1) / g[1])
            .max(0.0);
        best = best.min(w[0] * p1 + w[1] * (need / h).ceil() * h);
        if p1 > p1_hi + h {
            break;
        }
    }
    best
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = 1e-3;
    let (mut ok, mut rates_ok, mut worst) = (0, 0, f64::NEG_INFINITY);
    for _ in 0..100 {
        let g = [rng.random_range(0.2..3.0), rng.random_range(0.2..3.0)];
        let b = [rng.random_range(0.2..2.0), rng.random_range(0.2..2.0)];
        let w = [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)];
        let s2 = rng.random_range(0.5..2.0);
        let p = MacProblem::siso(&g, s2, b.to_vec(), w.to_vec()).unwrap();
        let sol = solve_min_energy(&p, &SolverConfig::default()).unwrap();
        let grid = grid_oracle(g, s2, b, w, h);
        let resolution = (w[0] + w[1]) * h;
        worst = worst.max(sol.objective - grid);
        if sol.objective <= grid + resolution {
            ok += 1;
        }
        if sol.rates.totals.iter().zip(&b).all(|(r, bm)| *r >= bm - 1e-6) {
            rates_ok += 1;
        }
    }
    outcome(
        ok == 100 && rates_ok == 100,
        format!(
            "{ok}/100 within grid minimum + resolution (largest excess over grid {worst:.2e}), rates >= b_min - 1e-6 in {rates_ok}/100"
        ),
    )
}

fn order_optimality() -> Outcome {
    let cfg = SolverConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = f64::NEG_INFINITY;
    let mut beaten = 0;
    for case in 0..50 {
        let users = 2 + case % 3;
        let tones = 1 + (case / 3) % 2;
        let (ly, lx) = [(1, 1), (2, 1), (2, 2)][case % 3];
        let channels = (0..users).map(|_| (0..tones).map(|_| cmat(&mut rng, ly, lx)).collect()).collect();
        let b = (0..users).map(|_| rng.random_range(0.3..2.0)).collect();
        let w = (0..users).map(|_| rng.random_range(0.5..2.0)).collect();
        let p = MacProblem::new(channels, rng.random_range(0.2..2.0), b, w).unwrap();
        let sol = solve_min_energy(&p, &cfg).unwrap();
        let best = permutations(users)
            .iter()
            .map(|o| solve_fixed_order(&p, o, &cfg).unwrap().objective)
            .fold(f64::INFINITY, f64::min);
        let rel = (sol.objective - best) / best;
        worst = worst.max(rel);
        if rel > 1e-5 {
            beaten += 1;
        }
    }
    outcome(
        beaten == 0,
        format!("50 cases, U in 2..4: worst relative excess over best enumerated order {worst:.2e} (<= 1e-5), beaten {beaten} times"),
    )
}

fn mmse_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut ok, mut worst) = (0, 0.0f64);
    for case in 0..100 {
        let users = 2 + case % 3;
        let tones = 1 + case % 2;
        let ly = 1 + case % 3;
        let channels = (0..users).map(|_| (0..tones).map(|_| cmat(&mut rng, ly, 1)).collect()).collect();
        let p = MacProblem::new(channels, rng.random_range(0.2..2.0), vec![1.0; users], vec![1.0; users]).unwrap();
        let covs: Vec<Vec<CMat>> = (0..users)
            .map(|_| (0..tones).map(|_| CMat::from_element(1, 1, C64::new(rng.random_range(0.1..3.0), 0.0))).collect())
            .collect();
        let mut order: Vec<usize> = (0..users).collect();
        for i in (1..users).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let corner = corner_rates(&p, &covs, &order).unwrap();
        let mmse = mmse_rates(&mmse_sic_vectors(&p, &covs, &order).unwrap());
        let err = corner.totals.iter().zip(&mmse).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
        if err <= 1e-8 {
            ok += 1;
        }
    }
    outcome(ok == 100, format!("{ok}/100 cases with |sum log2(1+SINR) - corner rate| <= 1e-8 (worst {worst:.2e})"))
}

fn monotone_sweep() -> Outcome {
    let grid: Vec<f64> = (0..13).map(|i| -10.0 + 2.5 * i as f64).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for label in ScenarioLabel::ALL {
        let template = scene_mac_problem(&SceneMacConfig { label, ..SceneMacConfig::default() }).unwrap();
        let rows = sweep_snr(&template, &grid, &SolverConfig::default(), 1).unwrap();
        let all_ok = rows.iter().all(|r| r.status == "optimal");
        let power_down = rows.windows(2).all(|w| w[1].total_power_w <= w[0].total_power_w);
        let eff_up = rows.windows(2).all(|w| w[1].energy_eff >= w[0].energy_eff);
        let ratio = rows[0].total_power_w / rows[12].total_power_w;
        pass &= all_ok && power_down && eff_up;
        if label == ScenarioLabel::Indoor {
            pass &= ratio >= 4.0;
        }
        parts.push(format!("{label} monotone {} ratio {ratio:.0}x", all_ok && power_down && eff_up));
    }
    outcome(pass, format!("13 points -10..20 dB: {} (indoor >= 4x)", parts.join(", ")))
}

fn pipeline_determinism() -> Outcome {
    let cfg = PipelineConfig::default();
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let start = Instant::now();
    let run = run_pipeline(&cfg, Some(da.path())).unwrap();
    let secs = start.elapsed().as_secs_f64();
    run_pipeline(&cfg, Some(db.path())).unwrap();
    let a = std::fs::read(da.path().join("metrics.csv")).unwrap();
    let b = std::fs::read(db.path().join("metrics.csv")).unwrap();
    outcome(
        a == b && secs < 600.0,
        format!(
            "{} slots, metric CSVs byte-identical {} ({} bytes), reference run {secs:.1} s (< 600 s)",
            run.records.len(),
            a == b,
            a.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("GRF gradient correctness", gradient_check),
        ("GRF reconstruction", reconstruction),
        ("rendering complexity", rendering_complexity),
        ("reservoir statistics", reservoir_statistics),
        ("LARS eviction law", lars_law),
        ("continual-learning benefit", continual_benefit),
        ("min-energy analytic case", analytic_siso),
        ("min-energy oracle equivalence", oracle_equivalence),
        ("SIC order optimality", order_optimality),
        ("MMSE-SIC rate identity", mmse_identity),
        ("SNR sweep monotonicity", monotone_sweep),
        ("pipeline determinism", pipeline_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || f == &(i + 1).to_string()) {
            continue;
        }
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!("{} {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
