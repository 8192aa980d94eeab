use proptest::prelude::*;
use radiotwin::grf::*;
use radiotwin::linalg::{CMat, C64};
use radiotwin::scene::{generate_scene, ScenarioLabel, SceneConfig};

fn small_config(ng: usize, nt: usize, nr: usize) -> GrfConfig {
    GrfConfig {
        num_primitives: ng,
        encoding_levels: 2,
        latent_dim: 4,
        hidden_width: 6,
        hidden_layers: 2,
        tx_elements: nt,
        rx_elements: nr,
        learning_rate: 1e-3,
        geometry_learning_rate: None,
        output_scale: 1.0,
        init_region: InitRegion::Ball {
            center: [0.0; 3],
            radius: 0.5,
        },
        init_log_scale: Some(-0.5f64),
        seed: 5,
    }
}

fn target(nt: usize, nr: usize) -> CMat {
    CMat::from_fn(nt, nr, |i, j| {
        C64::new(0.3 * i as f64 - 0.2, 0.1 + 0.25 * j as f64 - 0.15 * (i * j) as f64)
    })
}

fn perturbed_model(ng: usize) -> GrfModel {
    let mut m = GrfModel::new(small_config(ng, 2, 2)).unwrap();
    // Move off the symmetric initial state so every gradient term is active.
    for (i, p) in m.primitives.iter_mut().enumerate() {
        let f = i as f64 + 1.0;
        p.rotation = [0.9, 0.2 * f, -0.3, 0.1 * f];
        p.log_scales = [-0.4, -0.7 + 0.1 * f, -0.2];
    }
    for (k, w) in m.networks.attr.params_mut().iter_mut().enumerate() {
        *w += 0.05 * ((k as f64) * 0.7).sin();
    }
    m
}

fn batch_loss(m: &GrfModel, data: &[Observation]) -> f64 {
    data.iter()
        .map(|o| grf_loss(m, o.p_tx, o.p_rx, &o.h).unwrap())
        .sum::<f64>()
        / data.len() as f64
}

fn check_group(name: &str, analytic: &[f64], fd: &[f64]) {
    let diff: f64 = analytic
        .iter()
        .zip(fd)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = fd.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(scale > 0.0, "{name}: zero finite-difference gradient");
    let rel = diff / scale;
    assert!(rel <= 1e-4, "{name}: relative error {rel:e}");
}

#[test]
fn gradient_matches_central_differences() {
    let model = perturbed_model(2);
    let data = vec![
        Observation {
            p_tx: [0.4, -0.3, 0.2],
            p_rx: [0.1, 0.2, -0.1],
            h: target(2, 2),
        },
        Observation {
            p_tx: [0.4, -0.3, 0.2],
            p_rx: [-0.2, 0.05, 0.3],
            h: target(2, 2) * C64::new(0.5, 0.2),
        },
        Observation {
            p_tx: [-0.1, 0.3, 0.0],
            p_rx: [0.25, -0.15, 0.1],
            h: target(2, 2).transpose(),
        },
    ];
    let refs: Vec<&Observation> = data.iter().collect();
    let (loss, grad) = loss_and_grad(&model, &refs).unwrap();
    assert!((loss - batch_loss(&model, &data)).abs() < 1e-12 * (1.0 + loss));

    let h = 1e-5;
    let fd_of = |apply: &dyn Fn(&mut GrfModel, f64)| -> f64 {
        let mut p = model.clone();
        apply(&mut p, h);
        let mut m = model.clone();
        apply(&mut m, -h);
        (batch_loss(&p, &data) - batch_loss(&m, &data)) / (2.0 * h)
    };

    let groups: [(&str, std::ops::Range<usize>); 3] =
        [("center", 0..3), ("rotation", 3..7), ("log_scale", 7..10)];
    for (name, range) in groups {
        let mut a = Vec::new();
        let mut fd = Vec::new();
        for i in 0..model.num_primitives() {
            for k in range.clone() {
                a.push(grad.geometry[10 * i + k]);
                fd.push(fd_of(&|m: &mut GrfModel, d: f64| {
                    let p = &mut m.primitives[i];
                    match k {
                        0..=2 => p.center[k] += d,
                        3..=6 => p.rotation[k - 3] += d,
                        _ => p.log_scales[k - 7] += d,
                    }
                }));
            }
        }
        check_group(name, &a, &fd);
    }

    let n_attr = model.networks.attr.num_params();
    let fd: Vec<f64> = (0..n_attr)
        .map(|k| fd_of(&|m: &mut GrfModel, d: f64| m.networks.attr.params_mut()[k] += d))
        .collect();
    check_group("attribute network", &grad.attr, &fd);

    let n_dec = model.networks.dec.num_params();
    let fd: Vec<f64> = (0..n_dec)
        .map(|k| fd_of(&|m: &mut GrfModel, d: f64| m.networks.dec.params_mut()[k] += d))
        .collect();
    check_group("decoder network", &grad.dec, &fd);
}

#[test]
fn weight_examples() {
    let prim = GaussianPrimitive {
        center: [0.5, -1.0, 2.0],
        rotation: [0.3, 0.1, -0.7, 0.2],
        log_scales: [0.1, -0.3, 0.4],
    };
    assert_eq!(primitive_weight(&prim, 2.5, prim.center).unwrap(), 2.5);

    let iso = GaussianPrimitive {
        center: [0.0; 3],
        rotation: [1.0, 0.0, 0.0, 0.0],
        log_scales: [0.0; 3],
    };
    let w = primitive_weight(&iso, 1.0, [2f64.sqrt(), 0.0, 0.0]).unwrap();
    assert!((w - (-1.0f64).exp()).abs() < 1e-15);

    let wide = GaussianPrimitive {
        log_scales: [30.0; 3],
        ..iso
    };
    assert!((primitive_weight(&wide, 0.7, [5.0, -3.0, 1.0]).unwrap() - 0.7).abs() < 1e-12);
}

#[test]
fn single_primitive_renders_its_contribution() {
    let model = GrfModel::new(small_config(1, 2, 3)).unwrap();
    let p_tx = [0.2, 0.1, -0.3];
    let mu = model.primitives[0].center;
    assert_eq!(model.alphas(p_tx), vec![1.0]);
    let h = render_channel(&model, p_tx, mu).unwrap();
    let c = &model.contributions(p_tx)[0];
    assert!((h - c).norm() < 1e-15);
}

#[test]
fn rendering_is_a_weighted_sum() {
    let model = perturbed_model(5);
    let p_tx = [0.1, 0.0, 0.2];
    let p_rx = [0.05, -0.1, 0.15];
    let snap = model.snapshot(p_tx).unwrap();
    let cs = model.contributions(p_tx);
    let mut expect = CMat::zeros(2, 2);
    for (i, c) in cs.iter().enumerate() {
        expect += c * C64::new(snap.weight(i, p_rx), 0.0);
    }
    let h = snap.render(p_rx);
    assert!((&h - &expect).norm() < 1e-13);

    let a = snap.render_subset(p_rx, &[0, 3]);
    let b = snap.render_subset(p_rx, &[1, 2, 4]);
    assert!((a + b - h).norm() < 1e-13);
}

#[test]
fn loss_examples() {
    let model = perturbed_model(3);
    let (p_tx, p_rx) = ([0.1, 0.2, 0.0], [-0.1, 0.0, 0.2]);
    let h = render_channel(&model, p_tx, p_rx).unwrap();
    assert!(grf_loss(&model, p_tx, p_rx, &h).unwrap() < 1e-28);
    let e = target(2, 2);
    let l = grf_loss(&model, p_tx, p_rx, &(&h + &e)).unwrap();
    assert!((l - e.norm_squared()).abs() < 1e-12);
    assert!(grf_loss(&model, p_tx, p_rx, &CMat::zeros(3, 2)).is_err());
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let mut model = perturbed_model(2);
    let before = model.clone();
    let step = grf_train_step(&mut model, [0.1; 3], [0.0, 0.2, 0.1], &target(2, 2), 0.0).unwrap();
    assert!(step.accepted);
    assert_eq!(model.primitives, before.primitives);
    assert_eq!(model.networks, before.networks);
}

#[test]
fn small_steps_descend() {
    let mut model = perturbed_model(2);
    let (p_tx, p_rx, h) = ([0.1; 3], [0.0, 0.2, 0.1], target(2, 2));
    let mut last = grf_loss(&model, p_tx, p_rx, &h).unwrap();
    for _ in 0..100 {
        grf_train_step(&mut model, p_tx, p_rx, &h, 1e-4).unwrap();
        let l = grf_loss(&model, p_tx, p_rx, &h).unwrap();
        assert!(l <= last + 1e-12, "{l} > {last}");
        last = l;
    }
}

#[test]
fn non_finite_gradient_is_rejected() {
    let mut model = perturbed_model(2);
    let before = model.clone();
    let mut h = target(2, 2);
    h[(0, 0)] = C64::new(1e300, 0.0);
    let obs = Observation {
        p_tx: [0.0; 3],
        p_rx: [0.1, 0.0, 0.0],
        h,
    };
    let step = grf_train_step_batch(&mut model, &[&obs]).unwrap();
    assert!(!step.accepted);
    assert_eq!(model.primitives, before.primitives);
}

fn toy_data() -> Vec<Observation> {
    (0..12)
        .map(|k| {
            let t = k as f64 * 0.3;
            Observation {
                p_tx: [0.2, 0.0, 0.0],
                p_rx: [0.3 * t.cos(), 0.3 * t.sin(), 0.05 * t],
                h: target(2, 2) * C64::from_polar(1.0, t),
            }
        })
        .collect()
}

#[test]
fn fit_edge_cases_and_determinism() {
    let mut model = perturbed_model(4);
    let before = model.clone();
    let cfg = FitConfig {
        epochs: 0,
        ..FitConfig::default()
    };
    let rep = fit_scene(&mut model, &toy_data(), &cfg).unwrap();
    assert!(rep.epoch_loss.is_empty());
    assert_eq!(model, before);
    assert!(fit_scene(&mut model, &[], &FitConfig::default()).is_err());

    let cfg = FitConfig {
        epochs: 5,
        batch_size: 4,
        seed: 9,
        ..FitConfig::default()
    };
    let mut a = before.clone();
    let mut b = before.clone();
    let ra = fit_scene(&mut a, &toy_data(), &cfg).unwrap();
    let rb = fit_scene(&mut b, &toy_data(), &cfg).unwrap();
    assert_eq!(ra.epoch_loss, rb.epoch_loss);
    assert_eq!(a, b);

    // With one full batch per epoch, duplicating every sample leaves the
    // batch-mean objective and therefore the trajectory unchanged.
    let full = FitConfig {
        epochs: 4,
        batch_size: 1000,
        seed: 9,
        ..FitConfig::default()
    };
    let doubled: Vec<Observation> = toy_data().into_iter().flat_map(|o| [o.clone(), o]).collect();
    let mut c = before.clone();
    let mut d = before.clone();
    let rc = fit_scene(&mut c, &toy_data(), &full).unwrap();
    let rd = fit_scene(&mut d, &doubled, &full).unwrap();
    for (x, y) in rc.epoch_loss.iter().zip(&rd.epoch_loss) {
        assert!((x - y).abs() <= 1e-12 * x.abs());
    }
}

#[test]
fn training_reduces_loss() {
    let mut model = perturbed_model(8);
    let cfg = FitConfig {
        epochs: 60,
        batch_size: 4,
        seed: 1,
        ..FitConfig::default()
    };
    let rep = fit_scene(&mut model, &toy_data(), &cfg).unwrap();
    assert!(rep.epoch_loss.last().unwrap() < &(0.5 * rep.epoch_loss[0]));
    assert_eq!(rep.telemetry.len(), 60 * 3);
    assert_eq!(rep.rejected_steps, 0);
}

#[test]
fn checkpoint_round_trip() {
    let mut model = perturbed_model(3);
    let cfg = FitConfig {
        epochs: 2,
        batch_size: 4,
        ..FitConfig::default()
    };
    fit_scene(&mut model, &toy_data(), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("field.grf");
    model.save(&path).unwrap();
    let back = GrfModel::load(&path).unwrap();
    assert_eq!(back, model);

    // Training continues identically after a restore.
    let mut a = model.clone();
    let mut b = back;
    fit_scene(&mut a, &toy_data(), &cfg).unwrap();
    fit_scene(&mut b, &toy_data(), &cfg).unwrap();
    assert_eq!(a, b);

    std::fs::write(&path, b"RGRX0000").unwrap();
    assert!(GrfModel::load(&path).is_err());
}

#[test]
fn telemetry_csv_has_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    write_telemetry(&path, &[]).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "step,loss,grad_norm\n");
    let rows = [TelemetryRow {
        step: 1,
        loss: 0.5,
        grad_norm: 2.0,
    }];
    write_telemetry(&path, &rows).unwrap();
    assert_eq!(
        std::fs::read_to_string(&path).unwrap(),
        "step,loss,grad_norm\n1,0.5,2.0\n"
    );
}

#[test]
fn render_flops_scale_linearly() {
    let scene = generate_scene(&SceneConfig::preset(ScenarioLabel::Indoor, 1)).unwrap();
    let count = |ng: usize, nt: usize, nr: usize| {
        let mut cfg = GrfConfig::for_scene(&scene, ng, 0);
        cfg.tx_elements = nt;
        cfg.rx_elements = nr;
        cfg.encoding_levels = 2;
        let m = GrfModel::new(cfg).unwrap();
        let mut f = FlopCount::default();
        m.snapshot([0.0; 3]).unwrap().render_counted([1.0, 0.0, 0.0], &mut f);
        f
    };
    let base = count(8, 2, 2);
    assert_eq!(count(16, 2, 2).total(), 2 * base.total());
    assert_eq!(count(8, 4, 2).accumulate, 2 * base.accumulate);
    assert_eq!(count(8, 2, 4).accumulate, 2 * base.accumulate);
    assert_eq!(base.accumulate, 4 * 8 * 2 * 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn covariance_stays_positive_definite(
        q in prop::array::uniform4(-2.0f64..2.0),
        s in prop::array::uniform3(-4.0f64..4.0),
    ) {
        prop_assume!(q.iter().map(|x| x * x).sum::<f64>() > 1e-3);
        let prim = GaussianPrimitive { center: [0.0; 3], rotation: q, log_scales: s };
        let c = prim.covariance().unwrap();
        let p = prim.precision().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((c[i][j] - c[j][i]).abs() <= 1e-12 * (1.0 + c[i][j].abs()));
                let prod: f64 = (0..3).map(|k| c[i][k] * p[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                prop_assert!((prod - expect).abs() < 1e-8);
            }
        }
        // Leading principal minors positive.
        prop_assert!(c[0][0] > 0.0);
        prop_assert!(c[0][0] * c[1][1] - c[0][1] * c[1][0] > 0.0);
        prop_assert!(det3(&c) > 0.0);
    }

    #[test]
    fn updates_keep_rotations_normalised(seed in 0u64..20) {
        let mut model = perturbed_model(2);
        let obs = Observation { p_tx: [0.1, 0.0, 0.0], p_rx: [0.0, 0.1 * seed as f64 / 20.0, 0.0], h: target(2, 2) };
        for _ in 0..3 {
            grf_train_step_batch(&mut model, &[&obs]).unwrap();
        }
        for p in &model.primitives {
            let n: f64 = p.rotation.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
