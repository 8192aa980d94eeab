use std::ffi::CString;
use std::ptr;

use radiotwin_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 256];
    let n = unsafe { rt_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn siso_solve_round_trip() {
    unsafe {
        let mut p = ptr::null_mut();
        let st = rt_problem_new_siso(1, [1.0].as_ptr(), [2.0].as_ptr(), [1.0].as_ptr(), 1.0, &mut p);
        assert_eq!(st, RtStatus::Ok);
        let mut s = ptr::null_mut();
        assert_eq!(rt_solve(p, &mut s), RtStatus::Ok);
        assert!((rt_solution_objective(s) - 3.0).abs() < 1e-6);

        let mut rates = [0.0; 1];
        let mut len = 0;
        assert_eq!(rt_solution_rates(s, rates.as_mut_ptr(), 1, &mut len), RtStatus::Ok);
        assert_eq!(len, 1);
        assert!(rates[0] >= 2.0 - 1e-6);

        let mut cov = [0.0; 2];
        assert_eq!(rt_solution_covariance(s, 0, 0, cov.as_mut_ptr(), 2, &mut len), RtStatus::Ok);
        assert!((cov[0] - 3.0).abs() < 1e-6 && cov[1].abs() < 1e-12);
        assert_eq!(rt_solution_covariance(s, 1, 0, cov.as_mut_ptr(), 2, &mut len), RtStatus::Config);

        rt_solution_free(s);
        rt_problem_free(p);
    }
}

#[test]
fn two_user_order_and_small_buffers() {
    unsafe {
        let mut p = ptr::null_mut();
        let st = rt_problem_new_siso(
            2,
            [1.0, 0.25].as_ptr(),
            [1.0, 1.0].as_ptr(),
            [1.0, 1.0].as_ptr(),
            1.0,
            &mut p,
        );
        assert_eq!(st, RtStatus::Ok);
        let mut s = ptr::null_mut();
        assert_eq!(rt_solve(p, &mut s), RtStatus::Ok);
        let mut order = [9usize; 2];
        let mut len = 0;
        assert_eq!(rt_solution_order(s, order.as_mut_ptr(), 2, &mut len), RtStatus::Ok);
        let mut sorted = order;
        sorted.sort();
        assert_eq!(sorted, [0, 1]);
        let mut one = [0.0; 1];
        assert_eq!(rt_solution_rates(s, one.as_mut_ptr(), 1, &mut len), RtStatus::BufferTooSmall);
        assert_eq!(len, 2);
        rt_solution_free(s);
        rt_problem_free(p);
    }
}

#[test]
fn general_problem_layout_matches_siso() {
    unsafe {
        // 1x1 channel with |h|^2 = 1 given as h = (0.6, 0.8).
        let mut p = ptr::null_mut();
        let st = rt_problem_new(1, 1, 1, [1usize].as_ptr(), [0.6, 0.8].as_ptr(), 2, 1.0, [2.0].as_ptr(), [1.0].as_ptr(), &mut p);
        assert_eq!(st, RtStatus::Ok);
        let mut s = ptr::null_mut();
        assert_eq!(rt_solve(p, &mut s), RtStatus::Ok);
        assert!((rt_solution_objective(s) - 3.0).abs() < 1e-6);
        rt_solution_free(s);
        rt_problem_free(p);

        let st = rt_problem_new(1, 1, 2, [1usize].as_ptr(), [0.6, 0.8].as_ptr(), 2, 1.0, [2.0].as_ptr(), [1.0].as_ptr(), &mut p);
        assert_eq!(st, RtStatus::Shape);
    }
}

#[test]
fn errors_map_to_codes() {
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(
            rt_problem_new_siso(2, [0.0, 1.0].as_ptr(), [1.0, 1.0].as_ptr(), [1.0, 1.0].as_ptr(), 1.0, &mut p),
            RtStatus::Ok
        );
        let mut s = ptr::null_mut();
        assert_eq!(rt_solve(p, &mut s), RtStatus::Infeasible);
        assert!(s.is_null());
        assert!(!last_error().is_empty());
        rt_problem_free(p);

        assert_eq!(rt_solve(ptr::null(), &mut s), RtStatus::NullArgument);
        assert_eq!(last_error(), "problem is null");
        assert_eq!(
            rt_problem_new_siso(1, ptr::null(), [1.0].as_ptr(), [1.0].as_ptr(), 1.0, &mut p),
            RtStatus::NullArgument
        );
        assert_eq!(
            rt_problem_new_siso(1, [1.0].as_ptr(), [-1.0].as_ptr(), [1.0].as_ptr(), 1.0, &mut p),
            RtStatus::Config
        );
        let missing = CString::new("/nonexistent/problem.json").unwrap();
        assert_eq!(rt_problem_load(missing.as_ptr(), &mut p), RtStatus::Io);
        assert!(rt_solution_objective(ptr::null()).is_nan());
        rt_problem_free(ptr::null_mut());
    }
}

#[test]
fn problem_file_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    radiotwin::precoder::MacProblem::siso(&[1.0], 1.0, vec![2.0], vec![1.0])
        .unwrap()
        .save(&path)
        .unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(rt_problem_load(c.as_ptr(), &mut p), RtStatus::Ok);
        let mut s = ptr::null_mut();
        assert_eq!(rt_solve(p, &mut s), RtStatus::Ok);
        assert!((rt_solution_objective(s) - 3.0).abs() < 1e-6);
        rt_solution_free(s);
        rt_problem_free(p);
    }
}

#[test]
fn replay_buffer_handle() {
    unsafe {
        let mut b = ptr::null_mut();
        assert_eq!(rt_replay_new(4, RtReplayMode::Lars, 1.0, 7, &mut b), RtStatus::Ok);
        let mut slot = 0i64;
        for id in 0..4u64 {
            assert_eq!(rt_replay_insert(b, id, 1.0, &mut slot), RtStatus::Ok);
            assert_eq!(slot, id as i64);
        }
        for id in 4..100u64 {
            assert_eq!(rt_replay_insert(b, id, 0.5, &mut slot), RtStatus::Ok);
            assert!((-1..4).contains(&slot));
        }
        assert_eq!(rt_replay_len(b), 4);
        assert_eq!(rt_replay_seen(b), 100);
        let mut ids = [0u64; 4];
        let mut len = 0;
        assert_eq!(rt_replay_ids(b, ids.as_mut_ptr(), 4, &mut len), RtStatus::Ok);
        assert!(ids.iter().all(|&i| i < 100));

        assert_eq!(rt_replay_set_loss(b, 0, 1.0), RtStatus::Ok);
        assert_eq!(rt_replay_set_loss(b, 1, 3.0), RtStatus::Ok);
        assert_eq!(rt_replay_set_loss(b, 2, 1.0), RtStatus::Ok);
        assert_eq!(rt_replay_set_loss(b, 3, 1.0), RtStatus::Ok);
        let mut probs = [0.0; 4];
        assert_eq!(rt_replay_victim_probabilities(b, probs.as_mut_ptr(), 4, &mut len), RtStatus::Ok);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(probs[1] < probs[0]);
        assert_eq!(rt_replay_insert(b, 1, f64::NAN, &mut slot), RtStatus::Numerical);
        assert_eq!(rt_replay_set_loss(b, 9, 1.0), RtStatus::Config);
        rt_replay_free(b);

        assert_eq!(rt_replay_new(0, RtReplayMode::Uniform, 1.0, 0, &mut b), RtStatus::Config);
        assert_eq!(rt_replay_len(ptr::null()), 0);
    }
}

#[test]
fn grf_checkpoint_renders_like_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grf.ckpt");
    let scene = radiotwin::scene::generate_scene(&radiotwin::scene::SceneConfig::preset(
        radiotwin::scene::ScenarioLabel::Indoor,
        1,
    ))
    .unwrap();
    let model = radiotwin::grf::GrfModel::new(radiotwin::grf::GrfConfig::for_scene(&scene, 8, 3)).unwrap();
    model.save(&path).unwrap();
    let expect = radiotwin::grf::render_channel(&model, [0.0, 0.0, 1.0], [1.0, 0.5, 0.0]).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(rt_grf_load(c.as_ptr(), &mut m), RtStatus::Ok);
        let (mut nt, mut nr) = (0, 0);
        assert_eq!(rt_grf_shape(m, &mut nt, &mut nr), RtStatus::Ok);
        assert_eq!((nt, nr), (expect.nrows(), expect.ncols()));
        let mut out = vec![0.0; 2 * nt * nr];
        let mut len = 0;
        let st = rt_grf_render(m, [0.0, 0.0, 1.0].as_ptr(), [1.0, 0.5, 0.0].as_ptr(), out.as_mut_ptr(), out.len(), &mut len);
        assert_eq!(st, RtStatus::Ok);
        assert_eq!(len, out.len());
        for i in 0..nt {
            for j in 0..nr {
                let k = 2 * (i * nr + j);
                assert_eq!((out[k], out[k + 1]), (expect[(i, j)].re, expect[(i, j)].im));
            }
        }
        rt_grf_free(m);
        let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
        assert_eq!(rt_grf_load(missing.as_ptr(), &mut m), RtStatus::Io);
    }
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/radiotwin.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in ["rt_solve", "rt_problem_new_siso", "rt_grf_render", "rt_replay_insert", "RT_STATUS_INFEASIBLE = 3"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("check.c");
    std::fs::write(
        &src,
        format!("#include \"{header}\"\nint main(void) {{ RtProblem *p = 0; rt_problem_free(p); return RT_STATUS_OK; }}\n"),
    )
    .unwrap();
    match std::process::Command::new("cc").arg("-fsyntax-only").arg("-Wall").arg("-Werror").arg(&src).status() {
        Ok(st) => assert!(st.success(), "header does not compile"),
        Err(_) => eprintln!("no C compiler; skipped syntax check"),
    }
}
