//! C ABI over the radiotwin library.
//!
//! Objects are opaque handles created by `rt_*_new`/`rt_*_load` and released
//! with the matching `rt_*_free`. Every fallible call returns an [`RtStatus`];
//! the message of the last failure on the calling thread is available from
//! [`rt_last_error`]. Complex arrays are interleaved `re, im` doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use radiotwin::continual::{InsertOutcome, ReplayBuffer, ReplayMode};
use radiotwin::grf::GrfModel;
use radiotwin::linalg::{CMat, C64};
use radiotwin::precoder::{solve_min_energy, MacProblem, PrecoderSolution, SolverConfig};
use radiotwin::TwinError;

/// Result codes. The CLI exit codes are a subset (2, 3, 4).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtStatus {
    Ok = 0,
    NullArgument = 1,
    Config = 2,
    Infeasible = 3,
    Numerical = 4,
    Io = 5,
    Format = 6,
    Shape = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

impl From<&TwinError> for RtStatus {
    fn from(e: &TwinError) -> Self {
        match e {
            TwinError::Infeasible(_) => RtStatus::Infeasible,
            TwinError::Numerical(_) | TwinError::NonFinite(_) => RtStatus::Numerical,
            TwinError::Io(_) => RtStatus::Io,
            TwinError::Format(_) | TwinError::Json(_) | TwinError::Csv(_) => RtStatus::Format,
            TwinError::ShapeMismatch { .. } => RtStatus::Shape,
            _ => RtStatus::Config,
        }
    }
}

/// Min-energy MAC problem.
pub struct RtProblem(MacProblem);
/// Solved precoder.
pub struct RtSolution(PrecoderSolution);
/// Trained radio field.
pub struct RtGrf(GrfModel);
/// Reservoir of 64-bit sample ids.
pub struct RtReplay(ReplayBuffer<u64>);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtReplayMode {
    Uniform = 0,
    Lars = 1,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn guard(f: impl FnOnce() -> Result<(), (RtStatus, String)>) -> RtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RtStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside radiotwin".into());
            RtStatus::Panic
        }
    }
}

fn twin<T>(r: radiotwin::Result<T>) -> Result<T, (RtStatus, String)> {
    r.map_err(|e| (RtStatus::from(&e), e.to_string()))
}

fn null(what: &str) -> (RtStatus, String) {
    (RtStatus::NullArgument, format!("{what} is null"))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (RtStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (RtStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<String, (RtStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| (RtStatus::Config, "path is not UTF-8".into()))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), (RtStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn copy_to(src: &[f64], out: *mut f64, cap: usize, len_out: *mut usize) -> Result<(), (RtStatus, String)> {
    if !len_out.is_null() {
        *len_out = src.len();
    }
    if src.len() > cap {
        return Err((RtStatus::BufferTooSmall, format!("need {} values, got room for {cap}", src.len())));
    }
    if !src.is_empty() {
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    }
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `cap`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must point to `cap` writable bytes or be null.
#[no_mangle]
pub unsafe extern "C" fn rt_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Single-antenna, single-tone problem with channel power gains `gains`.
///
/// # Safety
/// `gains`, `b_min` and `weights` point to `users` doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn rt_problem_new_siso(
    users: usize,
    gains: *const f64,
    b_min: *const f64,
    weights: *const f64,
    noise_var: f64,
    out: *mut *mut RtProblem,
) -> RtStatus {
    guard(|| {
        let g = slice(gains, users, "gains")?;
        let b = slice(b_min, users, "b_min")?.to_vec();
        let w = slice(weights, users, "weights")?.to_vec();
        let p = twin(MacProblem::siso(g, noise_var, b, w))?;
        write_out(out, RtProblem(p))
    })
}

/// General problem. `channels` holds, for each user then each tone, an
/// `rx_dim × tx_dims[u]` row-major complex matrix as interleaved doubles.
///
/// # Safety
/// `tx_dims`, `b_min` and `weights` point to `users` values; `channels`
/// points to `channels_len` doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn rt_problem_new(
    users: usize,
    tones: usize,
    rx_dim: usize,
    tx_dims: *const usize,
    channels: *const f64,
    channels_len: usize,
    noise_var: f64,
    b_min: *const f64,
    weights: *const f64,
    out: *mut *mut RtProblem,
) -> RtStatus {
    guard(|| {
        let dims = slice(tx_dims, users, "tx_dims")?;
        let expected: usize = dims.iter().map(|d| 2 * tones * rx_dim * d).sum();
        if expected != channels_len {
            return Err((RtStatus::Shape, format!("expected {expected} channel doubles, got {channels_len}")));
        }
        let data = slice(channels, channels_len, "channels")?;
        let mut at = 0;
        let mut chans = Vec::with_capacity(users);
        for &d in dims {
            let mut per_tone = Vec::with_capacity(tones);
            for _ in 0..tones {
                let m = CMat::from_fn(rx_dim, d, |i, j| {
                    let k = at + 2 * (i * d + j);
                    C64::new(data[k], data[k + 1])
                });
                at += 2 * rx_dim * d;
                per_tone.push(m);
            }
            chans.push(per_tone);
        }
        let b = slice(b_min, users, "b_min")?.to_vec();
        let w = slice(weights, users, "weights")?.to_vec();
        let p = twin(MacProblem::new(chans, noise_var, b, w))?;
        write_out(out, RtProblem(p))
    })
}

/// Loads a problem file written by the library or the CLI.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn rt_problem_load(path: *const c_char, out: *mut *mut RtProblem) -> RtStatus {
    guard(|| {
        let p = twin(MacProblem::load(path_arg(path)?))?;
        write_out(out, RtProblem(p))
    })
}

/// # Safety
/// `problem` comes from `rt_problem_*` and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rt_problem_free(problem: *mut RtProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Solves with default solver settings.
///
/// # Safety
/// `problem` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn rt_solve(problem: *const RtProblem, out: *mut *mut RtSolution) -> RtStatus {
    guard(|| {
        let p = handle(problem, "problem")?;
        let sol = twin(solve_min_energy(&p.0, &SolverConfig::default()))?;
        write_out(out, RtSolution(sol))
    })
}

/// Weighted transmit energy of the solution; NaN for a null handle.
///
/// # Safety
/// `solution` is a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rt_solution_objective(solution: *const RtSolution) -> f64 {
    solution.as_ref().map_or(f64::NAN, |s| s.0.objective)
}

/// Per-user rates (bits per use, summed over tones). `len_out` receives
/// the user count even when the buffer is too small.
///
/// # Safety
/// `out` points to `cap` doubles; `len_out` is writable or null.
#[no_mangle]
pub unsafe extern "C" fn rt_solution_rates(
    solution: *const RtSolution,
    out: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> RtStatus {
    guard(|| copy_to(&handle(solution, "solution")?.0.rates.totals, out, cap, len_out))
}

/// Recovered decoding order, first decoded first.
///
/// # Safety
/// `out` points to `cap` values; `len_out` is writable or null.
#[no_mangle]
pub unsafe extern "C" fn rt_solution_order(
    solution: *const RtSolution,
    out: *mut usize,
    cap: usize,
    len_out: *mut usize,
) -> RtStatus {
    guard(|| {
        let order = &handle(solution, "solution")?.0.order.order;
        if !len_out.is_null() {
            *len_out = order.len();
        }
        if order.len() > cap {
            return Err((RtStatus::BufferTooSmall, format!("need {} values", order.len())));
        }
        if !order.is_empty() {
            if out.is_null() {
                return Err(null("out"));
            }
            ptr::copy_nonoverlapping(order.as_ptr(), out, order.len());
        }
        Ok(())
    })
}

/// Covariance of one user on one tone, row-major interleaved.
///
/// # Safety
/// `out` points to `cap` doubles; `len_out` is writable or null.
#[no_mangle]
pub unsafe extern "C" fn rt_solution_covariance(
    solution: *const RtSolution,
    user: usize,
    tone: usize,
    out: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> RtStatus {
    guard(|| {
        let s = handle(solution, "solution")?;
        let r = s
            .0
            .covariances
            .get(user)
            .and_then(|u| u.get(tone))
            .ok_or_else(|| (RtStatus::Config, format!("no covariance for user {user}, tone {tone}")))?;
        let mut flat = Vec::with_capacity(2 * r.len());
        for i in 0..r.nrows() {
            for j in 0..r.ncols() {
                flat.extend([r[(i, j)].re, r[(i, j)].im]);
            }
        }
        copy_to(&flat, out, cap, len_out)
    })
}

/// # Safety
/// `solution` comes from `rt_solve` and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rt_solution_free(solution: *mut RtSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Loads a GRF checkpoint.
///
/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn rt_grf_load(path: *const c_char, out: *mut *mut RtGrf) -> RtStatus {
    guard(|| {
        let m = twin(GrfModel::load(path_arg(path)?))?;
        write_out(out, RtGrf(m))
    })
}

/// Antenna counts of the rendered channel.
///
/// # Safety
/// `model` is a live handle; `nt`, `nr` are writable.
#[no_mangle]
pub unsafe extern "C" fn rt_grf_shape(model: *const RtGrf, nt: *mut usize, nr: *mut usize) -> RtStatus {
    guard(|| {
        let (a, b) = handle(model, "model")?.0.shape();
        if nt.is_null() || nr.is_null() {
            return Err(null("shape output"));
        }
        *nt = a;
        *nr = b;
        Ok(())
    })
}

/// Renders the `N_t × N_r` channel between two points, row-major
/// interleaved.
///
/// # Safety
/// `tx` and `rx` point to 3 doubles; `out` to `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn rt_grf_render(
    model: *const RtGrf,
    tx: *const f64,
    rx: *const f64,
    out: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> RtStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let t = slice(tx, 3, "tx")?;
        let r = slice(rx, 3, "rx")?;
        let h = twin(radiotwin::grf::render_channel(&m.0, [t[0], t[1], t[2]], [r[0], r[1], r[2]]))?;
        let mut flat = Vec::with_capacity(2 * h.len());
        for i in 0..h.nrows() {
            for j in 0..h.ncols() {
                flat.extend([h[(i, j)].re, h[(i, j)].im]);
            }
        }
        copy_to(&flat, out, cap, len_out)
    })
}

/// # Safety
/// `model` comes from `rt_grf_load` and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rt_grf_free(model: *mut RtGrf) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn rt_replay_new(
    capacity: usize,
    mode: RtReplayMode,
    epsilon: f64,
    seed: u64,
    out: *mut *mut RtReplay,
) -> RtStatus {
    guard(|| {
        let mode = match mode {
            RtReplayMode::Uniform => ReplayMode::Uniform,
            RtReplayMode::Lars => ReplayMode::Lars,
        };
        let b = twin(ReplayBuffer::new(capacity, mode, epsilon, seed))?;
        write_out(out, RtReplay(b))
    })
}

/// Offers a sample. `victim_out` receives the replaced slot, the new slot
/// index when appended, or -1 when the sample was discarded.
///
/// # Safety
/// `buffer` is a live handle; `victim_out` is writable or null.
#[no_mangle]
pub unsafe extern "C" fn rt_replay_insert(buffer: *mut RtReplay, id: u64, loss: f64, victim_out: *mut i64) -> RtStatus {
    guard(|| {
        let b = buffer.as_mut().ok_or_else(|| null("buffer"))?;
        let slot = match twin(b.0.insert(id, loss))? {
            InsertOutcome::Appended => b.0.len() as i64 - 1,
            InsertOutcome::Replaced { victim } => victim as i64,
            InsertOutcome::Discarded => -1,
        };
        if !victim_out.is_null() {
            *victim_out = slot;
        }
        Ok(())
    })
}

/// Updates the stored loss of slot `index`.
///
/// # Safety
/// `buffer` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn rt_replay_set_loss(buffer: *mut RtReplay, index: usize, loss: f64) -> RtStatus {
    guard(|| {
        let b = buffer.as_mut().ok_or_else(|| null("buffer"))?;
        twin(b.0.set_loss(index, loss))
    })
}

/// Stored sample count; 0 for a null handle.
///
/// # Safety
/// `buffer` is a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rt_replay_len(buffer: *const RtReplay) -> usize {
    buffer.as_ref().map_or(0, |b| b.0.len())
}

/// Samples offered so far; 0 for a null handle.
///
/// # Safety
/// `buffer` is a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rt_replay_seen(buffer: *const RtReplay) -> u64 {
    buffer.as_ref().map_or(0, |b| b.0.seen())
}

/// Stored ids in slot order.
///
/// # Safety
/// `out` points to `cap` values; `len_out` is writable or null.
#[no_mangle]
pub unsafe extern "C" fn rt_replay_ids(buffer: *const RtReplay, out: *mut u64, cap: usize, len_out: *mut usize) -> RtStatus {
    guard(|| {
        let b = handle(buffer, "buffer")?;
        let ids: Vec<u64> = b.0.entries().iter().map(|e| e.item).collect();
        if !len_out.is_null() {
            *len_out = ids.len();
        }
        if ids.len() > cap {
            return Err((RtStatus::BufferTooSmall, format!("need {} values", ids.len())));
        }
        if !ids.is_empty() {
            if out.is_null() {
                return Err(null("out"));
            }
            ptr::copy_nonoverlapping(ids.as_ptr(), out, ids.len());
        }
        Ok(())
    })
}

/// Current eviction probability of every slot.
///
/// # Safety
/// `out` points to `cap` doubles; `len_out` is writable or null.
#[no_mangle]
pub unsafe extern "C" fn rt_replay_victim_probabilities(
    buffer: *const RtReplay,
    out: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> RtStatus {
    guard(|| copy_to(&handle(buffer, "buffer")?.0.victim_probabilities(), out, cap, len_out))
}

/// # Safety
/// `buffer` comes from `rt_replay_new` and is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rt_replay_free(buffer: *mut RtReplay) {
    if !buffer.is_null() {
        drop(Box::from_raw(buffer));
    }
}
