//! C ABI over `ice-core`.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free`. Every fallible call returns an [`IceStatus`]; the text of
//! the last error on the calling thread is available from
//! [`ice_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ice_core::behavior::{empirical, SampleSet};
use ice_core::game::{Game, ModificationSet};
use ice_core::io::load_game;
use ice_core::solver::{fit, FittedModel, SolverParams};
use ice_core::IceError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IceStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Numerical = 4,
    Io = 5,
    Panic = 6,
}

/// Opaque game handle.
pub struct IceGame(Game);

/// Opaque fitted-model handle.
pub struct IceModel(FittedModel);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &IceError) -> IceStatus {
    match err {
        IceError::DimensionMismatch(_) => IceStatus::DimensionMismatch,
        IceError::Numerical(_) => IceStatus::Numerical,
        IceError::Io(_) | IceError::Json(_) | IceError::Csv(_) => IceStatus::Io,
        _ => IceStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (IceStatus, String)>) -> IceStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IceStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside ice-core".into());
            IceStatus::Panic
        }
    }
}

fn lift<T>(r: ice_core::Result<T>) -> Result<T, (IceStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (IceStatus, String) {
    (IceStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], (IceStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn copy_out(src: &[f64], out: *mut f64, out_len: usize) -> Result<(), (IceStatus, String)> {
    if out_len != src.len() {
        return Err((
            IceStatus::DimensionMismatch,
            format!("buffer of length {out_len}, need {}", src.len()),
        ));
    }
    if out.is_null() && !src.is_empty() {
        return Err(null("output buffer"));
    }
    if !src.is_empty() {
        std::ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    }
    Ok(())
}

/// Copy the last error message on this thread into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes). Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ice_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Build a game from an outcome-major feature table of length
/// `num_outcomes * num_players * feature_dim`.
///
/// # Safety
/// `action_counts` must hold `num_players` values, `features` `features_len`
/// values, and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ice_game_new(
    action_counts: *const usize,
    num_players: usize,
    feature_dim: usize,
    features: *const f64,
    features_len: usize,
    out: *mut *mut IceGame,
) -> IceStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let counts = slice(action_counts, num_players, "action_counts")?.to_vec();
        let table = slice(features, features_len, "features")?.to_vec();
        let game = lift(Game::new(counts, feature_dim, vec![], table))?;
        *out = Box::into_raw(Box::new(IceGame(game)));
        Ok(())
    })
}

/// Load a game file written by `ice gen`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ice_game_load(path: *const c_char, out: *mut *mut IceGame) -> IceStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (IceStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let game = lift(load_game(Path::new(p)))?;
        *out = Box::into_raw(Box::new(IceGame(game)));
        Ok(())
    })
}

/// # Safety
/// `game` must be null or a handle from `ice_game_new`/`ice_game_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ice_game_free(game: *mut IceGame) {
    if !game.is_null() {
        drop(Box::from_raw(game));
    }
}

/// Number of joint outcomes, or 0 for a null handle.
///
/// # Safety
/// `game` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ice_game_num_outcomes(game: *const IceGame) -> usize {
    game.as_ref().map_or(0, |g| g.0.num_outcomes())
}

/// Feature dimension, or 0 for a null handle.
///
/// # Safety
/// `game` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ice_game_feature_dim(game: *const IceGame) -> usize {
    game.as_ref().map_or(0, |g| g.0.feature_dim())
}

/// Solver options. A non-positive `c`, `tolerance` or `max_iters` keeps the library default.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct IceFitOptions {
    pub c: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    /// Nonzero selects swap regret instead of internal regret.
    pub swap: i32,
}

/// Default options.
#[no_mangle]
pub extern "C" fn ice_fit_options_default() -> IceFitOptions {
    IceFitOptions {
        c: 0.0,
        max_iters: 0,
        tolerance: 0.0,
        swap: 0,
    }
}

/// Fit MaxEnt ICE to observed outcome indices of `game`. With a non-null
/// `target`, the prediction is made for that game instead.
///
/// # Safety
/// `game` must be live, `target` null or live, `samples` must hold
/// `num_samples` indices and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ice_fit(
    game: *const IceGame,
    samples: *const usize,
    num_samples: usize,
    target: *const IceGame,
    options: IceFitOptions,
    out: *mut *mut IceModel,
) -> IceStatus {
    guard(|| {
        let game = &game.as_ref().ok_or_else(|| null("game"))?.0;
        let target = target.as_ref().map_or(game, |t| &t.0);
        if out.is_null() {
            return Err(null("out"));
        }
        let obs = SampleSet::new(slice(samples, num_samples, "samples")?.to_vec(), 0);
        let tilde = lift(empirical(&obs, game))?;
        let class = |g: &Game| {
            if options.swap != 0 {
                ModificationSet::swap(g)
            } else {
                Ok(ModificationSet::internal(g))
            }
        };
        let (mods_obs, mods_target) = (lift(class(game))?, lift(class(target))?);
        let mut params = SolverParams::default();
        if options.c > 0.0 {
            params = params.with_c(options.c);
        }
        if options.max_iters > 0 {
            params = params.with_max_iters(options.max_iters);
        }
        if options.tolerance > 0.0 {
            params = params.with_tolerance(options.tolerance);
        }
        let model = lift(fit(game, &mods_obs, &tilde, target, &mods_target, &params))?;
        *out = Box::into_raw(Box::new(IceModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from `ice_fit` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ice_model_free(model: *mut IceModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Copy the predicted distribution into `out` (length = target outcomes).
///
/// # Safety
/// `model` must be live and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ice_model_predicted(model: *const IceModel, out: *mut f64, len: usize) -> IceStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        copy_out(m.predicted.probs(), out, len)
    })
}

/// Copy the recovered utility weights into `out` (length = feature dimension).
///
/// # Safety
/// `model` must be live and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ice_model_utility(model: *const IceModel, out: *mut f64, len: usize) -> IceStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        copy_out(m.w_hat().as_slice(), out, len)
    })
}

/// Duality gap at termination, NaN for a null handle.
///
/// # Safety
/// `model` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn ice_model_gap(model: *const IceModel) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.0.dual.gap)
}

/// Certified transfer slack, NaN for a null handle.
///
/// # Safety
/// `model` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn ice_model_slack(model: *const IceModel) -> f64 {
    model.as_ref().map_or(f64::NAN, |m| m.0.nu_certified)
}

/// 1 if the solver met its tolerance, 0 otherwise or for a null handle.
///
/// # Safety
/// `model` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn ice_model_converged(model: *const IceModel) -> i32 {
    model.as_ref().map_or(0, |m| m.0.dual.converged as i32)
}

/// Observation count sufficient for every expected regret to be within
/// `epsilon * Delta` of its mean with probability `1 - delta`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ice_sample_bound(
    epsilon: f64,
    delta: f64,
    mods_size: usize,
    feature_dim: usize,
    out: *mut usize,
) -> IceStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = lift(ice_core::experiments::sample_bound(epsilon, delta, mods_size, feature_dim))?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    fn mg1_handle() -> *mut IceGame {
        let g = ice_core::fixtures::mg1();
        let mut h = ptr::null_mut();
        let st = unsafe {
            ice_game_new(
                g.action_counts().as_ptr(),
                g.num_players(),
                g.feature_dim(),
                g.raw_features().as_ptr(),
                g.raw_features().len(),
                &mut h,
            )
        };
        assert_eq!(st, IceStatus::Ok);
        h
    }

    #[test]
    fn game_round_trip() {
        let h = mg1_handle();
        unsafe {
            assert_eq!(ice_game_num_outcomes(h), 4);
            assert_eq!(ice_game_feature_dim(h), 2);
            ice_game_free(h);
        }
    }

    #[test]
    fn bad_table_reports_error() {
        let counts = [2usize, 2];
        let feats = [0.0f64; 3];
        let mut h = ptr::null_mut();
        let st = unsafe { ice_game_new(counts.as_ptr(), 2, 1, feats.as_ptr(), 3, &mut h) };
        assert_eq!(st, IceStatus::InvalidArgument);
        assert!(h.is_null());
        let mut buf = [0 as c_char; 256];
        let n = unsafe { ice_last_error_message(buf.as_mut_ptr(), buf.len()) };
        assert!(n > 0);
        let msg = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
        assert!(msg.contains("feature table"));
    }

    #[test]
    fn null_out_is_rejected() {
        let st = unsafe { ice_game_load(c"x.json".as_ptr(), ptr::null_mut()) };
        assert_eq!(st, IceStatus::NullPointer);
        let st = unsafe { ice_sample_bound(0.1, 0.05, 12, 4, ptr::null_mut()) };
        assert_eq!(st, IceStatus::NullPointer);
    }

    #[test]
    fn missing_file_is_io() {
        let mut h = ptr::null_mut();
        let st = unsafe { ice_game_load(c"/nonexistent/game.json".as_ptr(), &mut h) };
        assert_eq!(st, IceStatus::Io);
    }

    #[test]
    fn fit_and_read_back() {
        let h = mg1_handle();
        let samples = [0usize, 0, 3, 1];
        let mut m = ptr::null_mut();
        let mut opts = ice_fit_options_default();
        opts.max_iters = 5000;
        let st = unsafe { ice_fit(h, samples.as_ptr(), samples.len(), ptr::null(), opts, &mut m) };
        assert_eq!(st, IceStatus::Ok);
        let mut p = [0.0f64; 4];
        let mut w = [0.0f64; 2];
        unsafe {
            assert_eq!(ice_model_predicted(m, p.as_mut_ptr(), 4), IceStatus::Ok);
            assert_eq!(ice_model_utility(m, w.as_mut_ptr(), 2), IceStatus::Ok);
            assert_eq!(ice_model_predicted(m, p.as_mut_ptr(), 3), IceStatus::DimensionMismatch);
            assert!(ice_model_gap(m).is_finite());
            assert!(ice_model_slack(m) >= 0.0);
            ice_model_free(m);
            ice_game_free(h);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_sample() {
        let h = mg1_handle();
        let samples = [9usize];
        let mut m = ptr::null_mut();
        let st = unsafe { ice_fit(h, samples.as_ptr(), 1, ptr::null(), ice_fit_options_default(), &mut m) };
        assert_eq!(st, IceStatus::InvalidArgument);
        assert!(m.is_null());
        unsafe { ice_game_free(h) };
    }

    #[test]
    fn sample_bound_matches_core() {
        let mut m = 0usize;
        assert_eq!(unsafe { ice_sample_bound(0.1, 0.05, 12, 4, &mut m) }, IceStatus::Ok);
        assert_eq!(m, 1513);
        assert_eq!(unsafe { ice_sample_bound(2.0, 0.05, 12, 4, &mut m) }, IceStatus::InvalidArgument);
    }

    #[test]
    fn null_handles_are_harmless() {
        unsafe {
            ice_game_free(ptr::null_mut());
            ice_model_free(ptr::null_mut());
            assert_eq!(ice_game_num_outcomes(ptr::null()), 0);
            assert!(ice_model_gap(ptr::null()).is_nan());
        }
    }
}
