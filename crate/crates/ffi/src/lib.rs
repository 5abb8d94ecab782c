//! C ABI over the memtrader library.
//!
//! Objects are opaque handles created by `mt_*_new`/`mt_*_load` functions and
//! released by the matching `mt_*_free`. Every fallible call returns an
//! [`MtStatus`]; on failure [`mt_last_error`] describes what went wrong on the
//! calling thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use memtrader::bench::run_bench;
use memtrader::checks::{run_gradcheck, CheckTarget};
use memtrader::config::RunConfig;
use memtrader::env::{gen_synthetic, oracle_profit, Action, EnvConfig, PriceSeries, TradingEnv};
use memtrader::rl::NoObserver;
use memtrader::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    Parse = 4,
    Io = 5,
    InsufficientData = 6,
    EpisodeDone = 7,
    InvalidAction = 8,
    Runtime = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MtAction {
    Buy = 0,
    Hold = 1,
    Sell = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MtCheckTarget {
    Gmemn2n = 0,
    Memn2n = 1,
    Fcnn = 2,
    Lstm = 3,
    Encoder = 4,
    TdLoss = 5,
}

/// Trading environment settings.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MtEnvParams {
    pub horizon: usize,
    pub window_len: usize,
    pub initial_cash: f64,
    pub transaction_cost: f64,
    pub max_holdings: u32,
}

/// A price series.
pub struct MtSeries(PriceSeries);

/// A running trading episode.
pub struct MtEnv(TradingEnv);

/// A parsed run configuration.
pub struct MtConfig(RunConfig);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> MtStatus {
    match e {
        Error::InvalidConfig(_) => MtStatus::InvalidConfig,
        Error::Parse { .. } | Error::Json(_) | Error::Snapshot(_) => MtStatus::Parse,
        Error::Io { .. } => MtStatus::Io,
        Error::InsufficientData(_) => MtStatus::InsufficientData,
        Error::EpisodeDone => MtStatus::EpisodeDone,
        Error::InvalidAction(_) => MtStatus::InvalidAction,
        _ => MtStatus::Runtime,
    }
}

struct Fail(MtStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MtStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MtStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(MtStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(MtStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn env_config(p: &MtEnvParams) -> EnvConfig {
    EnvConfig {
        horizon: p.horizon,
        window_len: p.window_len,
        initial_cash: p.initial_cash,
        transaction_cost: p.transaction_cost,
        max_holdings: p.max_holdings,
        ..EnvConfig::trading()
    }
}

/// Copy the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len` bytes). Returns the length the full message needs,
/// including the terminator.
#[no_mangle]
pub unsafe extern "C" fn mt_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let bytes = e.borrow();
        let bytes = bytes.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            std::ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Default trading settings.
#[no_mangle]
pub unsafe extern "C" fn mt_env_params_default(out: *mut MtEnvParams) -> MtStatus {
    guard(|| {
        let c = EnvConfig::trading();
        *deref_mut(out, "out")? = MtEnvParams {
            horizon: c.horizon,
            window_len: c.window_len,
            initial_cash: c.initial_cash,
            transaction_cost: c.transaction_cost,
            max_holdings: c.max_holdings,
        };
        Ok(())
    })
}

/// Generate a series whose next move is a parity function of the last
/// `order` moves.
#[no_mangle]
pub unsafe extern "C" fn mt_series_synthetic(order: u32, length: usize, amplitude: f64, seed: u64, out: *mut *mut MtSeries) -> MtStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        if order == 0 || !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Fail(MtStatus::InvalidArgument, "order must be at least 1 and amplitude positive".into()));
        }
        *out = Box::into_raw(Box::new(MtSeries(gen_synthetic(order as usize, length, amplitude, seed))));
        Ok(())
    })
}

/// Read a `date,open` CSV file.
#[no_mangle]
pub unsafe extern "C" fn mt_series_load_csv(path: *const c_char, out: *mut *mut MtSeries) -> MtStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let series = PriceSeries::load_csv(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(MtSeries(series)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mt_series_len(series: *const MtSeries, out: *mut usize) -> MtStatus {
    guard(|| {
        *deref_mut(out, "out")? = deref(series, "series")?.0.len();
        Ok(())
    })
}

/// Copy the prices into `buf`, which must hold at least `mt_series_len` values.
#[no_mangle]
pub unsafe extern "C" fn mt_series_prices(series: *const MtSeries, buf: *mut f64, len: usize) -> MtStatus {
    guard(|| {
        let s = &deref(series, "series")?.0;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < s.len() {
            return Err(Fail(MtStatus::BufferTooSmall, format!("buffer holds {len} values, series has {}", s.len())));
        }
        std::ptr::copy_nonoverlapping(s.opens.as_ptr(), buf, s.len());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mt_series_free(series: *mut MtSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Best achievable terminal reward of an episode starting on day `start`.
#[no_mangle]
pub unsafe extern "C" fn mt_oracle_profit(series: *const MtSeries, start: usize, params: *const MtEnvParams, out: *mut f64) -> MtStatus {
    guard(|| {
        let s = &deref(series, "series")?.0;
        let cfg = env_config(deref(params, "params")?);
        *deref_mut(out, "out")? = oracle_profit(&s.opens, start, &cfg)?.optimum;
        Ok(())
    })
}

/// Start a trading episode whose first decision is on day `start`.
#[no_mangle]
pub unsafe extern "C" fn mt_env_new(series: *const MtSeries, start: usize, params: *const MtEnvParams, out: *mut *mut MtEnv) -> MtStatus {
    guard(|| {
        let s = &deref(series, "series")?.0;
        let cfg = env_config(deref(params, "params")?);
        let out = deref_mut(out, "out")?;
        let (env, _) = TradingEnv::reset(&cfg, &s.opens, start)?;
        *out = Box::into_raw(Box::new(MtEnv(env)));
        Ok(())
    })
}

/// Apply one action. `executed` receives the action actually taken:
/// infeasible orders are turned into Hold.
#[no_mangle]
pub unsafe extern "C" fn mt_env_step(env: *mut MtEnv, action: MtAction, reward: *mut f64, done: *mut bool, executed: *mut MtAction) -> MtStatus {
    guard(|| {
        let env = &mut deref_mut(env, "env")?.0;
        let a = match action {
            MtAction::Buy => Action::Buy,
            MtAction::Hold => Action::Hold,
            MtAction::Sell => Action::Sell,
        };
        let r = env.step(a)?;
        if let Some(p) = reward.as_mut() {
            *p = r.reward;
        }
        if let Some(p) = done.as_mut() {
            *p = r.done;
        }
        if let Some(p) = executed.as_mut() {
            *p = match r.executed {
                Action::Buy => MtAction::Buy,
                Action::Hold => MtAction::Hold,
                Action::Sell => MtAction::Sell,
            };
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mt_env_net_worth(env: *const MtEnv, out: *mut f64) -> MtStatus {
    guard(|| {
        *deref_mut(out, "out")? = deref(env, "env")?.0.net_worth();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mt_env_free(env: *mut MtEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Parse and validate a TOML run configuration. Relative series paths are
/// resolved against the file's directory.
#[no_mangle]
pub unsafe extern "C" fn mt_config_load(path: *const c_char, out: *mut *mut MtConfig) -> MtStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let cfg = RunConfig::load(&path_arg(path)?)?;
        cfg.check()?;
        *out = Box::into_raw(Box::new(MtConfig(cfg)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mt_config_free(cfg: *mut MtConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Run the benchmark described by `cfg` and return its JSON report in
/// `json`, to be released with [`mt_string_free`].
#[no_mangle]
pub unsafe extern "C" fn mt_bench_run(cfg: *const MtConfig, json: *mut *mut c_char) -> MtStatus {
    guard(|| {
        let cfg = &deref(cfg, "cfg")?.0;
        let json = deref_mut(json, "json")?;
        let (report, _) = run_bench(cfg, |_, _| Box::new(NoObserver))?;
        let text = CString::new(report.to_json()?).map_err(|e| Fail(MtStatus::Runtime, e.to_string()))?;
        *json = text.into_raw();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn mt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Finite-difference check of a tiny instance. `max_rel_err` receives the
/// worst relative error over all tensors and `passed` whether it is below 1e-4.
#[no_mangle]
pub unsafe extern "C" fn mt_gradcheck(target: MtCheckTarget, seed: u64, max_rel_err: *mut f64, passed: *mut bool) -> MtStatus {
    guard(|| {
        let target = match target {
            MtCheckTarget::Gmemn2n => CheckTarget::Gmemn2n,
            MtCheckTarget::Memn2n => CheckTarget::Memn2n,
            MtCheckTarget::Fcnn => CheckTarget::Fcnn,
            MtCheckTarget::Lstm => CheckTarget::Lstm,
            MtCheckTarget::Encoder => CheckTarget::Encoder,
            MtCheckTarget::TdLoss => CheckTarget::TdLoss,
        };
        let checks = run_gradcheck(target, seed, None)?;
        let worst = checks.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
        *deref_mut(max_rel_err, "max_rel_err")? = worst;
        *deref_mut(passed, "passed")? = checks.iter().all(|c| c.passed);
        Ok(())
    })
}
