//! C ABI over the slicing environment, the reward and the training entry.
//!
//! Every function returns a [`PamrlStatus`]. On anything other than
//! `PAMRL_STATUS_OK` a message is stored in a thread-local slot readable with
//! [`pamrl_last_error`]. Panics never cross the boundary; they surface as
//! `PAMRL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pamrl::cli::{self, CliError, RunConfig};
use pamrl::env::{
    compute_reward, project_action, Environment, EnvError, QosVector, RewardConfig, SliceKind,
    SliceTarget,
};
use pamrl::marl::MarlError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PamrlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    InvalidConfig = 4,
    NotReset = 5,
    NonFinite = 6,
    Io = 7,
    Runtime = 8,
    Panic = 9,
}

/// Slice types accepted by [`pamrl_reward`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PamrlSliceKind {
    Embb = 0,
    Mmtc = 1,
    Urllc = 2,
}

/// Scalar outcome of one environment step.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PamrlStepInfo {
    pub reward: f64,
    pub penalty: f64,
    pub utility: f64,
    pub soft_penalty: f64,
}

/// Summary of a finished training run.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PamrlTrainSummary {
    pub iterations_run: usize,
    pub iterations_to_converge: usize,
    pub converged: bool,
    pub final_smoothed_reward: f64,
}

/// Opaque environment handle.
pub struct PamrlEnv {
    inner: Box<dyn Environment>,
    last_qos: Vec<f64>,
}

struct Failure(PamrlStatus, String);

impl Failure {
    fn new(status: PamrlStatus, msg: impl Into<String>) -> Self {
        Self(status, msg.into())
    }
}

impl From<EnvError> for Failure {
    fn from(e: EnvError) -> Self {
        let status = match e {
            EnvError::NotReset => PamrlStatus::NotReset,
            EnvError::NonFinite(_) => PamrlStatus::NonFinite,
            EnvError::DimensionMismatch { .. } => PamrlStatus::InvalidArgument,
            EnvError::EmptySlice | EnvError::InvalidConfig(_) => PamrlStatus::InvalidConfig,
        };
        Failure(status, e.to_string())
    }
}

impl From<MarlError> for Failure {
    fn from(e: MarlError) -> Self {
        match e {
            MarlError::Env(e) => e.into(),
            MarlError::NonFinite { .. } => Failure(PamrlStatus::NonFinite, e.to_string()),
            MarlError::InvalidConfig(_) => Failure(PamrlStatus::InvalidConfig, e.to_string()),
            MarlError::Io(_) | MarlError::Csv(_) => Failure(PamrlStatus::Io, e.to_string()),
            _ => Failure(PamrlStatus::Runtime, e.to_string()),
        }
    }
}

impl From<CliError> for Failure {
    fn from(e: CliError) -> Self {
        match e {
            CliError::Run(e) => e.into(),
            CliError::Config(_) => Failure(PamrlStatus::InvalidConfig, e.to_string()),
            CliError::Io(_) | CliError::Csv(_) => Failure(PamrlStatus::Io, e.to_string()),
            CliError::Export(_) => Failure(PamrlStatus::Runtime, e.to_string()),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> PamrlStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PamrlStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            PamrlStatus::Panic
        }
    }
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(PamrlStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(PamrlStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(PamrlStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::new(PamrlStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn env_mut<'a>(env: *mut PamrlEnv) -> Result<&'a mut PamrlEnv, Failure> {
    env.as_mut()
        .ok_or_else(|| Failure::new(PamrlStatus::NullPointer, "env is null"))
}

unsafe fn write_out<T>(p: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(Failure::new(PamrlStatus::NullPointer, format!("{what} is null")));
    }
    p.write(v);
    Ok(())
}

fn copy_into(dst: &mut [f64], src: &[f64], what: &str) -> Result<(), Failure> {
    if dst.len() < src.len() {
        return Err(Failure::new(
            PamrlStatus::BufferTooSmall,
            format!("{what} needs {} values, got room for {}", src.len(), dst.len()),
        ));
    }
    dst[..src.len()].copy_from_slice(src);
    Ok(())
}

/// Message of the last failed call on this thread, or NULL after a success.
///
/// The pointer stays valid until the next `pamrl_*` call on the same thread.
#[no_mangle]
pub extern "C" fn pamrl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// NUL-terminated crate version; static storage.
#[no_mangle]
pub extern "C" fn pamrl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Build the environment of DU `du` from a run configuration in TOML.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` a writable
/// pointer. On success `*out` owns a handle to release with
/// [`pamrl_env_free`].
#[no_mangle]
pub unsafe extern "C" fn pamrl_env_new(
    config_toml: *const c_char,
    du: usize,
    out: *mut *mut PamrlEnv,
) -> PamrlStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::new(PamrlStatus::NullPointer, "out is null"));
        }
        let text = c_str(config_toml, "config_toml")?;
        let cfg = RunConfig::parse(text)?;
        cfg.validate()?;
        let spec = cfg.env_spec();
        if du >= spec.agents() {
            return Err(Failure::new(
                PamrlStatus::InvalidArgument,
                format!("du {du} out of range for {} agents", spec.agents()),
            ));
        }
        let seed = cfg.seeds.first().copied().unwrap_or(1);
        let inner = spec.build(du, seed)?;
        let handle = Box::new(PamrlEnv {
            last_qos: vec![f64::NAN; inner.num_slices()],
            inner,
        });
        out.write(Box::into_raw(handle));
        Ok(())
    })
}

/// Release a handle from [`pamrl_env_new`]. NULL is ignored.
///
/// # Safety
/// `env` must be NULL or a live handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pamrl_env_free(env: *mut PamrlEnv) {
    if env.is_null() {
        return;
    }
    let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(env))));
}

/// # Safety
/// `env` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pamrl_env_action_dim(env: *const PamrlEnv, out: *mut usize) -> PamrlStatus {
    guard(|| {
        let env = env_mut(env as *mut PamrlEnv)?;
        write_out(out, env.inner.action_dim(), "out")
    })
}

/// # Safety
/// `env` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pamrl_env_feature_dim(env: *const PamrlEnv, out: *mut usize) -> PamrlStatus {
    guard(|| {
        let env = env_mut(env as *mut PamrlEnv)?;
        write_out(out, env.inner.feature_dim(), "out")
    })
}

/// # Safety
/// `env` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pamrl_env_num_slices(env: *const PamrlEnv, out: *mut usize) -> PamrlStatus {
    guard(|| {
        let env = env_mut(env as *mut PamrlEnv)?;
        write_out(out, env.inner.num_slices(), "out")
    })
}

/// Start an episode and write the numeric state features.
///
/// # Safety
/// `env` must be a live handle; `features` must hold `features_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pamrl_env_reset(
    env: *mut PamrlEnv,
    seed: u64,
    features: *mut f64,
    features_len: usize,
) -> PamrlStatus {
    guard(|| {
        let env = env_mut(env)?;
        let dst = slice_out(features, features_len, "features")?;
        if dst.len() < env.inner.feature_dim() {
            return copy_into(dst, &vec![0.0; env.inner.feature_dim()], "features");
        }
        let obs = env.inner.reset(seed);
        env.last_qos = obs.qos.clone();
        copy_into(dst, &obs.features(), "features")
    })
}

/// Apply a raw action in `[-1, 1]^action_dim`.
///
/// `features` receives the next state; `info` may be NULL.
///
/// # Safety
/// `env` must be a live handle; `action` must hold `action_len` doubles and
/// `features` `features_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pamrl_env_step(
    env: *mut PamrlEnv,
    action: *const f64,
    action_len: usize,
    features: *mut f64,
    features_len: usize,
    info: *mut PamrlStepInfo,
) -> PamrlStatus {
    guard(|| {
        let env = env_mut(env)?;
        let raw = slice_in(action, action_len, "action")?;
        let dst = slice_out(features, features_len, "features")?;
        if dst.len() < env.inner.feature_dim() {
            return copy_into(dst, &vec![0.0; env.inner.feature_dim()], "features");
        }
        let s = env.inner.step(raw)?;
        copy_into(dst, &s.observation.features(), "features")?;
        env.last_qos = s.qos.values().to_vec();
        if !info.is_null() {
            info.write(PamrlStepInfo {
                reward: s.reward.total,
                penalty: s.reward.penalty,
                utility: s.reward.utility,
                soft_penalty: s.soft_penalty,
            });
        }
        Ok(())
    })
}

/// Per-slice QoS after the last reset or step.
///
/// # Safety
/// `env` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pamrl_env_qos(env: *const PamrlEnv, out: *mut f64, len: usize) -> PamrlStatus {
    guard(|| {
        let env = env_mut(env as *mut PamrlEnv)?;
        let dst = slice_out(out, len, "out")?;
        copy_into(dst, &env.last_qos, "qos")
    })
}

/// Project a raw action onto a feasible allocation.
///
/// Writes the slice/RB matrix `b` (`num_slices × num_rbs`, row-major) and the
/// UE/RB matrix `e` (`num_ues × num_rbs`) as 0/1 bytes.
///
/// # Safety
/// `raw` must hold `raw_len` doubles, `ue_slices` `num_ues` entries, `b_out`
/// `num_slices * num_rbs` bytes and `e_out` `num_ues * num_rbs` bytes.
#[no_mangle]
pub unsafe extern "C" fn pamrl_project_action(
    raw: *const f64,
    raw_len: usize,
    num_slices: usize,
    num_rbs: usize,
    ue_slices: *const usize,
    num_ues: usize,
    b_out: *mut u8,
    e_out: *mut u8,
) -> PamrlStatus {
    guard(|| {
        let raw = slice_in(raw, raw_len, "raw")?;
        let ues = slice_in(ue_slices, num_ues, "ue_slices")?;
        if let Some(bad) = ues.iter().find(|&&s| s >= num_slices) {
            return Err(Failure::new(
                PamrlStatus::InvalidArgument,
                format!("ue slice {bad} out of range for {num_slices} slices"),
            ));
        }
        let b = slice_out(b_out, num_slices * num_rbs, "b_out")?;
        let e = slice_out(e_out, num_ues * num_rbs, "e_out")?;
        let p = project_action(raw, num_slices, num_rbs, ues, 0.0)?;
        for (d, &v) in b.iter_mut().zip(p.allocation.b_matrix()) {
            *d = v as u8;
        }
        for (d, &v) in e.iter_mut().zip(p.allocation.e_matrix()) {
            *d = v as u8;
        }
        Ok(())
    })
}

/// Reward of one QoS vector: the sum of per-slice sigmoid scores minus the
/// shortfall penalty.
///
/// # Safety
/// `qos`, `thresholds` and `kinds` must each hold `n` entries; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn pamrl_reward(
    qos: *const f64,
    thresholds: *const f64,
    kinds: *const PamrlSliceKind,
    n: usize,
    alpha: f64,
    delta: f64,
    margin: f64,
    out: *mut f64,
) -> PamrlStatus {
    guard(|| {
        let q = slice_in(qos, n, "qos")?;
        let thr = slice_in(thresholds, n, "thresholds")?;
        let k = slice_in(kinds, n, "kinds")?;
        if n == 0 {
            return Err(Failure::new(PamrlStatus::InvalidArgument, "need at least one slice"));
        }
        let cfg = RewardConfig { alpha, delta, margin };
        cfg.validate()?;
        let targets: Vec<SliceTarget> = (0..n)
            .map(|l| SliceTarget {
                kind: match k[l] {
                    PamrlSliceKind::Embb => SliceKind::Embb,
                    PamrlSliceKind::Mmtc => SliceKind::Mmtc,
                    PamrlSliceKind::Urllc => SliceKind::Urllc,
                },
                threshold: thr[l],
                // weights enter only the logged utility, not the reward
                weight: 1.0 / n as f64,
                margin,
            })
            .collect();
        let r = compute_reward(&QosVector(q.to_vec()), &targets, &cfg)?;
        write_out(out, r.total, "out")
    })
}

/// Pretrain and train one seed of the run configuration at `config_path`,
/// writing the run files into `out_dir`. `summary` may be NULL.
///
/// # Safety
/// `config_path` and `out_dir` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn pamrl_train(
    config_path: *const c_char,
    seed: u64,
    out_dir: *const c_char,
    summary: *mut PamrlTrainSummary,
) -> PamrlStatus {
    guard(|| {
        let path = c_str(config_path, "config_path")?;
        let dir = c_str(out_dir, "out_dir")?;
        let cfg = RunConfig::load(Path::new(path))?;
        let report = cli::train_run(&cfg, seed, Path::new(dir))?;
        if !summary.is_null() {
            summary.write(PamrlTrainSummary {
                iterations_run: report.iterations_run,
                iterations_to_converge: report.iterations_to_converge(),
                converged: report.converged_at.is_some(),
                final_smoothed_reward: report.final_smoothed_reward(),
            });
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_become_a_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, PamrlStatus::Panic);
        let msg = unsafe { CStr::from_ptr(pamrl_last_error()) }.to_str().unwrap();
        assert!(msg.contains("boom"));
    }

    #[test]
    fn success_clears_the_last_error() {
        let _ = guard(|| Err(Failure::new(PamrlStatus::Io, "x")));
        assert!(!pamrl_last_error().is_null());
        assert_eq!(guard(|| Ok(())), PamrlStatus::Ok);
        assert!(pamrl_last_error().is_null());
    }

    #[test]
    fn errors_are_thread_local() {
        let _ = guard(|| Err(Failure::new(PamrlStatus::Io, "here")));
        let other = std::thread::spawn(|| pamrl_last_error().is_null()).join().unwrap();
        assert!(other);
        assert!(!pamrl_last_error().is_null());
    }
}
