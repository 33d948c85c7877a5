//! C ABI for the pilot-commit simulator.
//!
//! Configs and experiment outcomes are opaque heap handles owned by the
//! caller and released with their `*_free` function. Every fallible call
//! returns a [`PcStatus`]; on failure a message is available from
//! [`pc_last_error_message`] on the same thread until the next failing call.
//! Strings returned by this library must be released with [`pc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use pilot_commit::grpo::{self, GroupError, Reward};
use pilot_commit::runner::{self, MethodChoice, RunError};
use pilot_commit::scheduler::SchedulerConfig;
use pilot_commit::{ExperimentConfig, ExperimentOutcome, Method};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    InvalidConfig = 4,
    InvalidArgument = 5,
    IndexOutOfRange = 6,
    DegenerateGroup = 7,
    RunFailed = 8,
    IoError = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcMethod {
    Grpo = 0,
    Dapo = 1,
    Pc = 2,
    /// All three methods on identical seeds.
    Compare = 3,
}

/// Opaque experiment configuration.
pub struct PcConfig {
    inner: ExperimentConfig,
}

/// Opaque result of a finished experiment.
pub struct PcOutcome {
    inner: ExperimentOutcome,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PcGroupStats {
    pub mean: f64,
    pub std: f64,
    pub group_size: usize,
}

/// Per-run summary. Undefined reals are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PcRunInfo {
    pub method: PcMethod,
    pub seed: u64,
    pub steps_completed: u64,
    pub exhausted: bool,
    pub exhausted_at_step: u64,
    pub sampled_total: u64,
    pub trained_total: u64,
    pub initial_success: f64,
    pub peak_success: f64,
    pub final_success: f64,
    pub evictions: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PcStepMetrics {
    pub step: u64,
    pub mean_success: f64,
    pub mean_reward_std: f64,
    pub sampled_cumulative: u64,
    pub trained_cumulative: u64,
    pub buffer_size: u64,
    pub evictions_cumulative: u64,
    pub extra_rounds: u32,
}

/// Seed-averaged comparison. Undefined values are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PcComparison {
    pub target: f64,
    pub grpo_rollouts_to_target: f64,
    pub dapo_rollouts_to_target: f64,
    pub pc_rollouts_to_target: f64,
    pub grpo_over_pc: f64,
    pub dapo_over_pc: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    let c = CString::new(text).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: PcStatus, message: impl Into<String>) -> PcStatus {
    set_error(message);
    status
}

fn guard(f: impl FnOnce() -> PcStatus) -> PcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(PcStatus::Panic, "internal panic"),
    }
}

fn run_status(e: &RunError) -> PcStatus {
    match e {
        RunError::Parse(_) => PcStatus::ParseError,
        RunError::InvalidConfig { .. } => PcStatus::InvalidConfig,
        RunError::Io { .. } => PcStatus::IoError,
        _ => PcStatus::RunFailed,
    }
}

fn group_status(e: &GroupError) -> PcStatus {
    match e {
        GroupError::Degenerate => PcStatus::DegenerateGroup,
        _ => PcStatus::InvalidArgument,
    }
}

unsafe fn str_arg<'a>(s: *const c_char) -> Result<&'a str, PcStatus> {
    if s.is_null() {
        return Err(fail(PcStatus::NullPointer, "string argument is null"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(PcStatus::InvalidUtf8, "string argument is not valid UTF-8"))
}

unsafe fn rewards_arg<'a>(rewards: *const u8, len: usize) -> Result<&'a [Reward], PcStatus> {
    if rewards.is_null() {
        return Err(fail(PcStatus::NullPointer, "rewards pointer is null"));
    }
    Ok(std::slice::from_raw_parts(rewards, len))
}

fn to_c_string(text: String) -> *mut c_char {
    CString::new(text.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

fn method_to_c(m: Method) -> PcMethod {
    match m {
        Method::Grpo => PcMethod::Grpo,
        Method::Dapo => PcMethod::Dapo,
        Method::Pc => PcMethod::Pc,
    }
}

fn opt(x: Option<f64>) -> f64 {
    x.unwrap_or(f64::NAN)
}

/// Message of the last failing call on this thread, or null if none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn pc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn pc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// A config holding every default value.
#[no_mangle]
pub extern "C" fn pc_config_default() -> *mut PcConfig {
    Box::into_raw(Box::new(PcConfig {
        inner: ExperimentConfig::default(),
    }))
}

/// Parses and validates a TOML config.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pc_config_from_toml(toml: *const c_char, out: *mut *mut PcConfig) -> PcStatus {
    guard(|| {
        if out.is_null() {
            return fail(PcStatus::NullPointer, "out is null");
        }
        let text = match str_arg(toml) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match ExperimentConfig::from_toml(text) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(PcConfig { inner }));
                PcStatus::Ok
            }
            Err(e) => fail(run_status(&e), e.to_string()),
        }
    })
}

/// Serializes the config to TOML. Returns null on failure.
///
/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pc_config_to_toml(config: *const PcConfig) -> *mut c_char {
    let Some(c) = config.as_ref() else {
        set_error("config is null");
        return ptr::null_mut();
    };
    match c.inner.to_toml() {
        Ok(text) => to_c_string(text),
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `config` must be null or a live handle, which is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn pc_config_free(config: *mut PcConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pc_config_set_method(config: *mut PcConfig, method: PcMethod) -> PcStatus {
    let Some(c) = config.as_mut() else {
        return fail(PcStatus::NullPointer, "config is null");
    };
    c.inner.method = match method {
        PcMethod::Grpo => MethodChoice::Grpo,
        PcMethod::Dapo => MethodChoice::Dapo,
        PcMethod::Pc => MethodChoice::Pc,
        PcMethod::Compare => MethodChoice::Compare,
    };
    PcStatus::Ok
}

/// # Safety
/// `config` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pc_config_set_max_steps(config: *mut PcConfig, max_steps: u64) -> PcStatus {
    let Some(c) = config.as_mut() else {
        return fail(PcStatus::NullPointer, "config is null");
    };
    c.inner.max_steps = max_steps;
    PcStatus::Ok
}

/// Replaces the seed list with `len` seeds read from `seeds`.
///
/// # Safety
/// `config` must be a live handle and `seeds` point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn pc_config_set_seeds(config: *mut PcConfig, seeds: *const u64, len: usize) -> PcStatus {
    let Some(c) = config.as_mut() else {
        return fail(PcStatus::NullPointer, "config is null");
    };
    if seeds.is_null() || len == 0 {
        return fail(PcStatus::InvalidArgument, "at least one seed is required");
    }
    c.inner.seeds = std::slice::from_raw_parts(seeds, len).to_vec();
    PcStatus::Ok
}

/// # Safety
/// `config` must be a live handle and `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn pc_config_set_output_dir(config: *mut PcConfig, dir: *const c_char) -> PcStatus {
    let Some(c) = config.as_mut() else {
        return fail(PcStatus::NullPointer, "config is null");
    };
    match str_arg(dir) {
        Ok(d) => {
            c.inner.output_dir = PathBuf::from(d);
            PcStatus::Ok
        }
        Err(s) => s,
    }
}

/// Runs the experiment in memory. With `write_files` set, metrics files
/// and the summary are also written to the config's output directory.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pc_run(config: *const PcConfig, write_files: bool, out: *mut *mut PcOutcome) -> PcStatus {
    guard(|| {
        let Some(c) = config.as_ref() else {
            return fail(PcStatus::NullPointer, "config is null");
        };
        if out.is_null() {
            return fail(PcStatus::NullPointer, "out is null");
        }
        let result = if write_files {
            runner::run_experiment(&c.inner)
        } else {
            runner::execute(&c.inner)
        };
        match result {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(PcOutcome { inner }));
                PcStatus::Ok
            }
            Err(e) => fail(run_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `outcome` must be null or a live handle, which is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn pc_outcome_free(outcome: *mut PcOutcome) {
    if !outcome.is_null() {
        drop(Box::from_raw(outcome));
    }
}

/// Number of (method, seed) runs in the outcome; 0 for null.
///
/// # Safety
/// `outcome` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pc_outcome_run_count(outcome: *const PcOutcome) -> usize {
    outcome.as_ref().map_or(0, |o| o.inner.runs.len())
}

/// # Safety
/// `outcome` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pc_outcome_run_info(outcome: *const PcOutcome, index: usize, out: *mut PcRunInfo) -> PcStatus {
    let (Some(o), false) = (outcome.as_ref(), out.is_null()) else {
        return fail(PcStatus::NullPointer, "outcome or out is null");
    };
    let Some(run) = o.inner.runs.get(index) else {
        return fail(PcStatus::IndexOutOfRange, format!("run index {index} out of range"));
    };
    *out = PcRunInfo {
        method: method_to_c(run.method),
        seed: run.seed,
        steps_completed: run.series.len() as u64,
        exhausted: run.exhausted_at.is_some(),
        exhausted_at_step: run.exhausted_at.unwrap_or(0),
        sampled_total: run.ledger.sampled_total,
        trained_total: run.ledger.trained_total,
        initial_success: run.initial_success,
        peak_success: opt(run.peak_success()),
        final_success: opt(run.final_success()),
        evictions: run.series.last().map_or(0, |m| m.evictions_cumulative as u64),
    };
    PcStatus::Ok
}

/// Metrics recorded after step `step_index` of run `run_index`.
///
/// # Safety
/// `outcome` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pc_outcome_step_metrics(
    outcome: *const PcOutcome,
    run_index: usize,
    step_index: usize,
    out: *mut PcStepMetrics,
) -> PcStatus {
    let (Some(o), false) = (outcome.as_ref(), out.is_null()) else {
        return fail(PcStatus::NullPointer, "outcome or out is null");
    };
    let Some(m) = o.inner.runs.get(run_index).and_then(|r| r.series.get(step_index)) else {
        return fail(
            PcStatus::IndexOutOfRange,
            format!("run {run_index} step {step_index} out of range"),
        );
    };
    *out = PcStepMetrics {
        step: m.step,
        mean_success: m.mean_success,
        mean_reward_std: m.mean_reward_std,
        sampled_cumulative: m.sampled_cumulative,
        trained_cumulative: m.trained_cumulative,
        buffer_size: m.buffer_size as u64,
        evictions_cumulative: m.evictions_cumulative as u64,
        extra_rounds: m.extra_rounds,
    };
    PcStatus::Ok
}

/// Comparison of a `Compare` run. Fails with `InvalidArgument` for
/// single-method outcomes.
///
/// # Safety
/// `outcome` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pc_outcome_comparison(outcome: *const PcOutcome, out: *mut PcComparison) -> PcStatus {
    let (Some(o), false) = (outcome.as_ref(), out.is_null()) else {
        return fail(PcStatus::NullPointer, "outcome or out is null");
    };
    let Some(c) = &o.inner.report.comparison else {
        return fail(PcStatus::InvalidArgument, "outcome has no comparison");
    };
    let at = |m: Method| opt(c.methods.iter().find(|a| a.method == m).and_then(|a| a.rollouts_to_target));
    *out = PcComparison {
        target: opt(c.target),
        grpo_rollouts_to_target: at(Method::Grpo),
        dapo_rollouts_to_target: at(Method::Dapo),
        pc_rollouts_to_target: at(Method::Pc),
        grpo_over_pc: opt(c.grpo_over_pc),
        dapo_over_pc: opt(c.dapo_over_pc),
    };
    PcStatus::Ok
}

/// The summary document as JSON. Returns null on failure.
///
/// # Safety
/// `outcome` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pc_outcome_summary_json(outcome: *const PcOutcome) -> *mut c_char {
    let Some(o) = outcome.as_ref() else {
        set_error("outcome is null");
        return ptr::null_mut();
    };
    match serde_json::to_string_pretty(&o.inner.report) {
        Ok(text) => to_c_string(text),
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// Mean and population standard deviation of a binary reward group.
///
/// # Safety
/// `rewards` must point to `len` bytes and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pc_group_stats(rewards: *const u8, len: usize, out: *mut PcGroupStats) -> PcStatus {
    if out.is_null() {
        return fail(PcStatus::NullPointer, "out is null");
    }
    let r = match rewards_arg(rewards, len) {
        Ok(r) => r,
        Err(s) => return s,
    };
    match grpo::group_stats(r) {
        Ok(s) => {
            *out = PcGroupStats {
                mean: s.mean,
                std: s.std,
                group_size: s.group_size,
            };
            PcStatus::Ok
        }
        Err(e) => fail(group_status(&e), e.to_string()),
    }
}

/// Writes `len` standardized advantages to `out`. Zero-variance groups
/// yield zeros and `Ok`.
///
/// # Safety
/// `rewards` must point to `len` bytes and `out` to room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pc_advantages(rewards: *const u8, len: usize, out: *mut f64) -> PcStatus {
    if out.is_null() {
        return fail(PcStatus::NullPointer, "out is null");
    }
    let r = match rewards_arg(rewards, len) {
        Ok(r) => r,
        Err(s) => return s,
    };
    match grpo::advantages(r) {
        Ok(adv) => {
            std::slice::from_raw_parts_mut(out, len).copy_from_slice(&adv.values);
            PcStatus::Ok
        }
        Err(e) => fail(group_status(&e), e.to_string()),
    }
}

/// Surrogate-objective gradient with respect to the logit at the sampling
/// policy.
///
/// # Safety
/// `rewards` must point to `len` bytes and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pc_surrogate_gradient(logit: f64, rewards: *const u8, len: usize, out: *mut f64) -> PcStatus {
    if out.is_null() {
        return fail(PcStatus::NullPointer, "out is null");
    }
    let r = match rewards_arg(rewards, len) {
        Ok(r) => r,
        Err(s) => return s,
    };
    match grpo::surrogate_gradient(logit, r) {
        Ok(g) => {
            *out = g;
            PcStatus::Ok
        }
        Err(e) => fail(group_status(&e), e.to_string()),
    }
}

/// Rollouts sampled and trained by one Pilot-Commit step without extra
/// pilot rounds.
///
/// # Safety
/// `sampled` and `trained` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pc_sampling_cost(
    n_pilot: usize,
    n_commit: usize,
    b_t: usize,
    oversample_s: usize,
    sampled: *mut u64,
    trained: *mut u64,
) -> PcStatus {
    if sampled.is_null() || trained.is_null() {
        return fail(PcStatus::NullPointer, "output pointer is null");
    }
    let config = SchedulerConfig {
        n_pilot,
        n_commit,
        b_t,
        oversample_s,
        ..SchedulerConfig::default()
    };
    if let Err(e) = config.validate() {
        return fail(PcStatus::InvalidArgument, e.to_string());
    }
    *sampled = config.sampled_per_step();
    *trained = config.trained_per_step();
    PcStatus::Ok
}
