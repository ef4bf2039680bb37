//! C ABI over rooflab.
//!
//! Every function returns an [`RlStatus`]; results go through out-pointers.
//! On failure the message is available from [`rl_last_error`] on the same
//! thread. Handles are opaque and released with their `_free` function.
//! Strings returned to the caller are released with [`rl_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use rooflab::cache::{simulate, CacheConfig};
use rooflab::gpp::trace::AccessTrace;
use rooflab::gpp::{reference_result, run_version, synth_problem, GPPProblem, Version, NW};
use rooflab::machine::{fma_adjusted_peak, machine_balance, theoretical_peak, LevelName, MachineDescription};
use rooflab::metrics::{parse_metrics, total_flops};
use rooflab::occupancy::{theoretical_active_warps, LaunchConfig, Limiter};
use rooflab::roofline::{analyze, attainable, TrajectoryOptions};
use rooflab::Error;

pub const RL_LEVEL_L1: u32 = 0;
pub const RL_LEVEL_L2: u32 = 1;
pub const RL_LEVEL_HBM: u32 = 2;

pub const RL_LIMITER_THREADS: u32 = 0;
pub const RL_LIMITER_BLOCKS: u32 = 1;
pub const RL_LIMITER_REGISTERS: u32 = 2;

/// Complex accumulators per result array.
pub const RL_NW: usize = 2;
const _: () = assert!(RL_NW == NW);

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RlStatus {
    Ok = 0,
    NullArgument = 1,
    Domain = 2,
    Invalid = 3,
    Lookup = 4,
    Io = 5,
    Parse = 6,
    Usage = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Opaque machine description.
pub struct RlMachine(MachineDescription);

/// Opaque synthetic GPP problem.
pub struct RlProblem(GPPProblem);

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RlOccupancy {
    pub warps: u32,
    pub blocks: u32,
    pub warps_per_block: u32,
    pub regs_per_warp: u32,
    /// One of the `RL_LIMITER_*` values.
    pub limiter: u32,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RlRun {
    pub dadd: u64,
    pub dmul: u64,
    pub dfma: u64,
    pub ddiv: u64,
    pub dother: u64,
    /// dadd + dmul + 2 dfma + ddiv.
    pub flops: u64,
    /// Against the reference evaluation of the same problem.
    pub max_rel_error: f64,
    pub registers_per_thread: u32,
    pub threads_per_block: u32,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RlSimOutcome {
    pub l1_bytes: f64,
    pub l2_bytes: f64,
    pub hbm_bytes: f64,
    pub l1_hit_rate: f64,
    pub l2_hit_rate: f64,
    pub events: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(RlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Domain(_) => RlStatus::Domain,
            Error::Invalid { .. } => RlStatus::Invalid,
            Error::Lookup { .. } => RlStatus::Lookup,
            Error::Io { .. } => RlStatus::Io,
            Error::Json { .. } | Error::Csv(_) | Error::Trace(_) => RlStatus::Parse,
            Error::Usage(_) => RlStatus::Usage,
        };
        Failure(status, e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(RlStatus::NullArgument, format!("{name} is null"))
}

fn set_error(msg: Option<String>) {
    let c = msg.map(|m| CString::new(m.replace('\0', " ")).expect("nul bytes replaced"));
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(None);
            RlStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(Some(msg));
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(Some(format!("panic: {msg}")));
            RlStatus::Panic
        }
    }
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn out_ptr<'a>(p: *mut f64) -> Result<&'a mut f64, Failure> {
    out(p, "out")
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(RlStatus::Invalid, format!("{name} is not valid UTF-8")))
}

fn level(code: u32) -> Result<LevelName, Failure> {
    LevelName::ALL.get(code as usize).copied().ok_or_else(|| Failure(RlStatus::Lookup, format!("unknown level code {code}")))
}

fn version(code: u32) -> Result<Version, Failure> {
    Version::ALL.get(code as usize).copied().ok_or_else(|| Failure(RlStatus::Lookup, format!("unknown version code {code}")))
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next rooflab call on this thread.
#[no_mangle]
pub extern "C" fn rl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `out` must be null or point to writable memory for one double.
#[no_mangle]
pub unsafe extern "C" fn rl_theoretical_peak(num_units: u32, lanes_per_unit: u32, ops_per_lane_cycle: u32, clock_hz: f64, out: *mut f64) -> RlStatus {
    guard(|| {
        *out_ptr(out)? = theoretical_peak(num_units, lanes_per_unit, ops_per_lane_cycle, clock_hz)?;
        Ok(())
    })
}

/// # Safety
/// `out` must be null or point to writable memory for one double.
#[no_mangle]
pub unsafe extern "C" fn rl_fma_adjusted_peak(peak: f64, fma_ratio: f64, out: *mut f64) -> RlStatus {
    guard(|| {
        *out_ptr(out)? = fma_adjusted_peak(peak, fma_ratio)?;
        Ok(())
    })
}

/// # Safety
/// `out` must be null or point to writable memory for one double.
#[no_mangle]
pub unsafe extern "C" fn rl_machine_balance(peak: f64, bandwidth: f64, out: *mut f64) -> RlStatus {
    guard(|| {
        *out_ptr(out)? = machine_balance(peak, bandwidth)?;
        Ok(())
    })
}

/// The bundled V100 description.
///
/// # Safety
/// `out` must be null or point to writable memory for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn rl_machine_bundled(out: *mut *mut RlMachine) -> RlStatus {
    guard(|| {
        *self::out(out, "out")? = Box::into_raw(Box::new(RlMachine(MachineDescription::bundled_v100())));
        Ok(())
    })
}

/// # Safety
/// `path` must be null or a NUL-terminated string; `out` as in [`rl_machine_bundled`].
#[no_mangle]
pub unsafe extern "C" fn rl_machine_load(path: *const c_char, out: *mut *mut RlMachine) -> RlStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let slot = self::out(out, "out")?;
        *slot = Box::into_raw(Box::new(RlMachine(rooflab::machine::load_machine(path)?)));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rl_machine_free(m: *mut RlMachine) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Peak of the highest compute ceiling.
///
/// # Safety
/// `m` must be a live handle; `out` writable for one double.
#[no_mangle]
pub unsafe extern "C" fn rl_machine_peak(m: *const RlMachine, out: *mut f64) -> RlStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("machine"))?;
        *out_ptr(out)? = m.0.top_ceiling().peak;
        Ok(())
    })
}

/// Ridge point of `level` (an `RL_LEVEL_*` code) under the highest ceiling.
///
/// # Safety
/// `m` must be a live handle; `out` writable for one double.
#[no_mangle]
pub unsafe extern "C" fn rl_machine_level_balance(m: *const RlMachine, level: u32, out: *mut f64) -> RlStatus {
    guard(|| {
        let m = &m.as_ref().ok_or_else(|| null("machine"))?.0;
        *out_ptr(out)? = m.balance(self::level(level)?, &m.top_ceiling().label)?;
        Ok(())
    })
}

/// min(top peak, ai x bandwidth of `level`).
///
/// # Safety
/// `m` must be a live handle; `out` writable for one double.
#[no_mangle]
pub unsafe extern "C" fn rl_attainable(m: *const RlMachine, level: u32, ai: f64, out: *mut f64) -> RlStatus {
    guard(|| {
        let m = &m.as_ref().ok_or_else(|| null("machine"))?.0;
        *out_ptr(out)? = attainable(m, self::level(level)?, ai, &m.top_ceiling().label)?;
        Ok(())
    })
}

/// Theoretical occupancy. `m` may be null for the default SM resources.
///
/// # Safety
/// `m` must be null or a live handle; `out` writable for one [`RlOccupancy`].
#[no_mangle]
pub unsafe extern "C" fn rl_occupancy(m: *const RlMachine, registers_per_thread: u32, threads_per_block: u32, out: *mut RlOccupancy) -> RlStatus {
    guard(|| {
        let res = m.as_ref().map(|m| m.0.sm_resources()).unwrap_or_default();
        let slot = self::out(out, "out")?;
        let o = theoretical_active_warps(LaunchConfig { registers_per_thread, threads_per_block }, &res)?;
        let limiter = match o.limiter {
            Limiter::Threads => RL_LIMITER_THREADS,
            Limiter::Blocks => RL_LIMITER_BLOCKS,
            Limiter::Registers => RL_LIMITER_REGISTERS,
        };
        *slot = RlOccupancy { warps: o.warps, blocks: o.blocks, warps_per_block: o.warps_per_block, regs_per_warp: o.regs_per_warp, limiter };
        Ok(())
    })
}

/// Deterministic synthetic problem for `seed`.
///
/// # Safety
/// `out` must be null or writable for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn rl_problem_synth(seed: u64, nbands: usize, ngpown: usize, ncouls: usize, out: *mut *mut RlProblem) -> RlStatus {
    guard(|| {
        let slot = self::out(out, "out")?;
        *slot = Box::into_raw(Box::new(RlProblem(synth_problem(seed, nbands, ngpown, ncouls)?)));
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rl_problem_free(p: *mut RlProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn write_result(r: &rooflab::gpp::GPPResult, buf: *mut f64, len: usize) -> Result<(), Failure> {
    let need = 4 * NW;
    if len < need {
        return Err(Failure(RlStatus::BufferTooSmall, format!("result buffer holds {len} doubles, need {need}")));
    }
    // SAFETY: the caller guarantees `len` writable doubles at `buf`.
    let dst = unsafe { std::slice::from_raw_parts_mut(buf, need) };
    for (i, z) in r.achtemp.iter().chain(&r.asxtemp).enumerate() {
        dst[2 * i] = z.re;
        dst[2 * i + 1] = z.im;
    }
    Ok(())
}

/// Reference evaluation. Writes achtemp then asxtemp as interleaved
/// (re, im) pairs: 4 x `RL_NW` doubles.
///
/// # Safety
/// `p` must be a live handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rl_reference(p: *const RlProblem, buf: *mut f64, len: usize) -> RlStatus {
    guard(|| {
        let p = &p.as_ref().ok_or_else(|| null("problem"))?.0;
        if buf.is_null() {
            return Err(null("buf"));
        }
        write_result(&reference_result(p), buf, len)
    })
}

/// Runs version `version` (0 to 8). `buf` may be null to skip the result
/// values; otherwise it is filled as in [`rl_reference`].
///
/// # Safety
/// `p` must be a live handle, `out` writable for one [`RlRun`], and `buf`
/// null or writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rl_run_version(p: *const RlProblem, version: u32, out: *mut RlRun, buf: *mut f64, len: usize) -> RlStatus {
    guard(|| {
        let p = &p.as_ref().ok_or_else(|| null("problem"))?.0;
        let slot = self::out(out, "out")?;
        let art = run_version(p, self::version(version)?, false)?;
        if !buf.is_null() {
            write_result(&art.result, buf, len)?;
        }
        let c = art.counters;
        *slot = RlRun {
            dadd: c.dadd,
            dmul: c.dmul,
            dfma: c.dfma,
            ddiv: c.ddiv,
            dother: c.dother,
            flops: total_flops(&c, 1)?,
            max_rel_error: art.result.max_rel_error(&reference_result(p)),
            registers_per_thread: art.launch.registers_per_thread,
            threads_per_block: art.launch.threads_per_block,
        };
        Ok(())
    })
}

/// Replays a trace file through the cache simulator. `config` is a preset
/// name ("default", "desk") or a JSON file path; null means "desk".
///
/// # Safety
/// `path` must be a NUL-terminated string, `config` null or one, and `out`
/// writable for one [`RlSimOutcome`].
#[no_mangle]
pub unsafe extern "C" fn rl_simulate_trace(path: *const c_char, config: *const c_char, out: *mut RlSimOutcome) -> RlStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let cfg = if config.is_null() { CacheConfig::desk() } else { CacheConfig::resolve(str_arg(config, "config")?)? };
        let slot = self::out(out, "out")?;
        let o = simulate(&AccessTrace::read_from(path)?, &cfg)?;
        *slot = RlSimOutcome {
            l1_bytes: o.bytes.l1,
            l2_bytes: o.bytes.l2,
            hbm_bytes: o.bytes.hbm,
            l1_hit_rate: o.l1.hit_rate,
            l2_hit_rate: o.l2.hit_rate,
            events: o.events,
        };
        Ok(())
    })
}

/// Analysis report as JSON for a metrics JSON document. `m` may be null for
/// the bundled machine; a negative `fma_ratio` leaves the FMA-adjusted
/// ceiling out. Free the result with [`rl_string_free`].
///
/// # Safety
/// `metrics_json` must be a NUL-terminated string, `m` null or a live
/// handle, and `out` writable for one string pointer.
#[no_mangle]
pub unsafe extern "C" fn rl_analyze_json(metrics_json: *const c_char, m: *const RlMachine, fma_ratio: f64, out: *mut *mut c_char) -> RlStatus {
    guard(|| {
        let text = str_arg(metrics_json, "metrics_json")?;
        let slot = self::out(out, "out")?;
        let bundled;
        let machine = match m.as_ref() {
            Some(m) => &m.0,
            None => {
                bundled = MachineDescription::bundled_v100();
                &bundled
            }
        };
        let records = parse_metrics(text, "metrics_json")?;
        let opts = TrajectoryOptions { fma_ratio: (fma_ratio >= 0.0).then_some(fma_ratio), ..TrajectoryOptions::default() };
        let report = analyze(&records, machine, &opts)?;
        let json = serde_json::to_string(&report).map_err(|e| Failure(RlStatus::Parse, e.to_string()))?;
        *slot = CString::new(json).map_err(|e| Failure(RlStatus::Invalid, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn rl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
