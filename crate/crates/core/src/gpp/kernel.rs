//! The nine kernel versions.
//!
//! Each version is a schedule: an index space the device would spread over
//! threads, a per-thread sequence of steps, and sometimes an outer loop over
//! frequencies run as separate launches. Threads advance in lockstep waves of
//! `wave_threads`: every thread of a wave performs step s before any performs
//! step s + 1. Arithmetic and trace follow that single order, so results,
//! tallies and traces stay consistent with one another.
//!
//! | version | outer     | parallel index              | per-thread steps        |
//! |---------|-----------|-----------------------------|-------------------------|
//! | v0-v3   |           | band, igp, ig               | iw                      |
//! | v4      |           | igp, ig                     | band, iw                |
//! | v5      | iw        | igp, ig                     | band                    |
//! | v6-v8   | iw        | band lane, igp, ig lane     | ig by lanes, band by lanes |
//!
//! v0-v4 form aqsntemp x conj(aqsmtemp) once per tuple and reuse it across
//! frequencies; v5+ run one launch per frequency and form it again in each.

use std::time::Instant;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::tally::Tally;
use super::trace::{AccessTrace, ArrayInfo, NoTrace, TraceSink};
use super::{predicate_abs, predicate_squared, Branch, Dims, GPPProblem, GPPResult, Version, NW};
use crate::metrics::{InstructionCounters, KernelMetrics, LevelBytes};
use crate::machine::Precision;
use crate::{Error, Result};

pub const DEFAULT_WAVE_THREADS: u32 = 1024;

const WTILDE: u8 = 0;
const EPS: u8 = 1;
const AQSN: u8 = 2;
const AQSM: u8 = 3;
const WX: u8 = 4;
const C: u64 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Fold multiply-add pairs into FMAs in the tally.
    pub contract: bool,
    /// Threads per lockstep wave in the trace interleaving.
    pub wave_threads: u32,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { contract: true, wave_threads: DEFAULT_WAVE_THREADS }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaunchMeta {
    pub registers_per_thread: u32,
    pub threads_per_block: u32,
}

/// Lane counts of the blocked versions: `ig` threads stride over ncouls and
/// `band` threads stride over nbands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSizes {
    pub ig: usize,
    pub band: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchCounts {
    pub a: u64,
    pub b: u64,
    pub neither: u64,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub version: Version,
    pub problem: String,
    pub result: GPPResult,
    pub counters: InstructionCounters,
    pub trace: Option<AccessTrace>,
    pub launch: LaunchMeta,
    pub blocks: Option<BlockSizes>,
    pub wave_threads: u32,
    pub branches: BranchCounts,
    /// Host wall time of the run, tracing included.
    pub wall_seconds: f64,
}

/// Full-size blocking is 128 ig lanes by 64 band lanes. Smaller problems keep
/// the per-thread trip counts of 32 ig and 16 band steps instead, so the
/// blocked loop shape survives scaling down.
pub fn block_sizes(dims: Dims) -> BlockSizes {
    BlockSizes { ig: dims.ncouls.div_ceil(32).clamp(1, 128), band: dims.nbands.div_ceil(16).clamp(1, 64) }
}

/// Registers per thread and block size of each version's device build.
pub fn launch_meta(v: Version) -> LaunchMeta {
    const REGS: [u32; 9] = [154, 160, 160, 154, 170, 136, 178, 184, 128];
    LaunchMeta { registers_per_thread: REGS[v.index()], threads_per_block: if v == Version::V8 { 512 } else { 128 } }
}

pub fn arrays(dims: Dims, v: Version) -> Vec<ArrayInfo> {
    let pair = (dims.ncouls * dims.ngpown) as u64 * C;
    let aqsm_name = if v >= Version::V7 { "aqsmtemp_local" } else { "aqsmtemp" };
    vec![
        ArrayInfo { name: "wtilde_array".into(), elem_size: 16, extent: pair },
        ArrayInfo { name: "I_eps_array".into(), elem_size: 16, extent: pair },
        ArrayInfo { name: "aqsntemp".into(), elem_size: 16, extent: (dims.ncouls * dims.nbands) as u64 * C },
        ArrayInfo { name: aqsm_name.into(), elem_size: 16, extent: (dims.ngpown * dims.nbands) as u64 * C },
        ArrayInfo { name: "wx_array".into(), elem_size: 8, extent: NW as u64 * 8 },
    ]
}

struct Kernel<'a, S> {
    p: &'a GPPProblem,
    v: Version,
    t: Tally,
    sink: S,
    aqsm: &'a [C64],
    swapped: bool,
    hoisted: bool,
    mats: Vec<C64>,
    lim2: [f64; 3],
    ach: [C64; NW],
    asx: [C64; NW],
    branches: BranchCounts,
}

impl<S: TraceSink> Kernel<'_, S> {
    #[inline]
    fn visit(&mut self, band: usize, igp: usize, ig: usize, iw: usize, slot: usize) {
        let p = self.p;
        let d = p.dims;
        let pair = p.pair_index(ig, igp);
        let n_idx = band * d.ncouls + ig;
        let m_idx = if self.swapped { igp * d.nbands + band } else { band * d.ngpown + igp };

        self.sink.read(WTILDE, pair as u64 * C, 16);
        self.sink.read(AQSN, n_idx as u64 * C, 16);
        self.sink.read(EPS, pair as u64 * C, 16);
        self.sink.read(AQSM, m_idx as u64 * C, 16);
        self.sink.read(WX, iw as u64 * 8, 8);

        let t = &mut self.t;
        let (wt, eps) = (p.wtilde[pair], p.i_eps[pair]);
        let mat = if !self.hoisted {
            t.mul_conj(p.aqsn[n_idx], self.aqsm[m_idx])
        } else if iw == 0 {
            let m = t.mul_conj(p.aqsn[n_idx], self.aqsm[m_idx]);
            self.mats[slot] = m;
            m
        } else {
            self.mats[slot]
        };

        let wdiff = t.real_minus(p.wx[iw], wt);
        let delw = if self.v == Version::V0 {
            t.div(wt, wdiff)
        } else {
            let r = t.rcp(wdiff);
            t.mul(wt, r)
        };
        let (branch, delwr) =
            if self.v >= Version::V3 { predicate_squared(t, wdiff, delw, &self.lim2) } else { predicate_abs(t, wdiff, delw, p) };

        let zero = C64::new(0.0, 0.0);
        let (sch, ssx) = match branch {
            Branch::A => {
                self.branches.a += 1;
                let ssx = t.mul(delw, eps);
                (t.scale(0.5, ssx), ssx)
            }
            Branch::B => {
                self.branches.b += 1;
                let q = t.div_real(-0.25, delwr);
                (zero, t.scale(q, eps))
            }
            Branch::Neither => {
                self.branches.neither += 1;
                (zero, zero)
            }
        };
        self.ach[iw] = t.mul_acc(self.ach[iw], sch, mat);
        self.asx[iw] = t.mul_acc(self.asx[iw], ssx, mat);
    }

    /// Runs `threads` threads of `steps` steps each in waves of `wave`.
    /// `step(thread, s)` yields the visit coordinates, or `None` when that
    /// thread has no work at step `s`.
    #[inline]
    fn waves(&mut self, threads: usize, steps: usize, wave: usize, step: impl Fn(usize, usize) -> Option<(usize, usize, usize, usize)>) {
        let mut start = 0;
        while start < threads {
            let end = (start + wave).min(threads);
            for s in 0..steps {
                for th in start..end {
                    if let Some((band, igp, ig, iw)) = step(th, s) {
                        self.visit(band, igp, ig, iw, th - start);
                    }
                }
            }
            start = end;
        }
    }
}

/// Runs one version, streaming every array read into `sink`.
pub fn run_version_into<S: TraceSink>(p: &GPPProblem, v: Version, opts: RunOptions, sink: S) -> Result<RunArtifacts> {
    p.validate()?;
    if opts.wave_threads == 0 {
        return Err(Error::Domain("wave_threads must be >= 1".into()));
    }
    let started = Instant::now();
    let d = p.dims;
    let wave = opts.wave_threads as usize;

    // v7+ read aqsmtemp through a transposed copy with band fastest.
    let local: Vec<C64>;
    let aqsm: &[C64] = if v >= Version::V7 {
        let mut t = vec![C64::new(0.0, 0.0); p.aqsm.len()];
        for band in 0..d.nbands {
            for igp in 0..d.ngpown {
                t[igp * d.nbands + band] = p.aqsm[band * d.ngpown + igp];
            }
        }
        local = t;
        &local
    } else {
        &p.aqsm
    };

    let mut k = Kernel {
        p,
        v,
        t: Tally::new(opts.contract),
        sink,
        aqsm,
        swapped: v >= Version::V7,
        hoisted: v <= Version::V4,
        mats: vec![C64::new(0.0, 0.0); wave],
        lim2: [p.limitone * p.limitone, p.limittwo * p.limittwo, p.tol_zero * p.tol_zero],
        ach: [C64::new(0.0, 0.0); NW],
        asx: [C64::new(0.0, 0.0); NW],
        branches: BranchCounts::default(),
    };

    let (nb, ngp, nc) = (d.nbands, d.ngpown, d.ncouls);
    let mut blocks = None;
    match v {
        Version::V0 | Version::V1 | Version::V2 | Version::V3 => {
            k.waves(nb * ngp * nc, NW, wave, |th, iw| {
                let ig = th % nc;
                let igp = (th / nc) % ngp;
                Some((th / (nc * ngp), igp, ig, iw))
            });
        }
        Version::V4 => {
            k.waves(ngp * nc, nb * NW, wave, |th, s| Some((s / NW, th / nc, th % nc, s % NW)));
        }
        Version::V5 => {
            for iw in 0..NW {
                k.waves(ngp * nc, nb, wave, |th, band| Some((band, th / nc, th % nc, iw)));
            }
        }
        Version::V6 | Version::V7 | Version::V8 => {
            let bs = block_sizes(d);
            blocks = Some(bs);
            let ig_steps = nc.div_ceil(bs.ig);
            let band_steps = nb.div_ceil(bs.band);
            for iw in 0..NW {
                k.waves(bs.band * ngp * bs.ig, ig_steps * band_steps, wave, |th, s| {
                    let ig = th % bs.ig + (s / band_steps) * bs.ig;
                    let band = th / (bs.ig * ngp) + (s % band_steps) * bs.band;
                    (ig < nc && band < nb).then_some((band, (th / bs.ig) % ngp, ig, iw))
                });
            }
        }
    }

    Ok(RunArtifacts {
        version: v,
        problem: p.tag.clone(),
        result: GPPResult { achtemp: k.ach.to_vec(), asxtemp: k.asx.to_vec() },
        counters: k.t.c,
        trace: None,
        launch: launch_meta(v),
        blocks,
        wave_threads: opts.wave_threads,
        branches: k.branches,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Runs one version, materializing the trace when `trace` is set.
pub fn run_version(p: &GPPProblem, v: Version, trace: bool) -> Result<RunArtifacts> {
    let opts = RunOptions::default();
    if trace {
        let mut tr = AccessTrace::new(arrays(p.dims, v), opts.wave_threads);
        tr.events.reserve(p.dims.tuples() as usize * NW * 5);
        let mut art = run_version_into(p, v, opts, &mut tr)?;
        art.trace = Some(tr);
        Ok(art)
    } else {
        run_version_into(p, v, opts, NoTrace)
    }
}

/// Packages a run as a metrics record.
pub fn emit_metrics(art: &RunArtifacts, bytes: LevelBytes, runtime: f64) -> Result<KernelMetrics> {
    if !(runtime.is_finite() && runtime > 0.0) {
        return Err(Error::Domain(format!("runtime must be > 0, got {runtime}")));
    }
    Ok(KernelMetrics {
        label: art.version.label().to_string(),
        system: art.problem.clone(),
        kernel: None,
        precision: Precision::FP64,
        counters: art.counters,
        bytes: Some(bytes),
        runtime,
        registers_per_thread: Some(art.launch.registers_per_thread),
        threads_per_block: Some(art.launch.threads_per_block),
        achieved_warps_per_sm: None,
        note: None,
    })
}
