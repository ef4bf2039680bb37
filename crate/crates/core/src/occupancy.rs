//! Theoretical occupancy: registers per thread and block shape to active
//! warps per SM.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SMResources {
    pub register_file: u32,
    pub max_warps: u32,
    pub max_threads: u32,
    pub max_blocks: u32,
    pub max_threads_per_block: u32,
    pub reg_alloc_granularity: u32,
    pub reg_per_thread_granularity: u32,
    pub warp_size: u32,
}

impl Default for SMResources {
    /// Volta SM.
    fn default() -> Self {
        SMResources {
            register_file: 65536,
            max_warps: 64,
            max_threads: 2048,
            max_blocks: 32,
            max_threads_per_block: 1024,
            reg_alloc_granularity: 256,
            reg_per_thread_granularity: 8,
            warp_size: 32,
        }
    }
}

impl SMResources {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("register_file", self.register_file),
            ("max_warps", self.max_warps),
            ("max_threads", self.max_threads),
            ("max_blocks", self.max_blocks),
            ("max_threads_per_block", self.max_threads_per_block),
            ("reg_alloc_granularity", self.reg_alloc_granularity),
            ("reg_per_thread_granularity", self.reg_per_thread_granularity),
            ("warp_size", self.warp_size),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::invalid(name, "must be > 0"));
            }
        }
        if self.max_threads as u64 != self.max_warps as u64 * self.warp_size as u64 {
            return Err(Error::invalid("max_threads", "must equal max_warps x warp_size"));
        }
        if self.max_threads_per_block > self.max_threads {
            return Err(Error::invalid("max_threads_per_block", "must not exceed max_threads"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaunchConfig {
    pub registers_per_thread: u32,
    pub threads_per_block: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Limiter {
    Threads,
    Blocks,
    Registers,
}

impl fmt::Display for Limiter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Limiter::Threads => "threads",
            Limiter::Blocks => "blocks",
            Limiter::Registers => "registers",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occupancy {
    pub warps: u32,
    pub blocks: u32,
    pub warps_per_block: u32,
    pub regs_per_warp: u32,
    pub limiter: Limiter,
}

fn round_up(v: u32, g: u32) -> u32 {
    v.div_ceil(g) * g
}

/// Registers one warp occupies once both allocation granularities apply.
pub fn regs_per_warp(registers_per_thread: u32, res: &SMResources) -> Result<u32> {
    if !(1..=255).contains(&registers_per_thread) {
        return Err(Error::Domain(format!("registers_per_thread must lie in [1, 255], got {registers_per_thread}")));
    }
    let per_thread = round_up(registers_per_thread, res.reg_per_thread_granularity);
    Ok(round_up(per_thread * res.warp_size, res.reg_alloc_granularity))
}

/// Resident warps per SM. Ties between limits report threads before blocks
/// before registers.
pub fn theoretical_active_warps(cfg: LaunchConfig, res: &SMResources) -> Result<Occupancy> {
    res.validate()?;
    let tpb = cfg.threads_per_block;
    if tpb == 0 || tpb % res.warp_size != 0 {
        return Err(Error::Domain(format!("threads_per_block must be a positive multiple of {}, got {tpb}", res.warp_size)));
    }
    if tpb > res.max_threads_per_block {
        return Err(Error::Usage(format!("block of {tpb} threads exceeds the per-block thread limit {}", res.max_threads_per_block)));
    }
    let rpw = regs_per_warp(cfg.registers_per_thread, res)?;
    let warps_per_block = tpb / res.warp_size;

    let by_threads = (res.max_threads / tpb).min(res.max_warps / warps_per_block);
    let by_blocks = res.max_blocks;
    let by_regs = res.register_file / (rpw * warps_per_block);

    let mut blocks = by_threads;
    let mut limiter = Limiter::Threads;
    if by_blocks < blocks {
        blocks = by_blocks;
        limiter = Limiter::Blocks;
    }
    if by_regs < blocks {
        blocks = by_regs;
        limiter = Limiter::Registers;
    }
    let warps = (blocks * warps_per_block).min(res.max_warps);
    Ok(Occupancy { warps, blocks, warps_per_block, regs_per_warp: rpw, limiter })
}
