//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use num_complex::Complex64 as C64;
use rooflab::cache::ARRAY_ALIGN;
use rooflab::gpp::trace::AccessTrace;
use rooflab::gpp::{GPPProblem, Version, NW};
use rooflab::metrics::InstructionCounters;

// ---- instruction tally, rebuilt from the decomposition table ----

type Ops = [u64; 5]; // dadd, dmul, dfma, ddiv, dother

fn plus(a: Ops, b: Ops) -> Ops {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3], a[4] + b[4]]
}

struct Costs {
    cmul: Ops,
    mul_acc: Ops,
    abs2: Ops,
}

const SCALE: Ops = [0, 2, 0, 0, 0];
const RSUB: Ops = [1, 0, 0, 0, 0];
const ONE_OTHER: Ops = [0, 0, 0, 0, 1];
const DIV_REAL: Ops = [0, 0, 0, 1, 0];

fn costs(contract: bool) -> Costs {
    if contract {
        Costs { cmul: [0, 2, 2, 0, 0], mul_acc: [0, 0, 4, 0, 0], abs2: [0, 1, 1, 0, 0] }
    } else {
        Costs { cmul: [2, 4, 0, 0, 0], mul_acc: [4, 4, 0, 0, 0], abs2: [1, 2, 0, 0, 0] }
    }
}

/// Expected counters for a full run of `v`, from plain predicate evaluation
/// per (ig, igp, iw) and the published per-primitive costs.
pub fn counters_oracle(p: &GPPProblem, v: Version, contract: bool) -> InstructionCounters {
    let k = costs(contract);
    let d = p.dims;
    let mut per_band: Ops = [0; 5];
    for igp in 0..d.ngpown {
        for ig in 0..d.ncouls {
            let wt = p.wtilde[igp * d.ncouls + ig];
            for iw in 0..NW {
                let mut o: Ops = RSUB;
                o = plus(o, if v == Version::V0 { plus(plus(k.abs2, k.cmul), [0, 0, 0, 2, 0]) } else { plus(plus(k.abs2, [0, 2, 0, 1, 0]), k.cmul) });
                if v >= Version::V5 || iw == 0 {
                    o = plus(o, k.cmul);
                }
                let wdiff = C64::new(p.wx[iw], 0.0) - wt;
                let delw = wt / wdiff;
                let far = wdiff.norm() > p.limittwo;
                let a = far && delw.norm() < p.limitone;
                let b = !a && delw.norm() > p.tol_zero;
                let compares = 1 + far as u64 + !a as u64;
                o = plus(o, [0, 0, 0, 0, compares]);
                o = plus(o, plus(k.abs2, k.abs2));
                if v < Version::V3 {
                    o = plus(o, [0, 0, 0, 0, 2]);
                } else if b {
                    o = plus(o, ONE_OTHER);
                }
                if a {
                    o = plus(o, plus(k.cmul, SCALE));
                } else if b {
                    o = plus(o, plus(DIV_REAL, SCALE));
                }
                o = plus(o, plus(k.mul_acc, k.mul_acc));
                per_band = plus(per_band, o);
            }
        }
    }
    let nb = d.nbands as u64;
    InstructionCounters { dadd: per_band[0] * nb, dmul: per_band[1] * nb, dfma: per_band[2] * nb, ddiv: per_band[3] * nb, dother: per_band[4] * nb }
}

/// Complex multiplies v5 repeats because it recomputes the band product for
/// every frequency instead of once per tuple.
pub fn v5_duplicated(p: &GPPProblem, contract: bool) -> InstructionCounters {
    let c = costs(contract).cmul;
    let n = p.dims.tuples() * (NW as u64 - 1);
    InstructionCounters { dadd: c[0] * n, dmul: c[1] * n, dfma: c[2] * n, ddiv: c[3] * n, dother: c[4] * n }
}

// ---- caches ----

/// Byte address of every access under the documented layout: arrays in id
/// order, each starting on a 4096-byte boundary.
pub fn flat_addresses(t: &AccessTrace) -> Vec<(u64, u8)> {
    let mut bases = Vec::new();
    let mut next = 0;
    for a in &t.arrays {
        bases.push(next);
        next += a.extent.div_ceil(ARRAY_ALIGN) * ARRAY_ALIGN;
    }
    t.events.iter().map(|e| (bases[e.array as usize] + e.offset, e.size)).collect()
}

#[derive(Debug, PartialEq, Eq)]
pub struct OracleOutcome {
    pub l1_bytes: u64,
    pub l2_bytes: u64,
    pub hbm_bytes: u64,
    pub l1_hits: u64,
    pub l1_misses: u64,
    pub l2_hits: u64,
    pub l2_misses: u64,
}

fn touch(list: &mut Vec<u64>, line: u64, cap: usize) -> (bool, Option<u64>) {
    if let Some(i) = list.iter().position(|&x| x == line) {
        list.remove(i);
        list.insert(0, line);
        return (true, None);
    }
    list.insert(0, line);
    let evicted = if list.len() > cap { list.pop() } else { None };
    (false, evicted)
}

/// Fully associative inclusive two-level LRU over explicit MRU lists.
pub fn lru_oracle(accesses: &[(u64, u8)], line: u64, l1_lines: usize, l2_lines: usize) -> OracleOutcome {
    let (mut l1, mut l2) = (Vec::new(), Vec::new());
    let mut o = OracleOutcome { l1_bytes: 0, l2_bytes: 0, hbm_bytes: 0, l1_hits: 0, l1_misses: 0, l2_hits: 0, l2_misses: 0 };
    for &(addr, size) in accesses {
        o.l1_bytes += size as u64;
        for ln in addr / line..=(addr + size as u64 - 1) / line {
            if touch(&mut l1, ln, l1_lines).0 {
                o.l1_hits += 1;
                continue;
            }
            o.l1_misses += 1;
            let (hit, evicted) = touch(&mut l2, ln, l2_lines);
            if hit {
                o.l2_hits += 1;
            } else {
                o.l2_misses += 1;
            }
            if let Some(e) = evicted {
                l1.retain(|&x| x != e);
            }
        }
    }
    o.l2_bytes = o.l1_misses * line;
    o.hbm_bytes = o.l2_misses * line;
    o
}

// ---- occupancy ----

/// Largest block count that satisfies every limit, by enumeration.
pub fn occupancy_brute(regs: u32, tpb: u32) -> u32 {
    let per_thread = regs.div_ceil(8) * 8;
    let per_warp = (per_thread * 32).div_ceil(256) * 256;
    let wpb = tpb / 32;
    let mut best = 0;
    for blocks in 0..=64u32 {
        let ok = blocks * tpb <= 2048 && blocks * wpb <= 64 && blocks <= 32 && blocks * wpb * per_warp <= 65536;
        if ok {
            best = blocks;
        }
    }
    best * wpb
}

// ---- chart layout ----

/// Pixel position under the default layout: 800x600 with margins
/// left 80, right 30, top 40, bottom 60; AI over [0.01, 100], FLOP/s over
/// [1e10, 1e13], both log10.
pub fn default_px(ai: f64, perf: f64) -> (f64, f64) {
    let (w, h) = (800.0 - 80.0 - 30.0, 600.0 - 40.0 - 60.0);
    let x = 80.0 + (ai.log10() + 2.0) / 4.0 * w;
    let y = 40.0 + h - (perf.log10() - 10.0) / 3.0 * h;
    (x, y)
}

/// Attribute value of the first tag containing all `needles`.
pub fn attr_of(svg: &str, needles: &[&str], key: &str) -> Option<f64> {
    let tag = svg.lines().find(|l| needles.iter().all(|n| l.contains(n)))?;
    let start = tag.find(&format!(" {key}=\""))? + key.len() + 3;
    let end = start + tag[start..].find('"')?;
    tag[start..end].parse().ok()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}
