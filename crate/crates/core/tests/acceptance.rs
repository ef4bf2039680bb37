//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

mod common;

use std::time::{Duration, Instant};

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rooflab::cache::{simulate, CacheConfig, CacheSim, LevelConfig, SetIndex, SimOutcome};
use rooflab::chart::{element_counts, render, validate_geometry, ChartOptions, ChartSpec};
use rooflab::gpp::trace::{AccessTrace, ArrayInfo, TraceEvent, TraceSink};
use rooflab::gpp::*;
use rooflab::machine::*;
use rooflab::metrics::{bundled_gpp_study, total_flops, KernelMetrics};
use rooflab::occupancy::{theoretical_active_warps, LaunchConfig, SMResources};
use rooflab::roofline::*;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    common::rel(a, b)
}

fn sig4(x: f64) -> String {
    format!("{:.3e}", x)
}

// ---- 1-3: machine model ----

fn c1() -> Check {
    let p = theoretical_peak(80, 32, 2, 1.312e9).map_err(|e| e.to_string())?;
    ensure(rel(p, 6.7174e12) < 1e-4 && rel(p, 6.7e12) <= 0.005, format!("peak {p:.5e} FLOP/s, {:.2}% from 6.7e12", 100.0 * rel(p, 6.7e12)))
}

fn c2() -> Check {
    let a = fma_adjusted_peak(6.7174e12, 0.58).map_err(|e| e.to_string())?;
    let f = fma_peak_fraction(0.58).map_err(|e| e.to_string())?;
    ensure(rel(a, 5.3e12) <= 0.01 && f == 0.79, format!("adjusted {a:.4e}, {:.2}% from 5.3e12, fraction {f}", 100.0 * rel(a, 5.3e12)))
}

fn study_report(system: &str) -> Result<TrajectoryReport, String> {
    let recs: Vec<KernelMetrics> = bundled_gpp_study().into_iter().filter(|r| r.system == system).collect();
    let opts = TrajectoryOptions { fma_ratio: Some(0.58), ..TrajectoryOptions::default() };
    trajectory(&recs, &MachineDescription::bundled_v100(), &opts).map_err(|e| e.to_string())
}

fn c3() -> Check {
    let r = study_report("Si-214")?;
    let v8 = r.version("v8").ok_or("no v8 row")?;
    let (pf, af) = (100.0 * v8.peak_fraction, 100.0 * v8.fma_adjusted_fraction.ok_or("no adjusted fraction")?);
    ensure(rel(v8.throughput, 3.710e12) < 5e-4 && (pf - 55.0).abs() <= 1.0 && (af - 70.0).abs() <= 1.0, format!("v8 at {pf:.1}% of peak, {af:.1}% of adjusted peak"))
}

// ---- 4: published runtimes and rates ----

const PUBLISHED: [(&str, [(f64, f64); 9]); 2] = [
    ("Si-214", [(1.691, 2.337), (1.106, 2.629), (1.098, 2.628), (0.987, 2.647), (0.977, 2.754), (0.873, 2.901), (1.022, 2.392), (0.996, 2.548), (0.717, 3.710)]),
    ("Si-510", [(24.705, 2.216), (13.269, 2.526), (13.260, 2.525), (11.983, 2.543), (11.246, 2.641), (10.257, 2.741), (11.923, 2.313), (10.901, 2.550), (7.565, 3.638)]),
];

fn c4() -> Check {
    let mut worst_row = String::new();
    for (system, rows) in PUBLISHED {
        for (i, (t, tf)) in rows.into_iter().enumerate() {
            let got = achieved_throughput(t * tf * 1e12, t).map_err(|e| e.to_string())? / 1e12;
            if sig4(got) != sig4(tf) {
                return Err(format!("{system} v{i}: {got} vs {tf}"));
            }
        }
        let bundled = study_report(system)?;
        for (e, (t, tf)) in bundled.versions.iter().zip(rows) {
            if e.runtime != t || sig4(e.throughput / 1e12) != sig4(tf) {
                worst_row = format!("{system} {} bundled {} TFLOP/s vs {tf}", e.label, e.throughput / 1e12);
            }
        }
    }
    if !worst_row.is_empty() {
        return Err(worst_row);
    }
    let (a, b) = (study_report("Si-214")?.cumulative_speedup, study_report("Si-510")?.cumulative_speedup);
    ensure((a - 2.36).abs() <= 0.01 && (b - 3.27).abs() <= 0.01, format!("18 rows to 4 digits, speedups {a:.3} and {b:.3}"))
}

// ---- 5: occupancy ----

fn c5() -> Check {
    let res = SMResources::default();
    let w = |regs, tpb| theoretical_active_warps(LaunchConfig { registers_per_thread: regs, threads_per_block: tpb }, &res).map(|o| o.warps);
    let (a, b) = (w(184, 128).map_err(|e| e.to_string())?, w(128, 512).map_err(|e| e.to_string())?);
    let mut cells = 0;
    for regs in 1..=255 {
        for tpb in (32..=1024).step_by(32) {
            let got = w(regs, tpb).map_err(|e| e.to_string())?;
            if got != common::occupancy_brute(regs, tpb) {
                return Err(format!("({regs}, {tpb}) gives {got}, brute force {}", common::occupancy_brute(regs, tpb)));
            }
            cells += 1;
        }
    }
    ensure(a == 8 && b == 16, format!("(184,128) -> {a}, (128,512) -> {b}, {cells} grid cells agree"))
}

// ---- 6-7: workload ----

fn c6() -> Check {
    let mut worst: f64 = 0.0;
    for seed in [1, 42, 7] {
        let p = synth_problem(seed, 64, 64, 512).map_err(|e| e.to_string())?;
        let reference = reference_result(&p);
        let errs: Vec<f64> = Version::ALL
            .par_iter()
            .map(|&v| run_version(&p, v, false).map(|a| a.result.max_rel_error(&reference)))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        for (v, e) in Version::ALL.iter().zip(&errs) {
            if !(*e <= 1e-10) {
                return Err(format!("seed {seed} {v}: max rel error {e:e}"));
            }
        }
        worst = errs.into_iter().fold(worst, f64::max);
        if branch_decisions(&p, Version::V3) != branch_decisions(&p, Version::V2) {
            return Err(format!("seed {seed}: v3 decisions differ from v2"));
        }
    }
    Ok(format!("27 runs, worst max rel error {worst:.2e}, v3 decisions equal v2"))
}

fn c7() -> Check {
    let p = synth_problem(42, 64, 64, 512).map_err(|e| e.to_string())?;
    let run = |v| run_version(&p, v, false).map(|a| a.counters).map_err(|e| e.to_string());
    let (v0, v1, v4, v5) = (run(Version::V0)?, run(Version::V1)?, run(Version::V4)?, run(Version::V5)?);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let z = C64::from_polar(rng.gen_range(0.5..2.0), rng.gen_range(0.0..std::f64::consts::TAU));
        worst = worst.max((z * complex_reciprocal(z).map_err(|e| e.to_string())? - 1.0).norm());
    }
    let ulps = worst / f64::EPSILON;
    let delta = v5 - v4;
    let want = common::v5_duplicated(&p, true);
    ensure(
        v1.ddiv < v0.ddiv && ulps <= 4.0 && delta == want,
        format!("ddiv {} -> {}, rcp error {ulps:.2} ulp, v5-v4 {} FLOPs (analytic {})", v0.ddiv, v1.ddiv, total_flops(&delta, 1).unwrap_or(0), total_flops(&want, 1).unwrap_or(0)),
    )
}

// ---- 8: cache simulator ----

fn identities(o: &SimOutcome, accessed: f64) -> bool {
    o.bytes.l1 == accessed && o.bytes.l2 == (o.l1.misses * o.line) as f64 && o.bytes.hbm == (o.l2.misses * o.line) as f64
}

fn random_trace(seed: u64) -> AccessTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arrays = vec![ArrayInfo { name: "a".into(), elem_size: 16, extent: 16 * 600 }, ArrayInfo { name: "b".into(), elem_size: 8, extent: 8 * 900 }];
    let mut t = AccessTrace::new(arrays, 32);
    for _ in 0..10_000 {
        if rng.gen_bool(0.6) {
            let i = if rng.gen_bool(0.5) { rng.gen_range(0..40) } else { rng.gen_range(0..600) };
            t.events.push(TraceEvent { array: 0, offset: 16 * i, size: 16 });
        } else {
            t.events.push(TraceEvent { array: 1, offset: 8 * rng.gen_range(0..900), size: 8 });
        }
    }
    t
}

fn c8(sweep: &[(Version, SimOutcome, f64)]) -> Check {
    let mut sims = 0;
    for (v, o, accessed) in sweep {
        if !identities(o, *accessed) {
            return Err(format!("identity broken on {v} sweep outcome"));
        }
        sims += 1;
    }
    let fa = |l1: u32, l2: u32| CacheConfig {
        l1: LevelConfig { capacity: 128 * l1 as u64, line: 128, associativity: l1 },
        l2: LevelConfig { capacity: 128 * l2 as u64, line: 128, associativity: l2 },
        index: SetIndex::Xor,
    };
    let small = synth_problem(42, 8, 8, 64).map_err(|e| e.to_string())?;
    let mut traces: Vec<(String, AccessTrace)> = (0..6).map(|s| (format!("random {s}"), random_trace(s))).collect();
    for v in Version::ALL {
        let mut t = run_version(&small, v, true).map_err(|e| e.to_string())?.trace.ok_or("no trace")?;
        t.events.truncate(10_000);
        traces.push((v.to_string(), t));
    }
    let mut oracle_runs = 0;
    for (name, t) in &traces {
        let accessed: f64 = t.events.iter().map(|e| e.size as f64).sum();
        for cfg in [CacheConfig::desk(), CacheConfig::default()] {
            let o = simulate(t, &cfg).map_err(|e| e.to_string())?;
            sims += 1;
            if !identities(&o, accessed) {
                return Err(format!("identity broken on {name}"));
            }
        }
        for (l1, l2) in [(4, 16), (16, 64), (1, 2), (32, 32)] {
            let o = simulate(t, &fa(l1, l2)).map_err(|e| e.to_string())?;
            sims += 1;
            let want = common::lru_oracle(&common::flat_addresses(t), 128, l1 as usize, l2 as usize);
            let got = (o.l1.hits, o.l1.misses, o.l2.hits, o.l2.misses, o.bytes.hbm as u64);
            if !identities(&o, accessed) || got != (want.l1_hits, want.l1_misses, want.l2_hits, want.l2_misses, want.hbm_bytes) {
                return Err(format!("{name} with {l1}/{l2} lines: {got:?} vs oracle {want:?}"));
            }
            oracle_runs += 1;
        }
    }
    Ok(format!("identities exact on {sims} simulations, {oracle_runs} oracle comparisons agree"))
}

// ---- 9: directional claims on the traced sweep ----

struct Sweep {
    outcomes: Vec<(Version, SimOutcome, f64)>,
    report: AnalysisReport,
}

fn run_sweep() -> Result<Sweep, String> {
    let m = MachineDescription::bundled_v100();
    let roof = m.top_ceiling().label.clone();
    let p = synth_problem(42, 64, 64, 512).map_err(|e| e.to_string())?;
    let cfg = CacheConfig::desk();
    let runs: Vec<(Version, SimOutcome, f64, KernelMetrics)> = Version::ALL
        .par_iter()
        .map(|&v| -> rooflab::Result<_> {
            let extents: Vec<u64> = arrays(p.dims, v).iter().map(|a| a.extent).collect();
            let mut sim = CacheSim::new(&cfg, &extents)?;
            let mut accessed = Bytes(0.0, &mut sim);
            let art = run_version_into(&p, v, RunOptions::default(), &mut accessed)?;
            let counted = accessed.0;
            let o = sim.finish()?;
            let flops = total_flops(&art.counters, 1)? as f64;
            let rt = roofline_runtime(&m, flops, &o.bytes, &roof)?;
            Ok((v, o, counted, emit_metrics(&art, o.bytes, rt)?))
        })
        .collect::<rooflab::Result<_>>()
        .map_err(|e| e.to_string())?;
    let metrics: Vec<KernelMetrics> = runs.iter().map(|r| r.3.clone()).collect();
    let report = analyze(&metrics, &m, &TrajectoryOptions::default()).map_err(|e| e.to_string())?;
    Ok(Sweep { outcomes: runs.into_iter().map(|(v, o, b, _)| (v, o, b)).collect(), report })
}

/// Forwards to the simulator while summing access sizes independently.
struct Bytes<'a>(f64, &'a mut CacheSim);

impl TraceSink for Bytes<'_> {
    fn read(&mut self, array: u8, offset: u64, size: u8) {
        self.0 += size as f64;
        self.1.read(array, offset, size);
    }
}

fn c9(s: &Sweep) -> Check {
    let t = s.report.trajectories.first().ok_or("empty report")?;
    let entry = |l: &str| t.version(l).ok_or(format!("no {l}"));
    let hbm_ai = |l: &str| -> Result<f64, String> {
        Ok(entry(l)?.points.iter().find(|p| p.level == LevelName::Hbm).ok_or("no HBM point")?.ai)
    };
    let gap = |l: &str| -> Result<f64, String> { Ok(entry(l)?.gaps.ok_or("no gaps")?.l2_hbm) };
    let out = |v: Version| s.outcomes.iter().find(|o| o.0 == v).map(|o| o.1).ok_or("missing run");
    let (o0, o8) = (out(Version::V0)?, out(Version::V8)?);
    let class = |l: &str| -> Result<Bound, String> { entry(l)?.classification.get(&LevelName::Hbm).copied().ok_or("no class".into()) };
    let checks = [
        ("AI_HBM v4 > v0", hbm_ai("v4")? > hbm_ai("v0")?),
        ("L1 hit v8 >= v0", o8.l1.hit_rate >= o0.l1.hit_rate),
        ("L2 hit v8 >= v0", o8.l2.hit_rate >= o0.l2.hit_rate),
        ("v4 compute-bound", class("v4")? == Bound::Compute),
        ("v5 bandwidth-bound", class("v5")? == Bound::Bandwidth),
        ("gap v6 > v5", gap("v6")? > gap("v5")?),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let detail = format!(
        "AI_HBM v0 {:.3} v4 {:.3}, L1 {:.4}->{:.4}, L2 {:.4}->{:.4}, L2/HBM gap v5 {:.2} v6 {:.2}",
        hbm_ai("v0")?,
        hbm_ai("v4")?,
        o0.l1.hit_rate,
        o8.l1.hit_rate,
        o0.l2.hit_rate,
        o8.l2.hit_rate,
        gap("v5")?,
        gap("v6")?
    );
    if failed.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{} failed; {detail}", failed.join(", ")))
    }
}

// ---- 10: chart ----

fn c10(s: &Sweep) -> Check {
    let m = MachineDescription::bundled_v100();
    let peak = m.top_ceiling().peak;
    let hbm = m.level(LevelName::Hbm).map_err(|e| e.to_string())?.bandwidth;
    let ridge = RooflinePoint { label: "ridge".into(), level: LevelName::Hbm, ai: peak / hbm, throughput: peak, flops: 1.0 };
    let spec = ChartSpec { machine: m, points: vec![ridge], options: ChartOptions::default() };
    let svg = render(&spec).map_err(|e| e.to_string())?;
    let (ix, iy) = common::default_px(peak / hbm, peak);
    let cx = common::attr_of(&svg, &["<circle", "data-label=\"ridge\""], "cx").ok_or("no ridge dot")?;
    let cy = common::attr_of(&svg, &["<circle", "data-label=\"ridge\""], "cy").ok_or("no ridge dot")?;
    let off = (cx - ix).hypot(cy - iy);

    let sweep = ChartSpec::from_report(&s.report, ChartOptions::default());
    let a = render(&sweep).map_err(|e| e.to_string())?;
    let b = render(&sweep.clone()).map_err(|e| e.to_string())?;
    let dots = element_counts(&a).get("dot").copied().unwrap_or(0);
    let geom = validate_geometry(&a, &sweep).map_err(|e| e.to_string())?;
    ensure(
        off <= 1.0 && a == b && dots == 27 && geom.is_ok(),
        format!("ridge dot {off:.3} px off, re-render identical: {}, {dots} dots, {} mismatches", a == b, geom.mismatches.len()),
    )
}

fn report(n: usize, budget: Option<Duration>, took: Duration, r: Check) -> bool {
    let over = budget.is_some_and(|b| took > b);
    let (tag, msg) = match (&r, over) {
        (Ok(m), false) => ("PASS", m.clone()),
        (Ok(m), true) => ("FAIL", format!("{m}; over the {:?} budget", budget.unwrap())),
        (Err(m), _) => ("FAIL", m.clone()),
    };
    println!("criterion {n:>2}: {tag} ({:.2} s) {msg}", took.as_secs_f64());
    tag == "PASS"
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed())
}

fn main() {
    let secs = |s| Some(Duration::from_secs(s));
    let mut ok = true;
    ok &= {
        let (r, t) = timed(c1);
        report(1, None, t, r)
    };
    ok &= {
        let (r, t) = timed(c2);
        report(2, None, t, r)
    };
    ok &= {
        let (r, t) = timed(c3);
        report(3, None, t, r)
    };
    ok &= {
        let (r, t) = timed(c4);
        report(4, None, t, r)
    };
    ok &= {
        let (r, t) = timed(c5);
        report(5, secs(1), t, r)
    };
    ok &= {
        let (r, t) = timed(c6);
        report(6, secs(30), t, r)
    };
    ok &= {
        let (r, t) = timed(c7);
        report(7, secs(10), t, r)
    };

    let (sweep, sweep_time) = timed(run_sweep);
    let (c8_res, c8_time) = match &sweep {
        Ok(s) => timed(|| c8(&s.outcomes)),
        Err(e) => (Err(e.clone()), Duration::ZERO),
    };
    ok &= report(8, secs(10), c8_time, c8_res);
    let (c9_res, c9_time) = match &sweep {
        Ok(s) => timed(|| c9(s)),
        Err(e) => (Err(e.clone()), Duration::ZERO),
    };
    ok &= report(9, secs(60), sweep_time + c9_time, c9_res);
    let (c10_res, c10_time) = match &sweep {
        Ok(s) => timed(|| c10(s)),
        Err(e) => (Err(e.clone()), Duration::ZERO),
    };
    ok &= report(10, None, c10_time, c10_res);

    if !ok {
        std::process::exit(1);
    }
}
