//! The `rooflab` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::cache::{hit_rate_report, simulate, CacheConfig, CacheSim, HitRateTable, SimOutcome};
use crate::chart::{render, ChartOptions, ChartSpec};
use crate::gpp::trace::{AccessTrace, TraceWriter};
use crate::gpp::{
    arrays, emit_metrics, reference_result, run_version_into, synth_problem, BlockSizes, BranchCounts, Dims, GPPResult,
    GoldenResult, LaunchMeta, RunOptions, Version, DEFAULT_WAVE_THREADS,
};
use crate::machine::{fma_adjusted_peak, fma_peak_fraction, load_machine, LevelName, MachineDescription};
use crate::metrics::{aggregate, import_profiler_csv, load_metrics, metrics_to_json, InstructionCounters, KernelMetrics, ProfilerMapping};
use crate::occupancy::{theoretical_active_warps, LaunchConfig, SMResources};
use crate::roofline::{analyze, roofline_runtime, AnalysisReport, TrajectoryOptions};
use crate::util::{read_to_string, to_json_pretty, write_atomic};
use crate::{Error, Result};

pub const MACHINE_ENV: &str = "ROOFLAB_MACHINE";

/// Versions must match the reference this closely, per complex element.
pub const EQUIVALENCE_TOL: f64 = 1e-10;

#[derive(Parser, Debug)]
#[command(name = "rooflab", version, about = "Hierarchical Roofline toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RuntimeSource {
    /// Time the kernel would take running exactly at the machine's roof.
    Roofline,
    /// Host wall time of the scalar run.
    Measured,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Print peaks, balances and FMA-adjusted ceilings of a machine file.
    Machine {
        /// Machine description; falls back to $ROOFLAB_MACHINE, then the bundled V100.
        file: Option<PathBuf>,
        #[arg(long)]
        fma_ratio: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Run GPP kernel versions, simulate their caches and write metrics.
    GppRun {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// NBxNGxNC, or a preset: desk (64x64x512), si214 (1000x1000x10000).
        #[arg(long, default_value = "desk")]
        dims: Dims,
        /// e.g. all, v0..v8, v3, v1,v4
        #[arg(long, default_value = "all")]
        versions: String,
        /// Also write each version's binary access trace.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        out: PathBuf,
        /// Cache preset (desk, v100) or JSON file.
        #[arg(long, default_value = "desk")]
        cache: String,
        /// Machine for the roofline runtime model.
        #[arg(long)]
        machine: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = RuntimeSource::Roofline)]
        runtime: RuntimeSource,
        #[arg(long, default_value_t = DEFAULT_WAVE_THREADS)]
        wave_threads: u32,
        /// Tally multiply-add pairs as separate dmul and dadd.
        #[arg(long)]
        no_contract: bool,
        /// Golden result file to compare the reference evaluation against.
        #[arg(long)]
        golden: Option<PathBuf>,
    },
    /// Simulate a trace file through the two-level cache.
    Simulate {
        trace: PathBuf,
        /// Cache preset (desk, v100) or JSON file (bare config or machine file with a cache block).
        #[arg(long, default_value = "desk")]
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the Roofline trajectory report for a metrics file.
    Analyze {
        metrics: PathBuf,
        machine: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        fma_ratio: Option<f64>,
        /// Ceiling label used as the roof; the highest by default.
        #[arg(long)]
        ceiling: Option<String>,
        #[arg(long, default_value_t = 1)]
        div_weight: u64,
        /// Keep only records of this system.
        #[arg(long)]
        system: Option<String>,
    },
    /// Render a report as an SVG Roofline chart.
    Chart {
        report: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        system: Option<String>,
        #[arg(long)]
        title: Option<String>,
        #[arg(long)]
        no_arrows: bool,
        #[arg(long)]
        no_labels: bool,
    },
    /// Convert a profiler CSV export into a metrics file.
    Import {
        csv: PathBuf,
        /// Column mapping JSON; Nsight Compute raw-page names by default.
        #[arg(long)]
        mapping: Option<PathBuf>,
        /// Also append one aggregate record with this label.
        #[arg(long)]
        aggregate: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Theoretical active warps per SM for a launch shape.
    Occupancy {
        #[arg(long)]
        regs: u32,
        #[arg(long)]
        block: u32,
        /// SM resources JSON, or a machine file with an sm_resources block.
        #[arg(long)]
        resources: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Usage(_)) {
                2
            } else {
                1
            }
        }
    }
}

/// Runs one command, returning what it prints on success.
pub fn execute(cmd: Command) -> Result<String> {
    match cmd {
        Command::Machine { file, fma_ratio, json } => cmd_machine(file.as_deref(), fma_ratio, json),
        Command::GppRun { seed, dims, versions, trace, out, cache, machine, runtime, wave_threads, no_contract, golden } => {
            let args = GppRunArgs {
                seed,
                dims,
                versions: Version::parse_list(&versions).map_err(|e| Error::Usage(e.to_string()))?,
                trace,
                out,
                cache: CacheConfig::resolve(&cache)?,
                machine: resolve_machine(machine.as_deref())?,
                runtime,
                opts: RunOptions { contract: !no_contract, wave_threads },
                golden,
            };
            cmd_gpp_run(&args)
        }
        Command::Simulate { trace, config, out } => cmd_simulate(&trace, &config, out.as_deref()),
        Command::Analyze { metrics, machine, out, fma_ratio, ceiling, div_weight, system } => {
            let opts = TrajectoryOptions { ceiling, div_weight, fma_ratio };
            cmd_analyze(&metrics, machine.as_deref(), &opts, system.as_deref(), out.as_deref())
        }
        Command::Chart { report, out, system, title, no_arrows, no_labels } => {
            let options = ChartOptions { arrows: !no_arrows, ceiling_labels: !no_labels, title, ..ChartOptions::default() };
            cmd_chart(&report, system.as_deref(), options, out.as_deref())
        }
        Command::Import { csv, mapping, aggregate, out } => cmd_import(&csv, mapping.as_deref(), aggregate.as_deref(), out.as_deref()),
        Command::Occupancy { regs, block, resources, json } => cmd_occupancy(regs, block, resources.as_deref(), json),
    }
}

/// Explicit path, else $ROOFLAB_MACHINE, else the bundled V100.
pub fn resolve_machine(path: Option<&Path>) -> Result<MachineDescription> {
    if let Some(p) = path {
        return load_machine(p);
    }
    match std::env::var_os(MACHINE_ENV) {
        Some(p) if !p.is_empty() => load_machine(PathBuf::from(p)),
        _ => Ok(MachineDescription::bundled_v100()),
    }
}

fn emit(out: Option<&Path>, text: String) -> Result<String> {
    match out {
        Some(p) => {
            write_atomic(p, text.as_bytes())?;
            Ok(String::new())
        }
        None => Ok(text),
    }
}

#[derive(Serialize)]
struct MachineReport {
    name: String,
    theoretical_peak: f64,
    ceilings: Vec<CeilingRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fma_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fma_peak_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fma_adjusted_peak: Option<f64>,
}

#[derive(Serialize)]
struct CeilingRow {
    label: String,
    peak: f64,
    fraction_of_theoretical: f64,
    balance: Vec<(LevelName, f64)>,
}

pub fn cmd_machine(file: Option<&Path>, fma_ratio: Option<f64>, json: bool) -> Result<String> {
    let m = resolve_machine(file)?;
    let peak = m.theoretical_peak()?;
    let fraction = fma_ratio.map(fma_peak_fraction).transpose()?;
    let adjusted = fma_ratio.map(|r| fma_adjusted_peak(peak, r)).transpose()?;
    let mut rows: Vec<CeilingRow> = Vec::new();
    let mut ceilings: Vec<(String, f64)> = m.ceilings.iter().map(|c| (c.label.clone(), c.peak)).collect();
    if let (Some(r), Some(a)) = (fma_ratio, adjusted) {
        ceilings.push((format!("FMA-adjusted (ratio {r})"), a));
    }
    for (label, p) in ceilings {
        let balance = m.levels.iter().map(|l| Ok((l.name, crate::machine::machine_balance(p, l.bandwidth)?))).collect::<Result<_>>()?;
        rows.push(CeilingRow { label, peak: p, fraction_of_theoretical: p / peak, balance });
    }
    let report = MachineReport { name: m.name.clone(), theoretical_peak: peak, ceilings: rows, fma_ratio, fma_peak_fraction: fraction, fma_adjusted_peak: adjusted };
    if json {
        return Ok(to_json_pretty(&report));
    }

    let mut s = String::new();
    let _ = writeln!(s, "machine            {}", report.name);
    let _ = writeln!(s, "theoretical peak   {:.4e} FLOP/s ({} units x {} lanes x {} ops x {} Hz)", peak, m.num_units, m.lanes_per_unit, m.ops_per_lane_cycle, m.clock_hz);
    for l in &m.levels {
        let _ = writeln!(s, "{:<18} {:.4e} B/s{}", format!("{} bandwidth", l.name), l.bandwidth, l.note.as_deref().map(|n| format!("  ({n})")).unwrap_or_default());
    }
    if let (Some(r), Some(f), Some(a)) = (fma_ratio, fraction, adjusted) {
        let _ = writeln!(s, "FMA ratio          {r}");
        let _ = writeln!(s, "peak fraction      {:.2}% = (2 x {r} + 1 - {r}) / 2", f * 100.0);
        let _ = writeln!(s, "adjusted peak      {a:.4e} FLOP/s");
    }
    let _ = writeln!(s);
    let _ = write!(s, "{:<28} {:>12} {:>9}", "ceiling", "FLOP/s", "of peak");
    for l in &m.levels {
        let _ = write!(s, " {:>10}", format!("bal {}", l.name));
    }
    let _ = writeln!(s);
    for r in &report.ceilings {
        let _ = write!(s, "{:<28} {:>12.4e} {:>8.2}%", r.label, r.peak, r.fraction_of_theoretical * 100.0);
        for (_, b) in &r.balance {
            let _ = write!(s, " {:>10.3}", b);
        }
        let _ = writeln!(s);
    }
    Ok(s)
}

pub struct GppRunArgs {
    pub seed: u64,
    pub dims: Dims,
    pub versions: Vec<Version>,
    pub trace: bool,
    pub out: PathBuf,
    pub cache: CacheConfig,
    pub machine: MachineDescription,
    pub runtime: RuntimeSource,
    pub opts: RunOptions,
    pub golden: Option<PathBuf>,
}

#[derive(Serialize)]
struct RunRecord {
    version: Version,
    counters: InstructionCounters,
    branches: BranchCounts,
    launch: LaunchMeta,
    #[serde(skip_serializing_if = "Option::is_none")]
    blocks: Option<BlockSizes>,
    wave_threads: u32,
    contract: bool,
    result: GPPResult,
    max_rel_error: f64,
    cache: SimOutcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace_file: Option<String>,
    /// Only with measured runtimes, so that repeated runs write identical files.
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_seconds: Option<f64>,
}

#[derive(Serialize)]
struct GoldenCheck {
    seed: u64,
    dims: Dims,
    tolerance: f64,
    reference: GPPResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    golden_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    golden_max_rel_error: Option<f64>,
    versions: Vec<(Version, f64)>,
    pass: bool,
}

#[derive(Serialize)]
struct CacheSummary {
    config: CacheConfig,
    hit_rates: HitRateTable,
}

pub fn cmd_gpp_run(a: &GppRunArgs) -> Result<String> {
    let d = a.dims;
    let problem = synth_problem(a.seed, d.nbands, d.ngpown, d.ncouls)?;
    let reference = reference_result(&problem);
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let roof = a.machine.top_ceiling().label.clone();

    let runs = a
        .versions
        .par_iter()
        .map(|&v| -> Result<(RunRecord, KernelMetrics)> {
            let extents: Vec<u64> = arrays(d, v).iter().map(|x| x.extent).collect();
            let mut sim = CacheSim::new(&a.cache, &extents)?;
            let (art, trace_file) = if a.trace {
                let name = format!("{v}.trace");
                let mut w = TraceWriter::create(a.out.join(&name), &arrays(d, v), a.opts.wave_threads)?;
                let art = run_version_into(&problem, v, a.opts, (&mut sim, &mut w))?;
                w.finish()?;
                (art, Some(name))
            } else {
                (run_version_into(&problem, v, a.opts, &mut sim)?, None)
            };
            let outcome = sim.finish()?;
            let flops = crate::metrics::total_flops(&art.counters, 1)? as f64;
            let runtime = match a.runtime {
                RuntimeSource::Roofline => roofline_runtime(&a.machine, flops, &outcome.bytes, &roof)?,
                RuntimeSource::Measured => art.wall_seconds,
            };
            let metrics = emit_metrics(&art, outcome.bytes, runtime)?;
            let record = RunRecord {
                version: v,
                counters: art.counters,
                branches: art.branches,
                launch: art.launch,
                blocks: art.blocks,
                wave_threads: art.wave_threads,
                contract: a.opts.contract,
                max_rel_error: art.result.max_rel_error(&reference),
                result: art.result,
                cache: outcome,
                trace_file,
                wall_seconds: (a.runtime == RuntimeSource::Measured).then_some(art.wall_seconds),
            };
            Ok((record, metrics))
        })
        .collect::<Result<Vec<_>>>()?;

    let golden = a.golden.as_ref().map(GoldenResult::load).transpose()?;
    let golden_err = match &golden {
        Some(g) if g.seed != a.seed || g.dims != d => {
            return Err(Error::Domain(format!("golden file is for seed {} dims {}, not seed {} dims {}", g.seed, g.dims.tag(), a.seed, d.tag())))
        }
        Some(g) => Some(reference.max_rel_error(&g.result)),
        None => None,
    };
    let pass = runs.iter().all(|(r, _)| r.max_rel_error <= EQUIVALENCE_TOL) && golden_err.map_or(true, |e| e <= EQUIVALENCE_TOL);
    let check = GoldenCheck {
        seed: a.seed,
        dims: d,
        tolerance: EQUIVALENCE_TOL,
        reference: reference.clone(),
        golden_file: a.golden.as_ref().map(|p| p.display().to_string()),
        golden_max_rel_error: golden_err,
        versions: runs.iter().map(|(r, _)| (r.version, r.max_rel_error)).collect(),
        pass,
    };

    let outcomes: Vec<(String, SimOutcome)> = runs.iter().map(|(r, _)| (r.version.to_string(), r.cache)).collect();
    let hit_rates = hit_rate_report(&outcomes)?;
    let metrics: Vec<KernelMetrics> = runs.iter().map(|(_, m)| m.clone()).collect();
    let records: Vec<&RunRecord> = runs.iter().map(|(r, _)| r).collect();

    write_atomic(&a.out.join("metrics.json"), metrics_to_json(&metrics).as_bytes())?;
    write_atomic(&a.out.join("runs.json"), to_json_pretty(&records).as_bytes())?;
    write_atomic(&a.out.join("cache.json"), to_json_pretty(&CacheSummary { config: a.cache, hit_rates: hit_rates.clone() }).as_bytes())?;
    write_atomic(&a.out.join("golden-check.json"), to_json_pretty(&check).as_bytes())?;

    let mut s = String::new();
    let _ = writeln!(s, "problem {} ({} tuples), reference achtemp[0] = {:.6e}", problem.tag, d.tuples(), reference.achtemp[0]);
    let _ = writeln!(s, "{:<4} {:>14} {:>10} {:>10} {:>10} {:>8} {:>8} {:>10}", "ver", "FLOPs", "AI L1", "AI L2", "AI HBM", "L1 hit", "L2 hit", "rel err");
    for (r, m) in &runs {
        let f = m.flops(1)? as f64;
        let b = r.cache.bytes;
        let _ = writeln!(
            s,
            "{:<4} {:>14} {:>10.3} {:>10.3} {:>10.3} {:>8.4} {:>8.4} {:>10.2e}",
            r.version.label(),
            f as u64,
            f / b.l1,
            f / b.l2,
            f / b.hbm,
            r.cache.l1.hit_rate,
            r.cache.l2.hit_rate,
            r.max_rel_error
        );
    }
    if let Some(e) = golden_err {
        let _ = writeln!(s, "reference vs golden file: max relative error {e:.2e}");
    }
    let _ = writeln!(s, "wrote {}", a.out.display());
    if !pass {
        let worst = runs.iter().map(|(r, _)| r.max_rel_error).fold(golden_err.unwrap_or(0.0), f64::max);
        eprint!("{s}");
        return Err(Error::Domain(format!("results diverge from the reference: max relative error {worst:.3e} > {EQUIVALENCE_TOL:e}")));
    }
    Ok(s)
}

pub fn cmd_simulate(trace: &Path, config: &str, out: Option<&Path>) -> Result<String> {
    let cfg = CacheConfig::resolve(config)?;
    let t = AccessTrace::read_from(trace)?;
    let outcome = simulate(&t, &cfg)?;
    emit(out, to_json_pretty(&outcome))
}

pub fn cmd_analyze(metrics: &Path, machine: Option<&Path>, opts: &TrajectoryOptions, system: Option<&str>, out: Option<&Path>) -> Result<String> {
    let m = resolve_machine(machine)?;
    let mut records = load_metrics(metrics)?;
    if let Some(sys) = system {
        records.retain(|r| r.system == sys);
        if records.is_empty() {
            return Err(Error::Domain(format!("no records for system '{sys}'")));
        }
    }
    let report = analyze(&records, &m, opts)?;
    emit(out, to_json_pretty(&report))
}

pub fn cmd_chart(report: &Path, system: Option<&str>, options: ChartOptions, out: Option<&Path>) -> Result<String> {
    let mut r: AnalysisReport = serde_json::from_str(&read_to_string(report)?)
        .map_err(|source| Error::Json { context: report.display().to_string(), source })?;
    r.machine.validate()?;
    if let Some(sys) = system {
        r.trajectories.retain(|t| t.system == sys);
        if r.trajectories.is_empty() {
            return Err(Error::Domain(format!("report has no system '{sys}'")));
        }
    }
    let spec = ChartSpec::from_report(&r, options);
    emit(out, render(&spec)?)
}

pub fn cmd_import(csv: &Path, mapping: Option<&Path>, aggregate_label: Option<&str>, out: Option<&Path>) -> Result<String> {
    let mapping = match mapping {
        Some(p) => ProfilerMapping::load(p)?,
        None => ProfilerMapping::default_ncu(),
    };
    let mut records = import_profiler_csv(csv, &mapping)?;
    if let Some(label) = aggregate_label {
        let agg = aggregate(&records, label)?;
        records.push(agg);
    }
    emit(out, metrics_to_json(&records))
}

pub fn load_resources(path: &Path) -> Result<SMResources> {
    let text = read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|source| Error::Json { context: path.display().to_string(), source })?;
    let inner = value.get("sm_resources").cloned().unwrap_or(value);
    let res: SMResources = serde_json::from_value(inner).map_err(|source| Error::Json { context: path.display().to_string(), source })?;
    res.validate()?;
    Ok(res)
}

pub fn cmd_occupancy(regs: u32, block: u32, resources: Option<&Path>, json: bool) -> Result<String> {
    let res = match resources {
        Some(p) => load_resources(p)?,
        None => SMResources::default(),
    };
    let occ = theoretical_active_warps(LaunchConfig { registers_per_thread: regs, threads_per_block: block }, &res)?;
    if json {
        return Ok(to_json_pretty(&occ));
    }
    Ok(format!(
        "registers/thread {regs}, threads/block {block}\nregisters/warp   {}\nblocks/SM        {}\nwarps/SM         {} of {} ({:.1}%)\nlimited by       {}\n",
        occ.regs_per_warp,
        occ.blocks,
        occ.warps,
        res.max_warps,
        100.0 * occ.warps as f64 / res.max_warps as f64,
        occ.limiter
    ))
}
