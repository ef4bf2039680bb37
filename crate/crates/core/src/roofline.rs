//! Hierarchical Roofline points, bounds, locality gaps and trajectories.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::machine::{fma_adjusted_peak, fma_peak_fraction, machine_balance, LevelName, MachineDescription};
use crate::metrics::{KernelMetrics, LevelBytes};
use crate::occupancy::{theoretical_active_warps, LaunchConfig};
use crate::util::rel_close;
use crate::{Error, Result};

pub fn arithmetic_intensity(flops: f64, bytes: f64) -> Result<f64> {
    if !(bytes > 0.0) {
        return Err(Error::Domain(format!("arithmetic intensity needs bytes > 0, got {bytes}")));
    }
    if !(flops >= 0.0) {
        return Err(Error::Domain(format!("flops must be >= 0, got {flops}")));
    }
    Ok(flops / bytes)
}

pub fn achieved_throughput(flops: f64, runtime: f64) -> Result<f64> {
    if !(runtime > 0.0) {
        return Err(Error::Domain(format!("throughput needs runtime > 0, got {runtime}")));
    }
    if !(flops >= 0.0) {
        return Err(Error::Domain(format!("flops must be >= 0, got {flops}")));
    }
    Ok(flops / runtime)
}

/// min(peak, ai x bandwidth) for one level under one ceiling.
pub fn attainable(m: &MachineDescription, level: LevelName, ai: f64, ceiling: &str) -> Result<f64> {
    let peak = m.ceiling(ceiling)?.peak;
    let bw = m.level(level)?.bandwidth;
    Ok(peak.min(ai * bw))
}

/// Time a kernel needs when it runs exactly at the roof: the slowest of its
/// compute time and its transfer time at each level.
pub fn roofline_runtime(m: &MachineDescription, flops: f64, bytes: &LevelBytes, ceiling: &str) -> Result<f64> {
    let mut t = flops / m.ceiling(ceiling)?.peak;
    for l in &m.levels {
        t = t.max(bytes.get(l.name) / l.bandwidth);
    }
    Ok(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bound {
    #[serde(rename = "bandwidth-bound")]
    Bandwidth,
    #[serde(rename = "compute-bound")]
    Compute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RooflinePoint {
    pub label: String,
    pub level: LevelName,
    pub ai: f64,
    pub throughput: f64,
    pub flops: f64,
}

/// Bandwidth-bound strictly left of the ridge; the ridge itself counts as
/// compute-bound.
pub fn classify(point: &RooflinePoint, m: &MachineDescription, ceiling: &str) -> Result<Bound> {
    let balance = machine_balance(m.ceiling(ceiling)?.peak, m.level(point.level)?.bandwidth)?;
    Ok(if point.ai < balance { Bound::Bandwidth } else { Bound::Compute })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalityGaps {
    /// ai_L2 / ai_L1 = bytes_L1 / bytes_L2
    pub l1_l2: f64,
    /// ai_HBM / ai_L2 = bytes_L2 / bytes_HBM
    pub l2_hbm: f64,
}

pub fn locality_gaps(points: &[RooflinePoint]) -> Result<LocalityGaps> {
    let first = points.first().ok_or_else(|| Error::Domain("locality gaps need the per-level points of one version".into()))?;
    for p in points {
        if p.label != first.label {
            return Err(Error::Domain(format!("mixed labels '{}' and '{}'", first.label, p.label)));
        }
        if !rel_close(p.flops, first.flops, 1e-12) {
            return Err(Error::Domain(format!("points of '{}' disagree on FLOP count", p.label)));
        }
    }
    let ai = |l: LevelName| {
        points
            .iter()
            .find(|p| p.level == l)
            .map(|p| p.ai)
            .ok_or_else(|| Error::Lookup { kind: "memory level point", name: l.to_string() })
    };
    let (l1, l2, hbm) = (ai(LevelName::L1)?, ai(LevelName::L2)?, ai(LevelName::Hbm)?);
    Ok(LocalityGaps { l1_l2: l2 / l1, l2_hbm: hbm / l2 })
}

/// One point per memory level, or `None` when the record has no bytes.
pub fn points_for(m: &KernelMetrics, div_weight: u64) -> Result<Option<Vec<RooflinePoint>>> {
    let Some(bytes) = m.bytes else { return Ok(None) };
    let flops = m.flops(div_weight)? as f64;
    let throughput = achieved_throughput(flops, m.runtime)?;
    LevelName::ALL
        .iter()
        .map(|&level| {
            Ok(RooflinePoint {
                label: m.label.clone(),
                level,
                ai: arithmetic_intensity(flops, bytes.get(level)).map_err(|e| Error::Domain(format!("{} at {level}: {e}", m.label)))?,
                throughput,
                flops,
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOptions {
    /// Roof used for classification and peak fractions; highest when absent.
    pub ceiling: Option<String>,
    pub div_weight: u64,
    pub fma_ratio: Option<f64>,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        TrajectoryOptions { ceiling: None, div_weight: 1, fma_ratio: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VersionEntry {
    pub label: String,
    pub runtime: f64,
    pub flops: f64,
    pub throughput: f64,
    pub peak_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fma_adjusted_fraction: Option<f64>,
    /// runtime(previous) / runtime(this); absent on the first entry.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_speedup: Option<f64>,
    pub points: Vec<RooflinePoint>,
    pub classification: BTreeMap<LevelName, Bound>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaps: Option<LocalityGaps>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub registers_per_thread: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads_per_block: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theoretical_warps_per_sm: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub achieved_warps_per_sm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub system: String,
    pub ceiling: String,
    pub ceiling_peak: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fma_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fma_adjusted_peak: Option<f64>,
    pub div_weight: u64,
    pub versions: Vec<VersionEntry>,
    pub cumulative_speedup: f64,
    pub notes: Vec<String>,
}

impl TrajectoryReport {
    pub fn step_speedups(&self) -> Vec<f64> {
        self.versions.iter().filter_map(|v| v.step_speedup).collect()
    }

    pub fn version(&self, label: &str) -> Option<&VersionEntry> {
        self.versions.iter().find(|v| v.label == label)
    }
}

const SPEEDUP_NOTE: &str =
    "speedups compare runtimes, not FLOP rates, because the FLOP count itself changes between versions";
const WARPS_NOTE: &str = "achieved_warps_per_sm is carried from the input as measured; theoretical_warps_per_sm \
                          comes from the register, thread and block limits of the machine's SM resources";

/// Trajectory over records in the given order.
pub fn trajectory(metrics: &[KernelMetrics], m: &MachineDescription, opts: &TrajectoryOptions) -> Result<TrajectoryReport> {
    let first = metrics.first().ok_or_else(|| Error::Domain("trajectory needs at least one record".into()))?;
    let ceiling = m.ceiling_or_top(opts.ceiling.as_deref())?.clone();
    let adjusted = opts.fma_ratio.map(|r| fma_adjusted_peak(ceiling.peak, r)).transpose()?;
    let res = m.sm_resources();

    let mut versions = Vec::with_capacity(metrics.len());
    for (i, rec) in metrics.iter().enumerate() {
        rec.validate().map_err(|e| Error::invalid(format!("record {i} ('{}')", rec.label), e.to_string()))?;
        let flops = rec.flops(opts.div_weight)? as f64;
        let throughput = achieved_throughput(flops, rec.runtime)?;
        let points = points_for(rec, opts.div_weight)?.unwrap_or_default();
        let mut classification = BTreeMap::new();
        for p in &points {
            classification.insert(p.level, classify(p, m, &ceiling.label)?);
        }
        let gaps = if points.is_empty() { None } else { Some(locality_gaps(&points)?) };
        let theoretical = match (rec.registers_per_thread, rec.threads_per_block) {
            (Some(r), Some(t)) => theoretical_active_warps(LaunchConfig { registers_per_thread: r, threads_per_block: t }, &res)
                .ok()
                .map(|o| o.warps),
            _ => None,
        };
        versions.push(VersionEntry {
            label: rec.label.clone(),
            runtime: rec.runtime,
            flops,
            throughput,
            peak_fraction: throughput / ceiling.peak,
            fma_adjusted_fraction: adjusted.map(|a| throughput / a),
            step_speedup: (i > 0).then(|| metrics[i - 1].runtime / rec.runtime),
            points,
            classification,
            gaps,
            registers_per_thread: rec.registers_per_thread,
            threads_per_block: rec.threads_per_block,
            theoretical_warps_per_sm: theoretical,
            achieved_warps_per_sm: rec.achieved_warps_per_sm,
        });
    }
    let last = &metrics[metrics.len() - 1];
    Ok(TrajectoryReport {
        system: first.system.clone(),
        ceiling: ceiling.label.clone(),
        ceiling_peak: ceiling.peak,
        fma_ratio: opts.fma_ratio,
        fma_adjusted_peak: adjusted,
        div_weight: opts.div_weight,
        versions,
        cumulative_speedup: first.runtime / last.runtime,
        notes: vec![SPEEDUP_NOTE.to_string(), WARPS_NOTE.to_string()],
    })
}

/// Report over a whole metrics file: the machine plus one trajectory per
/// system, systems in order of first appearance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub machine: MachineDescription,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fma_peak_fraction: Option<f64>,
    pub trajectories: Vec<TrajectoryReport>,
}

impl AnalysisReport {
    pub fn system(&self, name: &str) -> Option<&TrajectoryReport> {
        self.trajectories.iter().find(|t| t.system == name)
    }

    pub fn all_points(&self) -> Vec<RooflinePoint> {
        self.trajectories.iter().flat_map(|t| t.versions.iter().flat_map(|v| v.points.iter().cloned())).collect()
    }
}

pub fn analyze(metrics: &[KernelMetrics], m: &MachineDescription, opts: &TrajectoryOptions) -> Result<AnalysisReport> {
    if metrics.is_empty() {
        return Err(Error::Domain("metrics file holds no records".into()));
    }
    let mut systems: Vec<&str> = Vec::new();
    for r in metrics {
        if !systems.contains(&r.system.as_str()) {
            systems.push(&r.system);
        }
    }
    let trajectories = systems
        .iter()
        .map(|s| {
            let group: Vec<KernelMetrics> = metrics.iter().filter(|r| r.system == *s).cloned().collect();
            trajectory(&group, m, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnalysisReport {
        machine: m.clone(),
        fma_peak_fraction: opts.fma_ratio.map(fma_peak_fraction).transpose()?,
        trajectories,
    })
}
