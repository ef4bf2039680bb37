//! Machine description: memory-level bandwidths, compute ceilings and the
//! parameters they derive from.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cache::CacheConfig;
use crate::occupancy::SMResources;
use crate::util::{read_to_string, rel_close, to_json_pretty};
use crate::{Error, Result};

/// Relative slack allowed between a stored ceiling and the peak derived from
/// the unit/lane/clock parameters.
pub const PEAK_REL_TOL: f64 = 1e-6;

const V100_MACHINE: &str = include_str!("../data/v100.machine");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LevelName {
    L1,
    L2,
    #[serde(rename = "HBM")]
    Hbm,
}

impl LevelName {
    /// Innermost first.
    pub const ALL: [LevelName; 3] = [LevelName::L1, LevelName::L2, LevelName::Hbm];

    pub fn as_str(self) -> &'static str {
        match self {
            LevelName::L1 => "L1",
            LevelName::L2 => "L2",
            LevelName::Hbm => "HBM",
        }
    }
}

impl fmt::Display for LevelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LevelName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "L1" => Ok(LevelName::L1),
            "L2" => Ok(LevelName::L2),
            "HBM" | "DRAM" => Ok(LevelName::Hbm),
            _ => Err(Error::Lookup { kind: "memory level", name: s.to_string() }),
        }
    }
}

/// Only FP64 paths are implemented; the tag keeps files forward compatible.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Precision {
    #[default]
    FP64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryLevel {
    pub name: LevelName,
    #[serde(rename = "bandwidth_bytes_per_s")]
    pub bandwidth: f64,
    /// Free-form provenance remark, e.g. flagging a placeholder value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComputeCeiling {
    #[serde(default)]
    pub precision: Precision,
    pub label: String,
    #[serde(rename = "peak_flop_per_s")]
    pub peak: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineDescription {
    pub name: String,
    pub num_units: u32,
    pub lanes_per_unit: u32,
    pub ops_per_lane_cycle: u32,
    pub clock_hz: f64,
    pub levels: Vec<MemoryLevel>,
    pub ceilings: Vec<ComputeCeiling>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sm_resources: Option<SMResources>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<CacheConfig>,
}

/// Peak FLOP/s of `num_units` units of `lanes_per_unit` lanes, each retiring
/// `ops_per_lane_cycle` FLOPs per cycle at `clock_hz`.
pub fn theoretical_peak(num_units: u32, lanes_per_unit: u32, ops_per_lane_cycle: u32, clock_hz: f64) -> Result<f64> {
    for (name, v) in [("num_units", num_units), ("lanes_per_unit", lanes_per_unit), ("ops_per_lane_cycle", ops_per_lane_cycle)] {
        if v == 0 {
            return Err(Error::Domain(format!("{name} must be > 0")));
        }
    }
    if !(clock_hz.is_finite() && clock_hz > 0.0) {
        return Err(Error::Domain(format!("clock_hz must be a positive finite frequency, got {clock_hz}")));
    }
    Ok(num_units as f64 * lanes_per_unit as f64 * ops_per_lane_cycle as f64 * clock_hz)
}

/// Fraction of peak reachable when a share `fma_ratio` of FP instructions are
/// FMAs and the rest retire one FLOP each: (2r + (1 - r)) / 2.
pub fn fma_peak_fraction(fma_ratio: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&fma_ratio) {
        return Err(Error::Domain(format!("fma_ratio must lie in [0, 1], got {fma_ratio}")));
    }
    Ok((2.0 * fma_ratio + (1.0 - fma_ratio)) / 2.0)
}

pub fn fma_adjusted_peak(peak: f64, fma_ratio: f64) -> Result<f64> {
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::Domain(format!("peak must be > 0, got {peak}")));
    }
    Ok(peak * fma_peak_fraction(fma_ratio)?)
}

/// FLOPs per byte at the ridge point of `peak` against `bandwidth`.
pub fn machine_balance(peak: f64, bandwidth: f64) -> Result<f64> {
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::Domain(format!("bandwidth must be > 0, got {bandwidth}")));
    }
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::Domain(format!("peak must be > 0, got {peak}")));
    }
    Ok(peak / bandwidth)
}

pub fn load_machine(path: impl AsRef<Path>) -> Result<MachineDescription> {
    let path = path.as_ref();
    MachineDescription::from_json_str(&read_to_string(path)?)
        .map_err(|e| match e {
            Error::Json { source, .. } => Error::Json { context: path.display().to_string(), source },
            other => other,
        })
}

impl MachineDescription {
    /// The V100 description shipped with the crate.
    pub fn bundled_v100() -> Self {
        Self::from_json_str(V100_MACHINE).expect("bundled v100.machine is valid")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let m: MachineDescription =
            serde_json::from_str(text).map_err(|source| Error::Json { context: "machine description".into(), source })?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        to_json_pretty(self)
    }

    pub fn theoretical_peak(&self) -> Result<f64> {
        theoretical_peak(self.num_units, self.lanes_per_unit, self.ops_per_lane_cycle, self.clock_hz)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::invalid("name", "must be non-empty"));
        }
        let derived = self.theoretical_peak().map_err(|e| Error::invalid("num_units/lanes_per_unit/ops_per_lane_cycle/clock_hz", e.to_string()))?;

        if self.levels.is_empty() {
            return Err(Error::invalid("levels", "at least one memory level is required"));
        }
        for (i, l) in self.levels.iter().enumerate() {
            if !(l.bandwidth.is_finite() && l.bandwidth > 0.0) {
                return Err(Error::invalid(format!("levels[{i}].bandwidth_bytes_per_s"), format!("must be > 0, got {}", l.bandwidth)));
            }
            if self.levels[..i].iter().any(|o| o.name == l.name) {
                return Err(Error::invalid(format!("levels[{i}].name"), format!("duplicate level {}", l.name)));
            }
        }

        if self.ceilings.is_empty() {
            return Err(Error::invalid("ceilings", "at least one compute ceiling is required"));
        }
        for (i, c) in self.ceilings.iter().enumerate() {
            if c.label.trim().is_empty() {
                return Err(Error::invalid(format!("ceilings[{i}].label"), "must be non-empty"));
            }
            if !(c.peak.is_finite() && c.peak > 0.0) {
                return Err(Error::invalid(format!("ceilings[{i}].peak_flop_per_s"), format!("must be > 0, got {}", c.peak)));
            }
            if c.peak > derived * (1.0 + PEAK_REL_TOL) {
                return Err(Error::invalid(
                    format!("ceilings[{i}].peak_flop_per_s"),
                    format!("{} exceeds the derived theoretical peak {derived}", c.peak),
                ));
            }
            if self.ceilings[..i].iter().any(|o| o.label == c.label) {
                return Err(Error::invalid(format!("ceilings[{i}].label"), format!("duplicate ceiling '{}'", c.label)));
            }
        }
        if !self.ceilings.iter().any(|c| rel_close(c.peak, derived, PEAK_REL_TOL)) {
            return Err(Error::invalid(
                "ceilings",
                format!("no ceiling matches the derived theoretical peak {derived} (units x lanes x ops x clock)"),
            ));
        }

        if let Some(r) = &self.sm_resources {
            r.validate().map_err(|e| Error::invalid("sm_resources", e.to_string()))?;
        }
        if let Some(c) = &self.cache {
            c.validate().map_err(|e| Error::invalid("cache", e.to_string()))?;
        }
        Ok(())
    }

    pub fn level(&self, name: LevelName) -> Result<&MemoryLevel> {
        self.levels
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::Lookup { kind: "memory level", name: name.to_string() })
    }

    pub fn ceiling(&self, label: &str) -> Result<&ComputeCeiling> {
        self.ceilings
            .iter()
            .find(|c| c.label == label)
            .ok_or_else(|| Error::Lookup { kind: "compute ceiling", name: label.to_string() })
    }

    /// Highest ceiling; the default roof for classification and charts.
    pub fn top_ceiling(&self) -> &ComputeCeiling {
        let mut best = &self.ceilings[0];
        for c in &self.ceilings[1..] {
            if c.peak > best.peak {
                best = c;
            }
        }
        best
    }

    /// Ceiling by label, or the top ceiling when `label` is `None`.
    pub fn ceiling_or_top(&self, label: Option<&str>) -> Result<&ComputeCeiling> {
        match label {
            Some(l) => self.ceiling(l),
            None => Ok(self.top_ceiling()),
        }
    }

    pub fn balance(&self, level: LevelName, ceiling: &str) -> Result<f64> {
        machine_balance(self.ceiling(ceiling)?.peak, self.level(level)?.bandwidth)
    }

    pub fn sm_resources(&self) -> SMResources {
        self.sm_resources.clone().unwrap_or_default()
    }

    /// Copy with levels and ceilings in a fixed order, for order-independent
    /// comparison of two descriptions.
    pub fn canonical(&self) -> Self {
        let mut m = self.clone();
        m.levels.sort_by_key(|l| l.name);
        m.ceilings.sort_by(|a, b| a.label.cmp(&b.label));
        m
    }
}
