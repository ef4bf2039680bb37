//! Per-kernel counter records, FLOP arithmetic on them, and ingestion of
//! profiler CSV exports.

use std::collections::BTreeMap;
use std::ops::{Add, AddAssign, Sub};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::machine::Precision;
use crate::util::{read_to_string, to_json_pretty};
use crate::{Error, Result};

const STUDY_METRICS: &str = include_str!("../data/gpp_study.metrics.json");
const NCU_MAPPING: &str = include_str!("../data/ncu.mapping.json");

/// FP64 instruction counts by class. `dother` holds compares, sqrt and
/// other non-arithmetic FP64 work that does not count as FLOPs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct InstructionCounters {
    pub dadd: u64,
    pub dmul: u64,
    pub dfma: u64,
    pub ddiv: u64,
    pub dother: u64,
}

impl Add for InstructionCounters {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        InstructionCounters {
            dadd: self.dadd + o.dadd,
            dmul: self.dmul + o.dmul,
            dfma: self.dfma + o.dfma,
            ddiv: self.ddiv + o.ddiv,
            dother: self.dother + o.dother,
        }
    }
}

impl AddAssign for InstructionCounters {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sub for InstructionCounters {
    type Output = Self;
    /// Panics on underflow; use only where `o` is known to be a sub-tally.
    fn sub(self, o: Self) -> Self {
        InstructionCounters {
            dadd: self.dadd - o.dadd,
            dmul: self.dmul - o.dmul,
            dfma: self.dfma - o.dfma,
            ddiv: self.ddiv - o.ddiv,
            dother: self.dother - o.dother,
        }
    }
}

impl InstructionCounters {
    pub fn scaled(self, k: u64) -> Self {
        InstructionCounters {
            dadd: self.dadd * k,
            dmul: self.dmul * k,
            dfma: self.dfma * k,
            ddiv: self.ddiv * k,
            dother: self.dother * k,
        }
    }
}

/// 2·dfma + dadd + dmul + div_weight·ddiv.
pub fn total_flops(c: &InstructionCounters, div_weight: u64) -> Result<u64> {
    if div_weight < 1 {
        return Err(Error::Domain("div_weight must be >= 1".into()));
    }
    Ok(2 * c.dfma + c.dadd + c.dmul + div_weight * c.ddiv)
}

/// dfma / (dmul + dadd + dfma); divides and other classes are excluded.
pub fn fma_ratio(c: &InstructionCounters) -> Result<f64> {
    let denom = c.dmul + c.dadd + c.dfma;
    if denom == 0 {
        return Err(Error::Domain("fma_ratio undefined: no dadd/dmul/dfma instructions".into()));
    }
    Ok(c.dfma as f64 / denom as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelBytes {
    pub l1: f64,
    pub l2: f64,
    pub hbm: f64,
}

impl LevelBytes {
    pub fn get(&self, level: crate::machine::LevelName) -> f64 {
        use crate::machine::LevelName::*;
        match level {
            L1 => self.l1,
            L2 => self.l2,
            Hbm => self.hbm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelMetrics {
    pub label: String,
    #[serde(default)]
    pub system: String,
    /// Kernel name for per-kernel records; absent on aggregates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<String>,
    #[serde(default)]
    pub precision: Precision,
    pub counters: InstructionCounters,
    /// Absent when a source reports time and work but no traffic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes: Option<LevelBytes>,
    pub runtime: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registers_per_thread: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads_per_block: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub achieved_warps_per_sm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl KernelMetrics {
    pub fn validate(&self) -> Result<()> {
        if self.label.trim().is_empty() {
            return Err(Error::invalid("label", "must be non-empty"));
        }
        if !(self.runtime.is_finite() && self.runtime > 0.0) {
            return Err(Error::invalid("runtime", format!("must be > 0 seconds, got {}", self.runtime)));
        }
        if let Some(b) = &self.bytes {
            for (name, v) in [("bytes.l1", b.l1), ("bytes.l2", b.l2), ("bytes.hbm", b.hbm)] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::invalid(name, format!("must be >= 0, got {v}")));
                }
            }
        }
        if let Some(w) = self.achieved_warps_per_sm {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::invalid("achieved_warps_per_sm", format!("must be >= 0, got {w}")));
            }
        }
        Ok(())
    }

    pub fn flops(&self, div_weight: u64) -> Result<u64> {
        total_flops(&self.counters, div_weight)
    }
}

pub fn parse_metrics(text: &str, context: &str) -> Result<Vec<KernelMetrics>> {
    let raw: Vec<serde_json::Value> =
        serde_json::from_str(text).map_err(|source| Error::Json { context: context.to_string(), source })?;
    let mut out = Vec::with_capacity(raw.len());
    for (i, v) in raw.into_iter().enumerate() {
        let m: KernelMetrics = serde_json::from_value(v)
            .map_err(|source| Error::Json { context: format!("{context}: record {i}"), source })?;
        m.validate().map_err(|e| Error::invalid(format!("{context}: record {i} ('{}')", m.label), e.to_string()))?;
        out.push(m);
    }
    Ok(out)
}

pub fn load_metrics(path: impl AsRef<Path>) -> Result<Vec<KernelMetrics>> {
    let path = path.as_ref();
    parse_metrics(&read_to_string(path)?, &path.display().to_string())
}

pub fn metrics_to_json(records: &[KernelMetrics]) -> String {
    to_json_pretty(&records)
}

/// Published per-version results of the GPP optimization study: nine
/// versions on two systems.
pub fn bundled_gpp_study() -> Vec<KernelMetrics> {
    parse_metrics(STUDY_METRICS, "gpp_study.metrics.json").expect("bundled table is valid")
}

/// Field-wise sum of per-kernel records into one aggregate record.
pub fn aggregate(records: &[KernelMetrics], label: &str) -> Result<KernelMetrics> {
    let first = records.first().ok_or_else(|| Error::Domain("cannot aggregate zero records".into()))?;
    let mut agg = KernelMetrics {
        label: label.to_string(),
        system: first.system.clone(),
        kernel: None,
        precision: first.precision,
        counters: InstructionCounters::default(),
        bytes: Some(LevelBytes::default()),
        runtime: 0.0,
        registers_per_thread: None,
        threads_per_block: None,
        achieved_warps_per_sm: None,
        note: None,
    };
    for r in records {
        agg.counters += r.counters;
        agg.runtime += r.runtime;
        agg.bytes = match (agg.bytes, r.bytes) {
            (Some(a), Some(b)) => Some(LevelBytes { l1: a.l1 + b.l1, l2: a.l2 + b.l2, hbm: a.hbm + b.hbm }),
            _ => None,
        };
    }
    Ok(agg)
}

/// Where one schema field comes from in a profiler CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub column: String,
    /// Multiplier into base SI units (e.g. 1e-9 for nanoseconds).
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

/// Table from schema field names to CSV columns. Only `label` and `runtime`
/// are required; anything unmapped stays absent (or zero for counters).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfilerMapping {
    pub fields: BTreeMap<String, ColumnSpec>,
    /// System name stamped on every record unless `system` is mapped.
    #[serde(default)]
    pub system: Option<String>,
    /// Skip the units row that some exporters emit right after the header.
    #[serde(default)]
    pub unit_row: bool,
}

const MAPPABLE: [&str; 14] = [
    "label",
    "system",
    "runtime",
    "dadd",
    "dmul",
    "dfma",
    "ddiv",
    "dother",
    "l1_bytes",
    "l2_bytes",
    "hbm_bytes",
    "registers_per_thread",
    "threads_per_block",
    "achieved_warps_per_sm",
];

impl ProfilerMapping {
    /// Column names of current Nsight Compute raw-page exports.
    pub fn default_ncu() -> Self {
        serde_json::from_str(NCU_MAPPING).expect("bundled mapping is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let m: ProfilerMapping = serde_json::from_str(&read_to_string(path)?)
            .map_err(|source| Error::Json { context: path.display().to_string(), source })?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for key in self.fields.keys() {
            if !MAPPABLE.contains(&key.as_str()) {
                return Err(Error::invalid(format!("mapping.fields.{key}"), format!("not a schema field; expected one of {MAPPABLE:?}")));
            }
        }
        for key in ["label", "runtime"] {
            if !self.fields.contains_key(key) {
                return Err(Error::invalid(format!("mapping.fields.{key}"), "required field is unmapped"));
            }
        }
        Ok(())
    }
}

fn parse_number(raw: &str, column: &str, row: usize) -> Result<f64> {
    let cleaned: String = raw.trim().chars().filter(|c| *c != ',').collect();
    cleaned
        .parse::<f64>()
        .map_err(|_| Error::Csv(format!("row {row}, column '{column}': '{raw}' is not a number")))
}

/// One record per CSV data row.
pub fn import_profiler_csv(path: impl AsRef<Path>, mapping: &ProfilerMapping) -> Result<Vec<KernelMetrics>> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    import_profiler_csv_str(&text, mapping)
}

pub fn import_profiler_csv_str(text: &str, mapping: &ProfilerMapping) -> Result<Vec<KernelMetrics>> {
    mapping.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();

    let mut index: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for (field, spec) in &mapping.fields {
        let col = headers
            .iter()
            .position(|h| h.trim() == spec.column)
            .ok_or_else(|| Error::Csv(format!("missing column '{}' (mapped to {field})", spec.column)))?;
        index.insert(field.as_str(), (col, spec.scale));
    }

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Csv(format!("row {row}: {e}")))?;
        if mapping.unit_row && i == 0 {
            continue;
        }
        let text_of = |field: &str| index.get(field).map(|(c, _)| rec.get(*c).unwrap_or("").trim().to_string());
        let num_of = |field: &str| -> Result<Option<f64>> {
            match index.get(field) {
                None => Ok(None),
                Some((c, scale)) => {
                    let raw = rec.get(*c).unwrap_or("");
                    if raw.trim().is_empty() {
                        return Ok(None);
                    }
                    Ok(Some(parse_number(raw, &mapping.fields[field].column, row)? * scale))
                }
            }
        };
        let count = |field: &str| -> Result<u64> {
            Ok(match num_of(field)? {
                None => 0,
                Some(v) if v >= 0.0 => v.round() as u64,
                Some(v) => return Err(Error::Csv(format!("row {row}: {field} is negative ({v})"))),
            })
        };

        let counters = InstructionCounters {
            dadd: count("dadd")?,
            dmul: count("dmul")?,
            dfma: count("dfma")?,
            ddiv: count("ddiv")?,
            dother: count("dother")?,
        };
        let bytes = match (num_of("l1_bytes")?, num_of("l2_bytes")?, num_of("hbm_bytes")?) {
            (Some(l1), Some(l2), Some(hbm)) => Some(LevelBytes { l1, l2, hbm }),
            _ => None,
        };
        let runtime = num_of("runtime")?.ok_or_else(|| Error::Csv(format!("row {row}: runtime is empty")))?;
        let label = text_of("label").unwrap_or_default();
        let system = text_of("system").filter(|s| !s.is_empty()).or_else(|| mapping.system.clone()).unwrap_or_default();

        let m = KernelMetrics {
            kernel: Some(label.clone()),
            label,
            system,
            precision: Precision::FP64,
            counters,
            bytes,
            runtime,
            registers_per_thread: num_of("registers_per_thread")?.map(|v| v.round() as u32),
            threads_per_block: num_of("threads_per_block")?.map(|v| v.round() as u32),
            achieved_warps_per_sm: num_of("achieved_warps_per_sm")?,
            note: None,
        };
        m.validate().map_err(|e| Error::Csv(format!("row {row}: {e}")))?;
        out.push(m);
    }
    Ok(out)
}
