//! Two-level inclusive LRU cache simulator turning an access trace into
//! per-level byte counts and hit rates.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::gpp::trace::{AccessTrace, TraceSink};
use crate::metrics::LevelBytes;
use crate::util::read_to_string;
use crate::{Error, Result};

const DESK_CACHE: &str = include_str!("../data/desk.cache.json");

/// Arrays are laid out back to back in one address space, each starting on
/// a boundary of this many bytes.
pub const ARRAY_ALIGN: u64 = 4096;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetIndex {
    /// Line number modulo the set count.
    Modulo,
    /// Line number XOR-folded with two shifted copies of itself before the
    /// modulo, which spreads power-of-two strides over all sets.
    #[default]
    Xor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelConfig {
    pub capacity: u64,
    pub line: u64,
    pub associativity: u32,
}

impl LevelConfig {
    pub fn sets(&self) -> u64 {
        self.capacity / (self.line * self.associativity as u64)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.associativity == 0 {
            return Err(Error::invalid(format!("{name}.associativity"), "must be >= 1"));
        }
        if self.line == 0 || !self.line.is_power_of_two() {
            return Err(Error::invalid(format!("{name}.line"), format!("must be a power of two, got {}", self.line)));
        }
        let way_bytes = self.line * self.associativity as u64;
        if self.capacity == 0 || self.capacity % way_bytes != 0 {
            return Err(Error::invalid(
                format!("{name}.capacity"),
                format!("{} is not a positive multiple of line x associativity ({way_bytes})", self.capacity),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub l1: LevelConfig,
    pub l2: LevelConfig,
    #[serde(default)]
    pub index: SetIndex,
}

impl Default for CacheConfig {
    /// Volta-sized: 128 KiB 4-way L1, 6 MiB 16-way L2, 128-byte lines.
    fn default() -> Self {
        CacheConfig {
            l1: LevelConfig { capacity: 128 * 1024, line: 128, associativity: 4 },
            l2: LevelConfig { capacity: 6 * 1024 * 1024, line: 128, associativity: 16 },
            index: SetIndex::Xor,
        }
    }
}

#[derive(Deserialize)]
struct MachineCacheBlock {
    cache: CacheConfig,
}

impl CacheConfig {
    /// Caches scaled to the desk-size GPP problem, small enough that its
    /// operands do not fit, as they do not at full size on the device.
    pub fn desk() -> Self {
        serde_json::from_str(DESK_CACHE).expect("bundled desk cache config is valid")
    }

    /// `desk`, `v100`, or a JSON file holding either a bare config or a
    /// machine description with a `cache` block.
    pub fn resolve(spec: &str) -> Result<Self> {
        match spec {
            "desk" => Ok(Self::desk()),
            "v100" | "default" => Ok(Self::default()),
            path => Self::load(path),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_to_string(path)?;
        let cfg = match serde_json::from_str::<CacheConfig>(&text) {
            Ok(c) => c,
            Err(first) => match serde_json::from_str::<MachineCacheBlock>(&text) {
                Ok(m) => m.cache,
                Err(_) => return Err(Error::Json { context: path.display().to_string(), source: first }),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.l1.validate("l1")?;
        self.l2.validate("l2")?;
        if self.l1.line != self.l2.line {
            return Err(Error::invalid("l2.line", "L1 and L2 must share one line size"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    /// hits / accesses, 0 when the level saw no accesses.
    pub hit_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub bytes: LevelBytes,
    pub l1: LevelStats,
    pub l2: LevelStats,
    pub line: u64,
    pub events: u64,
}

struct Level {
    sets: u64,
    ways: usize,
    index: SetIndex,
    tags: Vec<u64>,
    stamps: Vec<u64>,
    clock: u64,
    hits: u64,
    misses: u64,
}

const EMPTY: u64 = u64::MAX;

impl Level {
    fn new(cfg: &LevelConfig, index: SetIndex) -> Self {
        let sets = cfg.sets();
        let ways = cfg.associativity as usize;
        Level {
            sets,
            ways,
            index,
            tags: vec![EMPTY; sets as usize * ways],
            stamps: vec![0; sets as usize * ways],
            clock: 0,
            hits: 0,
            misses: 0,
        }
    }

    #[inline]
    fn set_base(&self, line: u64) -> usize {
        let h = match self.index {
            SetIndex::Modulo => line,
            SetIndex::Xor => line ^ (line >> 7) ^ (line >> 14),
        };
        (h % self.sets) as usize * self.ways
    }

    /// Looks up `line`, filling it on a miss. Returns whether it hit and the
    /// line evicted to make room, if any.
    #[inline]
    fn access(&mut self, line: u64) -> (bool, Option<u64>) {
        self.clock += 1;
        let base = self.set_base(line);
        let set = base..base + self.ways;
        if let Some(w) = self.tags[set.clone()].iter().position(|&t| t == line) {
            self.stamps[base + w] = self.clock;
            self.hits += 1;
            return (true, None);
        }
        self.misses += 1;
        let mut victim = base;
        for i in set {
            if self.tags[i] == EMPTY {
                victim = i;
                break;
            }
            if self.stamps[i] < self.stamps[victim] {
                victim = i;
            }
        }
        let old = self.tags[victim];
        self.tags[victim] = line;
        self.stamps[victim] = self.clock;
        (false, (old != EMPTY).then_some(old))
    }

    fn invalidate(&mut self, line: u64) {
        let base = self.set_base(line);
        for i in base..base + self.ways {
            if self.tags[i] == line {
                self.tags[i] = EMPTY;
                self.stamps[i] = 0;
            }
        }
    }

    fn stats(&self) -> LevelStats {
        let accesses = self.hits + self.misses;
        LevelStats {
            accesses,
            hits: self.hits,
            misses: self.misses,
            hit_rate: if accesses == 0 { 0.0 } else { self.hits as f64 / accesses as f64 },
        }
    }
}

/// Streaming simulator; feed it events in program order.
pub struct CacheSim {
    l1: Level,
    l2: Level,
    line: u64,
    bases: Vec<u64>,
    extents: Vec<u64>,
    l1_bytes: u64,
    events: u64,
    error: Option<Error>,
}

impl CacheSim {
    /// `extents` are the byte sizes of the traced arrays, by array id.
    pub fn new(config: &CacheConfig, extents: &[u64]) -> Result<Self> {
        config.validate()?;
        let mut bases = Vec::with_capacity(extents.len());
        let mut next = 0u64;
        for &e in extents {
            bases.push(next);
            next += e.div_ceil(ARRAY_ALIGN) * ARRAY_ALIGN;
        }
        Ok(CacheSim {
            l1: Level::new(&config.l1, config.index),
            l2: Level::new(&config.l2, config.index),
            line: config.l1.line,
            bases,
            extents: extents.to_vec(),
            l1_bytes: 0,
            events: 0,
            error: None,
        })
    }

    pub fn access(&mut self, array: u8, offset: u64, size: u8) -> Result<()> {
        let a = array as usize;
        if a >= self.bases.len() {
            return Err(Error::Trace(format!("event {}: array id {array} out of range", self.events)));
        }
        if size == 0 || offset.checked_add(size as u64).map_or(true, |end| end > self.extents[a]) {
            return Err(Error::Trace(format!(
                "event {}: access [{offset}, +{size}) outside array {array} of {} bytes",
                self.events, self.extents[a]
            )));
        }
        self.events += 1;
        self.l1_bytes += size as u64;
        let addr = self.bases[a] + offset;
        let shift = self.line.trailing_zeros();
        for line in (addr >> shift)..=((addr + size as u64 - 1) >> shift) {
            if self.l1.access(line).0 {
                continue;
            }
            if let (false, Some(evicted)) = self.l2.access(line) {
                // Inclusion: whatever leaves L2 leaves L1 too.
                self.l1.invalidate(evicted);
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<SimOutcome> {
        if let Some(e) = self.error {
            return Err(e);
        }
        let l1 = self.l1.stats();
        let l2 = self.l2.stats();
        Ok(SimOutcome {
            bytes: LevelBytes {
                l1: self.l1_bytes as f64,
                l2: (l1.misses * self.line) as f64,
                hbm: (l2.misses * self.line) as f64,
            },
            l1,
            l2,
            line: self.line,
            events: self.events,
        })
    }
}

impl TraceSink for CacheSim {
    #[inline]
    fn read(&mut self, array: u8, offset: u64, size: u8) {
        if self.error.is_none() {
            if let Err(e) = self.access(array, offset, size) {
                self.error = Some(e);
            }
        }
    }
}

/// Sequential LRU simulation of `trace`, cold start.
pub fn simulate(trace: &AccessTrace, config: &CacheConfig) -> Result<SimOutcome> {
    let mut sim = CacheSim::new(config, &trace.extents())?;
    for ev in &trace.events {
        sim.access(ev.array, ev.offset, ev.size)?;
    }
    sim.finish()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitRateRow {
    pub label: String,
    pub l1_hit_rate: f64,
    pub l2_hit_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitRateDelta {
    pub from: String,
    pub to: String,
    pub l1: f64,
    pub l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitRateTable {
    pub rows: Vec<HitRateRow>,
    /// Last minus first; absent for a single row.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<HitRateDelta>,
}

pub fn hit_rate_report(outcomes: &[(String, SimOutcome)]) -> Result<HitRateTable> {
    if outcomes.is_empty() {
        return Err(Error::Domain("hit-rate report needs at least one outcome".into()));
    }
    let rows: Vec<HitRateRow> = outcomes
        .iter()
        .map(|(label, o)| HitRateRow { label: label.clone(), l1_hit_rate: o.l1.hit_rate, l2_hit_rate: o.l2.hit_rate })
        .collect();
    let delta = (rows.len() > 1).then(|| {
        let (a, b) = (&rows[0], &rows[rows.len() - 1]);
        HitRateDelta { from: a.label.clone(), to: b.label.clone(), l1: b.l1_hit_rate - a.l1_hit_rate, l2: b.l2_hit_rate - a.l2_hit_rate }
    });
    Ok(HitRateTable { rows, delta })
}

impl std::fmt::Display for HitRateTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<10} {:>8} {:>8}", "version", "L1 hit", "L2 hit")?;
        for r in &self.rows {
            writeln!(f, "{:<10} {:>8.4} {:>8.4}", r.label, r.l1_hit_rate, r.l2_hit_rate)?;
        }
        if let Some(d) = &self.delta {
            writeln!(f, "{:<10} {:>+8.4} {:>+8.4}", format!("{}->{}", d.from, d.to), d.l1, d.l2)?;
        }
        Ok(())
    }
}
