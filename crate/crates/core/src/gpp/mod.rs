//! Desk-scale GPP kernel: problem synthesis, the reference evaluator, and
//! the nine optimization versions with instruction tallies and traces.
//!
//! Kernel math, per tuple (band, igp, ig) and frequency iw:
//!
//! ```text
//! wdiff = wx(iw) - wtilde(ig,igp)
//! delw  = wtilde(ig,igp) / wdiff
//! A: |wdiff| > limittwo and |delw| < limitone
//!        sch = 0.5 * delw * eps(ig,igp),  ssx = delw * eps(ig,igp)
//! B: otherwise, if |delw| > tol_zero
//!        sch = 0,  ssx = -0.25 * eps(ig,igp) / |delw|
//! else   sch = ssx = 0
//! achtemp(iw) += sch * aqsntemp(ig,band) * conj(aqsmtemp(igp,band))
//! asxtemp(iw) += ssx * aqsntemp(ig,band) * conj(aqsmtemp(igp,band))
//! ```
//!
//! Matrices are column-major with the first index fastest.

mod kernel;
pub mod tally;
pub mod trace;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::util::{read_to_string, to_json_pretty, write_atomic};
use crate::{Error, Result};

pub use kernel::{
    arrays, block_sizes, emit_metrics, launch_meta, run_version, run_version_into, BlockSizes, BranchCounts, LaunchMeta, RunArtifacts,
    RunOptions, DEFAULT_WAVE_THREADS,
};
use tally::Tally;

pub const NW: usize = 2;
pub const LIMITONE: f64 = 2.0;
pub const LIMITTWO: f64 = 0.5;
pub const TOL_ZERO: f64 = 1e-12;

/// Relative distance a synthesized value must keep from every predicate
/// threshold, so that reformulated predicates cannot flip a decision.
pub const SYNTH_MARGIN: f64 = 1e-6;
/// Smallest |wdiff|^2 the synthesizer accepts, keeping reciprocals tame.
pub const SYNTH_MIN_WDIFF2: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Version {
    V0,
    V1,
    V2,
    V3,
    V4,
    V5,
    V6,
    V7,
    V8,
}

impl Version {
    pub const ALL: [Version; 9] =
        [Version::V0, Version::V1, Version::V2, Version::V3, Version::V4, Version::V5, Version::V6, Version::V7, Version::V8];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        ["v0", "v1", "v2", "v3", "v4", "v5", "v6", "v7", "v8"][self.index()]
    }

    /// Parses "v3", "v0..v8", "v2,v5,v7" or "all".
    pub fn parse_list(s: &str) -> Result<Vec<Version>> {
        if s.trim() == "all" {
            return Ok(Version::ALL.to_vec());
        }
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if let Some((a, b)) = part.split_once("..") {
                let (a, b) = (a.parse::<Version>()?, b.parse::<Version>()?);
                if a > b {
                    return Err(Error::Usage(format!("empty version range {part}")));
                }
                out.extend(Version::ALL[a.index()..=b.index()].iter().copied());
            } else {
                out.push(part.parse()?);
            }
        }
        if out.is_empty() {
            return Err(Error::Usage("no versions selected".into()));
        }
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Version {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        Version::ALL
            .iter()
            .copied()
            .find(|v| v.label() == t)
            .ok_or_else(|| Error::Lookup { kind: "version", name: s.to_string() })
    }
}

impl From<Version> for String {
    fn from(v: Version) -> String {
        v.label().to_string()
    }
}

impl TryFrom<String> for Version {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub nbands: usize,
    pub ngpown: usize,
    pub ncouls: usize,
}

impl Dims {
    pub const DESK: Dims = Dims { nbands: 64, ngpown: 64, ncouls: 512 };
    /// Loop magnitudes of the Si-214 benchmark shape.
    pub const SI214: Dims = Dims { nbands: 1000, ngpown: 1000, ncouls: 10000 };

    pub fn tuples(&self) -> u64 {
        self.nbands as u64 * self.ngpown as u64 * self.ncouls as u64
    }

    pub fn tag(&self) -> String {
        format!("{}x{}x{}", self.nbands, self.ngpown, self.ncouls)
    }
}

impl FromStr for Dims {
    type Err = Error;
    /// "NBxNGxNC", or the presets "desk" and "si214".
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "desk" => return Ok(Dims::DESK),
            "si214" => return Ok(Dims::SI214),
            _ => {}
        }
        let parts: Vec<&str> = s.split(['x', 'X']).collect();
        let bad = || Error::Usage(format!("dims must look like NBxNGxNC with positive counts, got '{s}'"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let mut v = [0usize; 3];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p.trim().parse().map_err(|_| bad())?;
            if *slot == 0 {
                return Err(bad());
            }
        }
        Ok(Dims { nbands: v[0], ngpown: v[1], ncouls: v[2] })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GPPProblem {
    pub dims: Dims,
    /// [ncouls x ngpown]
    pub wtilde: Vec<C64>,
    /// [ncouls x ngpown]
    pub i_eps: Vec<C64>,
    /// [ncouls x nbands]
    pub aqsn: Vec<C64>,
    /// [ngpown x nbands]
    pub aqsm: Vec<C64>,
    /// [nw]
    pub wx: [f64; NW],
    pub limitone: f64,
    pub limittwo: f64,
    pub tol_zero: f64,
    /// Provenance string, e.g. "seed42-64x64x512".
    pub tag: String,
}

impl GPPProblem {
    /// Problem with the standard constants and all arrays zero.
    pub fn zeros(dims: Dims) -> Self {
        let pair = dims.ncouls * dims.ngpown;
        GPPProblem {
            dims,
            wtilde: vec![C64::new(0.0, 0.0); pair],
            i_eps: vec![C64::new(0.0, 0.0); pair],
            aqsn: vec![C64::new(0.0, 0.0); dims.ncouls * dims.nbands],
            aqsm: vec![C64::new(0.0, 0.0); dims.ngpown * dims.nbands],
            wx: [1.0, 2.0],
            limitone: LIMITONE,
            limittwo: LIMITTWO,
            tol_zero: TOL_ZERO,
            tag: format!("zeros-{}", dims.tag()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d.nbands == 0 || d.ngpown == 0 || d.ncouls == 0 {
            return Err(Error::Domain("problem dimensions must be > 0".into()));
        }
        let shapes = [
            ("wtilde", self.wtilde.len(), d.ncouls * d.ngpown),
            ("i_eps", self.i_eps.len(), d.ncouls * d.ngpown),
            ("aqsntemp", self.aqsn.len(), d.ncouls * d.nbands),
            ("aqsmtemp", self.aqsm.len(), d.ngpown * d.nbands),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::invalid(name, format!("has {got} elements, expected {want}")));
            }
        }
        for (name, v) in [("limitone", self.limitone), ("limittwo", self.limittwo), ("tol_zero", self.tol_zero)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, "must be > 0"));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn pair_index(&self, ig: usize, igp: usize) -> usize {
        igp * self.dims.ncouls + ig
    }
}

fn draw(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0))
}

fn near(a: f64, threshold: f64) -> bool {
    (a - threshold).abs() <= SYNTH_MARGIN * threshold
}

/// Whether `wt` keeps a safe distance from every predicate threshold at
/// every frequency.
fn clear_of_boundaries(wt: C64, wx: &[f64; NW], p: &GPPProblem) -> bool {
    wx.iter().all(|&w| {
        let wd = C64::new(w - wt.re, -wt.im);
        let m2 = wd.norm_sqr();
        if m2 < SYNTH_MIN_WDIFF2 {
            return false;
        }
        let d2 = wt.norm_sqr() / m2;
        !(near(m2, p.limittwo * p.limittwo) || near(d2, p.limitone * p.limitone) || near(d2, p.tol_zero * p.tol_zero))
    })
}

/// Branch taken by one (ig, igp, iw) tuple; independent of band.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    A,
    B,
    Neither,
}

/// Predicates on magnitudes, as in v0-v2.
#[inline]
pub(crate) fn predicate_abs(t: &mut Tally, wdiff: C64, delw: C64, p: &GPPProblem) -> (Branch, f64) {
    let wdiffr = t.abs(wdiff);
    let delwr = t.abs(delw);
    let branch = if t.gt(wdiffr, p.limittwo) && t.lt(delwr, p.limitone) {
        Branch::A
    } else if t.gt(delwr, p.tol_zero) {
        Branch::B
    } else {
        Branch::Neither
    };
    (branch, delwr)
}

/// Predicates on squared magnitudes against squared limits, as in v3+. The
/// square root is taken only on the path that needs |delw|.
#[inline]
pub(crate) fn predicate_squared(t: &mut Tally, wdiff: C64, delw: C64, lim2: &[f64; 3]) -> (Branch, f64) {
    let wdiff2 = t.abs2(wdiff);
    let delw2 = t.abs2(delw);
    if t.gt(wdiff2, lim2[1]) && t.lt(delw2, lim2[0]) {
        (Branch::A, 0.0)
    } else if t.gt(delw2, lim2[2]) {
        (Branch::B, t.sqrt(delw2))
    } else {
        (Branch::Neither, 0.0)
    }
}

/// Branch decision for every (igp, ig, iw), in that nesting order, made the
/// way `version` makes it.
pub fn branch_decisions(problem: &GPPProblem, version: Version) -> Vec<Branch> {
    let mut t = Tally::new(true);
    let lim2 = [problem.limitone.powi(2), problem.limittwo.powi(2), problem.tol_zero.powi(2)];
    let mut out = Vec::with_capacity(problem.wtilde.len() * NW);
    for wt in &problem.wtilde {
        for &w in &problem.wx {
            let wdiff = t.real_minus(w, *wt);
            let delw = if version == Version::V0 {
                t.div(*wt, wdiff)
            } else {
                let r = t.rcp(wdiff);
                t.mul(*wt, r)
            };
            let b = if version >= Version::V3 { predicate_squared(&mut t, wdiff, delw, &lim2).0 } else { predicate_abs(&mut t, wdiff, delw, problem).0 };
            out.push(b);
        }
    }
    out
}

/// Deterministic synthetic problem. Components are uniform in [-1, 1], wx in
/// [1, 2]; wtilde values that land near a predicate threshold are redrawn,
/// and both conditional branches are guaranteed to occur.
pub fn synth_problem(seed: u64, nbands: usize, ngpown: usize, ncouls: usize) -> Result<GPPProblem> {
    let dims = Dims { nbands, ngpown, ncouls };
    if nbands == 0 || ngpown == 0 || ncouls == 0 {
        return Err(Error::Domain(format!("problem dimensions must be >= 1, got {}", dims.tag())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = GPPProblem::zeros(dims);
    p.tag = format!("seed{seed}-{}", dims.tag());
    p.wx = [rng.gen_range(1.0..=2.0), rng.gen_range(1.0..=2.0)];
    for v in p.wtilde.iter_mut() {
        *v = draw(&mut rng);
    }
    for v in p.i_eps.iter_mut() {
        *v = draw(&mut rng);
    }
    for v in p.aqsn.iter_mut() {
        *v = draw(&mut rng);
    }
    for v in p.aqsm.iter_mut() {
        *v = draw(&mut rng);
    }
    redraw_near_boundaries(&mut p, &mut rng);

    let decisions = branch_decisions(&p, Version::V0);
    let has = |b: Branch| decisions.contains(&b);
    if !(has(Branch::A) && has(Branch::B)) {
        // |1.25 - 1| = 0.25 takes B at the first frequency; |1.75 - 1| = 0.75
        // with |delw| = 4/3 takes A at the second.
        p.wx = [1.25, 1.75];
        p.wtilde[0] = C64::new(1.0, 0.0);
        redraw_near_boundaries(&mut p, &mut rng);
    }
    Ok(p)
}

fn redraw_near_boundaries(p: &mut GPPProblem, rng: &mut ChaCha8Rng) {
    let wx = p.wx;
    for i in 0..p.wtilde.len() {
        while !clear_of_boundaries(p.wtilde[i], &wx, p) {
            p.wtilde[i] = draw(rng);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GPPResult {
    pub achtemp: Vec<C64>,
    pub asxtemp: Vec<C64>,
}

impl GPPResult {
    pub fn is_finite(&self) -> bool {
        self.achtemp.iter().chain(&self.asxtemp).all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Largest element-wise |a - b| / max(|a|, |b|); zero where both vanish.
    pub fn max_rel_error(&self, other: &GPPResult) -> f64 {
        self.achtemp
            .iter()
            .zip(&other.achtemp)
            .chain(self.asxtemp.iter().zip(&other.asxtemp))
            .map(|(a, b)| {
                let scale = a.norm().max(b.norm());
                if scale == 0.0 {
                    0.0
                } else {
                    (a - b).norm() / scale
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Direct four-loop evaluation in pseudo-code order with plain complex
/// division and magnitude predicates.
pub fn reference_result(p: &GPPProblem) -> GPPResult {
    let d = p.dims;
    let mut ach = [C64::new(0.0, 0.0); NW];
    let mut asx = [C64::new(0.0, 0.0); NW];
    for band in 0..d.nbands {
        for igp in 0..d.ngpown {
            let m = p.aqsm[band * d.ngpown + igp].conj();
            for ig in 0..d.ncouls {
                let wt = p.wtilde[p.pair_index(ig, igp)];
                let eps = p.i_eps[p.pair_index(ig, igp)];
                let n = p.aqsn[band * d.ncouls + ig];
                for iw in 0..NW {
                    let wdiff = C64::new(p.wx[iw], 0.0) - wt;
                    let delw = wt / wdiff;
                    let (wdiffr, delwr) = (wdiff.norm(), delw.norm());
                    let (sch, ssx) = if wdiffr > p.limittwo && delwr < p.limitone {
                        (0.5 * delw * eps, delw * eps)
                    } else if delwr > p.tol_zero {
                        (C64::new(0.0, 0.0), -0.25 * eps / delwr)
                    } else {
                        (C64::new(0.0, 0.0), C64::new(0.0, 0.0))
                    };
                    ach[iw] += sch * (n * m);
                    asx[iw] += ssx * (n * m);
                }
            }
        }
    }
    GPPResult { achtemp: ach.to_vec(), asxtemp: asx.to_vec() }
}

pub fn complex_reciprocal(z: C64) -> Result<C64> {
    let d = z.re * z.re + z.im * z.im;
    if !(d > TOL_ZERO) {
        return Err(Error::Domain(format!("reciprocal of near-zero complex {z}")));
    }
    let inv = 1.0 / d;
    Ok(C64::new(z.re * inv, -z.im * inv))
}

/// Frozen reference output for one synthesized problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldenResult {
    pub seed: u64,
    pub dims: Dims,
    pub result: GPPResult,
}

impl GoldenResult {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        serde_json::from_str(&read_to_string(path)?).map_err(|source| Error::Json { context: path.display().to_string(), source })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), to_json_pretty(self).as_bytes())
    }

    /// The committed golden file for seed 42 at desk dimensions.
    pub fn bundled_seed42() -> Self {
        serde_json::from_str(include_str!("../../data/golden/gpp_seed42_64x64x512.json")).expect("bundled golden file is valid")
    }
}
