//! SVG hierarchical Roofline charts and a geometry checker for them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::machine::{ComputeCeiling, LevelName, MachineDescription, Precision};
use crate::roofline::{AnalysisReport, RooflinePoint};
use crate::{Error, Result};

/// Allowed distance between a drawn and a recomputed coordinate.
pub const GEOMETRY_TOL_PX: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChartOptions {
    /// FLOPs/byte.
    pub ai_range: (f64, f64),
    /// FLOP/s.
    pub perf_range: (f64, f64),
    pub ceiling_labels: bool,
    pub arrows: bool,
    /// Ceiling the diagonals run up to; the highest when absent.
    pub roof: Option<String>,
    pub title: Option<String>,
    pub width: f64,
    pub height: f64,
}

impl Default for ChartOptions {
    fn default() -> Self {
        ChartOptions {
            ai_range: (0.01, 100.0),
            perf_range: (1e10, 1e13),
            ceiling_labels: true,
            arrows: true,
            roof: None,
            title: None,
            width: 800.0,
            height: 600.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub machine: MachineDescription,
    pub points: Vec<RooflinePoint>,
    pub options: ChartOptions,
}

impl ChartSpec {
    /// Chart of every point in a report. When the report carries an FMA
    /// ratio, the adjusted peak is drawn as an extra ceiling.
    pub fn from_report(report: &AnalysisReport, options: ChartOptions) -> Self {
        let mut machine = report.machine.clone();
        for t in &report.trajectories {
            if let (Some(r), Some(peak)) = (t.fma_ratio, t.fma_adjusted_peak) {
                let label = format!("{} adjusted (FMA ratio {r})", t.ceiling);
                if machine.ceiling(&label).is_err() {
                    machine.ceilings.push(ComputeCeiling { precision: Precision::FP64, label, peak });
                }
            }
        }
        ChartSpec { machine, points: report.all_points(), options }
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.options;
        for (name, (lo, hi)) in [("ai_range", o.ai_range), ("perf_range", o.perf_range)] {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return Err(Error::invalid(format!("options.{name}"), format!("needs 0 < min < max, got ({lo}, {hi})")));
            }
        }
        if !(o.width > 0.0 && o.height > 0.0) {
            return Err(Error::invalid("options.width/height", "must be > 0"));
        }
        if self.machine.levels.is_empty() || self.machine.ceilings.is_empty() {
            return Err(Error::Domain("chart needs a machine with at least one level and one ceiling".into()));
        }
        self.machine.ceiling_or_top(o.roof.as_deref())?;
        for p in &self.points {
            self.machine.level(p.level).map_err(|_| Error::Domain(format!("point '{}' references unknown level {}", p.label, p.level)))?;
            if !(p.ai > 0.0 && p.throughput > 0.0 && p.ai.is_finite() && p.throughput.is_finite()) {
                return Err(Error::Domain(format!("point '{}' at {} is not plottable on log axes", p.label, p.level)));
            }
        }
        Ok(())
    }
}

const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;
const LABEL_OFFSET: f64 = 4.0;

/// Affine map from log10 data space to pixels.
#[derive(Clone, Copy, Debug)]
pub struct Frame {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    lx: (f64, f64),
    ly: (f64, f64),
}

impl Frame {
    pub fn new(o: &ChartOptions) -> Self {
        Frame {
            left: MARGIN_LEFT,
            top: MARGIN_TOP,
            width: o.width - MARGIN_LEFT - MARGIN_RIGHT,
            height: o.height - MARGIN_TOP - MARGIN_BOTTOM,
            lx: (o.ai_range.0.log10(), o.ai_range.1.log10()),
            ly: (o.perf_range.0.log10(), o.perf_range.1.log10()),
        }
    }

    pub fn x(&self, ai: f64) -> f64 {
        self.left + (ai.log10() - self.lx.0) / (self.lx.1 - self.lx.0) * self.width
    }

    pub fn y(&self, perf: f64) -> f64 {
        self.top + self.height - (perf.log10() - self.ly.0) / (self.ly.1 - self.ly.0) * self.height
    }
}

/// Stable color for a version label. Labels ending in a number N take hue
/// 40 N degrees, so nine consecutive versions are evenly spread; other
/// labels hash (FNV-1a) onto the hue circle.
pub fn version_color(label: &str) -> String {
    let digits = label.len() - label.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    if let Ok(n) = label[label.len() - digits..].parse::<u64>() {
        let hue = (n % 9) as f64 * 40.0 + ((n / 9) % 2) as f64 * 20.0;
        return hsl_hex(hue, 0.70, 0.45);
    }
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let hue = ((h >> 11) as f64 * 0.618_033_988_749_895).fract() * 360.0;
    hsl_hex(hue, 0.70, 0.45)
}

fn hsl_hex(h: f64, s: f64, l: f64) -> String {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    let to = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    format!("#{:02x}{:02x}{:02x}", to(r), to(g), to(b))
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn fmt_rate(v: f64, unit: &str) -> String {
    if v >= 1e12 {
        format!("{:.2} T{unit}", v / 1e12)
    } else {
        format!("{:.0} G{unit}", v / 1e9)
    }
}

fn level_marker(level: LevelName) -> (&'static str, f64) {
    match level {
        LevelName::L1 => ("l1", 4.0),
        LevelName::L2 => ("l2", 4.0),
        LevelName::Hbm => ("hbm", 5.5),
    }
}

/// Expected pixel geometry of a spec; shared by `render` and the checker.
struct Expected {
    diagonals: Vec<(LevelName, [f64; 4])>,
    ceilings: Vec<(String, [f64; 4])>,
    dots: Vec<(String, LevelName, [f64; 2])>,
}

fn expected(spec: &ChartSpec) -> Result<Expected> {
    spec.validate()?;
    let f = Frame::new(&spec.options);
    let (xmin, xmax) = spec.options.ai_range;
    let roof = spec.machine.ceiling_or_top(spec.options.roof.as_deref())?.peak;
    let diagonals = spec
        .machine
        .levels
        .iter()
        .map(|l| {
            let ridge = roof / l.bandwidth;
            (l.name, [f.x(xmin), f.y(l.bandwidth * xmin), f.x(ridge), f.y(roof)])
        })
        .collect();
    let ceilings = spec.machine.ceilings.iter().map(|c| (c.label.clone(), [f.x(xmin), f.y(c.peak), f.x(xmax), f.y(c.peak)])).collect();
    let dots = spec.points.iter().map(|p| (p.label.clone(), p.level, [f.x(p.ai), f.y(p.throughput)])).collect();
    Ok(Expected { diagonals, ceilings, dots })
}

fn decades(lo: f64, hi: f64) -> impl Iterator<Item = i32> {
    (lo.log10() - 1e-9).ceil() as i32..=(hi.log10() + 1e-9).floor() as i32
}

/// Renders the spec as a standalone SVG 1.1 document.
pub fn render(spec: &ChartSpec) -> Result<String> {
    let e = expected(spec)?;
    let o = &spec.options;
    let f = Frame::new(o);
    let mut s = String::new();
    let w = |s: &mut String, line: String| {
        s.push_str(&line);
        s.push('\n');
    };

    w(&mut s, r#"<?xml version="1.0" encoding="UTF-8"?>"#.into());
    w(
        &mut s,
        format!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{0}" height="{1}" viewBox="0 0 {0} {1}" font-family="Helvetica, Arial, sans-serif" font-size="11">"#,
            o.width, o.height
        ),
    );
    w(&mut s, "<defs>".into());
    w(
        &mut s,
        format!(r#"<clipPath id="plot"><rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}"/></clipPath>"#, f.left, f.top, f.width, f.height),
    );
    w(&mut s, r##"<marker id="arrowhead" viewBox="0 0 10 10" refX="9" refY="5" markerWidth="6" markerHeight="6" orient="auto"><path d="M0,0 L10,5 L0,10 z" fill="#555555"/></marker>"##.into());
    w(&mut s, "</defs>".into());
    w(&mut s, format!(r#"<rect width="{}" height="{}" fill="white"/>"#, o.width, o.height));

    let title = o.title.clone().unwrap_or_else(|| format!("Hierarchical Roofline: {}", spec.machine.name));
    w(&mut s, format!(r#"<text class="title" x="{:.3}" y="{:.3}" text-anchor="middle" font-size="14">{}</text>"#, f.left + f.width / 2.0, f.top - 15.0, esc(&title)));

    // Decade grid and tick labels.
    w(&mut s, r##"<g class="grid" stroke="#e4e4e4" stroke-width="1">"##.into());
    for k in decades(o.ai_range.0, o.ai_range.1) {
        let x = f.x(10f64.powi(k));
        w(&mut s, format!(r#"<line x1="{x:.3}" y1="{:.3}" x2="{x:.3}" y2="{:.3}"/>"#, f.top, f.top + f.height));
    }
    for k in decades(o.perf_range.0, o.perf_range.1) {
        let y = f.y(10f64.powi(k));
        w(&mut s, format!(r#"<line x1="{:.3}" y1="{y:.3}" x2="{:.3}" y2="{y:.3}"/>"#, f.left, f.left + f.width));
    }
    w(&mut s, "</g>".into());
    w(&mut s, r#"<g class="ticks" fill="black">"#.into());
    for k in decades(o.ai_range.0, o.ai_range.1) {
        w(&mut s, format!(r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">10<tspan dy="-5" font-size="8">{k}</tspan></text>"#, f.x(10f64.powi(k)), f.top + f.height + 16.0));
    }
    for k in decades(o.perf_range.0, o.perf_range.1) {
        w(&mut s, format!(r#"<text x="{:.3}" y="{:.3}" text-anchor="end">10<tspan dy="-5" font-size="8">{k}</tspan></text>"#, f.left - 6.0, f.y(10f64.powi(k)) + 4.0));
    }
    w(&mut s, "</g>".into());
    w(&mut s, format!(r#"<text class="axis-label" x="{:.3}" y="{:.3}" text-anchor="middle">Arithmetic intensity (FLOPs/byte)</text>"#, f.left + f.width / 2.0, o.height - 18.0));
    w(
        &mut s,
        format!(
            r#"<text class="axis-label" x="{0:.3}" y="{1:.3}" text-anchor="middle" transform="rotate(-90 {0:.3} {1:.3})">Performance (FLOP/s)</text>"#,
            22.0,
            f.top + f.height / 2.0
        ),
    );

    w(&mut s, r#"<g clip-path="url(#plot)">"#.into());
    for ((level, [x1, y1, x2, y2]), l) in e.diagonals.iter().zip(&spec.machine.levels) {
        w(&mut s, format!(r##"<line class="diagonal" data-level="{level}" x1="{x1:.3}" y1="{y1:.3}" x2="{x2:.3}" y2="{y2:.3}" stroke="#333333" stroke-width="1.5"/>"##));
        if o.ceiling_labels {
            // Anchor one decade right of where the diagonal enters the plot.
            let ai = (o.ai_range.0.max(o.perf_range.0 / l.bandwidth)) * 10f64.powf(0.35);
            let (x, y) = (f.x(ai), f.y(ai * l.bandwidth));
            let angle = -(f.height / (f.ly.1 - f.ly.0)).atan2(f.width / (f.lx.1 - f.lx.0)).to_degrees();
            w(
                &mut s,
                format!(
                    r#"<text class="diagonal-label" x="{x:.3}" y="{:.3}" transform="rotate({angle:.3} {x:.3} {:.3})">{} {}</text>"#,
                    y - 5.0,
                    y - 5.0,
                    level,
                    esc(&fmt_rate(l.bandwidth, "B/s"))
                ),
            );
        }
    }
    for ((label, [x1, y1, x2, y2]), c) in e.ceilings.iter().zip(&spec.machine.ceilings) {
        w(&mut s, format!(r##"<line class="ceiling" data-ceiling="{}" x1="{x1:.3}" y1="{y1:.3}" x2="{x2:.3}" y2="{y2:.3}" stroke="#333333" stroke-width="1.5" stroke-dasharray="6 3"/>"##, esc(label)));
        if o.ceiling_labels {
            w(&mut s, format!(r#"<text class="ceiling-label" x="{:.3}" y="{:.3}" text-anchor="end">{}: {}</text>"#, x2 - 4.0, y1 - 5.0, esc(label), esc(&fmt_rate(c.peak, "FLOP/s"))));
        }
    }

    if o.arrows {
        let mut order: Vec<&str> = Vec::new();
        for p in &spec.points {
            if !order.contains(&p.label.as_str()) {
                order.push(&p.label);
            }
        }
        let at = |label: &str, level: LevelName| e.dots.iter().find(|d| d.0 == label && d.1 == level).map(|d| d.2);
        for pair in order.windows(2) {
            for level in LevelName::ALL {
                if let (Some([x1, y1]), Some([x2, y2])) = (at(pair[0], level), at(pair[1], level)) {
                    if (x1 - x2).hypot(y1 - y2) > 8.0 {
                        w(&mut s, format!(r##"<line class="arrow" data-from="{}" data-to="{}" data-level="{level}" x1="{x1:.3}" y1="{y1:.3}" x2="{x2:.3}" y2="{y2:.3}" stroke="#555555" stroke-width="0.8" marker-end="url(#arrowhead)"/>"##, esc(pair[0]), esc(pair[1])));
                    }
                }
            }
        }
    }

    for (i, (label, level, [cx, cy])) in e.dots.iter().enumerate() {
        let color = version_color(label);
        let (class, r) = level_marker(*level);
        let (fill, stroke) = match level {
            LevelName::L2 => ("white".to_string(), color.clone()),
            LevelName::Hbm => (color.clone(), "black".to_string()),
            LevelName::L1 => (color.clone(), color.clone()),
        };
        w(&mut s, format!(r#"<circle class="dot {class}" data-index="{i}" data-label="{}" data-level="{level}" cx="{cx:.3}" cy="{cy:.3}" r="{r}" fill="{fill}" stroke="{stroke}" stroke-width="1.5"/>"#, esc(label)));
        w(&mut s, format!(r#"<text class="dot-label" x="{:.3}" y="{:.3}" fill="{color}" font-size="9">{}</text>"#, cx + LABEL_OFFSET, cy - LABEL_OFFSET, esc(label)));
    }
    w(&mut s, "</g>".into());
    w(&mut s, format!(r#"<rect class="frame" x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="none" stroke="black"/>"#, f.left, f.top, f.width, f.height));

    // Legend: marker style per level.
    let (lx, ly) = (f.left + 10.0, f.top + 14.0);
    for (i, level) in LevelName::ALL.iter().enumerate() {
        if spec.machine.level(*level).is_err() {
            continue;
        }
        let y = ly + i as f64 * 15.0;
        let (fill, stroke) = match level {
            LevelName::L2 => ("white", "#333333"),
            LevelName::Hbm => ("#333333", "black"),
            LevelName::L1 => ("#333333", "#333333"),
        };
        w(&mut s, format!(r#"<circle class="legend" cx="{lx:.3}" cy="{y:.3}" r="{}" fill="{fill}" stroke="{stroke}" stroke-width="1.5"/>"#, level_marker(*level).1));
        w(&mut s, format!(r#"<text class="legend" x="{:.3}" y="{:.3}">{level}</text>"#, lx + 10.0, y + 4.0));
    }
    w(&mut s, "</svg>".into());
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub element: String,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub checked: usize,
    pub mismatches: Vec<Mismatch>,
}

impl GeometryReport {
    pub fn is_ok(&self) -> bool {
        self.mismatches.is_empty()
    }
}

struct Elem {
    name: String,
    attrs: BTreeMap<String, String>,
}

/// Start and empty-element tags with their attributes; enough for the
/// documents `render` writes.
fn parse_tags(svg: &str) -> Vec<Elem> {
    let mut out = Vec::new();
    let mut rest = svg;
    while let Some(i) = rest.find('<') {
        rest = &rest[i + 1..];
        let Some(end) = rest.find('>') else { break };
        let tag = &rest[..end];
        rest = &rest[end + 1..];
        if tag.starts_with('/') || tag.starts_with('?') || tag.starts_with('!') {
            continue;
        }
        let tag = tag.trim_end_matches('/');
        let name_end = tag.find(char::is_whitespace).unwrap_or(tag.len());
        let mut attrs = BTreeMap::new();
        let mut a = &tag[name_end..];
        while let Some(eq) = a.find("=\"") {
            let key = a[..eq].trim().to_string();
            let after = &a[eq + 2..];
            let Some(close) = after.find('"') else { break };
            attrs.insert(key, after[..close].to_string());
            a = &after[close + 1..];
        }
        out.push(Elem { name: tag[..name_end].to_string(), attrs });
    }
    out
}

fn coords(e: &Elem, keys: &[&str]) -> Option<Vec<f64>> {
    keys.iter().map(|k| e.attrs.get(*k)?.parse().ok()).collect()
}

/// Recomputes every diagonal, ceiling and dot position from the spec and
/// compares it with the drawn element.
pub fn validate_geometry(svg: &str, spec: &ChartSpec) -> Result<GeometryReport> {
    let e = expected(spec)?;
    let tags = parse_tags(svg);
    let has_class = |t: &Elem, c: &str| t.attrs.get("class").is_some_and(|v| v.split_whitespace().any(|x| x == c));
    let mut rep = GeometryReport::default();
    let check = |what: String, found: Vec<&Elem>, keys: &[&str], want: &[f64], rep: &mut GeometryReport| {
        rep.checked += 1;
        if found.len() != 1 {
            rep.mismatches.push(Mismatch { element: what, detail: format!("expected exactly one element, found {}", found.len()) });
            return;
        }
        match coords(found[0], keys) {
            None => rep.mismatches.push(Mismatch { element: what, detail: "missing or unparsable coordinates".into() }),
            Some(got) => {
                let worst = got.iter().zip(want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
                if !(worst <= GEOMETRY_TOL_PX) {
                    rep.mismatches.push(Mismatch { element: what, detail: format!("off by {worst:.3} px: drawn {got:?}, expected {want:?}") });
                }
            }
        }
    };

    for (level, want) in &e.diagonals {
        let found = tags.iter().filter(|t| t.name == "line" && has_class(t, "diagonal") && t.attrs.get("data-level").map(String::as_str) == Some(level.as_str())).collect();
        check(format!("diagonal {level}"), found, &["x1", "y1", "x2", "y2"], want, &mut rep);
    }
    for (label, want) in &e.ceilings {
        let escaped = esc(label);
        let found = tags.iter().filter(|t| t.name == "line" && has_class(t, "ceiling") && t.attrs.get("data-ceiling") == Some(&escaped)).collect();
        check(format!("ceiling '{label}'"), found, &["x1", "y1", "x2", "y2"], want, &mut rep);
    }
    for (i, (label, level, want)) in e.dots.iter().enumerate() {
        let (escaped, index) = (esc(label), i.to_string());
        let found = tags
            .iter()
            .filter(|t| {
                t.name == "circle"
                    && has_class(t, "dot")
                    && t.attrs.get("data-index") == Some(&index)
                    && t.attrs.get("data-label") == Some(&escaped)
                    && t.attrs.get("data-level").map(String::as_str) == Some(level.as_str())
            })
            .collect();
        check(format!("dot {label}@{level}"), found, &["cx", "cy"], want, &mut rep);
    }
    let drawn = tags.iter().filter(|t| t.name == "circle" && has_class(t, "dot")).count();
    if drawn != e.dots.len() {
        rep.mismatches.push(Mismatch { element: "dots".into(), detail: format!("{drawn} drawn, {} expected", e.dots.len()) });
    }
    Ok(rep)
}

/// Counts of drawn elements by class, for quick structural checks.
pub fn element_counts(svg: &str) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for t in parse_tags(svg) {
        if let Some(c) = t.attrs.get("class") {
            if let Some(first) = c.split_whitespace().next() {
                *m.entry(first.to_string()).or_insert(0) += 1;
            }
        }
    }
    m
}
