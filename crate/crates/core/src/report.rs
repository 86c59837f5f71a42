//! Diagnostic reports: TP/FP distance histograms, `AP_t2t` scaling series
//! and replacement bar charts, as CSV and self-contained SVG.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{DistanceAnnotatedOutcome, EntryKind, MetricReport};
use crate::replacement::ReplacementResult;

pub const DEFAULT_BINS: usize = 30;

/// Stand-in for zero on a logarithmic axis.
pub const LOG_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `counts.len() + 1` strictly increasing edges; the last bin is closed
    /// on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub kind: EntryKind,
    pub label: String,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_count(&self) -> usize {
        self.counts.len()
    }
}

/// TP and FP histograms over shared edges.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramPair {
    pub tp: Histogram,
    pub fp: Histogram,
}

fn uniform_edges(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut edges: Vec<f64> = (0..=bins).map(|i| lo + (hi - lo) * (i as f64 / bins as f64)).collect();
    edges[bins] = hi;
    edges
}

fn bin_index(edges: &[f64], v: f64) -> Option<usize> {
    let (lo, hi) = (edges[0], edges[edges.len() - 1]);
    if !(v >= lo && v <= hi) {
        return None;
    }
    let bins = edges.len() - 1;
    Some(edges.partition_point(|e| *e <= v).saturating_sub(1).min(bins - 1))
}

/// Bins TP and FP distances on identical uniform edges. The default range
/// is `[0, max distance]`; values outside an explicit range are skipped.
pub fn distance_histogram(
    annotated: &DistanceAnnotatedOutcome,
    bins: usize,
    range: Option<(f64, f64)>,
) -> Result<HistogramPair> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let (lo, hi) = match range {
        Some((lo, hi)) => {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidArgument(format!("histogram range [{lo}, {hi}] is empty")));
            }
            (lo, hi)
        }
        None => {
            let max = annotated.entries().iter().map(|e| e.distance).fold(0.0, f64::max);
            (0.0, if max > 0.0 { max } else { 1.0 })
        }
    };
    let edges = uniform_edges(lo, hi, bins);
    let make = |kind: EntryKind| {
        let mut counts = vec![0u64; bins];
        for d in annotated.distances(kind) {
            if let Some(i) = bin_index(&edges, d) {
                counts[i] += 1;
            }
        }
        Histogram {
            edges: edges.clone(),
            counts,
            kind,
            label: format!("{} train2test distance", kind.as_str()),
        }
    };
    Ok(HistogramPair {
        tp: make(EntryKind::TruePositive),
        fp: make(EntryKind::FalsePositive),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YScale {
    Linear,
    Logarithmic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub x: f64,
    /// Plotted value; the floor when `value` is zero on a log axis.
    pub y: f64,
    pub value: f64,
    pub floored: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<SeriesPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub y_scale: YScale,
    pub floor: f64,
}

/// One `AP_t2t` series per regime over training image counts, on a log axis.
pub fn scaling_series(reports: &[(u32, MetricReport)]) -> Result<SeriesPlot> {
    scaling_series_grouped(&[(String::new(), reports.to_vec())])
}

/// Like [`scaling_series`] for several report groups (e.g. with and without
/// synthetic data); series are labelled `group/regime`.
pub fn scaling_series_grouped(groups: &[(String, Vec<(u32, MetricReport)>)]) -> Result<SeriesPlot> {
    let mut series: Vec<Series> = Vec::new();
    for (group, reports) in groups {
        let mut sorted: Vec<&(u32, MetricReport)> = reports.iter().collect();
        sorted.sort_by_key(|(c, _)| *c);
        if let Some(w) = sorted.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument(format!("duplicate image count {} in scaling series", w[0].0)));
        }
        let mut names: Vec<&str> = Vec::new();
        for (_, r) in &sorted {
            for reg in &r.regimes {
                if !names.contains(&reg.regime.as_str()) {
                    names.push(&reg.regime);
                }
            }
        }
        for name in names {
            let points = sorted
                .iter()
                .filter_map(|(count, r)| {
                    let value = r.ap_t2t(name)?;
                    let floored = value <= 0.0;
                    Some(SeriesPoint {
                        x: *count as f64,
                        y: if floored { LOG_FLOOR } else { value },
                        value,
                        floored,
                    })
                })
                .collect();
            let label = if group.is_empty() {
                name.to_string()
            } else {
                format!("{group}/{name}")
            };
            series.push(Series { label, points });
        }
    }
    Ok(SeriesPlot {
        title: "AP_t2t scaling".into(),
        x_label: "training images".into(),
        y_label: "AP_t2t".into(),
        series,
        y_scale: YScale::Logarithmic,
        floor: LOG_FLOOR,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub series: String,
    pub value: f64,
    /// Drawn with a marker (e.g. a saturated matching count).
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarGroup {
    pub label: String,
    pub bars: Vec<Bar>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarChart {
    pub title: String,
    pub y_label: String,
    pub groups: Vec<BarGroup>,
}

/// Matched same-domain counts grouped by cross-domain image count.
pub fn replacement_bars(rows: &[ReplacementResult]) -> BarChart {
    let mut groups: Vec<BarGroup> = Vec::new();
    for r in rows {
        let label = r.cross_domain_count.to_string();
        let bar = Bar {
            series: r.setting.clone(),
            value: r.matched_same_domain_count,
            flagged: r.saturated,
        };
        match groups.iter_mut().find(|g| g.label == label) {
            Some(g) => g.bars.push(bar),
            None => groups.push(BarGroup { label, bars: vec![bar] }),
        }
    }
    BarChart {
        title: "Matching same-domain image count".into(),
        y_label: "same-domain images".into(),
        groups,
    }
}

// -- SVG ----------------------------------------------------------------------

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

pub trait RenderSvg {
    /// Complete SVG document; identical input gives identical bytes.
    fn render_svg(&self) -> String;
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Compact tick label.
fn tick_label(v: f64) -> String {
    let s = format!("{:.6}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

/// Round tick values covering `[lo, hi]`.
fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

/// Decade exponents covering `[lo, hi]` (both > 0).
fn decades(lo: f64, hi: f64) -> (i32, i32) {
    let a = lo.log10().floor() as i32;
    let mut b = hi.log10().ceil() as i32;
    if b <= a {
        b = a + 1;
    }
    (a, b)
}

fn decade_value(k: i32) -> f64 {
    format!("1e{k}").parse().expect("decade literal")
}

struct Frame {
    out: String,
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
    log_y: bool,
}

impl Frame {
    fn new(title: &str, x_label: &str, y_label: &str, x: (f64, f64), y: (f64, f64), log_y: bool) -> Self {
        Self::build(title, x_label, y_label, x, y, log_y, true)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        title: &str,
        x_label: &str,
        y_label: &str,
        x: (f64, f64),
        y: (f64, f64),
        log_y: bool,
        x_ticks: bool,
    ) -> Self {
        let mut out = String::new();
        writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        )
        .unwrap();
        writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
        writeln!(out, r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, esc(title)).unwrap();
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
            HEIGHT - 15.0,
            esc(x_label)
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            TOP + (HEIGHT - TOP - BOTTOM) / 2.0,
            TOP + (HEIGHT - TOP - BOTTOM) / 2.0,
            esc(y_label)
        )
        .unwrap();
        let mut f = Frame {
            out,
            x_lo: x.0,
            x_hi: x.1,
            y_lo: y.0,
            y_hi: y.1,
            log_y,
        };
        f.axes(x_ticks);
        f
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x_lo) / (self.x_hi - self.x_lo) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let t = if self.log_y {
            (y.log10() - self.y_lo.log10()) / (self.y_hi.log10() - self.y_lo.log10())
        } else {
            (y - self.y_lo) / (self.y_hi - self.y_lo)
        };
        HEIGHT - BOTTOM - t * (HEIGHT - TOP - BOTTOM)
    }

    fn axes(&mut self, x_ticks: bool) {
        let (x0, x1) = (LEFT, WIDTH - RIGHT);
        let (y0, y1) = (HEIGHT - BOTTOM, TOP);
        writeln!(self.out, r#"<line class="axis" x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="black"/>"#).unwrap();
        writeln!(self.out, r#"<line class="axis" x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}" stroke="black"/>"#).unwrap();
        if self.log_y {
            let (a, b) = decades(self.y_lo, self.y_hi);
            for k in a..=b {
                let v = decade_value(k);
                self.y_tick(v, &format!("1e{k}"));
            }
        } else {
            for v in linear_ticks(self.y_lo, self.y_hi) {
                self.y_tick(v, &tick_label(v));
            }
        }
        let xs = if x_ticks { linear_ticks(self.x_lo, self.x_hi) } else { Vec::new() };
        for v in xs {
            let x = self.px(v);
            writeln!(self.out, r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, y0 + 5.0).unwrap();
            writeln!(
                self.out,
                r#"<text class="xtick" data-value="{v}" x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                y0 + 18.0,
                tick_label(v)
            )
            .unwrap();
        }
    }

    fn y_tick(&mut self, v: f64, label: &str) {
        let y = self.py(v);
        writeln!(self.out, r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT:.2}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0).unwrap();
        writeln!(
            self.out,
            r#"<text class="ytick" data-value="{v}" x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 8.0,
            y + 4.0,
            esc(label)
        )
        .unwrap();
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

impl RenderSvg for SeriesPlot {
    fn render_svg(&self) -> String {
        let log_y = self.y_scale == YScale::Logarithmic;
        let pts = || self.series.iter().flat_map(|s| s.points.iter());
        let (mut x_lo, mut x_hi) = pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.x), b.max(p.x)));
        if !x_lo.is_finite() {
            (x_lo, x_hi) = (0.0, 1.0);
        } else if x_lo == x_hi {
            (x_lo, x_hi) = (x_lo - 1.0, x_hi + 1.0);
        }
        let (mut y_lo, mut y_hi) = pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.y), b.max(p.y)));
        if log_y {
            if !y_lo.is_finite() {
                (y_lo, y_hi) = (self.floor, 1.0);
            }
            let (a, b) = decades(y_lo, y_hi);
            (y_lo, y_hi) = (decade_value(a), decade_value(b));
        } else if !y_lo.is_finite() {
            (y_lo, y_hi) = (0.0, 1.0);
        } else {
            y_lo = y_lo.min(0.0);
            if y_hi <= y_lo {
                y_hi = y_lo + 1.0;
            }
        }
        let mut f = Frame::new(&self.title, &self.x_label, &self.y_label, (x_lo, x_hi), (y_lo, y_hi), log_y);
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let path: Vec<String> = s.points.iter().map(|p| format!("{:.2},{:.2}", f.px(p.x), f.py(p.y))).collect();
            if path.len() > 1 {
                writeln!(
                    f.out,
                    r#"<polyline class="series" data-label="{}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                    esc(&s.label),
                    path.join(" ")
                )
                .unwrap();
            }
            for p in &s.points {
                let fill = if p.floored { "white" } else { color };
                writeln!(
                    f.out,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{fill}" stroke="{color}"/>"#,
                    f.px(p.x),
                    f.py(p.y)
                )
                .unwrap();
            }
            let ly = TOP + 16.0 * i as f64;
            writeln!(f.out, r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="{color}"/>"#, WIDTH - RIGHT - 150.0, ly).unwrap();
            writeln!(f.out, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, WIDTH - RIGHT - 135.0, ly + 9.0, esc(&s.label)).unwrap();
        }
        f.finish()
    }
}

fn histogram_frame(h: &Histogram, y_max: u64, title: &str) -> Frame {
    let (lo, hi) = (h.edges[0], h.edges[h.edges.len() - 1]);
    let mut f = Frame::new(title, "train2test distance", "count", (lo, hi), (0.0, y_max.max(1) as f64), false);
    let color = if h.kind.is_tp() { PALETTE[0] } else { PALETTE[3] };
    for (i, c) in h.counts.iter().enumerate().filter(|(_, c)| **c > 0) {
        let (x0, x1) = (f.px(h.edges[i]), f.px(h.edges[i + 1]));
        let (y0, y1) = (f.py(0.0), f.py(*c as f64));
        writeln!(
            f.out,
            r#"<rect class="bin" x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="{color}" stroke="white"/>"#,
            x1 - x0,
            y0 - y1
        )
        .unwrap();
    }
    f
}

impl RenderSvg for Histogram {
    fn render_svg(&self) -> String {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        histogram_frame(self, max, &self.label).finish()
    }
}

impl RenderSvg for HistogramPair {
    /// TP above FP, same x axis, stacked in one document.
    fn render_svg(&self) -> String {
        let top = self.tp.render_svg();
        let bottom = self.fp.render_svg();
        let inner = |s: &str| {
            s.lines()
                .skip(1)
                .filter(|l| *l != "</svg>")
                .collect::<Vec<_>>()
                .join("\n")
        };
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{}\" viewBox=\"0 0 {WIDTH} {}\">\n<g>\n{}\n</g>\n<g transform=\"translate(0 {HEIGHT})\">\n{}\n</g>\n</svg>\n",
            2.0 * HEIGHT,
            2.0 * HEIGHT,
            inner(&top),
            inner(&bottom)
        )
    }
}

impl RenderSvg for BarChart {
    fn render_svg(&self) -> String {
        let mut series: Vec<&str> = Vec::new();
        for g in &self.groups {
            for b in &g.bars {
                if !series.contains(&b.series.as_str()) {
                    series.push(&b.series);
                }
            }
        }
        let y_max = self
            .groups
            .iter()
            .flat_map(|g| g.bars.iter().map(|b| b.value))
            .fold(0.0, f64::max);
        let n = self.groups.len().max(1) as f64;
        let mut f = Frame::build(
            &self.title,
            "cross-domain images",
            &self.y_label,
            (0.0, n),
            (0.0, if y_max > 0.0 { y_max * 1.1 } else { 1.0 }),
            false,
            false,
        );
        let slot = (WIDTH - LEFT - RIGHT) / n;
        let bar_w = slot * 0.8 / series.len().max(1) as f64;
        for (gi, g) in self.groups.iter().enumerate() {
            let gx = LEFT + slot * gi as f64 + slot * 0.1;
            for b in &g.bars {
                let si = series.iter().position(|s| *s == b.series).unwrap_or(0);
                let color = PALETTE[si % PALETTE.len()];
                let x = gx + bar_w * si as f64;
                let (y0, y1) = (f.py(0.0), f.py(b.value.max(0.0)));
                writeln!(
                    f.out,
                    r#"<rect class="bar" data-series="{}" x="{x:.2}" y="{y1:.2}" width="{bar_w:.2}" height="{:.2}" fill="{color}"/>"#,
                    esc(&b.series),
                    y0 - y1
                )
                .unwrap();
                if b.flagged {
                    writeln!(f.out, r#"<text class="flag" x="{:.2}" y="{:.2}" text-anchor="middle">*</text>"#, x + bar_w / 2.0, y1 - 4.0).unwrap();
                }
            }
            writeln!(
                f.out,
                r#"<text class="xtick" x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                LEFT + slot * (gi as f64 + 0.5),
                HEIGHT - BOTTOM + 18.0,
                esc(&g.label)
            )
            .unwrap();
        }
        for (i, s) in series.iter().enumerate() {
            let ly = TOP + 16.0 * i as f64;
            writeln!(f.out, r#"<rect x="{:.2}" y="{ly:.2}" width="10" height="10" fill="{}"/>"#, LEFT + 10.0, PALETTE[i % PALETTE.len()]).unwrap();
            writeln!(f.out, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, LEFT + 25.0, ly + 9.0, esc(s)).unwrap();
        }
        f.finish()
    }
}

// -- CSV ----------------------------------------------------------------------

pub trait CsvExport {
    /// Header row plus one record per row.
    fn to_csv(&self) -> String;
}

/// Full-precision decimal: the shortest representation that parses back to
/// the same f64.
fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

impl CsvExport for MetricReport {
    fn to_csv(&self) -> String {
        csv_string(
            &["regime", "score_threshold", "ap_t2t", "tp", "fp", "fn", "ap", "ap_50_95", "iou_threshold", "error"],
            self.regimes.iter().map(|r| {
                vec![
                    r.regime.clone(),
                    num(r.score_threshold),
                    opt(r.ap_t2t),
                    r.counts.map(|c| c.tp.to_string()).unwrap_or_default(),
                    r.counts.map(|c| c.fp.to_string()).unwrap_or_default(),
                    r.counts.map(|c| c.fn_.to_string()).unwrap_or_default(),
                    num(self.ap),
                    num(self.ap_50_95),
                    num(self.iou_threshold),
                    r.error.clone().unwrap_or_default(),
                ]
            }),
        )
    }
}

impl CsvExport for [ReplacementResult] {
    fn to_csv(&self) -> String {
        csv_string(
            &["cross_count", "setting", "accuracy", "matched_count", "saturated", "gain", "curve"],
            self.iter().map(|r| {
                vec![
                    r.cross_domain_count.to_string(),
                    r.setting.clone(),
                    num(r.accuracy),
                    num(r.matched_same_domain_count),
                    r.saturated.to_string(),
                    opt(r.gain),
                    r.curve.clone(),
                ]
            }),
        )
    }
}

impl CsvExport for Histogram {
    fn to_csv(&self) -> String {
        csv_string(
            &["lo", "hi", "count"],
            self.counts
                .iter()
                .enumerate()
                .map(|(i, c)| vec![num(self.edges[i]), num(self.edges[i + 1]), c.to_string()]),
        )
    }
}

impl CsvExport for SeriesPlot {
    fn to_csv(&self) -> String {
        csv_string(
            &["series", "x", "y", "value", "floored"],
            self.series.iter().flat_map(|s| {
                s.points.iter().map(move |p| {
                    vec![s.label.clone(), num(p.x), num(p.y), num(p.value), p.floored.to_string()]
                })
            }),
        )
    }
}

impl CsvExport for DistanceAnnotatedOutcome {
    fn to_csv(&self) -> String {
        csv_string(
            &["detection_id", "kind", "score", "distance"],
            self.entries().iter().map(|e| {
                vec![e.detection_id.to_string(), e.kind.as_str().to_string(), num(e.score), num(e.distance)]
            }),
        )
    }
}

// -- output files -------------------------------------------------------------

fn temp_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_all_atomic(&[(path.to_path_buf(), bytes.to_vec())])
}

/// Stages every file, then renames them all; on a staging failure no
/// output file is touched.
pub fn write_all_atomic(files: &[(PathBuf, Vec<u8>)]) -> Result<()> {
    let mut staged = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        let tmp = temp_path(path);
        if let Err(e) = std::fs::write(&tmp, bytes) {
            let _ = std::fs::remove_file(&tmp);
            for (t, _) in &staged {
                let _ = std::fs::remove_file(t);
            }
            return Err(Error::io(path, e));
        }
        staged.push((tmp, path));
    }
    for (tmp, path) in staged {
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
