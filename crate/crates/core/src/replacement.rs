//! Matching image counts from accuracy-vs-image-count curves.
//!
//! Given a same-domain accuracy curve sampled at a grid of image counts, the
//! matching number of a cross-domain configuration is the (interpolated)
//! same-domain image count reaching the same accuracy. Interpolation is
//! piecewise linear, the lowest-count crossing wins on non-monotone curves,
//! and targets outside the curve's range are clamped and flagged, never
//! extrapolated.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Image-count grid the curves are conventionally sampled on.
pub const COUNT_GRID_STEP: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub count: u32,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyCurve {
    points: Vec<CurvePoint>,
    label: String,
}

/// Builds a curve from `(count, accuracy)` samples, sorted by count.
pub fn build_accuracy_curve(label: impl Into<String>, samples: &[(u32, f64)]) -> Result<AccuracyCurve> {
    let label = label.into();
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "curve {label}: need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let mut points: Vec<CurvePoint> = samples
        .iter()
        .map(|&(count, accuracy)| CurvePoint { count, accuracy })
        .collect();
    for p in &points {
        if p.count == 0 {
            return Err(Error::InvalidArgument(format!("curve {label}: image count must be positive")));
        }
        if !(p.accuracy.is_finite() && (0.0..=1.0).contains(&p.accuracy)) {
            return Err(Error::InvalidArgument(format!(
                "curve {label}: accuracy {} at count {} outside [0, 1]",
                p.accuracy, p.count
            )));
        }
    }
    points.sort_by_key(|p| p.count);
    if let Some(w) = points.windows(2).find(|w| w[0].count == w[1].count) {
        return Err(Error::InvalidArgument(format!(
            "curve {label}: duplicate image count {}",
            w[0].count
        )));
    }
    let curve = AccuracyCurve { points, label };
    let off = curve.off_grid_counts();
    if !off.is_empty() {
        log::warn!(
            "curve {}: counts {:?} are not multiples of {COUNT_GRID_STEP}",
            curve.label,
            off
        );
    }
    Ok(curve)
}

impl AccuracyCurve {
    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn counts(&self) -> Vec<u32> {
        self.points.iter().map(|p| p.count).collect()
    }

    pub fn off_grid_counts(&self) -> Vec<u32> {
        self.points
            .iter()
            .map(|p| p.count)
            .filter(|c| c % COUNT_GRID_STEP != 0)
            .collect()
    }

    /// Same counts, accuracies passed through `f`.
    pub fn map_accuracy(&self, f: impl Fn(f64) -> f64) -> Result<AccuracyCurve> {
        let samples: Vec<(u32, f64)> = self.points.iter().map(|p| (p.count, f(p.accuracy))).collect();
        build_accuracy_curve(self.label.clone(), &samples)
    }

    fn accuracy_range(&self) -> (f64, f64) {
        self.points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.accuracy), hi.max(p.accuracy))
        })
    }

    /// `true` if accuracy never decreases with count.
    pub fn is_monotone(&self) -> bool {
        self.points.windows(2).all(|w| w[1].accuracy >= w[0].accuracy)
    }
}

/// Pointwise mean of curves sampled on identical count grids.
pub fn average_runs(curves: &[AccuracyCurve]) -> Result<AccuracyCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InvalidArgument("no curves to average".into()))?;
    if curves.len() == 1 {
        return Ok(first.clone());
    }
    let grid = first.counts();
    for c in &curves[1..] {
        let other = c.counts();
        if other != grid {
            let mut diff: Vec<u32> = grid
                .iter()
                .filter(|n| !other.contains(n))
                .chain(other.iter().filter(|n| !grid.contains(n)))
                .copied()
                .collect();
            diff.sort_unstable();
            diff.dedup();
            return Err(Error::InvalidArgument(format!(
                "curve {} and {} have different count grids; differing counts {:?}",
                first.label, c.label, diff
            )));
        }
    }
    let n = curves.len() as f64;
    let samples: Vec<(u32, f64)> = grid
        .iter()
        .enumerate()
        .map(|(i, &count)| {
            let total: f64 = curves.iter().map(|c| c.points[i].accuracy).sum();
            (count, total / n)
        })
        .collect();
    let labels: Vec<&str> = curves.iter().map(|c| c.label.as_str()).collect();
    build_accuracy_curve(format!("mean of {} runs ({})", curves.len(), labels.join(", ")), &samples)
}

/// Groups `(run, count, accuracy)` rows into one curve per run, in run order.
pub fn curves_by_run(label: &str, rows: &[(Option<String>, u32, f64)]) -> Result<Vec<AccuracyCurve>> {
    let mut runs: BTreeMap<Option<&str>, Vec<(u32, f64)>> = BTreeMap::new();
    for (run, count, acc) in rows {
        runs.entry(run.as_deref()).or_default().push((*count, *acc));
    }
    runs.into_iter()
        .map(|(run, samples)| {
            let l = match run {
                Some(r) => format!("{label}#{r}"),
                None => label.to_string(),
            };
            build_accuracy_curve(l, &samples)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedCount {
    /// Interpolated same-domain image count.
    pub count: f64,
    /// Target outside the curve's accuracy range; `count` is clamped.
    pub saturated: bool,
    /// Number of curve segments reaching the target; above 1 only on
    /// non-monotone curves.
    pub crossings: usize,
}

/// Same-domain image count whose interpolated accuracy equals `target`.
pub fn matching_image_count(curve: &AccuracyCurve, target: f64) -> Result<MatchedCount> {
    if !(target.is_finite() && (0.0..=1.0).contains(&target)) {
        return Err(Error::InvalidArgument(format!("target accuracy {target} outside [0, 1]")));
    }
    let pts = &curve.points;
    let (lo, hi) = curve.accuracy_range();
    if target > hi {
        return Ok(MatchedCount {
            count: pts[pts.len() - 1].count as f64,
            saturated: true,
            crossings: 0,
        });
    }
    if target < lo {
        return Ok(MatchedCount {
            count: pts[0].count as f64,
            saturated: true,
            crossings: 0,
        });
    }
    // candidate crossings in count order: knot hits and strict segment crossings
    let mut hits = Vec::new();
    for (i, p) in pts.iter().enumerate() {
        if p.accuracy == target {
            // a plateau of equal knots is one crossing
            if i == 0 || pts[i - 1].accuracy != target {
                hits.push(p.count as f64);
            }
        }
        if let Some(q) = pts.get(i + 1) {
            let (a0, a1) = (p.accuracy, q.accuracy);
            if (a0 < target && target < a1) || (a1 < target && target < a0) {
                let (c0, c1) = (p.count as f64, q.count as f64);
                hits.push(c0 + (c1 - c0) * ((target - a0) / (a1 - a0)));
            }
        }
    }
    let count = *hits.first().expect("target within range crosses the curve");
    Ok(MatchedCount {
        count,
        saturated: false,
        crossings: hits.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplacementGain {
    pub with_synth: MatchedCount,
    pub without_synth: MatchedCount,
    /// `with_synth.count − without_synth.count`; may be negative.
    pub gain: f64,
}

pub fn replacement_gain(
    curve: &AccuracyCurve,
    accuracy_with_synth: f64,
    accuracy_without_synth: f64,
) -> Result<ReplacementGain> {
    let with_synth = matching_image_count(curve, accuracy_with_synth)?;
    let without_synth = matching_image_count(curve, accuracy_without_synth)?;
    Ok(ReplacementGain {
        with_synth,
        without_synth,
        gain: with_synth.count - without_synth.count,
    })
}

/// One cross-domain configuration resolved against a same-domain curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacementResult {
    pub cross_domain_count: u32,
    pub setting: String,
    pub accuracy: f64,
    pub matched_same_domain_count: f64,
    pub saturated: bool,
    /// Set on the with-synthetic row of a pair.
    pub gain: Option<f64>,
    pub curve: String,
}

/// Cross-domain configuration: real image count and measured accuracies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplacementTarget {
    pub cross_domain_count: u32,
    pub accuracy: f64,
    pub accuracy_with_synth: Option<f64>,
}

/// Resolves every target; rows come out in target order, the
/// with-synthetic row following its plain row.
pub fn resolve_targets(curve: &AccuracyCurve, targets: &[ReplacementTarget]) -> Result<Vec<ReplacementResult>> {
    let mut rows = Vec::new();
    for t in targets {
        let plain = matching_image_count(curve, t.accuracy)?;
        warn_crossings(curve, t.accuracy, &plain);
        rows.push(ReplacementResult {
            cross_domain_count: t.cross_domain_count,
            setting: "without_synth".into(),
            accuracy: t.accuracy,
            matched_same_domain_count: plain.count,
            saturated: plain.saturated,
            gain: None,
            curve: curve.label.clone(),
        });
        if let Some(a) = t.accuracy_with_synth {
            let g = replacement_gain(curve, a, t.accuracy)?;
            warn_crossings(curve, a, &g.with_synth);
            rows.push(ReplacementResult {
                cross_domain_count: t.cross_domain_count,
                setting: "with_synth".into(),
                accuracy: a,
                matched_same_domain_count: g.with_synth.count,
                saturated: g.with_synth.saturated,
                gain: Some(g.gain),
                curve: curve.label.clone(),
            });
        }
    }
    Ok(rows)
}

fn warn_crossings(curve: &AccuracyCurve, target: f64, m: &MatchedCount) {
    if m.crossings > 1 {
        log::warn!(
            "curve {} reaches accuracy {target} {} times; using the first crossing at {}",
            curve.label,
            m.crossings,
            m.count
        );
    }
}
