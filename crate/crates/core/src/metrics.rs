//! Precision / recall, conventional AP, AP@[.5:.95] and the distance-ordered
//! `AP_t2t`.
//!
//! Score-based quantities keep detections with `score >= s_thresh`;
//! distance-based ones keep detections with `d <= d_thresh`. Both are applied
//! literally at ties.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::feature_model::{annotate_distances_with, GaussianTrainModel};
use crate::ingest::{DetectionSet, GroundTruthSet, Id};
use crate::matching::{iou_grid, match_detections_with, MatchOutcome};
use crate::sum::RatioSum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EntryKind {
    #[serde(rename = "TP")]
    TruePositive,
    #[serde(rename = "FP")]
    FalsePositive,
}

impl EntryKind {
    pub fn is_tp(self) -> bool {
        self == EntryKind::TruePositive
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EntryKind::TruePositive => "TP",
            EntryKind::FalsePositive => "FP",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedEntry {
    pub detection_id: Id,
    pub kind: EntryKind,
    pub score: f64,
    pub distance: f64,
}

/// TP and FP detections of one match outcome, each with score and
/// train2test distance; `total_gt` is `|X|`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceAnnotatedOutcome {
    entries: Vec<AnnotatedEntry>,
    total_gt: usize,
    score_threshold: f64,
}

impl DistanceAnnotatedOutcome {
    pub fn new(entries: Vec<AnnotatedEntry>, total_gt: usize, score_threshold: f64) -> Result<Self> {
        if let Some(e) = entries.iter().find(|e| !(e.distance.is_finite() && e.distance >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "detection {} has invalid distance {}",
                e.detection_id, e.distance
            )));
        }
        let tp = entries.iter().filter(|e| e.kind.is_tp()).count();
        if tp > total_gt {
            return Err(Error::InvalidArgument(format!(
                "{tp} true positives exceed {total_gt} ground-truth instances"
            )));
        }
        Ok(DistanceAnnotatedOutcome {
            entries,
            total_gt,
            score_threshold,
        })
    }

    pub fn entries(&self) -> &[AnnotatedEntry] {
        &self.entries
    }

    pub fn total_gt(&self) -> usize {
        self.total_gt
    }

    pub fn score_threshold(&self) -> f64 {
        self.score_threshold
    }

    pub fn tp_count(&self) -> usize {
        self.entries.iter().filter(|e| e.kind.is_tp()).count()
    }

    pub fn fp_count(&self) -> usize {
        self.entries.len() - self.tp_count()
    }

    pub fn distances(&self, kind: EntryKind) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().filter(move |e| e.kind == kind).map(|e| e.distance)
    }

    /// Same outcome with every distance passed through `f`.
    pub fn map_distances(&self, f: impl Fn(EntryKind, f64) -> f64) -> Result<Self> {
        let entries = self
            .entries
            .iter()
            .map(|e| AnnotatedEntry {
                distance: f(e.kind, e.distance),
                ..e.clone()
            })
            .collect();
        Self::new(entries, self.total_gt, self.score_threshold)
    }
}

/// Precision is `None` when no detection passes the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecisionRecall {
    pub precision: Option<f64>,
    pub recall: f64,
}

fn pr_from_counts(tp: usize, fp: usize, total_gt: usize) -> PrecisionRecall {
    PrecisionRecall {
        precision: (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64),
        recall: if total_gt == 0 { 0.0 } else { tp as f64 / total_gt as f64 },
    }
}

fn count_where(outcome: &DistanceAnnotatedOutcome, keep: impl Fn(&AnnotatedEntry) -> bool) -> (usize, usize) {
    outcome.entries.iter().filter(|e| keep(e)).fold((0, 0), |(tp, fp), e| {
        if e.kind.is_tp() {
            (tp + 1, fp)
        } else {
            (tp, fp + 1)
        }
    })
}

/// Precision and recall over detections with `score >= s_thresh`.
pub fn precision_recall(outcome: &DistanceAnnotatedOutcome, s_thresh: f64) -> Result<PrecisionRecall> {
    if !(0.0..=1.0).contains(&s_thresh) {
        return Err(Error::InvalidArgument(format!("score threshold {s_thresh} outside [0, 1]")));
    }
    let (tp, fp) = count_where(outcome, |e| e.score >= s_thresh);
    Ok(pr_from_counts(tp, fp, outcome.total_gt))
}

/// Precision and recall over detections with `distance <= d_thresh`.
pub fn t2t_precision_recall(outcome: &DistanceAnnotatedOutcome, d_thresh: f64) -> Result<PrecisionRecall> {
    if !(d_thresh >= 0.0) {
        return Err(Error::InvalidArgument(format!("distance threshold {d_thresh} must be >= 0")));
    }
    let (tp, fp) = count_where(outcome, |e| e.distance <= d_thresh);
    Ok(pr_from_counts(tp, fp, outcome.total_gt))
}

/// All-point AP of score-ordered entries (descending score, ties by id).
fn score_staircase<'a>(entries: impl Iterator<Item = (f64, &'a Id, bool)>, total_gt: usize) -> Result<f64> {
    if total_gt == 0 {
        return Err(Error::UndefinedMetric("AP needs at least one ground-truth instance"));
    }
    let mut items: Vec<_> = entries.collect();
    items.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let mut sum = RatioSum::new();
    let mut tp = 0usize;
    for (rank, (_, _, is_tp)) in items.iter().enumerate() {
        if *is_tp {
            tp += 1;
            sum.add_ratio(tp as f64, (rank + 1) as f64);
        }
    }
    Ok(sum.div(total_gt as f64))
}

/// Conventional all-point AP of one match outcome.
pub fn average_precision(outcome: &MatchOutcome<'_>) -> Result<f64> {
    score_staircase(
        outcome.detections().map(|(d, tp)| (d.score, &d.detection_id, tp)),
        outcome.total_gt,
    )
}

/// Conventional all-point AP computed from an annotated outcome's scores.
pub fn average_precision_annotated(outcome: &DistanceAnnotatedOutcome) -> Result<f64> {
    score_staircase(
        outcome.entries.iter().map(|e| (e.score, &e.detection_id, e.kind.is_tp())),
        outcome.total_gt,
    )
}

/// Mean AP over IoU thresholds 0.50:0.05:0.95.
pub fn ap_over_iou_range(dets: &DetectionSet, gts: &GroundTruthSet, score_threshold: f64) -> Result<f64> {
    ap_over_iou_range_with(dets, gts, score_threshold, Execution::default())
}

pub fn ap_over_iou_range_with(
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    score_threshold: f64,
    exec: Execution,
) -> Result<f64> {
    let grid = iou_grid();
    let aps = exec.map(&grid, |&t| {
        // inner loops stay sequential; the grid is the parallel axis
        let m = match_detections_with(dets, gts, t, score_threshold, Execution::Sequential)?;
        average_precision(&m)
    });
    let mut sum = RatioSum::new();
    for ap in aps {
        sum.add(ap?);
    }
    Ok(sum.div(grid.len() as f64))
}

/// `AP_t2t`: for every TP distance `d`, precision over entries with
/// distance `<= d`, summed and divided by `|X|`. Tied TP distances each
/// contribute a term.
pub fn ap_t2t(annotated: &DistanceAnnotatedOutcome) -> Result<f64> {
    if annotated.total_gt == 0 {
        return Err(Error::UndefinedMetric("AP_t2t needs at least one ground-truth instance"));
    }
    let mut order: Vec<(f64, bool)> = annotated
        .entries
        .iter()
        .map(|e| (e.distance, e.kind.is_tp()))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut sum = RatioSum::new();
    let (mut tp_cum, mut all_cum) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let d = order[i].0;
        let mut j = i;
        let mut group_tp = 0usize;
        while j < order.len() && order[j].0.total_cmp(&d) == Ordering::Equal {
            group_tp += usize::from(order[j].1);
            j += 1;
        }
        tp_cum += group_tp;
        all_cum += j - i;
        for _ in 0..group_tp {
            sum.add_ratio(tp_cum as f64, all_cum as f64);
        }
        i = j;
    }
    Ok(sum.div(annotated.total_gt as f64))
}

/// Named detection-score thresholds, in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRegimes(Vec<(String, f64)>);

impl Default for ScoreRegimes {
    fn default() -> Self {
        ScoreRegimes(vec![("all".into(), 0.01), ("med".into(), 0.1), ("high".into(), 0.5)])
    }
}

impl ScoreRegimes {
    pub fn new(regimes: Vec<(String, f64)>) -> Result<Self> {
        if regimes.is_empty() {
            return Err(Error::InvalidArgument("at least one score regime is required".into()));
        }
        for (i, (name, t)) in regimes.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::InvalidArgument("empty regime name".into()));
            }
            if !(0.0..=1.0).contains(t) {
                return Err(Error::InvalidArgument(format!("regime {name}: threshold {t} outside [0, 1]")));
            }
            if regimes[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::InvalidArgument(format!("duplicate regime {name}")));
            }
        }
        Ok(ScoreRegimes(regimes))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(n, t)| (n.as_str(), *t))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.iter().find(|(n, _)| n == name).map(|(_, t)| *t)
    }

    /// The most permissive threshold; conventional AP is computed there.
    pub fn lowest(&self) -> f64 {
        self.0.iter().map(|(_, t)| *t).fold(f64::INFINITY, f64::min)
    }
}

impl FromStr for ScoreRegimes {
    type Err = Error;

    /// Parses `all=0.01,med=0.1,high=0.5`.
    fn from_str(s: &str) -> Result<Self> {
        let regimes = s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|part| {
                let (name, value) = part
                    .split_once('=')
                    .ok_or_else(|| Error::InvalidArgument(format!("`{part}` is not NAME=THRESHOLD")))?;
                let t = value
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("`{value}` is not a number")))?;
                Ok((name.trim().to_string(), t))
            })
            .collect::<Result<Vec<_>>>()?;
        ScoreRegimes::new(regimes)
    }
}

impl fmt::Display for ScoreRegimes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(n, t)| format!("{n}={t}")).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn of(outcome: &MatchOutcome<'_>) -> Self {
        Counts {
            tp: outcome.tp_count(),
            fp: outcome.fp_count(),
            fn_: outcome.fn_count(),
        }
    }
}

/// `AP_t2t` of one score regime. A failed regime carries its error message
/// instead of a value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeMetrics {
    pub regime: String,
    pub score_threshold: f64,
    pub ap_t2t: Option<f64>,
    pub counts: Option<Counts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Which IoU thresholds `AP_t2t` matching uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum T2tMatching {
    /// The single configured IoU threshold.
    #[default]
    Single,
    /// Mean over the 0.50:0.05:0.95 grid.
    IouGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileOptions {
    pub iou_threshold: f64,
    pub regimes: ScoreRegimes,
    pub t2t_matching: T2tMatching,
    pub exec: Execution,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        ProfileOptions {
            iou_threshold: crate::matching::DEFAULT_IOU_THRESHOLD,
            regimes: ScoreRegimes::default(),
            t2t_matching: T2tMatching::Single,
            exec: Execution::default(),
        }
    }
}

fn regime_ap_t2t(
    model: &GaussianTrainModel,
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    score_threshold: f64,
    opts: &ProfileOptions,
) -> Result<(f64, Counts)> {
    let at = |iou: f64| -> Result<(f64, Counts)> {
        let m = match_detections_with(dets, gts, iou, score_threshold, Execution::Sequential)?;
        let annotated = annotate_distances_with(model, &m, Execution::Sequential)?;
        Ok((ap_t2t(&annotated)?, Counts::of(&m)))
    };
    match opts.t2t_matching {
        T2tMatching::Single => at(opts.iou_threshold),
        T2tMatching::IouGrid => {
            let mut sum = RatioSum::new();
            for t in iou_grid() {
                sum.add(at(t)?.0);
            }
            let counts = Counts::of(&match_detections_with(
                dets,
                gts,
                opts.iou_threshold,
                score_threshold,
                Execution::Sequential,
            )?);
            Ok((sum.div(10.0), counts))
        }
    }
}

/// `AP_t2t` for every score regime. Each regime is matched and annotated
/// independently; one regime's failure does not affect the others.
pub fn ap_t2t_profile(
    model: &GaussianTrainModel,
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    opts: &ProfileOptions,
) -> Vec<RegimeMetrics> {
    let regimes: Vec<(String, f64)> = opts.regimes.iter().map(|(n, t)| (n.to_string(), t)).collect();
    opts.exec.map(&regimes, |(name, t)| {
        match regime_ap_t2t(model, dets, gts, *t, opts) {
            Ok((v, counts)) => RegimeMetrics {
                regime: name.clone(),
                score_threshold: *t,
                ap_t2t: Some(v),
                counts: Some(counts),
                error: None,
            },
            Err(e) => RegimeMetrics {
                regime: name.clone(),
                score_threshold: *t,
                ap_t2t: None,
                counts: None,
                error: Some(e.to_string()),
            },
        }
    })
}

/// Conventional AP / AP@[.5:.95] at the lowest regime threshold plus the
/// per-regime `AP_t2t` profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub iou_threshold: f64,
    pub score_threshold: f64,
    pub ap: f64,
    pub ap_50_95: f64,
    pub counts: Counts,
    pub regimes: Vec<RegimeMetrics>,
}

impl MetricReport {
    pub fn regime(&self, name: &str) -> Option<&RegimeMetrics> {
        self.regimes.iter().find(|r| r.regime == name)
    }

    pub fn ap_t2t(&self, name: &str) -> Option<f64> {
        self.regime(name).and_then(|r| r.ap_t2t)
    }
}

pub fn evaluate(
    model: &GaussianTrainModel,
    dets: &DetectionSet,
    gts: &GroundTruthSet,
    opts: &ProfileOptions,
) -> Result<MetricReport> {
    let base = opts.regimes.lowest();
    let m = match_detections_with(dets, gts, opts.iou_threshold, base, opts.exec)?;
    let ap = average_precision(&m)?;
    let ap_50_95 = ap_over_iou_range_with(dets, gts, base, opts.exec)?;
    Ok(MetricReport {
        iou_threshold: opts.iou_threshold,
        score_threshold: base,
        ap,
        ap_50_95,
        counts: Counts::of(&m),
        regimes: ap_t2t_profile(model, dets, gts, opts),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, kind: EntryKind, score: f64, distance: f64) -> AnnotatedEntry {
        AnnotatedEntry {
            detection_id: Id::new(id),
            kind,
            score,
            distance,
        }
    }

    use EntryKind::{FalsePositive as FP, TruePositive as TP};

    /// TP distances {1, 3}, FP distance {2}, |X| = 2.
    fn worked() -> DistanceAnnotatedOutcome {
        DistanceAnnotatedOutcome::new(
            vec![entry("a", TP, 0.9, 1.0), entry("b", FP, 0.8, 2.0), entry("c", TP, 0.7, 3.0)],
            2,
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn precision_recall_direct() {
        let mut entries: Vec<_> = (0..8).map(|i| entry(&format!("t{i}"), TP, 0.9, 1.0)).collect();
        entries.extend((0..2).map(|i| entry(&format!("f{i}"), FP, 0.9, 1.0)));
        let o = DistanceAnnotatedOutcome::new(entries, 10, 0.0).unwrap();
        let pr = precision_recall(&o, 0.5).unwrap();
        assert_eq!(pr.precision, Some(0.8));
        assert_eq!(pr.recall, 0.8);
    }

    #[test]
    fn precision_recall_all_fp() {
        let entries = (0..5).map(|i| entry(&format!("f{i}"), FP, 0.9, 1.0)).collect();
        let o = DistanceAnnotatedOutcome::new(entries, 3, 0.0).unwrap();
        let pr = precision_recall(&o, 0.5).unwrap();
        assert_eq!(pr, PrecisionRecall { precision: Some(0.0), recall: 0.0 });
    }

    #[test]
    fn precision_recall_no_detections() {
        let pr = precision_recall(&worked(), 0.95).unwrap();
        assert_eq!(pr.precision, None);
        assert_eq!(pr.recall, 0.0);
        assert!(precision_recall(&worked(), 1.5).is_err());
    }

    #[test]
    fn t2t_pr_thresholds() {
        let o = worked();
        let at = |d| t2t_precision_recall(&o, d).unwrap();
        assert_eq!(at(1.0), PrecisionRecall { precision: Some(1.0), recall: 0.5 });
        assert_eq!(at(2.0), PrecisionRecall { precision: Some(0.5), recall: 0.5 });
        assert_eq!(at(3.0), PrecisionRecall { precision: Some(2.0 / 3.0), recall: 1.0 });
        assert_eq!(at(0.5).precision, None);
    }

    #[test]
    fn ap_t2t_worked_example() {
        assert_eq!(ap_t2t(&worked()).unwrap(), 5.0 / 6.0);
    }

    #[test]
    fn ap_t2t_perfect_separation() {
        let o = DistanceAnnotatedOutcome::new(
            vec![entry("a", TP, 0.1, 0.5), entry("b", TP, 0.2, 1.0), entry("c", FP, 0.9, 1.5)],
            2,
            0.0,
        )
        .unwrap();
        assert_eq!(ap_t2t(&o).unwrap(), 1.0);
    }

    #[test]
    fn ap_t2t_no_tp() {
        let o = DistanceAnnotatedOutcome::new(vec![entry("c", FP, 0.9, 1.5)], 4, 0.0).unwrap();
        assert_eq!(ap_t2t(&o).unwrap(), 0.0);
        let empty = DistanceAnnotatedOutcome::new(vec![], 0, 0.0).unwrap();
        assert!(matches!(ap_t2t(&empty), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn ap_t2t_tie_counts_the_fp() {
        // TP and FP share distance 1: the TP's term sees both
        let o = DistanceAnnotatedOutcome::new(vec![entry("a", TP, 0.9, 1.0), entry("b", FP, 0.8, 1.0)], 1, 0.0).unwrap();
        assert_eq!(ap_t2t(&o).unwrap(), 0.5);
    }

    #[test]
    fn ap_t2t_tied_tps_each_contribute() {
        let o = DistanceAnnotatedOutcome::new(
            vec![entry("a", TP, 0.9, 1.0), entry("b", TP, 0.8, 1.0), entry("c", FP, 0.8, 0.5)],
            2,
            0.0,
        )
        .unwrap();
        // both TP terms use 2 / 3
        assert!((ap_t2t(&o).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn score_ap_worked_example() {
        assert_eq!(average_precision_annotated(&worked()).unwrap(), 5.0 / 6.0);
    }

    #[test]
    fn distance_validation() {
        assert!(DistanceAnnotatedOutcome::new(vec![entry("a", TP, 0.9, -1.0)], 1, 0.0).is_err());
        assert!(DistanceAnnotatedOutcome::new(vec![entry("a", TP, 0.9, 1.0)], 0, 0.0).is_err());
    }

    #[test]
    fn regimes_parse_and_display() {
        let r: ScoreRegimes = "all=0.01, med=0.1,high=0.5".parse().unwrap();
        assert_eq!(r, ScoreRegimes::default());
        assert_eq!(r.to_string(), "all=0.01,med=0.1,high=0.5");
        assert_eq!(r.lowest(), 0.01);
        assert!("all=2".parse::<ScoreRegimes>().is_err());
        assert!("all=0.1,all=0.2".parse::<ScoreRegimes>().is_err());
        assert!("all".parse::<ScoreRegimes>().is_err());
        assert!("".parse::<ScoreRegimes>().is_err());
    }
}
