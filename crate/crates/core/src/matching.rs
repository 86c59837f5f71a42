//! IoU-based assignment of detections to ground truth.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::ingest::{BoundingBox, Detection, DetectionSet, GroundTruthInstance, GroundTruthSet, Id};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// IoU thresholds 0.50, 0.55, ..., 0.95 of AP@[.5:.95].
pub fn iou_grid() -> [f64; 10] {
    std::array::from_fn(|k| (50 + 5 * k) as f64 / 100.0)
}

/// Intersection over union of two positive-area boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.right().min(b.right()) - a.x().max(b.x());
    let ih = a.bottom().min(b.bottom()) - a.y().max(b.y());
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruePositive<'a> {
    pub detection: &'a Detection,
    pub instance_id: Id,
    pub iou: f64,
}

/// Partition of detections into TP / FP and of ground truth into matched /
/// FN, at one IoU threshold and one score threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome<'a> {
    pub true_positives: Vec<TruePositive<'a>>,
    pub false_positives: Vec<&'a Detection>,
    pub false_negatives: Vec<Id>,
    pub iou_threshold: f64,
    pub score_threshold: f64,
    pub total_gt: usize,
}

impl MatchOutcome<'_> {
    pub fn tp_count(&self) -> usize {
        self.true_positives.len()
    }

    pub fn fp_count(&self) -> usize {
        self.false_positives.len()
    }

    pub fn fn_count(&self) -> usize {
        self.false_negatives.len()
    }

    /// TP detections followed by FP detections.
    pub fn detections(&self) -> impl Iterator<Item = (&Detection, bool)> + '_ {
        self.true_positives
            .iter()
            .map(|tp| (tp.detection, true))
            .chain(self.false_positives.iter().map(|d| (*d, false)))
    }
}

/// Descending score, ties by ascending detection id.
pub(crate) fn score_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.detection_id.cmp(&b.detection_id))
}

pub fn validate_thresholds(iou_threshold: f64, score_threshold: f64) -> Result<()> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "IoU threshold {iou_threshold} outside (0, 1]"
        )));
    }
    if !(0.0..=1.0).contains(&score_threshold) {
        return Err(Error::InvalidArgument(format!(
            "score threshold {score_threshold} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Greedy matching: detections with `score >= score_threshold`, taken in
/// descending score order, each claim the unmatched ground truth of their
/// image with the highest IoU `>= iou_threshold`. Unclaimed ground truth
/// becomes false negatives.
pub fn match_detections<'a>(
    dets: &'a DetectionSet,
    gts: &GroundTruthSet,
    iou_threshold: f64,
    score_threshold: f64,
) -> Result<MatchOutcome<'a>> {
    match_detections_with(dets, gts, iou_threshold, score_threshold, Execution::default())
}

struct ImageWork<'g, 'a> {
    gts: Vec<&'g GroundTruthInstance>,
    dets: Vec<&'a Detection>,
}

struct ImageResult<'a> {
    tps: Vec<TruePositive<'a>>,
    fps: Vec<&'a Detection>,
    fns: Vec<Id>,
}

pub fn match_detections_with<'a>(
    dets: &'a DetectionSet,
    gts: &GroundTruthSet,
    iou_threshold: f64,
    score_threshold: f64,
    exec: Execution,
) -> Result<MatchOutcome<'a>> {
    validate_thresholds(iou_threshold, score_threshold)?;

    let mut by_image: BTreeMap<&Id, ImageWork<'_, 'a>> = BTreeMap::new();
    for g in gts.instances() {
        by_image
            .entry(&g.image_id)
            .or_insert_with(|| ImageWork {
                gts: Vec::new(),
                dets: Vec::new(),
            })
            .gts
            .push(g);
    }
    for d in dets.iter().filter(|d| d.score >= score_threshold) {
        by_image
            .entry(&d.image_id)
            .or_insert_with(|| ImageWork {
                gts: Vec::new(),
                dets: Vec::new(),
            })
            .dets
            .push(d);
    }
    let work: Vec<ImageWork<'_, 'a>> = by_image.into_values().collect();

    let per_image = exec.map(&work, |w| match_image(w, iou_threshold));

    let mut outcome = MatchOutcome {
        true_positives: Vec::new(),
        false_positives: Vec::new(),
        false_negatives: Vec::new(),
        iou_threshold,
        score_threshold,
        total_gt: gts.len(),
    };
    for r in per_image {
        outcome.true_positives.extend(r.tps);
        outcome.false_positives.extend(r.fps);
        outcome.false_negatives.extend(r.fns);
    }
    Ok(outcome)
}

fn match_image<'a>(work: &ImageWork<'_, 'a>, iou_threshold: f64) -> ImageResult<'a> {
    let mut dets = work.dets.clone();
    dets.sort_by(|a, b| score_order(a, b));
    let mut claimed = vec![false; work.gts.len()];
    let mut out = ImageResult {
        tps: Vec::new(),
        fps: Vec::new(),
        fns: Vec::new(),
    };
    for d in dets {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in work.gts.iter().enumerate() {
            if claimed[gi] {
                continue;
            }
            let v = iou(&d.bbox, &g.bbox);
            if v < iou_threshold {
                continue;
            }
            // strict > keeps the first (input-order) ground truth on IoU ties
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, v)) => {
                claimed[gi] = true;
                out.tps.push(TruePositive {
                    detection: d,
                    instance_id: work.gts[gi].instance_id.clone(),
                    iou: v,
                });
            }
            None => out.fps.push(d),
        }
    }
    out.fns = work
        .gts
        .iter()
        .zip(&claimed)
        .filter(|(_, c)| !**c)
        .map(|(g, _)| g.instance_id.clone())
        .collect();
    out
}
