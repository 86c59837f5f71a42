//! Train-to-test representation metrics for object detection.
//!
//! The crate measures how well a training set represents the instances of a
//! test set. A Gaussian is fit to training-set features and every test
//! detection gets its squared Mahalanobis distance to that Gaussian (the
//! *train2test distance*). True and false positives ordered by that distance,
//! instead of by detection score, give a distance-ordered average precision
//! (`AP_t2t`). Alongside it the crate computes conventional AP and
//! AP@[.5:.95], estimates matching image counts from accuracy curves, and
//! emits histogram / scaling / bar-chart reports as CSV and SVG.
//!
//! Pipeline:
//!
//! 1. [`ingest`] loads ground truth, detections and feature matrices.
//! 2. [`matching`] partitions detections into TP / FP and ground truth into
//!    matched / FN.
//! 3. [`feature_model`] fits the training Gaussian and annotates detections
//!    with distances.
//! 4. [`metrics`] computes AP, AP@[.5:.95] and `AP_t2t` per score regime.
//! 5. [`report`] renders the results.
//!
//! Data-parallel loops (per-image matching, IoU grid, score regimes, batch
//! distance evaluation) run on rayon when the `parallel` feature is enabled
//! and fall back to plain iteration otherwise; see [`Execution`].

pub mod cli;
pub mod error;
pub mod exec;
pub mod feature_model;
pub mod ingest;
pub mod matching;
pub mod metrics;
pub mod replacement;
pub mod report;
pub mod scenario;
mod sum;

pub use error::{Error, Result};
pub use exec::Execution;
pub use feature_model::{GaussianTrainModel, Regularization};
pub use ingest::{
    BoundingBox, Detection, DetectionSet, FeatureMatrix, FeatureVector, GroundTruthInstance,
    GroundTruthSet, Id,
};
pub use matching::{iou, match_detections, MatchOutcome};
pub use metrics::{
    ap_over_iou_range, ap_t2t, average_precision, precision_recall, t2t_precision_recall,
    AnnotatedEntry, DistanceAnnotatedOutcome, EntryKind, MetricReport, ScoreRegimes,
};
