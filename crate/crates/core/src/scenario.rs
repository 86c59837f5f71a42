//! Seeded synthetic evaluation scenarios with planted structure.
//!
//! A scenario is a test set (ground truth, detections with features) and a
//! training feature matrix. Training features are `μ + z` with isotropic
//! unit-variance `z`; TP features are `μ + √s_tp · z` and FP features
//! `μ + √s_fp · z`, so the expected squared distance of a TP (FP) to the
//! training Gaussian is about `s_tp · dim` (`s_fp · dim`). Boxes are laid
//! out one object per grid cell, so every TP overlaps only its own ground
//! truth and every FP overlaps nothing.
//!
//! Generation is driven by a ChaCha8 stream seeded from the spec's seed, and
//! features are stored at f32 precision, so a scenario written to disk and
//! read back is identical to the in-memory one.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    self, BoundingBox, Detection, DetectionSet, FeatureMatrix, FeatureVector, GroundTruthInstance,
    GroundTruthSet, Id, ImageInfo,
};
use crate::matching::iou;

const CELL: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub n_gt: usize,
    pub n_tp: usize,
    pub n_fp: usize,
    pub n_train: usize,
    pub feature_dim: usize,
    pub tp_distance_scale: f64,
    pub fp_distance_scale: f64,
    pub tp_score: ScoreRange,
    pub fp_score: ScoreRange,
    pub objects_per_image: usize,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            n_gt: 40,
            n_tp: 32,
            n_fp: 48,
            n_train: 200,
            feature_dim: 16,
            tp_distance_scale: 1.0,
            fp_distance_scale: 2.0,
            tp_score: ScoreRange { min: 0.05, max: 1.0 },
            fp_score: ScoreRange { min: 0.01, max: 0.8 },
            objects_per_image: 9,
            seed: 42,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("scenario spec: {m}")));
        if self.n_tp > self.n_gt {
            return bad(format!("n_tp {} exceeds n_gt {}", self.n_tp, self.n_gt));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if self.n_train < 2 {
            return bad("n_train must be at least 2".into());
        }
        if self.objects_per_image == 0 {
            return bad("objects_per_image must be positive".into());
        }
        for (name, s) in [("tp_distance_scale", self.tp_distance_scale), ("fp_distance_scale", self.fp_distance_scale)] {
            if !(s.is_finite() && s > 0.0) {
                return bad(format!("{name} must be positive, got {s}"));
            }
        }
        for (name, r) in [("tp_score", self.tp_score), ("fp_score", self.fp_score)] {
            if !(0.0 <= r.min && r.min <= r.max && r.max <= 1.0) {
                return bad(format!("{name} range [{}, {}] must satisfy 0 <= min <= max <= 1", r.min, r.max));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ScenarioSpec = toml::from_str(text).map_err(|e| Error::Parse {
            origin: "scenario spec".into(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub ground_truth: GroundTruthSet,
    /// Detections with their test features bound.
    pub detections: DetectionSet,
    pub train_features: FeatureMatrix,
    pub planted_mean: Vec<f64>,
    /// Planted label of every detection, in detection order.
    pub planted_tp: Vec<bool>,
}

/// File names written by [`Scenario::write_to_dir`].
pub mod files {
    pub const GROUND_TRUTH: &str = "ground_truth.json";
    pub const DETECTIONS: &str = "detections.json";
    pub const DET_FEATURES: &str = "det_features.bin";
    pub const TRAIN_FEATURES: &str = "train_features.bin";
    pub const SPEC: &str = "scenario.toml";
    pub const PLANTED: &str = "planted.csv";
}

fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

/// Nearest double to `v` rounded to `decimals` places, so files show
/// short decimals.
fn round_to(v: f64, decimals: usize) -> f64 {
    format!("{v:.decimals$}").parse().expect("formatted float")
}

fn uniform(rng: &mut ChaCha8Rng, r: ScoreRange) -> f64 {
    if r.min == r.max {
        return r.min;
    }
    round_to(rng.random_range(r.min..=r.max), 6).clamp(r.min, r.max)
}

fn gaussian_row(rng: &mut ChaCha8Rng, mean: &[f64], scale: f64) -> Vec<f64> {
    mean.iter()
        .map(|m| {
            let z: f64 = rng.sample(StandardNormal);
            f32_round(m + scale * z)
        })
        .collect()
}

fn cell_box(rng: &mut ChaCha8Rng, cx: f64, cy: f64) -> BoundingBox {
    let w = round_to(rng.random_range(30.0..70.0), 2);
    let h = round_to(rng.random_range(30.0..70.0), 2);
    let x = round_to(cx + rng.random_range(10.0..(CELL - 10.0 - w)), 2);
    let y = round_to(cy + rng.random_range(10.0..(CELL - 10.0 - h)), 2);
    BoundingBox::new(x, y, w, h).expect("positive size")
}

/// Jittered copy of `gt` with IoU >= 0.5 to it.
fn jitter_box(rng: &mut ChaCha8Rng, gt: &BoundingBox) -> BoundingBox {
    loop {
        let dx = rng.random_range(-0.05..0.05) * gt.width();
        let dy = rng.random_range(-0.05..0.05) * gt.height();
        let sw = rng.random_range(0.95..1.05);
        let sh = rng.random_range(0.95..1.05);
        let b = BoundingBox::new(
            round_to(gt.x() + dx, 2),
            round_to(gt.y() + dy, 2),
            round_to(gt.width() * sw, 2),
            round_to(gt.height() * sh, 2),
        )
        .expect("positive size");
        if iou(&b, gt) >= 0.5 {
            return b;
        }
    }
}

pub fn generate_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.feature_dim;

    let planted_mean: Vec<f64> = (0..dim).map(|_| f32_round(rng.sample(StandardNormal))).collect();

    let mut train = Vec::with_capacity(spec.n_train * dim);
    for _ in 0..spec.n_train {
        train.extend(gaussian_row(&mut rng, &planted_mean, 1.0));
    }
    let train_ids = (1..=spec.n_train).map(|i| format!("train-{i:05}")).collect();
    let train_features = FeatureMatrix::new(dim, train, train_ids)?;

    // slot assignment: true = ground truth, false = FP-only cell
    let mut slots: Vec<bool> = std::iter::repeat_n(true, spec.n_gt)
        .chain(std::iter::repeat_n(false, spec.n_fp))
        .collect();
    slots.shuffle(&mut rng);

    let per_image = spec.objects_per_image;
    let cols = (per_image as f64).sqrt().ceil() as usize;
    let rows = per_image.div_ceil(cols);
    let n_images = slots.len().div_ceil(per_image).max(1);
    let images: Vec<ImageInfo> = (1..=n_images as u64)
        .map(|id| ImageInfo {
            id: Id::numeric(id),
            file_name: format!("synthetic_{id:05}.png"),
            width: (cols as f64 * CELL) as u32,
            height: (rows as f64 * CELL) as u32,
            extra: Default::default(),
        })
        .collect();

    let mut instances = Vec::with_capacity(spec.n_gt);
    let mut fp_boxes = Vec::with_capacity(spec.n_fp);
    for (k, is_gt) in slots.iter().enumerate() {
        let image = Id::numeric((k / per_image) as u64 + 1);
        let cell = k % per_image;
        let (cx, cy) = ((cell % cols) as f64 * CELL, (cell / cols) as f64 * CELL);
        let bbox = cell_box(&mut rng, cx, cy);
        if *is_gt {
            instances.push(GroundTruthInstance {
                instance_id: Id::numeric(instances.len() as u64 + 1),
                image_id: image,
                bbox,
                extra: Default::default(),
            });
        } else {
            fp_boxes.push((image, bbox));
        }
    }
    let ground_truth = GroundTruthSet::new(images, instances)?;

    // which ground truth gets a detection
    let mut gt_order: Vec<usize> = (0..spec.n_gt).collect();
    gt_order.shuffle(&mut rng);
    gt_order.truncate(spec.n_tp);
    gt_order.sort_unstable();

    let tp_scale = spec.tp_distance_scale.sqrt();
    let fp_scale = spec.fp_distance_scale.sqrt();
    let mut raw: Vec<(Id, BoundingBox, f64, Vec<f64>, bool)> = Vec::with_capacity(spec.n_tp + spec.n_fp);
    for gi in gt_order {
        let g = &ground_truth.instances()[gi];
        let bbox = jitter_box(&mut rng, &g.bbox);
        let score = uniform(&mut rng, spec.tp_score);
        let feat = gaussian_row(&mut rng, &planted_mean, tp_scale);
        raw.push((g.image_id.clone(), bbox, score, feat, true));
    }
    for (image, bbox) in fp_boxes {
        let score = uniform(&mut rng, spec.fp_score);
        let feat = gaussian_row(&mut rng, &planted_mean, fp_scale);
        raw.push((image, bbox, score, feat, false));
    }
    raw.shuffle(&mut rng);

    let width = raw.len().max(1).to_string().len().max(5);
    let mut planted_tp = Vec::with_capacity(raw.len());
    let dets = raw
        .into_iter()
        .enumerate()
        .map(|(i, (image, bbox, score, feat, is_tp))| {
            planted_tp.push(is_tp);
            Detection::new(Id::new(format!("det-{:0width$}", i + 1)), image, bbox, score)
                .with_feature(FeatureVector::new(feat).expect("finite features"))
        })
        .collect();

    Ok(Scenario {
        spec: spec.clone(),
        ground_truth,
        detections: DetectionSet::new(dets)?,
        train_features,
        planted_mean,
        planted_tp,
    })
}

/// Moves every planted TP feature toward the training mean so that its
/// squared distance scales by `factor`; FP features are untouched.
pub fn shrink_tp_distances(scenario: &Scenario, factor: f64) -> Result<Scenario> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::InvalidArgument(format!("shrink factor {factor} outside (0, 1]")));
    }
    if factor == 1.0 {
        return Ok(scenario.clone());
    }
    let train = &scenario.train_features;
    let mut mean = vec![0.0; train.dim()];
    for row in train.row_iter() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= train.rows() as f64;
    }
    let s = factor.sqrt();
    let dets = scenario
        .detections
        .iter()
        .zip(&scenario.planted_tp)
        .map(|(d, is_tp)| {
            let mut d = d.clone();
            if *is_tp {
                if let Some(f) = &d.feature {
                    let moved = f
                        .as_slice()
                        .iter()
                        .zip(&mean)
                        .map(|(v, m)| f32_round(m + s * (v - m)))
                        .collect();
                    d.feature = Some(FeatureVector::new(moved).expect("finite features"));
                }
            }
            d
        })
        .collect();
    Ok(Scenario {
        detections: DetectionSet::new(dets)?,
        ..scenario.clone()
    })
}

impl Scenario {
    /// Bound test features as a matrix keyed by detection id.
    pub fn det_features(&self) -> Result<FeatureMatrix> {
        let dim = self.spec.feature_dim;
        let mut data = Vec::with_capacity(self.detections.len() * dim);
        let mut ids = Vec::with_capacity(self.detections.len());
        for d in self.detections.iter() {
            let f = d.feature.as_ref().ok_or_else(|| Error::MissingFeatures {
                ids: vec![d.detection_id.to_string()],
            })?;
            data.extend_from_slice(f.as_slice());
            ids.push(d.detection_id.to_string());
        }
        if ids.is_empty() {
            return Err(Error::InvalidArgument("scenario has no detections".into()));
        }
        FeatureMatrix::new(dim, data, ids)
    }

    pub fn planted_csv(&self) -> String {
        let mut out = String::from("detection_id,planted\n");
        for (d, tp) in self.detections.iter().zip(&self.planted_tp) {
            out.push_str(&format!("{},{}\n", d.detection_id, if *tp { "TP" } else { "FP" }));
        }
        out
    }

    /// Contents of every scenario file, `(file name, bytes)`, in a fixed
    /// order. A scenario without detections has no `det_features.bin`.
    pub fn file_contents(&self) -> Result<Vec<(&'static str, Vec<u8>)>> {
        let mut out = vec![
            (files::SPEC, self.spec.to_toml().into_bytes()),
            (files::GROUND_TRUTH, ingest::ground_truth_to_json(&self.ground_truth).into_bytes()),
            (files::DETECTIONS, ingest::detections_to_json(&self.detections).into_bytes()),
            (
                files::TRAIN_FEATURES,
                ingest::features::encode_feature_binary(&self.train_features)?,
            ),
            (files::PLANTED, self.planted_csv().into_bytes()),
        ];
        if !self.detections.is_empty() {
            out.push((files::DET_FEATURES, ingest::features::encode_feature_binary(&self.det_features()?)?));
        }
        Ok(out)
    }

    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files: Vec<_> = self
            .file_contents()?
            .into_iter()
            .map(|(name, bytes)| (dir.join(name), bytes))
            .collect();
        crate::report::write_all_atomic(&files)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_model::{annotate_distances, fit_gaussian, Regularization};
    use crate::matching::match_detections;
    use crate::metrics::{ap_t2t, EntryKind};

    #[test]
    fn deterministic_per_seed() {
        let spec = ScenarioSpec::default();
        let a = generate_scenario(&spec).unwrap();
        let b = generate_scenario(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.file_contents().unwrap(), b.file_contents().unwrap());
        let c = generate_scenario(&ScenarioSpec { seed: 7, ..spec }).unwrap();
        assert_ne!(a.detections, c.detections);
    }

    #[test]
    fn planted_labels_match_greedy_outcome() {
        let s = generate_scenario(&ScenarioSpec::default()).unwrap();
        let m = match_detections(&s.detections, &s.ground_truth, 0.5, 0.0).unwrap();
        assert_eq!(m.tp_count(), s.spec.n_tp);
        assert_eq!(m.fp_count(), s.spec.n_fp);
        assert_eq!(m.fn_count(), s.spec.n_gt - s.spec.n_tp);
        for tp in &m.true_positives {
            assert!(tp.iou >= 0.5);
            let i = s.detections.iter().position(|d| d.detection_id == tp.detection.detection_id).unwrap();
            assert!(s.planted_tp[i]);
        }
    }

    #[test]
    fn invalid_spec() {
        let spec = ScenarioSpec { n_tp: 50, n_gt: 40, ..Default::default() };
        assert!(generate_scenario(&spec).is_err());
        let spec = ScenarioSpec { tp_distance_scale: 0.0, ..Default::default() };
        assert!(generate_scenario(&spec).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let spec = ScenarioSpec { seed: 9, n_fp: 3, ..Default::default() };
        assert_eq!(ScenarioSpec::from_toml(&spec.to_toml()).unwrap(), spec);
        assert_eq!(ScenarioSpec::from_toml("n_gt = 5\nn_tp = 5").unwrap().n_fp, 48);
        assert!(ScenarioSpec::from_toml("bogus = 1").is_err());
    }

    fn annotated(s: &Scenario) -> crate::metrics::DistanceAnnotatedOutcome {
        let model = fit_gaussian(&s.train_features, Regularization::Auto).unwrap();
        let m = match_detections(&s.detections, &s.ground_truth, 0.5, 0.01).unwrap();
        annotate_distances(&model, &m).unwrap()
    }

    #[test]
    fn perfect_separation_without_fp() {
        let spec = ScenarioSpec { n_gt: 20, n_tp: 20, n_fp: 0, ..Default::default() };
        let s = generate_scenario(&spec).unwrap();
        assert_eq!(ap_t2t(&annotated(&s)).unwrap(), 1.0);
    }

    #[test]
    fn planted_scales_order_mean_distances() {
        let spec = ScenarioSpec { tp_distance_scale: 0.5, fp_distance_scale: 4.0, ..Default::default() };
        let a = annotated(&generate_scenario(&spec).unwrap());
        let mean = |k| {
            let v: Vec<f64> = a.distances(k).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let (tp, fp) = (mean(EntryKind::TruePositive), mean(EntryKind::FalsePositive));
        assert!(tp < fp, "{tp} vs {fp}");
        // isotropic planting: expected squared distance ≈ scale · dim
        assert!((tp / (0.5 * 16.0) - 1.0).abs() < 0.5, "{tp}");
        assert!((fp / (4.0 * 16.0) - 1.0).abs() < 0.5, "{fp}");
    }

    #[test]
    fn shrink_identity_and_fp_untouched() {
        let s = generate_scenario(&ScenarioSpec::default()).unwrap();
        assert_eq!(shrink_tp_distances(&s, 1.0).unwrap(), s);
        let t = shrink_tp_distances(&s, 0.25).unwrap();
        for ((a, b), tp) in s.detections.iter().zip(t.detections.iter()).zip(&s.planted_tp) {
            assert_eq!(a.feature == b.feature, !tp);
        }
        assert!(shrink_tp_distances(&s, 0.0).is_err());
    }

    #[test]
    fn shrink_scales_distances() {
        let s = generate_scenario(&ScenarioSpec::default()).unwrap();
        let before = annotated(&s);
        let after = annotated(&shrink_tp_distances(&s, 0.25).unwrap());
        for (a, b) in before.entries().iter().zip(after.entries()) {
            assert_eq!(a.detection_id, b.detection_id);
            match a.kind {
                EntryKind::TruePositive => assert!((b.distance / a.distance - 0.25).abs() < 1e-4),
                EntryKind::FalsePositive => assert_eq!(a.distance, b.distance),
            }
        }
        assert!(ap_t2t(&after).unwrap() >= ap_t2t(&before).unwrap());
    }
}
