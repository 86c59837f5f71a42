//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the library's numerics.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use t2t::{AnnotatedEntry, DistanceAnnotatedOutcome, EntryKind, Id};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// -- exact rationals ----------------------------------------------------------

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Non-negative fraction in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Frac {
    pub num: u128,
    pub den: u128,
}

impl Frac {
    pub const ZERO: Frac = Frac { num: 0, den: 1 };

    pub fn new(num: u128, den: u128) -> Self {
        assert!(den != 0);
        let g = gcd(num, den).max(1);
        Frac { num: num / g, den: den / g }
    }

    pub fn add(self, o: Frac) -> Frac {
        let g = gcd(self.den, o.den);
        let den = self.den / g * o.den;
        Frac::new(self.num * (den / self.den) + o.num * (den / o.den), den)
    }

    pub fn div_int(self, n: u128) -> Frac {
        let g = gcd(self.num, n).max(1);
        Frac::new(self.num / g, self.den * (n / g))
    }

    pub fn to_f64(self) -> f64 {
        // exact enough: both parts below 2^128, error well under 1e-15
        let q = self.num / self.den;
        let r = self.num % self.den;
        q as f64 + (r as f64) / (self.den as f64)
    }
}

impl PartialOrd for Frac {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}

impl Ord for Frac {
    /// Continued-fraction comparison; cross products could overflow.
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        use std::cmp::Ordering::*;
        let (qa, qb) = (self.num / self.den, o.num / o.den);
        if qa != qb {
            return qa.cmp(&qb);
        }
        let (ra, rb) = (self.num % self.den, o.num % o.den);
        match (ra, rb) {
            (0, 0) => Equal,
            (0, _) => Less,
            (_, 0) => Greater,
            _ => Frac { num: o.den, den: rb }.cmp(&Frac { num: self.den, den: ra }),
        }
    }
}

// -- AP oracles ---------------------------------------------------------------

/// Sum over TP entries of the distance-threshold precision at that entry's
/// distance, each precision built from explicit threshold sets, over |X|.
pub fn ap_t2t_oracle(tp: &[f64], fp: &[f64], total_gt: usize) -> Frac {
    assert!(total_gt > 0);
    let mut sum = Frac::ZERO;
    for &d in tp {
        let tp_set: Vec<f64> = tp.iter().copied().filter(|x| *x <= d).collect();
        let fp_set: Vec<f64> = fp.iter().copied().filter(|x| *x <= d).collect();
        sum = sum.add(Frac::new(tp_set.len() as u128, (tp_set.len() + fp_set.len()) as u128));
    }
    sum.div_int(total_gt as u128)
}

pub fn ap_t2t_oracle_of(o: &DistanceAnnotatedOutcome) -> Frac {
    let (tp, fp) = split(o);
    ap_t2t_oracle(&tp, &fp, o.total_gt())
}

pub fn split(o: &DistanceAnnotatedOutcome) -> (Vec<f64>, Vec<f64>) {
    let tp = o.entries().iter().filter(|e| e.kind == EntryKind::TruePositive).map(|e| e.distance).collect();
    let fp = o.entries().iter().filter(|e| e.kind == EntryKind::FalsePositive).map(|e| e.distance).collect();
    (tp, fp)
}

/// Conventional all-point AP: walk entries by descending score (ties by id),
/// adding the running precision at every TP.
pub fn staircase_ap_oracle(entries: &[(f64, bool, String)], total_gt: usize) -> Frac {
    let mut order: Vec<&(f64, bool, String)> = entries.iter().collect();
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.2.cmp(&b.2)));
    let (mut seen, mut hits) = (0u128, 0u128);
    let mut sum = Frac::ZERO;
    for (_, tp, _) in order {
        seen += 1;
        if *tp {
            hits += 1;
            sum = sum.add(Frac::new(hits, seen));
        }
    }
    sum.div_int(total_gt as u128)
}

// -- random annotated outcomes ------------------------------------------------

/// Random outcome: up to `max_entries` TP+FP entries, |X| in
/// `[tp, max_gt]`. Distances come from a coarse grid so ties are common.
pub fn random_outcome(r: &mut ChaCha8Rng, max_entries: usize, max_gt: usize) -> DistanceAnnotatedOutcome {
    let n = r.random_range(0..=max_entries);
    let tp_n = r.random_range(0..=n.min(max_gt));
    let grid = r.random_bool(0.5);
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let distance = if grid {
            r.random_range(0..12) as f64 * 0.5
        } else {
            r.random_range(0.0..50.0)
        };
        entries.push(AnnotatedEntry {
            detection_id: Id::new(format!("d{i:03}")),
            kind: if i < tp_n { EntryKind::TruePositive } else { EntryKind::FalsePositive },
            score: r.random_range(0.0..=1.0),
            distance,
        });
    }
    let total_gt = r.random_range(tp_n.max(1)..=max_gt.max(1));
    DistanceAnnotatedOutcome::new(entries, total_gt, 0.0).unwrap()
}

/// Same as [`random_outcome`] with distances of well separated magnitude
/// (multiples of 1/8 in [0, 40)), so smooth increasing transforms keep every
/// distinct pair distinct.
pub fn random_spaced_outcome(r: &mut ChaCha8Rng, max_entries: usize, max_gt: usize) -> DistanceAnnotatedOutcome {
    let o = random_outcome(r, max_entries, max_gt);
    let entries = o
        .entries()
        .iter()
        .map(|e| AnnotatedEntry {
            distance: r.random_range(0..320) as f64 / 8.0,
            ..e.clone()
        })
        .collect();
    DistanceAnnotatedOutcome::new(entries, o.total_gt(), 0.0).unwrap()
}

/// [`random_outcome`] with continuous distances: ties occur with
/// probability zero.
pub fn random_tie_free_outcome(r: &mut ChaCha8Rng, max_entries: usize, max_gt: usize) -> DistanceAnnotatedOutcome {
    let o = random_outcome(r, max_entries, max_gt);
    with_distances(&o, |_, _| r.random_range(0.0..50.0))
}

pub fn with_distances(o: &DistanceAnnotatedOutcome, mut f: impl FnMut(usize, f64) -> f64) -> DistanceAnnotatedOutcome {
    let entries = o
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| AnnotatedEntry {
            distance: f(i, e.distance),
            ..e.clone()
        })
        .collect();
    DistanceAnnotatedOutcome::new(entries, o.total_gt(), o.score_threshold()).unwrap()
}

// -- linear algebra oracles ---------------------------------------------------

pub fn mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let mut m = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            m[j] += r[j];
        }
    }
    m.iter().map(|v| v / rows.len() as f64).collect()
}

/// Textbook two-pass unbiased covariance.
pub fn two_pass_covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = rows[0].len();
    let mu = mean(rows);
    let mut c = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                c[i][j] += (r[i] - mu[i]) * (r[j] - mu[j]);
            }
        }
    }
    let div = (rows.len() as f64 - 1.0).max(1.0);
    for row in c.iter_mut() {
        for v in row.iter_mut() {
            *v /= div;
        }
    }
    c
}

/// Gaussian elimination with partial pivoting.
pub fn solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, v)| {
        let mut r = r.clone();
        r.push(*v);
        r
    }).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap()).unwrap();
        m.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    x
}

/// `(x-μ)ᵀ v` with `(Σ + εI) v = x-μ` solved directly.
pub fn solve_distance(mu: &[f64], cov: &[Vec<f64>], eps: f64, x: &[f64]) -> f64 {
    let diff: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    let reg: Vec<Vec<f64>> = cov
        .iter()
        .enumerate()
        .map(|(i, r)| r.iter().enumerate().map(|(j, v)| if i == j { v + eps } else { *v }).collect())
        .collect();
    let v = solve(&reg, &diff);
    diff.iter().zip(&v).map(|(a, b)| a * b).sum()
}

/// Random symmetric positive definite matrix `B Bᵀ + d·I`.
pub fn random_spd(r: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let b: Vec<Vec<f64>> = (0..d).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let s: f64 = (0..d).map(|k| b[i][k] * b[j][k]).sum();
                    if i == j { s + d as f64 } else { s }
                })
                .collect()
        })
        .collect()
}

pub fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

// -- matching oracle ----------------------------------------------------------

pub fn iou_oracle(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let iy = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a[2] * a[3] + b[2] * b[3] - inter)
}

/// Greedy matcher over plain tuples. Returns the ids of the TP detections.
/// `dets`: (id, image, box, score); `gts`: (image, box), in input order.
pub fn greedy_oracle(
    dets: &[(String, u64, [f64; 4], f64)],
    gts: &[(u64, [f64; 4])],
    iou_t: f64,
    score_t: f64,
) -> Vec<String> {
    let mut order: Vec<&(String, u64, [f64; 4], f64)> = dets.iter().filter(|d| d.3 >= score_t).collect();
    order.sort_by(|a, b| b.3.partial_cmp(&a.3).unwrap().then_with(|| a.0.cmp(&b.0)));
    let mut claimed = vec![false; gts.len()];
    let mut tps = Vec::new();
    for d in order {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if g.0 != d.1 || claimed[j] {
                continue;
            }
            let v = iou_oracle(d.2, g.1);
            if v >= iou_t && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            claimed[j] = true;
            tps.push(d.0.clone());
        }
    }
    tps.sort();
    tps
}

pub type DetTuple = (String, u64, [f64; 4], f64);

/// Library sets from plain tuples. Every referenced image gets an entry.
pub fn build_sets(dets: &[DetTuple], gts: &[(u64, [f64; 4])]) -> (t2t::GroundTruthSet, t2t::DetectionSet) {
    use t2t::ingest::ImageInfo;
    use t2t::{BoundingBox, Detection, GroundTruthInstance, GroundTruthSet, DetectionSet};
    let mut ids: Vec<u64> = gts.iter().map(|g| g.0).chain(dets.iter().map(|d| d.1)).collect();
    ids.sort();
    ids.dedup();
    let images = ids
        .iter()
        .map(|i| ImageInfo {
            id: Id::from(*i),
            file_name: format!("{i}.jpg"),
            width: 1000,
            height: 1000,
            extra: Default::default(),
        })
        .collect();
    let instances = gts
        .iter()
        .enumerate()
        .map(|(k, (img, b))| GroundTruthInstance {
            instance_id: Id::from(k as u64 + 1),
            image_id: Id::from(*img),
            bbox: BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap(),
            extra: Default::default(),
        })
        .collect();
    let dets = dets
        .iter()
        .map(|(id, img, b, s)| Detection::new(id.as_str(), *img, BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap(), *s))
        .collect();
    (GroundTruthSet::new(images, instances).unwrap(), DetectionSet::new(dets).unwrap())
}

/// Random matching instance: boxes on a coarse grid (so IoU ties happen),
/// detections perturbed from ground truth or placed freely.
pub fn random_matching(r: &mut ChaCha8Rng) -> (Vec<DetTuple>, Vec<(u64, [f64; 4])>) {
    let images = r.random_range(1..=4u64);
    let n_gt = r.random_range(0..=12);
    let n_det = r.random_range(0..=16);
    let boxed = |r: &mut ChaCha8Rng| -> [f64; 4] {
        [
            r.random_range(0..8) as f64 * 5.0,
            r.random_range(0..8) as f64 * 5.0,
            r.random_range(1..5) as f64 * 5.0,
            r.random_range(1..5) as f64 * 5.0,
        ]
    };
    let gts: Vec<(u64, [f64; 4])> = (0..n_gt).map(|_| (r.random_range(0..images), boxed(r))).collect();
    let dets = (0..n_det)
        .map(|i| {
            let (img, b) = if !gts.is_empty() && r.random_bool(0.6) {
                let g = gts[r.random_range(0..gts.len())];
                let mut b = g.1;
                b[0] += r.random_range(-1..=1) as f64 * 2.5;
                b[2] += r.random_range(0..=1) as f64 * 2.5;
                (g.0, b)
            } else {
                (r.random_range(0..images), boxed(r))
            };
            // scores on a coarse grid so equal scores occur
            (format!("det{i:02}"), img, b, r.random_range(0..=20) as f64 / 20.0)
        })
        .collect();
    (dets, gts)
}
