//! Training-set Gaussian and the train2test distance.
//!
//! The training set's features are modeled as a multivariate Gaussian with
//! mean `μ` and covariance `Σ`; a test feature `x` gets the squared
//! Mahalanobis distance `(x − μ)ᵀ (Σ + εI)⁻¹ (x − μ)`. No square root is
//! taken.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::ingest::FeatureMatrix;
use crate::matching::MatchOutcome;
use crate::metrics::{AnnotatedEntry, DistanceAnnotatedOutcome, EntryKind};

pub const MODEL_MAGIC: &[u8; 8] = b"T2TMODL\0";

/// Ridge added to the covariance diagonal before inversion.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Regularization {
    /// `ε = 1e-6 · trace(Σ) / dim`.
    #[default]
    Auto,
    Fixed(f64),
}

impl Regularization {
    pub const AUTO_SCALE: f64 = 1e-6;

    fn resolve(self, covariance: &DMatrix<f64>) -> Result<f64> {
        match self {
            Regularization::Auto => {
                let dim = covariance.nrows() as f64;
                Ok(Self::AUTO_SCALE * covariance.trace() / dim)
            }
            Regularization::Fixed(eps) if eps.is_finite() && eps >= 0.0 => Ok(eps),
            Regularization::Fixed(eps) => Err(Error::InvalidArgument(format!(
                "regularization {eps} must be finite and >= 0"
            ))),
        }
    }
}

impl std::str::FromStr for Regularization {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Regularization::Auto);
        }
        s.parse::<f64>()
            .map(Regularization::Fixed)
            .map_err(|_| format!("`{s}` is neither `auto` nor a number"))
    }
}

/// Fitted training Gaussian with its regularized inverse covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTrainModel {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    precision: DMatrix<f64>,
    regularization: f64,
    sample_count: usize,
}

/// Fits mean and unbiased covariance of the training rows and inverts the
/// regularized covariance.
pub fn fit_gaussian(features: &FeatureMatrix, regularization: Regularization) -> Result<GaussianTrainModel> {
    let n = features.rows();
    let dim = features.dim();

    let mut mean = DVector::<f64>::zeros(dim);
    for row in features.row_iter() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean /= n as f64;

    let covariance = if n > 1 {
        let mut centered = DMatrix::<f64>::zeros(n, dim);
        for (i, row) in features.row_iter().enumerate() {
            for j in 0..dim {
                centered[(i, j)] = row[j] - mean[j];
            }
        }
        let mut c = centered.tr_mul(&centered) / (n as f64 - 1.0);
        symmetrize(&mut c);
        c
    } else {
        DMatrix::zeros(dim, dim)
    };

    let eps = regularization.resolve(&covariance)?;
    if eps == 0.0 && n <= dim {
        return Err(Error::Singular(format!(
            "{n} training rows cannot give a full-rank covariance in {dim} dimensions"
        )));
    }
    GaussianTrainModel::with_sample_count(mean, covariance, eps, n)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

impl GaussianTrainModel {
    /// Builds a model from given moments; `covariance + ε·I` must be
    /// symmetric positive definite.
    pub fn from_moments(mean: Vec<f64>, covariance: DMatrix<f64>, regularization: f64) -> Result<Self> {
        Self::with_sample_count(DVector::from_vec(mean), covariance, regularization, 0)
    }

    fn with_sample_count(
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
        eps: f64,
        sample_count: usize,
    ) -> Result<Self> {
        let dim = mean.len();
        if dim == 0 {
            return Err(Error::InvalidArgument("model dimension must be positive".into()));
        }
        if covariance.shape() != (dim, dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: covariance.nrows(),
            });
        }
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(Error::InvalidArgument(format!("regularization {eps} must be finite and >= 0")));
        }
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("model moments must be finite".into()));
        }
        let precision = invert_spd(&covariance, eps)?;
        Ok(GaussianTrainModel {
            mean,
            covariance,
            precision,
            regularization: eps,
            sample_count,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// `(Σ + εI)⁻¹`.
    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// Squared Mahalanobis distance of `x` to the training Gaussian.
    pub fn train2test_distance(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let diff = DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(a, m)| a - m));
        let d = diff.dot(&(&self.precision * &diff));
        Ok(d.max(0.0))
    }

    /// Distances of many feature vectors; output order follows input order.
    pub fn distances(&self, xs: &[&[f64]], exec: Execution) -> Result<Vec<f64>> {
        exec.map(xs, |x| self.train2test_distance(x)).into_iter().collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = self.dim();
        let mut out = Vec::with_capacity(32 + 8 * dim * (1 + 2 * dim));
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(dim as u64).to_le_bytes());
        out.extend_from_slice(&self.regularization.to_le_bytes());
        out.extend_from_slice(&(self.sample_count as u64).to_le_bytes());
        let row_major = |m: &DMatrix<f64>| (0..dim).flat_map(move |i| (0..dim).map(move |j| (i, j))).map(|ij| m[ij]).collect::<Vec<_>>();
        for v in self
            .mean
            .iter()
            .copied()
            .chain(row_major(&self.covariance))
            .chain(row_major(&self.precision))
        {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        if !bytes.starts_with(MODEL_MAGIC) {
            return Err(Error::Parse {
                origin: origin.to_string(),
                message: "missing T2TMODL magic".into(),
            });
        }
        if bytes.len() < 32 {
            return Err(Error::Truncated {
                origin: origin.to_string(),
                expected: 32,
                actual: bytes.len() as u64,
            });
        }
        let word = |i: usize| -> [u8; 8] { bytes[i..i + 8].try_into().expect("8 bytes") };
        let dim = u64::from_le_bytes(word(8));
        let eps = f64::from_le_bytes(word(16));
        let sample_count = u64::from_le_bytes(word(24)) as usize;
        let expected = dim
            .checked_mul(dim)
            .and_then(|d2| d2.checked_mul(2))
            .and_then(|v| v.checked_add(dim))
            .and_then(|v| v.checked_mul(8))
            .and_then(|v| v.checked_add(32))
            .ok_or_else(|| Error::validation(origin, "header", "dimension overflows"))?;
        if (bytes.len() as u64) != expected {
            return Err(Error::Truncated {
                origin: origin.to_string(),
                expected,
                actual: bytes.len() as u64,
            });
        }
        let dim = dim as usize;
        if dim == 0 {
            return Err(Error::validation(origin, "header", "dim must be positive"));
        }
        let values: Vec<f64> = bytes[32..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) || !(eps.is_finite() && eps >= 0.0) {
            return Err(Error::validation(origin, "payload", "non-finite model entry"));
        }
        let mean = DVector::from_column_slice(&values[..dim]);
        let covariance = DMatrix::from_row_slice(dim, dim, &values[dim..dim + dim * dim]);
        let precision = DMatrix::from_row_slice(dim, dim, &values[dim + dim * dim..]);
        Ok(GaussianTrainModel {
            mean,
            covariance,
            precision,
            regularization: eps,
            sample_count,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

/// Inverse of `cov + eps·I` through a Cholesky factorization.
fn invert_spd(cov: &DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    let dim = cov.nrows();
    let mut a = cov.clone();
    for i in 0..dim {
        a[(i, i)] += eps;
    }
    let max_diag = (0..dim).map(|i| a[(i, i)]).fold(0.0f64, f64::max);
    let chol = nalgebra::Cholesky::new(a)
        .ok_or_else(|| Error::Singular(format!("covariance + {eps}·I is not positive definite")))?;
    if eps == 0.0 {
        // exact-arithmetic rank deficiency shows up as pivots at rounding level
        let tol = dim as f64 * f64::EPSILON * max_diag;
        let l = chol.l_dirty();
        if (0..dim).any(|i| l[(i, i)] * l[(i, i)] <= tol) {
            return Err(Error::Singular("covariance is rank deficient".into()));
        }
    }
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Attaches the train2test distance to every TP and FP detection.
pub fn annotate_distances(model: &GaussianTrainModel, outcome: &MatchOutcome<'_>) -> Result<DistanceAnnotatedOutcome> {
    annotate_distances_with(model, outcome, Execution::default())
}

pub fn annotate_distances_with(
    model: &GaussianTrainModel,
    outcome: &MatchOutcome<'_>,
    exec: Execution,
) -> Result<DistanceAnnotatedOutcome> {
    let items: Vec<_> = outcome.detections().collect();
    let missing: Vec<String> = items
        .iter()
        .filter(|(d, _)| d.feature.is_none())
        .map(|(d, _)| d.detection_id.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFeatures { ids: missing });
    }
    let entries = exec
        .map(&items, |(d, is_tp)| {
            let f = d.feature.as_ref().expect("checked above");
            model.train2test_distance(f.as_slice()).map(|distance| AnnotatedEntry {
                detection_id: d.detection_id.clone(),
                kind: if *is_tp { EntryKind::TruePositive } else { EntryKind::FalsePositive },
                score: d.score,
                distance,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    DistanceAnnotatedOutcome::new(entries, outcome.total_gt, outcome.score_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(dim: usize, data: Vec<f64>) -> FeatureMatrix {
        let rows = data.len() / dim;
        FeatureMatrix::new(dim, data, (0..rows).map(|i| format!("t{i}")).collect()).unwrap()
    }

    #[test]
    fn square_corners() {
        let m = fit_gaussian(
            &matrix(2, vec![0.0, 0.0, 2.0, 0.0, 0.0, 2.0, 2.0, 2.0]),
            Regularization::Fixed(0.0),
        )
        .unwrap();
        assert_eq!(m.mean().as_slice(), &[1.0, 1.0]);
        let c = m.covariance();
        assert!((c[(0, 0)] - 4.0 / 3.0).abs() < 1e-15);
        assert!((c[(1, 1)] - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(c[(0, 1)], 0.0);
        assert_eq!(m.sample_count(), 4);
    }

    #[test]
    fn repeated_row_with_regularization() {
        let m = fit_gaussian(&matrix(2, vec![3.0, -1.0, 3.0, -1.0, 3.0, -1.0]), Regularization::Fixed(1e-6)).unwrap();
        assert_eq!(m.mean().as_slice(), &[3.0, -1.0]);
        assert!(m.covariance().iter().all(|v| *v == 0.0));
        let p = m.precision();
        assert!((p[(0, 0)] - 1e6).abs() < 1e-6);
        assert!((p[(1, 1)] - 1e6).abs() < 1e-6);
        assert_eq!(p[(0, 1)], 0.0);
    }

    #[test]
    fn single_row_gives_zero_covariance() {
        let m = fit_gaussian(&matrix(3, vec![1.0, 2.0, 3.0]), Regularization::Fixed(0.5)).unwrap();
        assert!(m.covariance().iter().all(|v| *v == 0.0));
        assert!((m.precision()[(2, 2)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn too_few_rows_without_regularization() {
        let err = fit_gaussian(&matrix(3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 7.0]), Regularization::Fixed(0.0)).unwrap_err();
        assert!(err.is_numerical());
        assert!(err.to_string().contains("--epsilon"));
    }

    #[test]
    fn collinear_rows_are_singular() {
        // rank 1 in two dimensions, more rows than dims
        let err = fit_gaussian(&matrix(2, vec![0.0, 0.0, 1.0, 2.0, 2.0, 4.0, 3.0, 6.0]), Regularization::Fixed(0.0)).unwrap_err();
        assert!(err.is_numerical(), "{err}");
    }

    #[test]
    fn auto_regularization_scale() {
        let m = fit_gaussian(&matrix(2, vec![0.0, 0.0, 2.0, 0.0, 0.0, 2.0, 2.0, 2.0]), Regularization::Auto).unwrap();
        assert!((m.regularization() - 1e-6 * (8.0 / 3.0) / 2.0).abs() < 1e-20);
    }

    #[test]
    fn negative_regularization_rejected() {
        assert!(fit_gaussian(&matrix(1, vec![0.0, 1.0]), Regularization::Fixed(-1.0)).is_err());
        assert_eq!("auto".parse::<Regularization>().unwrap(), Regularization::Auto);
        assert_eq!("0.5".parse::<Regularization>().unwrap(), Regularization::Fixed(0.5));
    }

    #[test]
    fn identity_distance_is_squared_norm() {
        let m = GaussianTrainModel::from_moments(vec![0.0, 0.0], DMatrix::identity(2, 2), 0.0).unwrap();
        assert_eq!(m.train2test_distance(&[3.0, 4.0]).unwrap(), 25.0);
        assert_eq!(m.train2test_distance(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_distance() {
        let m = GaussianTrainModel::from_moments(
            vec![1.0, 1.0],
            DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])),
            0.0,
        )
        .unwrap();
        assert!((m.train2test_distance(&[3.0, 2.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn distance_at_mean_is_zero() {
        let m = fit_gaussian(&matrix(2, vec![0.3, 1.0, 2.0, -0.5, 0.7, 2.5, 1.1, 0.2]), Regularization::Auto).unwrap();
        let mu: Vec<f64> = m.mean().iter().copied().collect();
        assert_eq!(m.train2test_distance(&mu).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let m = GaussianTrainModel::from_moments(vec![0.0, 0.0], DMatrix::identity(2, 2), 0.0).unwrap();
        assert!(matches!(m.train2test_distance(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn model_bytes_round_trip() {
        let m = fit_gaussian(&matrix(2, vec![0.3, 1.0, 2.0, -0.5, 0.7, 2.5, 1.1, 0.2]), Regularization::Auto).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..8], MODEL_MAGIC);
        assert_eq!(GaussianTrainModel::from_bytes(&bytes, "m").unwrap(), m);
        assert!(matches!(
            GaussianTrainModel::from_bytes(&bytes[..bytes.len() - 8], "m"),
            Err(Error::Truncated { .. })
        ));
    }
}
