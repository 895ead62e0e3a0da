//! Diversity, quality and alignment metrics on generic feature vectors.

use serde::{Deserialize, Serialize};

use crate::adengine::{cosine, norm, Tensor};
use crate::encoder::PromptEmbedding;
use crate::linalg::symmetric_eigen;
use crate::rng::{tags, Stream};
use crate::{Error, Result};

/// Eigenvalues of the normalized kernel below this are treated as zero.
pub const VENDI_EIGEN_FLOOR: f64 = 1e-12;
/// Negative trace residue down to this magnitude is clamped to zero.
pub const FRECHET_CLAMP: f64 = 1e-8;
/// Relative eigenvalue floor inside the Fréchet matrix square roots.
pub const ROOT_FLOOR: f64 = 1e-12;
pub const DEFAULT_K: usize = 3;

/// `m` feature vectors of dimension `q`, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    features: Tensor,
    pub label: Option<String>,
}

impl FeatureSet {
    pub fn new(features: Tensor) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::Invalid(format!(
                "feature set must be a matrix, got shape {:?}",
                features.shape()
            )));
        }
        if !features.is_finite() {
            return Err(Error::Invalid("feature set has non-finite entries".into()));
        }
        Ok(Self { features, label: None })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Invalid("feature set needs at least one row".into()));
        }
        Self::new(Tensor::from_rows(rows)?)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.len()).map(|i| self.row(i))
    }

    pub fn matrix(&self) -> &Tensor {
        &self.features
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mss: Option<f64>,
    pub vendi: Option<f64>,
    pub frechet: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub alignment: Option<f64>,
    pub k: Option<usize>,
}

fn unit_rows(fs: &FeatureSet) -> Result<Vec<Vec<f64>>> {
    fs.rows()
        .map(|r| {
            let n = norm(r);
            if n < 1e-12 {
                return Err(Error::ZeroNorm("feature row"));
            }
            Ok(r.iter().map(|v| v / n).collect())
        })
        .collect()
}

/// Mean cosine similarity over unordered pairs of distinct rows.
pub fn mean_pairwise_similarity(fs: &FeatureSet) -> Result<f64> {
    let m = fs.len();
    if m < 2 {
        return Err(Error::Invalid("MSS needs at least two samples".into()));
    }
    let mut total = 0.0;
    for i in 0..m {
        for j in (i + 1)..m {
            total += cosine(fs.row(i), fs.row(j))?;
        }
    }
    Ok(total / (m * (m - 1) / 2) as f64)
}

/// `exp` of the Shannon entropy of the eigenvalues of `K / m`, where `K` is
/// the cosine kernel of the rows.
pub fn vendi_score(fs: &FeatureSet) -> Result<f64> {
    let m = fs.len();
    let unit = unit_rows(fs)?;
    let mut k = vec![0.0; m * m];
    for i in 0..m {
        for j in i..m {
            let s: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum::<f64>() / m as f64;
            k[i * m + j] = s;
            k[j * m + i] = s;
        }
    }
    let eig = symmetric_eigen(&k, m)?;
    let entropy: f64 = eig
        .values
        .iter()
        .filter(|&&l| l >= VENDI_EIGEN_FLOOR)
        .map(|&l| -l * l.ln())
        .sum();
    Ok(entropy.exp().clamp(1.0, m as f64))
}

fn mean_and_covariance(fs: &FeatureSet) -> (Vec<f64>, Vec<f64>) {
    let (m, q) = (fs.len(), fs.dim());
    let mut mean = vec![0.0; q];
    for r in fs.rows() {
        for (a, v) in mean.iter_mut().zip(r) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    let mut cov = vec![0.0; q * q];
    for r in fs.rows() {
        for i in 0..q {
            let di = r[i] - mean[i];
            for j in i..q {
                cov[i * q + j] += di * (r[j] - mean[j]);
            }
        }
    }
    let denom = (m - 1) as f64;
    for i in 0..q {
        for j in i..q {
            let v = cov[i * q + j] / denom;
            cov[i * q + j] = v;
            cov[j * q + i] = v;
        }
    }
    (mean, cov)
}

/// Square roots of eigenvalues, with those below `ROOT_FLOOR` times the
/// largest treated as zero. Rank-deficient covariances otherwise turn
/// rounding noise of order 1e-15 into errors of order 1e-7 under the root.
fn floored_roots(values: &[f64]) -> Vec<f64> {
    let top = values.iter().copied().fold(0.0, f64::max);
    values
        .iter()
        .map(|&l| if l > top * ROOT_FLOOR { l.sqrt() } else { 0.0 })
        .collect()
}

fn matmul_sq(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

/// Fréchet distance between Gaussian fits (sample mean, unbiased
/// covariance) of two feature sets.
pub fn frechet_distance(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            kind: "frechet",
            lhs: a.matrix().shape().to_vec(),
            rhs: b.matrix().shape().to_vec(),
        });
    }
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Invalid("Fréchet distance needs at least two samples per set".into()));
    }
    let q = a.dim();
    let (mu_a, cov_a) = mean_and_covariance(a);
    let (mu_b, cov_b) = mean_and_covariance(b);
    let mean_term: f64 = mu_a.iter().zip(&mu_b).map(|(x, y)| (x - y) * (x - y)).sum();

    // tr((S_a S_b)^{1/2}) = tr((S_a^{1/2} S_b S_a^{1/2})^{1/2})
    let ea = symmetric_eigen(&cov_a, q)?;
    let roots_a = floored_roots(&ea.values);
    let mut root_a = vec![0.0; q * q];
    for i in 0..q {
        for j in 0..q {
            root_a[i * q + j] = (0..q)
                .map(|k| ea.vectors[i * q + k] * roots_a[k] * ea.vectors[j * q + k])
                .sum();
        }
    }
    let inner = matmul_sq(&matmul_sq(&root_a, &cov_b, q), &root_a, q);
    let cross: f64 = floored_roots(&symmetric_eigen(&inner, q)?.values).iter().sum();
    let trace_a: f64 = (0..q).map(|i| cov_a[i * q + i]).sum();
    let trace_b: f64 = (0..q).map(|i| cov_b[i * q + i]).sum();
    let d = mean_term + trace_a + trace_b - 2.0 * cross;
    Ok(if d < 0.0 && d > -FRECHET_CLAMP { 0.0 } else { d })
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distance from each row to its `k`-th nearest other row.
fn knn_radii(fs: &FeatureSet, k: usize) -> Vec<f64> {
    let m = fs.len();
    (0..m)
        .map(|i| {
            let mut d: Vec<f64> = (0..m).filter(|&j| j != i).map(|j| euclidean(fs.row(i), fs.row(j))).collect();
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect()
}

/// Fraction of `probe` rows that fall inside some `support` row's k-NN ball
/// (inclusive).
fn coverage(support: &FeatureSet, radii: &[f64], probe: &FeatureSet) -> f64 {
    let inside = probe
        .rows()
        .filter(|p| {
            support
                .rows()
                .zip(radii)
                .any(|(s, &r)| euclidean(p, s) <= r)
        })
        .count();
    inside as f64 / probe.len() as f64
}

/// k-NN manifold precision and recall.
pub fn precision_recall(real: &FeatureSet, generated: &FeatureSet, k: usize) -> Result<(f64, f64)> {
    if real.dim() != generated.dim() {
        return Err(Error::ShapeMismatch {
            kind: "precision-recall",
            lhs: real.matrix().shape().to_vec(),
            rhs: generated.matrix().shape().to_vec(),
        });
    }
    if k == 0 || real.len() <= k || generated.len() <= k {
        return Err(Error::Invalid(format!(
            "precision/recall needs more than k={k} samples per set (got {} and {})",
            real.len(),
            generated.len()
        )));
    }
    let real_radii = knn_radii(real, k);
    let gen_radii = knn_radii(generated, k);
    Ok((
        coverage(real, &real_radii, generated),
        coverage(generated, &gen_radii, real),
    ))
}

/// Seeded linear map from features (`q`) to the prompt space (`d_p`).
#[derive(Clone, Debug)]
pub struct AlignmentMap {
    weight: Tensor,
}

impl AlignmentMap {
    pub fn seeded(seed: u64, feature_dim: usize, prompt_dim: usize) -> Result<Self> {
        let w = Stream::new(seed, tags::ALIGNMENT_MAP).normals(feature_dim * prompt_dim, 1.0 / (feature_dim as f64).sqrt());
        Ok(Self {
            weight: Tensor::matrix(feature_dim, prompt_dim, w)?,
        })
    }

    pub fn from_matrix(weight: Tensor) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::Invalid("alignment map must be a matrix".into()));
        }
        Ok(Self { weight })
    }

    /// `f^T W`: feature of length `q` to a `d_p` vector.
    pub fn apply(&self, feature: &[f64]) -> Result<Vec<f64>> {
        if feature.len() != self.weight.rows() {
            return Err(Error::ShapeMismatch {
                kind: "alignment map",
                lhs: vec![feature.len()],
                rhs: self.weight.shape().to_vec(),
            });
        }
        let row = Tensor::matrix(1, feature.len(), feature.to_vec())?;
        Ok(row.matmul(&self.weight)?.into_data())
    }
}

/// `100 * cos(prompt, map(feature))`.
pub fn alignment_score(prompt: &PromptEmbedding, feature: &[f64], map: &AlignmentMap) -> Result<f64> {
    let mapped = map.apply(feature)?;
    Ok(100.0 * cosine(prompt.as_slice(), &mapped)?)
}
