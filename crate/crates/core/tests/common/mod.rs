//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use tpso::metrics::FeatureSet;
use tpso::rng::Stream;

pub fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

pub fn feature_set(rows: &[Vec<f64>]) -> FeatureSet {
    FeatureSet::from_rows(rows).unwrap()
}

/// Vendi score through nalgebra's symmetric eigensolver.
pub fn vendi_oracle(rows: &[Vec<f64>]) -> f64 {
    let x = to_matrix(rows);
    let m = x.nrows();
    let mut unit = x.clone();
    for mut r in unit.row_iter_mut() {
        let n = r.norm();
        r /= n;
    }
    let k = &unit * unit.transpose() / m as f64;
    let eig = SymmetricEigen::new(k);
    let h: f64 = eig
        .eigenvalues
        .iter()
        .filter(|&&l| l >= 1e-12)
        .map(|&l| -l * l.ln())
        .sum();
    h.exp()
}

fn mean_cov(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let m = x.nrows() as f64;
    let mu = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut r in centered.row_iter_mut() {
        r -= mu.transpose();
    }
    let cov = centered.transpose() * &centered / (m - 1.0);
    (mu, cov)
}

fn psd_sqrt(s: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(s.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Fréchet distance with `tr((S_a S_b)^{1/2})` taken as the nuclear norm of
/// `S_a^{1/2} S_b^{1/2}`.
pub fn frechet_oracle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (mu_a, s_a) = mean_cov(&to_matrix(a));
    let (mu_b, s_b) = mean_cov(&to_matrix(b));
    let cross: f64 = (psd_sqrt(&s_a) * psd_sqrt(&s_b)).singular_values().iter().sum();
    (mu_a - mu_b).norm_squared() + s_a.trace() + s_b.trace() - 2.0 * cross
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// k-th nearest distance by sorting every distance to the other rows.
fn radius(rows: &[Vec<f64>], i: usize, k: usize) -> f64 {
    let mut d: Vec<f64> = (0..rows.len())
        .filter(|&j| j != i)
        .map(|j| distance(&rows[i], &rows[j]))
        .collect();
    d.sort_by(|x, y| x.partial_cmp(y).unwrap());
    d[k - 1]
}

/// Exhaustive k-NN manifold precision and recall.
pub fn precision_recall_oracle(real: &[Vec<f64>], generated: &[Vec<f64>], k: usize) -> (f64, f64) {
    let inside = |support: &[Vec<f64>], probe: &[Vec<f64>]| {
        let radii: Vec<f64> = (0..support.len()).map(|i| radius(support, i, k)).collect();
        let hits = probe
            .iter()
            .filter(|p| support.iter().zip(&radii).any(|(s, &r)| distance(p, s) <= r))
            .count();
        hits as f64 / probe.len() as f64
    };
    (inside(real, generated), inside(generated, real))
}

/// Mean cosine over unordered pairs, computed pair by pair.
pub fn mss_oracle(rows: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let (a, b) = (DVector::from_vec(rows[i].clone()), DVector::from_vec(rows[j].clone()));
            total += a.dot(&b) / (a.norm() * b.norm());
            pairs += 1;
        }
    }
    total / pairs as f64
}

pub fn gaussian_rows(s: &mut Stream, m: usize, q: usize, shift: f64) -> Vec<Vec<f64>> {
    (0..m).map(|_| s.normals(q, 1.0).into_iter().map(|v| v + shift).collect()).collect()
}

/// A random metric instance with both sets of at most 16 rows. Feature
/// widths stay below the row counts so covariances are full rank.
pub struct Instance {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub k: usize,
}

pub fn metric_instance(index: u64) -> Instance {
    let mut s = Stream::new(0xFEED, index);
    let ma = 3 + (s.next_u64() % 14) as usize;
    let mb = 3 + (s.next_u64() % 14) as usize;
    let q = 1 + (s.next_u64() % (ma.min(mb) as u64 - 2).min(6)) as usize;
    let k = 1 + (s.next_u64() % 3) as usize;
    let k = k.min(ma.min(mb) - 1);
    let shift = s.uniform() * 2.0;
    Instance {
        a: gaussian_rows(&mut s, ma, q, 0.0),
        b: gaussian_rows(&mut s, mb, q, shift),
        k,
    }
}

/// Relative-or-absolute closeness at tolerance `tol`.
pub fn close(x: f64, y: f64, tol: f64) -> bool {
    (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0)
}
