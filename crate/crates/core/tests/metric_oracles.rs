mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use tpso::metrics::*;
use tpso::rng::Stream;

#[test]
fn random_instances_match_oracles() {
    for i in 0..50 {
        let inst = metric_instance(i);
        let (a, b) = (feature_set(&inst.a), feature_set(&inst.b));
        let v = vendi_score(&a).unwrap();
        assert!(close(v, vendi_oracle(&inst.a), 1e-8), "instance {i}: vendi {v}");
        let f = frechet_distance(&a, &b).unwrap();
        assert!(close(f, frechet_oracle(&inst.a, &inst.b), 1e-8), "instance {i}: frechet {f}");
        assert_eq!(
            precision_recall(&a, &b, inst.k).unwrap(),
            precision_recall_oracle(&inst.a, &inst.b, inst.k),
            "instance {i}"
        );
        let mss = mean_pairwise_similarity(&a).unwrap();
        assert!((mss - mss_oracle(&inst.a)).abs() < 1e-12);
    }
}

#[test]
fn planted_eight_sample_instance() {
    // two tight clusters of real points; generated points near one cluster,
    // one at a tie distance and one far away
    let real = vec![
        vec![0.0, 0.0],
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![1.0, 1.0],
        vec![10.0, 10.0],
        vec![11.0, 10.0],
        vec![10.0, 11.0],
        vec![11.0, 11.0],
    ];
    let generated = vec![
        vec![0.5, 0.5],
        vec![2.0, 0.0],
        vec![10.5, 10.5],
        vec![50.0, 50.0],
        vec![0.0, 2.0],
        vec![11.0, 12.0],
        vec![-0.5, 0.0],
        vec![30.0, -3.0],
    ];
    for k in 1..=3 {
        let got = precision_recall(&feature_set(&real), &feature_set(&generated), k).unwrap();
        assert_eq!(got, precision_recall_oracle(&real, &generated, k), "k={k}");
    }
    // k = 1: radius 1 around every real point, so (2,0), (0,2) and (11,12)
    // sit exactly on a boundary and count as inside
    let (p, _) = precision_recall(&feature_set(&real), &feature_set(&generated), 1).unwrap();
    assert_eq!(p, 6.0 / 8.0);
}

#[test]
fn five_point_planted_k1() {
    let real = vec![vec![0.0], vec![1.0], vec![3.0], vec![6.0], vec![10.0]];
    let generated = vec![vec![0.5], vec![4.0], vec![8.5], vec![20.0], vec![-1.0]];
    let got = precision_recall(&feature_set(&real), &feature_set(&generated), 1).unwrap();
    assert_eq!(got, precision_recall_oracle(&real, &generated, 1));
    // radii 1,1,2,3,4 cover [-1,14]; generated radii 3.5,3.5,4.5,11.5,1.5
    assert_eq!(got, (4.0 / 5.0, 1.0));
}

#[test]
fn diagonal_covariance_closed_form() {
    // per-coordinate samples with known sample mean and variance
    let cols_a = [[1.0, 3.0, 5.0, 7.0], [0.0, 0.0, 2.0, 2.0]];
    let cols_b = [[2.0, 2.0, 4.0, 4.0], [-3.0, 3.0, -3.0, 3.0]];
    // keep the coordinates uncorrelated within each set
    let rows = |cols: &[[f64; 4]; 2], order: [usize; 4]| -> Vec<Vec<f64>> {
        (0..4).map(|i| vec![cols[0][i], cols[1][order[i]]]).collect()
    };
    let a = rows(&cols_a, [0, 2, 3, 1]);
    let b = rows(&cols_b, [0, 1, 3, 2]);
    let stats = |rows: &[Vec<f64>], j: usize| {
        let m = rows.len() as f64;
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / m;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (m - 1.0);
        (mean, var)
    };
    let mut expected = 0.0;
    for j in 0..2 {
        let (ma, va) = stats(&a, j);
        let (mb, vb) = stats(&b, j);
        expected += (ma - mb).powi(2) + (va.sqrt() - vb.sqrt()).powi(2);
    }
    let (ca, cb) = (covariance(&a), covariance(&b));
    assert!(ca[(0, 1)].abs() < 1e-12 && cb[(0, 1)].abs() < 1e-12, "{ca} {cb}");
    let got = frechet_distance(&feature_set(&a), &feature_set(&b)).unwrap();
    assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
}

fn covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let x = to_matrix(rows);
    let mu = x.row_mean();
    let mut c = x.clone();
    for mut r in c.row_iter_mut() {
        r -= &mu;
    }
    c.transpose() * &c / (rows.len() as f64 - 1.0)
}

#[test]
fn fixed_anchors() {
    let eye: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| f64::from(i == j)).collect()).collect();
    assert!((vendi_score(&feature_set(&eye)).unwrap() - 5.0).abs() < 1e-12);
    let same = vec![vec![0.3, -1.0, 2.0]; 4];
    assert!((vendi_score(&feature_set(&same)).unwrap() - 1.0).abs() < 1e-12);
    assert!((mean_pairwise_similarity(&feature_set(&same)).unwrap() - 1.0).abs() < 1e-12);
    let r = feature_set(&[vec![1.0, 0.0], vec![1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()]]);
    assert!((mean_pairwise_similarity(&r).unwrap() - 2f64.sqrt() / 2.0).abs() < 1e-15);
    let far_a = gaussian_rows(&mut Stream::new(1, 1), 6, 3, 0.0);
    let far_b = gaussian_rows(&mut Stream::new(1, 2), 6, 3, 1e3);
    let (p, rc) = precision_recall(&feature_set(&far_a), &feature_set(&far_b), 3).unwrap();
    assert_eq!((p, rc), (0.0, 0.0));
    let (p, rc) = precision_recall(&feature_set(&far_a), &feature_set(&far_a), 3).unwrap();
    assert_eq!((p, rc), (1.0, 1.0));
    assert!(precision_recall(&feature_set(&far_a), &feature_set(&far_b[..3]), 3).is_err());
}

fn rotation(q: usize, seed: u64) -> DMatrix<f64> {
    let g = DMatrix::from_vec(q, q, Stream::new(seed, 9).normals(q * q, 1.0));
    g.qr().q()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vendi_bounds_and_permutation(seed in 0u64..10_000, m in 1usize..12, q in 1usize..6) {
        let rows = gaussian_rows(&mut Stream::new(seed, 3), m, q, 0.0);
        let v = vendi_score(&feature_set(&rows)).unwrap();
        prop_assert!((1.0..=m as f64).contains(&v));
        let mut rev = rows.clone();
        rev.reverse();
        prop_assert!((vendi_score(&feature_set(&rev)).unwrap() - v).abs() < 1e-10);
    }

    #[test]
    fn frechet_symmetry_and_rotation(seed in 0u64..10_000, m in 3usize..14, q in 1usize..5) {
        let q = q.min(m - 1);
        let mut s = Stream::new(seed, 4);
        let a = gaussian_rows(&mut s, m, q, 0.0);
        let b = gaussian_rows(&mut s, m + 1, q, 0.7);
        let (fa, fb) = (feature_set(&a), feature_set(&b));
        let d = frechet_distance(&fa, &fb).unwrap();
        prop_assert!(d >= -1e-8);
        prop_assert!((d - frechet_distance(&fb, &fa).unwrap()).abs() < 1e-8);
        prop_assert!(frechet_distance(&fa, &fa).unwrap().abs() <= 1e-8);
        let r = rotation(q, seed);
        let rotate = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let x = to_matrix(rows) * &r;
            x.row_iter().map(|row| row.iter().copied().collect()).collect()
        };
        let dr = frechet_distance(&feature_set(&rotate(&a)), &feature_set(&rotate(&b))).unwrap();
        prop_assert!((d - dr).abs() < 1e-6);
    }

    #[test]
    fn mss_scale_invariant(seed in 0u64..10_000, m in 2usize..10) {
        let mut s = Stream::new(seed, 5);
        let rows = gaussian_rows(&mut s, m, 4, 0.0);
        let scaled: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let c = 0.1 + 10.0 * s.uniform();
                r.iter().map(|v| v * c).collect()
            })
            .collect();
        let (x, y) = (
            mean_pairwise_similarity(&feature_set(&rows)).unwrap(),
            mean_pairwise_similarity(&feature_set(&scaled)).unwrap(),
        );
        prop_assert!((x - y).abs() < 1e-12);
    }

    #[test]
    fn precision_recall_exact_with_ties(seed in 0u64..10_000, m in 2usize..16, k in 1usize..4) {
        prop_assume!(m > k);
        // integer lattice points produce many equal distances
        let mut s = Stream::new(seed, 6);
        let mut lattice = |n: usize| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..2).map(|_| (s.next_u64() % 5) as f64).collect()).collect()
        };
        let (real, generated) = (lattice(m), lattice(m.max(k + 1)));
        let got = precision_recall(&feature_set(&real), &feature_set(&generated), k).unwrap();
        prop_assert_eq!(got, precision_recall_oracle(&real, &generated, k));
    }
}
