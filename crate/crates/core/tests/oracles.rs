//! Checks against independently computed reference values.

use nalgebra::{DMatrix, SymmetricEigen};
use perpscale::affinity::{build_affinities, AffinityMode};
use perpscale::dataset::{draw_nested_samples, sample_size};
use perpscale::metrics::{knn_overlap, neighborhood_recall, silhouette};
use perpscale::optimizer::{bh_gradient, exact_gradient, kl_cost, pca_project};
use perpscale::scaling::{median, monte_carlo_perplexities, scale_perplexity, Rounding, ScalingRule};
use perpscale::synthetic::{gaussian_mixture, isotropic_gaussian, MixtureSpec};
use perpscale::{Dataset, Embedding};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_embedding(ids: &[u64], seed: u64, scale: f64) -> Embedding {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = (0..ids.len() * 2).map(|_| rng.random_range(-scale..scale)).collect();
    Embedding::new(coords, 2, ids.to_vec()).unwrap()
}

#[test]
fn exact_gradient_matches_central_differences() {
    for seed in 0..5 {
        let ds = isotropic_gaussian(25, 4, seed).unwrap();
        let aff = build_affinities(&ds, 6.0, AffinityMode::Dense).unwrap();
        let emb = random_embedding(ds.ids(), 100 + seed, 3.0);
        let grad = exact_gradient(&aff, &emb).unwrap();
        let h = 1e-5;
        for (c, &g) in grad.iter().enumerate() {
            let shifted = |delta: f64| {
                let mut coords = emb.coords().to_vec();
                coords[c] += delta;
                kl_cost(&aff, &Embedding::new(coords, 2, emb.ids().to_vec()).unwrap()).unwrap()
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            if g.abs() > 1e-8 {
                assert!((fd - g).abs() <= 1e-4 * g.abs(), "coord {c}: fd {fd} vs {g}");
            }
        }
    }
}

#[test]
fn barnes_hut_at_zero_theta_is_exact() {
    let ds = gaussian_mixture(&MixtureSpec::new(300, 5, 3, 4)).unwrap();
    let aff = build_affinities(&ds, 15.0, AffinityMode::Sparse).unwrap();
    let emb = random_embedding(ds.ids(), 8, 20.0);
    let exact = exact_gradient(&aff, &emb).unwrap();
    let bh = bh_gradient(&aff, &emb, 0.0).unwrap();
    let worst = exact.iter().zip(&bh).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-10, "{worst}");
}

#[test]
fn pca_agrees_with_symmetric_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (n, d) = (80, 6);
    let scales = [5.0, 3.0, 2.0, 1.0, 0.5, 0.25];
    let points: Vec<f64> = (0..n * d).map(|k| scales[k % d] * rng.random_range(-1.0..1.0)).collect();
    let ds = Dataset::from_rows("pca", points.clone(), d).unwrap();
    let proj = pca_project(&ds, 3).unwrap();

    let x = DMatrix::from_row_slice(n, d, &points);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    for (k, &col) in order.iter().take(3).enumerate() {
        let lambda = eig.eigenvalues[col];
        assert!((proj.eigenvalues[k] - lambda).abs() <= 1e-9 * lambda, "{k}");
        let axis: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
        let sign = proj.components[k].iter().zip(&axis).map(|(a, b)| a * b).sum::<f64>().signum();
        for (a, b) in proj.components[k].iter().zip(&axis) {
            assert!((a - sign * b).abs() <= 1e-7, "{a} vs {b}");
        }
    }
}

#[test]
fn dense_and_sparse_agree_on_sparse_support() {
    let ds = gaussian_mixture(&MixtureSpec::new(400, 8, 4, 21)).unwrap();
    let dense = build_affinities(&ds, 20.0, AffinityMode::Dense).unwrap();
    let sparse = build_affinities(&ds, 20.0, AffinityMode::Sparse).unwrap();
    assert!((dense.total() - 1.0).abs() <= 1e-9);
    assert!((sparse.total() - 1.0).abs() <= 1e-9);
    for (i, j, p) in sparse.entries() {
        assert!((p - dense.get(i, j)).abs() <= 1e-3);
    }
}

#[test]
fn kl_cost_matches_direct_formula() {
    let ds = isotropic_gaussian(30, 3, 2).unwrap();
    let aff = build_affinities(&ds, 5.0, AffinityMode::Dense).unwrap();
    let emb = random_embedding(ds.ids(), 5, 2.0);
    let n = emb.len();
    let w = |i: usize, j: usize| {
        let (a, b) = (emb.point(i), emb.point(j));
        1.0 / (1.0 + (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
    };
    let z: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| w(i, j)).sum();
    let mut expected = 0.0;
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            let p = aff.get(i, j);
            if p > 0.0 {
                expected += p * (p / (w(i, j) / z)).ln();
            }
        }
    }
    assert!((kl_cost(&aff, &emb).unwrap() - expected).abs() <= 1e-12);
}

#[test]
fn table_one_mnist_column() {
    let n = 70_000;
    for row in [[1.0, 4.0, 7.0, 10.0], [7.0, 28.0, 49.0, 70.0], [21.0, 84.0, 147.0, 210.0], [144.0, 576.0, 1008.0, 1440.0]] {
        let rule = ScalingRule::new(row[0], sample_size(n, 0.1), Rounding::Nearest).unwrap();
        for (k, rate) in [0.4, 0.7, 1.0].into_iter().enumerate() {
            assert_eq!(scale_perplexity(&rule, sample_size(n, rate)).unwrap(), row[k + 1]);
        }
    }
}

#[test]
fn half_sample_median_tracks_half_perplexity() {
    let ds = isotropic_gaussian(2000, 10, 77).unwrap();
    for seed in 0..3 {
        let plan = draw_nested_samples(&ds, &[0.5], seed).unwrap();
        let sample = ds.subset(&plan.levels[0]).unwrap();
        let values = monte_carlo_perplexities(&ds, &sample, 30.0).unwrap();
        let mut v: Vec<f64> = values.iter().filter(|p| !p.clamped).map(|p| p.value).collect();
        let m = median(&mut v);
        assert!((12.0..=18.0).contains(&m), "seed {seed}: {m}");
    }
}

#[test]
fn overlap_is_similarity_invariant() {
    let ids: Vec<u64> = (0..200).collect();
    let a = random_embedding(&ids, 3, 10.0);
    let (c, s) = (0.6f64.cos(), 0.6f64.sin());
    let moved: Vec<f64> = a
        .coords()
        .chunks_exact(2)
        .flat_map(|p| [3.0 * (c * p[0] - s * p[1]) + 7.0, 3.0 * (s * p[0] + c * p[1]) - 2.0])
        .collect();
    let b = Embedding::new(moved, 2, ids.clone()).unwrap();
    assert_eq!(knn_overlap(&a, &b, 10).unwrap().knn_overlap, 1.0);
}

#[test]
fn shuffled_coordinates_lose_neighborhoods() {
    let ids: Vec<u64> = (0..1000).collect();
    let a = random_embedding(&ids, 4, 10.0);
    let mut rows: Vec<Vec<f64>> = a.coords().chunks_exact(2).map(<[f64]>::to_vec).collect();
    rows.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    let b = Embedding::new(rows.concat(), 2, ids).unwrap();
    let score = knn_overlap(&a, &b, 10).unwrap().knn_overlap;
    assert!(score < 0.05, "{score}");
}

#[test]
fn recall_of_flattened_data_is_perfect() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 150;
    let mut points = Vec::with_capacity(n * 4);
    let mut coords = Vec::with_capacity(n * 2);
    for _ in 0..n {
        let (x, y) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        points.extend([x, y, 0.0, 0.0]);
        coords.extend([x, y]);
    }
    let ds = Dataset::from_rows("flat", points, 4).unwrap();
    let emb = Embedding::new(coords, 2, ds.ids().to_vec()).unwrap();
    assert_eq!(neighborhood_recall(&ds, &emb, 10).unwrap(), 1.0);
    let random = random_embedding(ds.ids(), 1, 5.0);
    let big = isotropic_gaussian(1000, 5, 3).unwrap();
    assert!(neighborhood_recall(&big, &random_embedding(big.ids(), 2, 5.0), 10).unwrap() < 0.05);
    assert!(neighborhood_recall(&ds, &random, 10).unwrap() < 1.0);
}

#[test]
fn random_labels_have_near_zero_silhouette() {
    let ids: Vec<u64> = (0..600).collect();
    let emb = random_embedding(&ids, 6, 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let labels: Vec<i64> = (0..600).map(|_| rng.random_range(0..3)).collect();
    assert!(silhouette(&emb, &labels).unwrap().abs() <= 0.1);
}
