mod common;

use common::{clustered, fisher_integer, mw_enumerated, u_direct};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use searchlab::stats::{
    binomial_tail, bootstrap_ci, fisher_exact, gower_matrix, holm_bonferroni, mann_whitney_u, permutation_cluster_test,
    spearman_rho, FeatureVector,
};

#[test]
fn mann_whitney_matches_enumeration_for_all_sizes_up_to_5() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for na in 1..=5 {
        for nb in 1..=5 {
            for trial in 0..8 {
                // small integer support forces plenty of ties on half the trials
                let draw = |rng: &mut ChaCha8Rng| -> f64 {
                    if trial % 2 == 0 { f64::from(rng.random_range(0..4)) } else { rng.random::<f64>() }
                };
                let a: Vec<f64> = (0..na).map(|_| draw(&mut rng)).collect();
                let b: Vec<f64> = (0..nb).map(|_| draw(&mut rng)).collect();
                let r = mann_whitney_u(&a, &b).unwrap();
                assert_eq!(r.statistic, u_direct(&a, &b), "{a:?} {b:?}");
                let oracle = mw_enumerated(&a, &b);
                assert!((r.raw_p - oracle).abs() < 1e-12, "{a:?} {b:?}: {} vs {oracle}", r.raw_p);
            }
        }
    }
}

#[test]
fn fisher_matches_hypergeometric_enumeration_up_to_margin_12() {
    let mut checked = 0;
    for a in 0..=12u64 {
        for b in 0..=12 - a {
            for c in 0..=12 - a {
                for d in 0..=(12 - b).min(12 - c) {
                    if a + b + c + d == 0 {
                        continue;
                    }
                    let t = [[a, b], [c, d]];
                    let got = fisher_exact(t).unwrap().raw_p;
                    let want = fisher_integer(t);
                    assert!((got - want).abs() <= 1e-9 * want.max(1e-300) + 1e-15, "{t:?}: {got} vs {want}");
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 5000);
}

#[test]
fn separated_clusters_hit_the_permutation_floor() {
    let (m, labels) = clustered(3, 8, 0.1, 10.0);
    let r = permutation_cluster_test(&m, &labels, 2000, 5).unwrap();
    assert!((r.statistic - 100.0).abs() < 1e-9);
    assert_eq!(r.raw_p, 1.0 / 2001.0);
}

#[test]
fn permutation_p_is_uniform_on_structureless_data() {
    let n_perm = 99;
    let mut ps = Vec::new();
    for rep in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + rep);
        let pts: Vec<[f64; 2]> = (0..12).map(|_| [rng.random(), rng.random()]).collect();
        let m: Vec<Vec<f64>> = pts
            .iter()
            .map(|p| pts.iter().map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()).collect())
            .collect();
        let labels: Vec<String> = (0..12).map(|i| ["a", "b", "c"][i % 3].to_string()).collect();
        let r = permutation_cluster_test(&m, &labels, n_perm, rep).unwrap();
        assert!(r.raw_p >= 1.0 / (n_perm as f64 + 1.0));
        ps.push(r.raw_p);
    }
    ps.sort_by(f64::total_cmp);
    let n = ps.len() as f64;
    let ks = ps
        .iter()
        .enumerate()
        .map(|(i, &p)| (p - i as f64 / n).abs().max(((i + 1) as f64 / n - p).abs()))
        .fold(0.0, f64::max);
    // 1% critical value 1.63/√200, plus the 1/100 lattice of attainable p-values
    assert!(ks < 1.63 / n.sqrt() + 0.01, "KS statistic {ks}");
}

#[test]
fn bootstrap_sign_is_stable_across_resample_counts() {
    let a = [1.00, 1.02, 0.99, 1.01, 1.03];
    let b = [0.90, 0.93, 0.91, 0.92, 0.89];
    for seed in 0..5 {
        let lo3 = bootstrap_ci(&a, &b, 1_000, seed).unwrap();
        let lo4 = bootstrap_ci(&a, &b, 10_000, seed).unwrap();
        assert!(lo3.ci_low.unwrap() > 0.0 && lo4.ci_low.unwrap() > 0.0);
        assert_eq!(lo4.raw_p, 1e-4);
    }
}

fn small_vec() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-5.0f64..5.0, 2..8)
}

proptest! {
    #[test]
    fn holm_dominates_raw(ps in proptest::collection::vec(0.0f64..=1.0, 1..12)) {
        let adj = holm_bonferroni(&ps);
        for (a, p) in adj.iter().zip(&ps) {
            prop_assert!(*a >= *p && *a <= 1.0);
        }
    }

    #[test]
    fn mann_whitney_identity(a in small_vec(), b in small_vec()) {
        let (x, y) = (mann_whitney_u(&a, &b).unwrap(), mann_whitney_u(&b, &a).unwrap());
        prop_assert_eq!(x.statistic + y.statistic, (a.len() * b.len()) as f64);
        prop_assert!((0.0..=1.0).contains(&x.raw_p));
        prop_assert!((x.raw_p - y.raw_p).abs() < 1e-12);
    }

    #[test]
    fn fisher_swap_invariance(a in 0u64..10, b in 0u64..10, c in 0u64..10, d in 0u64..10) {
        prop_assume!(a + b + c + d > 0);
        let p = fisher_exact([[a, b], [c, d]]).unwrap().raw_p;
        let swapped = fisher_exact([[d, c], [b, a]]).unwrap().raw_p;
        prop_assert!((p - swapped).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn spearman_bounded(x in proptest::collection::vec(-5.0f64..5.0, 3..10), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = x.iter().map(|_| rng.random()).collect();
        if let Ok(r) = spearman_rho(&x, &y) {
            prop_assert!((-1.0..=1.0).contains(&r.statistic));
            prop_assert!((0.0..=1.0).contains(&r.raw_p));
        }
    }

    #[test]
    fn binomial_tail_is_decreasing(n in 1u64..60, p0 in 0.01f64..0.99) {
        let mut prev = 1.0;
        for k in 0..=n {
            let t = binomial_tail(k, n, p0);
            prop_assert!(t <= prev + 1e-12 && t >= 0.0);
            prev = t;
        }
    }

    #[test]
    fn gower_is_a_bounded_symmetric_dissimilarity(vals in proptest::collection::vec((0.0f64..10.0, 0u8..3), 2..7)) {
        let vs: Vec<FeatureVector> = vals.iter().map(|&(x, c)| FeatureVector {
            track: String::new(),
            label: String::new(),
            numeric: [("x".to_string(), x)].into(),
            categorical: [("c".to_string(), c.to_string())].into(),
        }).collect();
        let m = gower_matrix(&vs).unwrap();
        for i in 0..m.len() {
            prop_assert_eq!(m[i][i], 0.0);
            for j in 0..m.len() {
                prop_assert_eq!(m[i][j], m[j][i]);
                prop_assert!((0.0..=1.0).contains(&m[i][j]));
            }
        }
    }
}
