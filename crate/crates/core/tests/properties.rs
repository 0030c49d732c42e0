use matchnet::mechanisms::{bvn_decompose, da, rsd_exact, Proposing};
use matchnet::metrics::{entropy, irv_profile, similarity, stv_profile, welfare_profile};
use matchnet::net::{build_mask, forward, init_params, NetworkDims, NetworkParams};
use matchnet::oracle::{enumerate_matchings, find_blocking_pairs, BlockingKind};
use matchnet::prefs::DistributionConfig;
use matchnet::{Choice, PreferenceOrder, PreferenceProfile, RandomizedMatching};
use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn profile(n: usize, m: usize, p_trunc: f64, seed: u64) -> PreferenceProfile {
    DistributionConfig::uncorrelated(n, m, p_trunc, seed)
        .sample_range(0, 1)
        .unwrap()
        .remove(0)
}

/// Random weights at a random scale, so outputs range from near-uniform to
/// sharply peaked.
fn random_params(dims: &NetworkDims, seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = rng.gen_range(0.1..10.0);
    let mut p = init_params(dims, seed);
    let flat: Vec<f64> = p.flatten().iter().map(|w| w * scale + rng.gen_range(-1.0..1.0)).collect();
    p.assign_flat(&flat).unwrap();
    p
}

fn assert_weakly_doubly_stochastic(r: &RandomizedMatching, tol: f64) {
    let mat = r.matrix();
    assert!(mat.iter().all(|&x| x >= 0.0));
    for row in mat.rows() {
        assert!(row.sum() <= 1.0 + tol);
    }
    for col in mat.columns() {
        assert!(col.sum() <= 1.0 + tol);
    }
}

fn remap(order: &PreferenceOrder, to_new: &[usize]) -> PreferenceOrder {
    let ranking = order
        .ranking()
        .iter()
        .map(|c| match c {
            Choice::Agent(a) => Choice::Agent(to_new[*a]),
            Choice::Unmatched => Choice::Unmatched,
        })
        .collect();
    PreferenceOrder::new(ranking, order.size()).unwrap()
}

/// Worker `k` of the result is worker `perm[k]` of `p`.
fn relabel_workers(p: &PreferenceProfile, perm: &[usize]) -> PreferenceProfile {
    let mut to_new = vec![0; perm.len()];
    for (k, &old) in perm.iter().enumerate() {
        to_new[old] = k;
    }
    let workers = perm.iter().map(|&old| p.workers()[old].clone()).collect();
    let firms = p.firms().iter().map(|o| remap(o, &to_new)).collect();
    PreferenceProfile::new(workers, firms).unwrap()
}

fn relabel_rows(r: &RandomizedMatching, perm: &[usize]) -> RandomizedMatching {
    let mat = Array2::from_shape_fn(r.matrix().dim(), |(k, f)| r.get(perm[k], f));
    RandomizedMatching::new(mat).unwrap()
}

fn transpose(p: &PreferenceProfile) -> PreferenceProfile {
    PreferenceProfile::new(p.firms().to_vec(), p.workers().to_vec()).unwrap()
}

fn metrics_of(r: &RandomizedMatching, p: &PreferenceProfile) -> [f64; 5] {
    let enc = p.encode();
    [
        stv_profile(r, &enc).unwrap(),
        irv_profile(r, &enc).unwrap(),
        welfare_profile(r, &enc).unwrap(),
        entropy(r).value,
        similarity(r, p).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn network_outputs_are_feasible_and_ir(pseed in any::<u64>(), wseed in any::<u64>(), p_trunc in 0.0..1.0f64) {
        let dims = NetworkDims::new(4, 4, 2, 16).unwrap();
        let params = random_params(&dims, wseed);
        let p = profile(4, 4, p_trunc, pseed);
        let r = forward(&params, &dims, &p.encode(), &build_mask(&p)).unwrap();
        assert_weakly_doubly_stochastic(&r, 1e-6);
        for w in 0..4 {
            for f in 0..4 {
                if !p.mutually_acceptable(w, f) {
                    prop_assert_eq!(r.get(w, f), 0.0);
                }
            }
        }
        prop_assert_eq!(irv_profile(&r, &p.encode()).unwrap(), 0.0);
    }

    /// A dictator takes a partner it finds acceptable whether or not the
    /// partner agrees, so only pairs rejected by both sides are excluded.
    #[test]
    fn rsd_marginals_are_feasible(seed in any::<u64>(), n in 1..4usize, m in 1..4usize) {
        let p = profile(n, m, 0.4, seed);
        let r = rsd_exact(&p).unwrap();
        assert_weakly_doubly_stochastic(&r, 1e-12);
        for w in 0..n {
            for f in 0..m {
                if !p.workers()[w].is_acceptable(f) && !p.firms()[f].is_acceptable(w) {
                    prop_assert_eq!(r.get(w, f), 0.0);
                }
            }
        }
    }

    #[test]
    fn da_is_stable_and_ir(seed in any::<u64>(), n in 1..6usize, m in 1..6usize) {
        let p = profile(n, m, 0.3, seed);
        for side in [Proposing::Workers, Proposing::Firms] {
            let mu = da(&p, side);
            prop_assert!(find_blocking_pairs(&mu, &p).is_empty());
            let r = mu.to_marginals();
            let enc = p.encode();
            prop_assert_eq!(stv_profile(&r, &enc).unwrap(), 0.0);
            prop_assert_eq!(irv_profile(&r, &enc).unwrap(), 0.0);
        }
    }

    #[test]
    fn metrics_are_invariant_under_relabeling(seed in any::<u64>()) {
        let p = profile(3, 4, 0.3, seed);
        let r = rsd_exact(&p).unwrap();
        let mut perm: Vec<usize> = (0..3).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let before = metrics_of(&r, &p);
        let after = metrics_of(&relabel_rows(&r, &perm), &relabel_workers(&p, &perm));
        for (a, b) in before.iter().zip(&after) {
            prop_assert!((a - b).abs() <= 1e-12, "{:?} vs {:?}", before, after);
        }
        // firms: relabel the transposed market's workers
        let t = transpose(&p);
        let rt = RandomizedMatching::new(r.matrix().t().to_owned()).unwrap();
        let mut fperm: Vec<usize> = (0..4).collect();
        fperm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let t2 = relabel_workers(&t, &fperm);
        let r2 = relabel_rows(&rt, &fperm);
        let back = RandomizedMatching::new(r2.matrix().t().to_owned()).unwrap();
        let after = metrics_of(&back, &transpose(&t2));
        for (a, b) in before.iter().zip(&after) {
            prop_assert!((a - b).abs() <= 1e-12, "{:?} vs {:?}", before, after);
        }
    }

    #[test]
    fn entropy_and_similarity_stay_in_range(seed in any::<u64>(), wseed in any::<u64>()) {
        let (n, m) = (3, 4);
        let dims = NetworkDims::new(n, m, 2, 8).unwrap();
        let p = profile(n, m, 0.2, seed);
        let r = forward(&random_params(&dims, wseed), &dims, &p.encode(), &build_mask(&p)).unwrap();
        let upper = 0.5 * (((m + 1) as f64).log2() / (m as f64).log2()
            + ((n + 1) as f64).log2() / (n as f64).log2());
        let h = entropy(&r);
        prop_assert!(!h.degenerate);
        prop_assert!(h.value >= 0.0 && h.value <= upper + 1e-12);
        let s = similarity(&r, &p).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
    }

    #[test]
    fn bvn_components_lie_in_the_support(seed in any::<u64>(), wseed in any::<u64>()) {
        let p = profile(3, 3, 0.3, seed);
        let dims = NetworkDims::new(3, 3, 2, 8).unwrap();
        for r in [
            rsd_exact(&p).unwrap(),
            forward(&random_params(&dims, wseed), &dims, &p.encode(), &build_mask(&p)).unwrap(),
        ] {
            let ir = irv_profile(&r, &p.encode()).unwrap() == 0.0;
            let d = bvn_decompose(&r).unwrap();
            let back = d.reconstruct(3, 3);
            for (a, b) in back.iter().zip(r.matrix().iter()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
            prop_assert!(d.components.len() <= 3 * 3 + 3 + 3 + 1);
            for c in &d.components {
                prop_assert!(c.weight > 0.0);
                for (w, f) in c.matching.pairs() {
                    prop_assert!(!ir || p.mutually_acceptable(w, f));
                    prop_assert!(r.get(w, f) > 0.0);
                }
            }
        }
    }

    #[test]
    fn sampling_is_reproducible(seed in any::<u64>(), start in 0..1000u64) {
        let dist = DistributionConfig::correlated(4, 3, 0.5, 0.2, seed);
        prop_assert_eq!(dist.sample_range(start, 5).unwrap(), dist.sample_range(start, 5).unwrap());
        prop_assert_eq!(
            dist.sample_range(start, 5).unwrap()[1..].to_vec(),
            dist.sample_range(start + 1, 4).unwrap()
        );
    }
}

#[test]
fn zero_stv_iff_no_mutual_envy_on_deterministic_matchings() {
    for seed in 0..40 {
        let p = profile(3, 3, 0.3, seed);
        let enc = p.encode();
        for mu in enumerate_matchings(3, 3).unwrap() {
            let stv = stv_profile(&mu.to_marginals(), &enc).unwrap();
            let envy = find_blocking_pairs(&mu, &p)
                .iter()
                .any(|b| b.kind == BlockingKind::MutualEnvy);
            assert_eq!(stv > 0.0, envy, "seed {seed}, matching {mu}");
        }
    }
}

#[test]
fn stable_matchings_are_exactly_the_zero_violation_ones() {
    for seed in 0..20 {
        let p = profile(3, 3, 0.3, seed);
        let enc = p.encode();
        let stable = matchnet::oracle::exhaustive_stable_set(&p).unwrap();
        for mu in enumerate_matchings(3, 3).unwrap() {
            let r = mu.to_marginals();
            let clean = stv_profile(&r, &enc).unwrap() == 0.0 && irv_profile(&r, &enc).unwrap() == 0.0;
            assert_eq!(clean, stable.contains(&mu));
        }
        assert!(stable.contains(&da(&p, Proposing::Workers)));
        assert!(stable.contains(&da(&p, Proposing::Firms)));
    }
}
