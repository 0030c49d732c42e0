use matchnet::mechanisms::{rsd_exact, rsd_monte_carlo};
use matchnet::metrics::regret_agent;
use matchnet::net::{init_params, NetworkDims};
use matchnet::oracle::{fosd_audit, rsd_by_permutations, ConstantMechanism};
use matchnet::prefs::{example_market, DistributionConfig};
use matchnet::{lift_mechanism, BaselineKind, Mechanism, NeuralMechanism, PreferenceProfile};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn profiles(n: usize, m: usize, count: usize, seed: u64) -> Vec<PreferenceProfile> {
    DistributionConfig::uncorrelated(n, m, 0.3, seed).sample_range(0, count).unwrap()
}

fn agree<M: Mechanism>(mech: &M, profile: &PreferenceProfile) {
    let audit = fosd_audit(mech, profile).unwrap();
    for (agent, entry) in audit {
        let r = regret_agent(mech, profile, agent).unwrap();
        assert!((r - entry.gain).abs() <= 1e-12, "{agent}: {r} vs {}", entry.gain);
    }
}

#[test]
fn regret_matches_audit_for_classical_mechanisms() {
    for p in profiles(3, 3, 15, 1) {
        for kind in [BaselineKind::Wda, BaselineKind::Fda, BaselineKind::Rsd] {
            agree(&lift_mechanism(kind), &p);
        }
        agree(&ConstantMechanism::uniform(3, 3), &p);
    }
}

#[test]
fn regret_matches_audit_for_random_networks() {
    let dims = NetworkDims::new(3, 2, 2, 8).unwrap();
    for (i, p) in profiles(3, 2, 10, 2).into_iter().enumerate() {
        let net = NeuralMechanism::new(dims, init_params(&dims, i as u64), "net").unwrap();
        agree(&net, &p);
    }
}

#[test]
fn rsd_is_ordinally_strategyproof_on_small_markets() {
    let rsd = lift_mechanism(BaselineKind::Rsd);
    for p in profiles(2, 3, 10, 3) {
        for entry in fosd_audit(&rsd, &p).unwrap().values() {
            assert!(entry.gain <= 1e-12);
        }
    }
}

#[test]
fn rsd_exact_matches_permutation_enumeration() {
    for (n, m) in [(1, 1), (2, 3), (3, 3), (4, 4)] {
        for p in profiles(n, m, 4, (n * 10 + m) as u64) {
            let fast = rsd_exact(&p).unwrap();
            let slow = rsd_by_permutations(&p).unwrap();
            assert!(fast.max_abs_diff(&slow) <= 1e-12, "{p}");
        }
    }
    let ex = example_market();
    assert!(rsd_exact(&ex).unwrap().max_abs_diff(&rsd_by_permutations(&ex).unwrap()) <= 1e-12);
}

#[test]
fn rsd_monte_carlo_agrees_within_three_sigma() {
    let samples = 100_000;
    for (i, p) in profiles(3, 3, 3, 4).into_iter().enumerate() {
        let exact = rsd_exact(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
        let mc = rsd_monte_carlo(&p, samples, &mut rng).unwrap();
        for w in 0..3 {
            for f in 0..3 {
                let q = exact.get(w, f);
                let sigma = (q * (1.0 - q) / samples as f64).sqrt();
                assert!((mc.get(w, f) - q).abs() <= 3.0 * sigma + 1e-12, "{p} ({w}, {f})");
            }
        }
    }
}
