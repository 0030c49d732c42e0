use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::mechanisms::{DeterministicMatching, RandomizedMatching};
use crate::prefs::{AgentId, Choice, PreferenceOrder, PreferenceProfile, Side};

/// Largest `n + m` accepted by [`rsd_exact`].
pub const DEFAULT_RSD_CAP: usize = 8;

/// The dictator's pick among `available` partners: its best entry ranked
/// above `⊥`, if any.
fn pick(order: &PreferenceOrder, available: impl Fn(usize) -> bool) -> Option<usize> {
    for &c in order.ranking() {
        match c {
            Choice::Agent(j) if available(j) => return Some(j),
            Choice::Agent(_) => continue,
            Choice::Unmatched => return None,
        }
    }
    None
}

/// Serial dictatorship for one priority order. Each agent, when its turn
/// comes and it is still in the market, takes its most preferred remaining
/// acceptable partner or leaves unmatched; either way it leaves the market.
pub fn serial_dictatorship_round(
    profile: &PreferenceProfile,
    priority: &[AgentId],
) -> Result<DeterministicMatching> {
    let (n, m) = (profile.n(), profile.m());
    let mut seen = vec![false; n + m];
    for a in priority {
        let slot = match a.side {
            Side::Worker if a.index < n => a.index,
            Side::Firm if a.index < m => n + a.index,
            _ => return Err(Error::Domain(format!("{a} is not in the market"))),
        };
        if seen[slot] {
            return Err(Error::Domain(format!("{a} appears twice in the priority order")));
        }
        seen[slot] = true;
    }
    if priority.len() != n + m {
        return Err(Error::Domain(format!(
            "priority order has {} agents, market has {}",
            priority.len(),
            n + m
        )));
    }

    let mut gone = vec![false; n + m];
    let mut out = DeterministicMatching::empty(n, m);
    for a in priority {
        let (me, others_offset) = match a.side {
            Side::Worker => (a.index, n),
            Side::Firm => (n + a.index, 0),
        };
        if gone[me] {
            continue;
        }
        gone[me] = true;
        if let Some(j) = pick(profile.order(*a), |j| !gone[others_offset + j]) {
            gone[others_offset + j] = true;
            match a.side {
                Side::Worker => out.insert(a.index, j)?,
                Side::Firm => out.insert(j, a.index)?,
            }
        }
    }
    Ok(out)
}

/// Exact RSD marginals, averaging over every priority order.
pub fn rsd_exact(profile: &PreferenceProfile) -> Result<RandomizedMatching> {
    rsd_exact_with_cap(profile, DEFAULT_RSD_CAP)
}

/// Exact RSD marginals for markets with `n + m <= cap`.
///
/// Under a uniform priority order, the next agent to act among those still
/// in the market is uniform over them, so the average over all `(n + m)!`
/// orders is a forward pass over the `2^(n+m)` sets of agents still in the
/// market.
pub fn rsd_exact_with_cap(profile: &PreferenceProfile, cap: usize) -> Result<RandomizedMatching> {
    let (n, m) = (profile.n(), profile.m());
    let total = n + m;
    if total > cap {
        return Err(Error::EnumerationOverflow {
            what: "RSD priority orders (use rsd_monte_carlo for larger markets)",
            required: total,
            cap,
        });
    }
    let full: usize = (1 << total) - 1;
    let mut reach = vec![0.0f64; full + 1];
    reach[full] = 1.0;
    let mut r = Array2::<f64>::zeros((n, m));

    // transitions only clear bits, so descending order is topological
    for state in (1..=full).rev() {
        let mass = reach[state];
        if mass == 0.0 {
            continue;
        }
        let share = mass / f64::from(state.count_ones());
        for k in 0..total {
            if state & (1 << k) == 0 {
                continue;
            }
            let mut next = state & !(1 << k);
            if k < n {
                if let Some(f) = pick(&profile.workers()[k], |f| state & (1 << (n + f)) != 0) {
                    r[[k, f]] += share;
                    next &= !(1 << (n + f));
                }
            } else {
                let f = k - n;
                if let Some(w) = pick(&profile.firms()[f], |w| state & (1 << w) != 0) {
                    r[[w, f]] += share;
                    next &= !(1 << w);
                }
            }
            reach[next] += share;
        }
    }
    RandomizedMatching::new(r)
}

/// Empirical RSD marginals over `samples` uniformly drawn priority orders.
pub fn rsd_monte_carlo<R: Rng + ?Sized>(
    profile: &PreferenceProfile,
    samples: usize,
    rng: &mut R,
) -> Result<RandomizedMatching> {
    if samples == 0 {
        return Err(Error::Domain("rsd_monte_carlo needs at least one sample".into()));
    }
    let (n, m) = (profile.n(), profile.m());
    let mut priority: Vec<AgentId> = profile.agents().collect();
    let mut counts = Array2::<u64>::zeros((n, m));
    for _ in 0..samples {
        priority.shuffle(rng);
        for (w, f) in serial_dictatorship_round(profile, &priority)?.pairs() {
            counts[[w, f]] += 1;
        }
    }
    let r = counts.mapv(|c| (c as f64 / samples as f64).clamp(0.0, 1.0));
    RandomizedMatching::new(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prefs::{example_market, profile_stream};

    #[test]
    fn example_market_marginals() {
        let r = rsd_exact(&example_market()).unwrap();
        let expected = [
            [11.0 / 24.0, 1.0 / 4.0, 7.0 / 24.0],
            [1.0 / 6.0, 3.0 / 4.0, 1.0 / 12.0],
            [3.0 / 8.0, 0.0, 5.0 / 8.0],
        ];
        for w in 0..3 {
            for f in 0..3 {
                assert!((r.get(w, f) - expected[w][f]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn one_by_one_markets() {
        let yes = PreferenceProfile::from_full_rankings(&[vec![0]], &[vec![0]]).unwrap();
        assert_eq!(rsd_exact(&yes).unwrap().get(0, 0), 1.0);
        let no = PreferenceProfile::new(
            vec![PreferenceOrder::truncated(&[], 1).unwrap()],
            vec![PreferenceOrder::full(&[0]).unwrap()],
        )
        .unwrap();
        // the firm may still pick the worker when it moves first
        assert_eq!(rsd_exact(&no).unwrap().get(0, 0), 0.5);
        let neither = PreferenceProfile::new(
            vec![PreferenceOrder::truncated(&[], 1).unwrap()],
            vec![PreferenceOrder::truncated(&[], 1).unwrap()],
        )
        .unwrap();
        assert_eq!(rsd_exact(&neither).unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn cap_exceeded_points_to_monte_carlo() {
        let p = PreferenceProfile::from_full_rankings(
            &vec![(0..5).collect::<Vec<_>>(); 5],
            &vec![(0..5).collect::<Vec<_>>(); 5],
        )
        .unwrap();
        let err = rsd_exact(&p).unwrap_err();
        assert!(err.to_string().contains("rsd_monte_carlo"));
    }

    #[test]
    fn single_sample_is_a_matching() {
        let mut rng = profile_stream(3, 0);
        let r = rsd_monte_carlo(&example_market(), 1, &mut rng).unwrap();
        for w in 0..3 {
            let s = r.matrix().row(w).sum();
            assert!(s == 0.0 || s == 1.0);
        }
        for f in 0..3 {
            let s = r.matrix().column(f).sum();
            assert!(s == 0.0 || s == 1.0);
        }
    }

    #[test]
    fn seeded_monte_carlo_is_reproducible() {
        let a = rsd_monte_carlo(&example_market(), 500, &mut profile_stream(9, 1)).unwrap();
        let b = rsd_monte_carlo(&example_market(), 500, &mut profile_stream(9, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dictator_w2_takes_f2() {
        let priority = [
            AgentId::worker(1),
            AgentId::firm(0),
            AgentId::worker(0),
            AgentId::firm(2),
            AgentId::worker(2),
            AgentId::firm(1),
        ];
        let mu = serial_dictatorship_round(&example_market(), &priority).unwrap();
        assert!(mu.contains(1, 1));
        // f1 then picks w1, leaving w3 and f3
        assert!(mu.contains(0, 0));
        assert!(mu.contains(2, 2));
    }

    #[test]
    fn identical_workers_served_in_priority_order() {
        let profile = PreferenceProfile::from_full_rankings(
            &[vec![2, 0, 1], vec![2, 0, 1], vec![2, 0, 1]],
            &[vec![0, 1, 2], vec![0, 1, 2], vec![0, 1, 2]],
        )
        .unwrap();
        let mut priority: Vec<AgentId> = vec![AgentId::worker(1), AgentId::worker(2), AgentId::worker(0)];
        priority.extend((0..3).map(AgentId::firm));
        let mu = serial_dictatorship_round(&profile, &priority).unwrap();
        assert_eq!(mu.pairs(), vec![(0, 1), (1, 2), (2, 0)]);
    }

    #[test]
    fn rejects_bad_priority_orders() {
        let p = example_market();
        assert!(serial_dictatorship_round(&p, &[AgentId::worker(0)]).is_err());
        let dup = vec![AgentId::worker(0); 6];
        assert!(serial_dictatorship_round(&p, &dup).is_err());
    }
}
