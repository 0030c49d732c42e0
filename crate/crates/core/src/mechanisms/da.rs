use crate::mechanisms::DeterministicMatching;
use crate::prefs::{Choice, PreferenceOrder, PreferenceProfile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Proposing {
    Workers,
    Firms,
}

/// Deferred acceptance. Proposers are processed in ascending index order
/// each round; every receiver keeps its best acceptable proposal so far.
pub fn da(profile: &PreferenceProfile, proposing: Proposing) -> DeterministicMatching {
    let (n, m) = (profile.n(), profile.m());
    let (proposers, receivers) = match proposing {
        Proposing::Workers => (profile.workers(), profile.firms()),
        Proposing::Firms => (profile.firms(), profile.workers()),
    };
    let held = run(proposers, receivers);
    let mut out = DeterministicMatching::empty(n, m);
    for (receiver, proposer) in held.into_iter().enumerate() {
        if let Some(proposer) = proposer {
            let (w, f) = match proposing {
                Proposing::Workers => (proposer, receiver),
                Proposing::Firms => (receiver, proposer),
            };
            out.insert(w, f).expect("deferred acceptance yields a matching");
        }
    }
    out
}

/// Returns, per receiver, the proposer it holds at termination.
fn run(proposers: &[PreferenceOrder], receivers: &[PreferenceOrder]) -> Vec<Option<usize>> {
    // remaining acceptable receivers per proposer, best first
    let lists: Vec<Vec<usize>> = proposers.iter().map(|o| o.acceptable().collect()).collect();
    let mut next = vec![0usize; proposers.len()];
    let mut held: Vec<Option<usize>> = vec![None; receivers.len()];
    let mut engaged = vec![false; proposers.len()];

    loop {
        let mut proposals: Vec<Vec<usize>> = vec![Vec::new(); receivers.len()];
        let mut any = false;
        for (i, list) in lists.iter().enumerate() {
            if !engaged[i] && next[i] < list.len() {
                proposals[list[next[i]]].push(i);
                any = true;
            }
        }
        if !any {
            break;
        }
        for (j, props) in proposals.into_iter().enumerate() {
            if props.is_empty() {
                continue;
            }
            let order = &receivers[j];
            let mut best = held[j];
            for &i in &props {
                let better = match best {
                    None => order.is_acceptable(i),
                    Some(b) => order.prefers(Choice::Agent(i), Choice::Agent(b)),
                };
                if better {
                    best = Some(i);
                }
            }
            if best != held[j] {
                if let Some(old) = held[j] {
                    engaged[old] = false;
                    next[old] += 1;
                }
                held[j] = best;
            }
            for &i in &props {
                if Some(i) == held[j] {
                    engaged[i] = true;
                } else {
                    next[i] += 1;
                }
            }
        }
    }
    held
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prefs::example_market;

    #[test]
    fn worker_proposing_on_example_market() {
        let mu = da(&example_market(), Proposing::Workers);
        assert_eq!(mu.pairs(), vec![(0, 2), (1, 1), (2, 0)]);
    }

    #[test]
    fn firm_truncation_changes_outcome() {
        let profile = example_market();
        let report = PreferenceOrder::truncated(&[0, 1], 3).unwrap();
        let lying = profile
            .with_report(crate::prefs::AgentId::firm(0), report)
            .unwrap();
        let mu = da(&lying, Proposing::Workers);
        assert_eq!(mu.pairs(), vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn firm_proposing_on_example_market() {
        let mu = da(&example_market(), Proposing::Firms);
        assert_eq!(mu.pairs(), vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn nobody_acceptable_gives_empty_matching() {
        let none = |size| PreferenceOrder::truncated(&[], size).unwrap();
        let profile =
            PreferenceProfile::new(vec![none(2), none(2), none(2)], vec![none(3), none(3)])
                .unwrap();
        assert!(da(&profile, Proposing::Workers).is_empty());
        assert!(da(&profile, Proposing::Firms).is_empty());
    }

    #[test]
    fn receivers_reject_unacceptable_proposers() {
        // w1 likes f1, but f1 only accepts w2
        let profile = PreferenceProfile::new(
            vec![
                PreferenceOrder::full(&[0]).unwrap(),
                PreferenceOrder::truncated(&[], 1).unwrap(),
            ],
            vec![PreferenceOrder::truncated(&[1], 2).unwrap()],
        )
        .unwrap();
        assert!(da(&profile, Proposing::Workers).is_empty());
    }
}
