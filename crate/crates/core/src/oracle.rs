//! Brute-force ground truth, written without reusing the metric or
//! mechanism internals it is meant to check.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::mechanisms::{DeterministicMatching, Mechanism, RandomizedMatching};
use crate::prefs::{AgentId, Choice, PreferenceOrder, PreferenceProfile, Side};

/// Largest side length accepted by the matching enumerators.
pub const ENUMERATION_CAP: usize = 5;

/// Largest `n + m` accepted by [`rsd_by_permutations`].
pub const PERMUTATION_CAP: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BlockingKind {
    /// Unmatched to each other, and each prefers the other to its outcome.
    MutualEnvy,
    /// Matched, but the worker ranks the firm below being unmatched.
    WorkerIRViolation,
    /// Matched, but the firm ranks the worker below being unmatched.
    FirmIRViolation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockingPair {
    pub worker: usize,
    pub firm: usize,
    pub kind: BlockingKind,
}

fn check_cap(n: usize, m: usize) -> Result<()> {
    let largest = n.max(m);
    if largest > ENUMERATION_CAP {
        return Err(Error::EnumerationOverflow {
            what: "matchings (side length)",
            required: largest,
            cap: ENUMERATION_CAP,
        });
    }
    Ok(())
}

/// Every matching of an `n × m` market, partial and empty ones included.
pub fn enumerate_matchings(n: usize, m: usize) -> Result<Vec<DeterministicMatching>> {
    check_cap(n, m)?;
    fn go(
        w: usize,
        n: usize,
        m: usize,
        used: &mut Vec<bool>,
        pairs: &mut Vec<(usize, usize)>,
        out: &mut Vec<DeterministicMatching>,
    ) {
        if w == n {
            out.push(DeterministicMatching::from_pairs(n, m, pairs).expect("distinct firms"));
            return;
        }
        go(w + 1, n, m, used, pairs, out);
        for f in 0..m {
            if !used[f] {
                used[f] = true;
                pairs.push((w, f));
                go(w + 1, n, m, used, pairs, out);
                pairs.pop();
                used[f] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(0, n, m, &mut vec![false; m], &mut Vec::new(), &mut out);
    Ok(out)
}

/// Index in the ranking; smaller is better.
fn rank_of(order: &PreferenceOrder, c: Choice) -> usize {
    order
        .ranking()
        .iter()
        .position(|&x| x == c)
        .expect("orders rank every choice")
}

fn outcome(partner: Option<usize>) -> Choice {
    match partner {
        Some(j) => Choice::Agent(j),
        None => Choice::Unmatched,
    }
}

pub fn find_blocking_pairs(
    matching: &DeterministicMatching,
    profile: &PreferenceProfile,
) -> Vec<BlockingPair> {
    let mut out = Vec::new();
    for w in 0..profile.n() {
        let wo = &profile.workers()[w];
        for f in 0..profile.m() {
            let fo = &profile.firms()[f];
            let w_rank_f = rank_of(wo, Choice::Agent(f));
            let f_rank_w = rank_of(fo, Choice::Agent(w));
            if matching.worker_partner(w) == Some(f) {
                if w_rank_f > rank_of(wo, Choice::Unmatched) {
                    out.push(BlockingPair {
                        worker: w,
                        firm: f,
                        kind: BlockingKind::WorkerIRViolation,
                    });
                }
                if f_rank_w > rank_of(fo, Choice::Unmatched) {
                    out.push(BlockingPair {
                        worker: w,
                        firm: f,
                        kind: BlockingKind::FirmIRViolation,
                    });
                }
                continue;
            }
            let w_now = rank_of(wo, outcome(matching.worker_partner(w)));
            let f_now = rank_of(fo, outcome(matching.firm_partner(f)));
            if w_rank_f < w_now && f_rank_w < f_now {
                out.push(BlockingPair {
                    worker: w,
                    firm: f,
                    kind: BlockingKind::MutualEnvy,
                });
            }
        }
    }
    out
}

/// All matchings with no blocking pair of any kind.
pub fn exhaustive_stable_set(profile: &PreferenceProfile) -> Result<Vec<DeterministicMatching>> {
    Ok(enumerate_matchings(profile.n(), profile.m())?
        .into_iter()
        .filter(|mu| find_blocking_pairs(mu, profile).is_empty())
        .collect())
}

/// Every ordering of `size` opposite-side agents and `⊥`.
fn all_reports(size: usize) -> Vec<Vec<Choice>> {
    fn go(left: &mut Vec<Choice>, cur: &mut Vec<Choice>, out: &mut Vec<Vec<Choice>>) {
        if left.is_empty() {
            out.push(cur.clone());
            return;
        }
        for i in 0..left.len() {
            let c = left.remove(i);
            cur.push(c);
            go(left, cur, out);
            cur.pop();
            left.insert(i, c);
        }
    }
    let mut left: Vec<Choice> = (0..size).map(Choice::Agent).collect();
    left.push(Choice::Unmatched);
    let mut out = Vec::new();
    go(&mut left, &mut Vec::new(), &mut out);
    out
}

fn prob(r: &RandomizedMatching, agent: AgentId, partner: usize) -> f64 {
    match agent.side {
        Side::Worker => r.get(agent.index, partner),
        Side::Firm => r.get(partner, agent.index),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditEntry {
    pub gain: f64,
    /// A report attaining `gain`, when it is positive.
    pub report: Option<PreferenceOrder>,
}

/// Largest top-k cumulative-probability gain each agent can obtain by
/// misreporting, over every report and every threshold of its true order.
pub fn fosd_audit<M: Mechanism + ?Sized>(
    mech: &M,
    profile: &PreferenceProfile,
) -> Result<BTreeMap<AgentId, AuditEntry>> {
    let truth = mech.evaluate(profile)?;
    let mut out = BTreeMap::new();
    let agents: Vec<AgentId> = (0..profile.n())
        .map(AgentId::worker)
        .chain((0..profile.m()).map(AgentId::firm))
        .collect();
    for agent in agents {
        let size = match agent.side {
            Side::Worker => profile.m(),
            Side::Firm => profile.n(),
        };
        if size + 1 > crate::prefs::DEFAULT_MISREPORT_CAP {
            return Err(Error::EnumerationOverflow {
                what: "misreports (orders over the opposite side and unmatched)",
                required: size + 1,
                cap: crate::prefs::DEFAULT_MISREPORT_CAP,
            });
        }
        let true_order = profile.order(agent).clone();
        let thresholds: Vec<usize> = true_order
            .ranking()
            .iter()
            .take_while(|c| **c != Choice::Unmatched)
            .map(|c| match c {
                Choice::Agent(j) => *j,
                Choice::Unmatched => unreachable!(),
            })
            .collect();
        let mut entry = AuditEntry {
            gain: 0.0,
            report: None,
        };
        for ranking in all_reports(size) {
            let report = PreferenceOrder::new(ranking, size)?;
            if report == true_order {
                continue;
            }
            let lie = mech.evaluate(&profile.with_report(agent, report.clone())?)?;
            for &t in &thresholds {
                let cut = rank_of(&true_order, Choice::Agent(t));
                let mut diff = 0.0;
                for j in 0..size {
                    if rank_of(&true_order, Choice::Agent(j)) <= cut {
                        diff += prob(&lie, agent, j);
                        diff -= prob(&truth, agent, j);
                    }
                }
                if diff > entry.gain {
                    entry = AuditEntry {
                        gain: diff,
                        report: Some(report.clone()),
                    };
                }
            }
        }
        out.insert(agent, entry);
    }
    Ok(out)
}

/// RSD marginals by running serial dictatorship under each of the
/// `(n + m)!` priority orders.
pub fn rsd_by_permutations(profile: &PreferenceProfile) -> Result<RandomizedMatching> {
    let (n, m) = (profile.n(), profile.m());
    if n + m > PERMUTATION_CAP {
        return Err(Error::EnumerationOverflow {
            what: "priority orders (n + m)",
            required: n + m,
            cap: PERMUTATION_CAP,
        });
    }
    let mut counts = Array2::<f64>::zeros((n, m));
    let mut total = 0usize;
    // agents 0..n are workers, n..n+m firms
    let mut perm: Vec<usize> = (0..n + m).collect();
    loop {
        let mut worker_taken = vec![false; n];
        let mut firm_taken = vec![false; m];
        for &a in &perm {
            if a < n {
                if worker_taken[a] {
                    continue;
                }
                worker_taken[a] = true;
                for &c in profile.workers()[a].ranking() {
                    match c {
                        Choice::Unmatched => break,
                        Choice::Agent(f) if !firm_taken[f] => {
                            firm_taken[f] = true;
                            counts[[a, f]] += 1.0;
                            break;
                        }
                        Choice::Agent(_) => {}
                    }
                }
            } else {
                let f = a - n;
                if firm_taken[f] {
                    continue;
                }
                firm_taken[f] = true;
                for &c in profile.firms()[f].ranking() {
                    match c {
                        Choice::Unmatched => break,
                        Choice::Agent(w) if !worker_taken[w] => {
                            worker_taken[w] = true;
                            counts[[w, f]] += 1.0;
                            break;
                        }
                        Choice::Agent(_) => {}
                    }
                }
            }
        }
        total += 1;
        if !next_permutation(&mut perm) {
            break;
        }
    }
    RandomizedMatching::new(counts / total as f64)
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Returns the same marginals whatever is reported.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstantMechanism {
    r: RandomizedMatching,
}

impl ConstantMechanism {
    pub fn new(r: RandomizedMatching) -> Self {
        Self { r }
    }

    /// Every entry `1 / max(n, m)`.
    pub fn uniform(n: usize, m: usize) -> Self {
        let v = 1.0 / n.max(m) as f64;
        Self {
            r: RandomizedMatching::new(Array2::from_elem((n, m), v)).expect("sums stay at most 1"),
        }
    }
}

impl Mechanism for ConstantMechanism {
    fn label(&self) -> String {
        "constant".into()
    }

    fn evaluate(&self, profile: &PreferenceProfile) -> Result<RandomizedMatching> {
        if profile.n() != self.r.n() || profile.m() != self.r.m() {
            return Err(Error::Dimension("constant mechanism has a fixed market size".into()));
        }
        Ok(self.r.clone())
    }
}
