//! Evaluation metrics: stability violation, IR violation, FOSD regret,
//! welfare, similarity to deferred acceptance, and normalized entropy.
//!
//! All utility-weighted metrics read the encoded utilities of the true
//! profile. Aggregates over a profile set are plain arithmetic means.

use crate::error::{Error, Result};
use crate::mechanisms::{da, Mechanism, Proposing, RandomizedMatching};
use crate::prefs::{
    enumerate_misreports, AgentId, Choice, EncodedProfile, PreferenceOrder, PreferenceProfile,
    Side,
};

/// Which partners count toward the cumulative probability at a threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Inclusion {
    /// Partners ranked at or above the threshold (top-k cumulative).
    #[default]
    Weak,
    /// Partners ranked strictly above the threshold.
    Strict,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct EvalReport {
    pub stv: f64,
    pub rgt: f64,
    pub irv: f64,
    pub welfare_per_agent: f64,
    pub sim: f64,
    pub entropy: f64,
    pub profiles_evaluated: usize,
}

fn check_dims(r: &RandomizedMatching, enc: &EncodedProfile) -> Result<()> {
    if r.n() != enc.n() || r.m() != enc.m() {
        return Err(Error::Dimension(format!(
            "matching is {}x{}, encoding is {}x{}",
            r.n(),
            r.m(),
            enc.n(),
            enc.m()
        )));
    }
    Ok(())
}

/// Firm `f`'s justified envy on behalf of worker `w`.
fn firm_envy(r: &RandomizedMatching, enc: &EncodedProfile, w: usize, f: usize) -> f64 {
    let qwf = enc.q[[w, f]];
    let mut total = 0.0;
    for other in 0..r.n() {
        total += r.get(other, f) * (qwf - enc.q[[other, f]]).max(0.0);
    }
    total + r.firm_unmatched(f) * qwf.max(0.0)
}

/// Worker `w`'s justified envy toward firm `f`.
fn worker_envy(r: &RandomizedMatching, enc: &EncodedProfile, w: usize, f: usize) -> f64 {
    let pwf = enc.p[[w, f]];
    let mut total = 0.0;
    for other in 0..r.m() {
        total += r.get(w, other) * (pwf - enc.p[[w, other]]).max(0.0);
    }
    total + r.worker_unmatched(w) * pwf.max(0.0)
}

/// Stability violation of the pair `(w, f)`: the product of the firm-side
/// and worker-side envy masses.
pub fn stv_pair(r: &RandomizedMatching, enc: &EncodedProfile, w: usize, f: usize) -> Result<f64> {
    check_dims(r, enc)?;
    if w >= r.n() || f >= r.m() {
        return Err(Error::Dimension(format!("pair (w{}, f{}) out of range", w + 1, f + 1)));
    }
    Ok(firm_envy(r, enc, w, f) * worker_envy(r, enc, w, f))
}

/// `½(1/m + 1/n) Σ_w Σ_f stv_pair(w, f)`.
pub fn stv_profile(r: &RandomizedMatching, enc: &EncodedProfile) -> Result<f64> {
    check_dims(r, enc)?;
    let (n, m) = (r.n(), r.m());
    let mut total = 0.0;
    for w in 0..n {
        for f in 0..m {
            total += firm_envy(r, enc, w, f) * worker_envy(r, enc, w, f);
        }
    }
    Ok(0.5 * (1.0 / m as f64 + 1.0 / n as f64) * total)
}

/// Probability mass on pairs either side finds unacceptable, weighted by
/// how far below `⊥` the partner sits.
pub fn irv_profile(r: &RandomizedMatching, enc: &EncodedProfile) -> Result<f64> {
    check_dims(r, enc)?;
    let (n, m) = (r.n(), r.m());
    let (mut firm_side, mut worker_side) = (0.0, 0.0);
    for w in 0..n {
        for f in 0..m {
            firm_side += r.get(w, f) * (-enc.q[[w, f]]).max(0.0);
            worker_side += r.get(w, f) * (-enc.p[[w, f]]).max(0.0);
        }
    }
    Ok(firm_side / (2.0 * m as f64) + worker_side / (2.0 * n as f64))
}

/// Probabilities of `agent` being matched to each opposite-side agent.
pub fn partner_probs(r: &RandomizedMatching, agent: AgentId) -> Vec<f64> {
    match agent.side {
        Side::Worker => r.matrix().row(agent.index).to_vec(),
        Side::Firm => r.matrix().column(agent.index).to_vec(),
    }
}

/// Opposite-side agents counted at `threshold` under `order`.
pub fn threshold_set(
    order: &PreferenceOrder,
    threshold: usize,
    inclusion: Inclusion,
) -> Result<Vec<usize>> {
    if threshold >= order.size() || !order.is_acceptable(threshold) {
        return Err(Error::Domain(format!(
            "threshold {} is not an acceptable partner",
            threshold + 1
        )));
    }
    let cut = order.position(Choice::Agent(threshold));
    let end = match inclusion {
        Inclusion::Weak => cut + 1,
        Inclusion::Strict => cut,
    };
    Ok(order.acceptable().take(end).collect())
}

/// Probability that `agent` is matched to a partner it ranks (weakly or
/// strictly) above `threshold` under `order`.
pub fn cumulative_prob(
    r: &RandomizedMatching,
    order: &PreferenceOrder,
    agent: AgentId,
    threshold: usize,
    inclusion: Inclusion,
) -> Result<f64> {
    let probs = partner_probs(r, agent);
    if probs.len() != order.size() {
        return Err(Error::Dimension(format!(
            "{agent} has {} partners, order ranks {}",
            probs.len(),
            order.size()
        )));
    }
    Ok(threshold_set(order, threshold, inclusion)?
        .into_iter()
        .map(|j| probs[j])
        .sum())
}

/// Largest cumulative gain of `misreport_probs` over `truthful_probs`
/// across thresholds of the true `order`, with the threshold attaining it
/// (first one on ties). `None` when nothing is acceptable.
pub fn fosd_gain(
    order: &PreferenceOrder,
    truthful_probs: &[f64],
    misreport_probs: &[f64],
    inclusion: Inclusion,
) -> Option<(f64, usize)> {
    let acceptable: Vec<usize> = order.acceptable().collect();
    let mut best: Option<(f64, usize)> = None;
    let (mut truth, mut lie) = (0.0, 0.0);
    for &j in &acceptable {
        let (t_before, l_before) = (truth, lie);
        truth += truthful_probs[j];
        lie += misreport_probs[j];
        let gain = match inclusion {
            Inclusion::Weak => lie - truth,
            Inclusion::Strict => l_before - t_before,
        };
        if best.is_none_or(|(g, _)| gain > g) {
            best = Some((gain, j));
        }
    }
    best
}

/// FOSD regret of one agent: the largest cumulative-probability gain any
/// misreport achieves over truthful reporting, floored at zero.
pub fn regret_agent<M: Mechanism + ?Sized>(
    mech: &M,
    profile: &PreferenceProfile,
    agent: AgentId,
) -> Result<f64> {
    regret_agent_with(mech, profile, agent, Inclusion::Weak)
}

pub fn regret_agent_with<M: Mechanism + ?Sized>(
    mech: &M,
    profile: &PreferenceProfile,
    agent: AgentId,
    inclusion: Inclusion,
) -> Result<f64> {
    let truth = mech.evaluate(profile)?;
    agent_regret_against(mech, profile, &truth, agent, inclusion)
}

fn agent_regret_against<M: Mechanism + ?Sized>(
    mech: &M,
    profile: &PreferenceProfile,
    truth: &RandomizedMatching,
    agent: AgentId,
    inclusion: Inclusion,
) -> Result<f64> {
    let order = profile.order(agent);
    if order.acceptable().next().is_none() {
        return Ok(0.0);
    }
    let truthful = partner_probs(truth, agent);
    let reports: Vec<PreferenceOrder> =
        enumerate_misreports(agent.side, profile.report_size(agent.side))?
            .into_iter()
            .filter(|o| o != order)
            .collect();
    let lying: Vec<PreferenceProfile> = reports
        .into_iter()
        .map(|o| profile.with_report(agent, o))
        .collect::<Result<_>>()?;
    let outcomes = mech.evaluate_batch(&lying)?;
    let mut regret = 0.0f64;
    for out in &outcomes {
        if let Some((gain, _)) = fosd_gain(order, &truthful, &partner_probs(out, agent), inclusion)
        {
            regret = regret.max(gain);
        }
    }
    Ok(regret)
}

/// `½(mean worker regret + mean firm regret)`.
pub fn regret_profile<M: Mechanism + ?Sized>(mech: &M, profile: &PreferenceProfile) -> Result<f64> {
    let truth = mech.evaluate(profile)?;
    regret_profile_given(mech, profile, &truth)
}

fn regret_profile_given<M: Mechanism + ?Sized>(
    mech: &M,
    profile: &PreferenceProfile,
    truth: &RandomizedMatching,
) -> Result<f64> {
    let (n, m) = (profile.n(), profile.m());
    let mut workers = 0.0;
    for w in 0..n {
        workers += agent_regret_against(mech, profile, truth, AgentId::worker(w), Inclusion::Weak)?;
    }
    let mut firms = 0.0;
    for f in 0..m {
        firms += agent_regret_against(mech, profile, truth, AgentId::firm(f), Inclusion::Weak)?;
    }
    Ok(0.5 * (workers / n as f64 + firms / m as f64))
}

/// Expected encoded utility per agent, `Σ r_wf (p_wf + q_wf) / (n + m)`.
pub fn welfare_profile(r: &RandomizedMatching, enc: &EncodedProfile) -> Result<f64> {
    check_dims(r, enc)?;
    let mut total = 0.0;
    for w in 0..r.n() {
        for f in 0..r.m() {
            total += r.get(w, f) * (enc.p[[w, f]] + enc.q[[w, f]]);
        }
    }
    Ok(total / (r.n() + r.m()) as f64)
}

/// Mean probability `r` puts on the pairs of worker- or firm-proposing DA,
/// whichever is larger. Sides whose DA matching is empty are skipped; if
/// both are empty the similarity is 1.
pub fn similarity(r: &RandomizedMatching, profile: &PreferenceProfile) -> Result<f64> {
    if r.n() != profile.n() || r.m() != profile.m() {
        return Err(Error::Dimension("matching and profile sizes differ".into()));
    }
    let mut best: Option<f64> = None;
    for side in [Proposing::Workers, Proposing::Firms] {
        let mu = da(profile, side);
        if mu.is_empty() {
            continue;
        }
        let pairs = mu.pairs();
        let agree: f64 = pairs.iter().map(|&(w, f)| r.get(w, f)).sum();
        let score = agree / pairs.len() as f64;
        best = Some(best.map_or(score, |b: f64| b.max(score)));
    }
    Ok(best.unwrap_or(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Entropy {
    pub value: f64,
    /// Set when `n <= 1` or `m <= 1`, where the normalizing log vanishes;
    /// `value` is then 0.
    pub degenerate: bool,
}

fn plogp(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.log2()
    }
}

/// Normalized entropy per agent, with the unmatched margins included in
/// each agent's outcome distribution.
pub fn entropy(r: &RandomizedMatching) -> Entropy {
    let (n, m) = (r.n(), r.m());
    if n <= 1 || m <= 1 {
        return Entropy {
            value: 0.0,
            degenerate: true,
        };
    }
    let mut workers = 0.0;
    for w in 0..n {
        let mut h = plogp(r.worker_unmatched(w).max(0.0));
        for f in 0..m {
            h += plogp(r.get(w, f));
        }
        workers -= h;
    }
    let mut firms = 0.0;
    for f in 0..m {
        let mut h = plogp(r.firm_unmatched(f).max(0.0));
        for w in 0..n {
            h += plogp(r.get(w, f));
        }
        firms -= h;
    }
    let value = workers / (2.0 * n as f64 * (m as f64).log2())
        + firms / (2.0 * m as f64 * (n as f64).log2());
    Entropy {
        value,
        degenerate: false,
    }
}

/// Per-profile metrics, averaged. Regret enumerates every misreport of
/// every agent.
pub fn evaluate<M: Mechanism + ?Sized>(
    mech: &M,
    profiles: &[PreferenceProfile],
) -> Result<EvalReport> {
    if profiles.is_empty() {
        return Err(Error::Domain("cannot evaluate an empty profile set".into()));
    }
    let outcomes = mech.evaluate_batch(profiles)?;
    let mut report = EvalReport::default();
    for (i, (profile, r)) in profiles.iter().zip(&outcomes).enumerate() {
        let per = (|| -> Result<[f64; 6]> {
            let enc = profile.encode();
            Ok([
                stv_profile(r, &enc)?,
                regret_profile_given(mech, profile, r)?,
                irv_profile(r, &enc)?,
                welfare_profile(r, &enc)?,
                similarity(r, profile)?,
                entropy(r).value,
            ])
        })()
        .map_err(|e| Error::at_profile(i, e))?;
        report.stv += per[0];
        report.rgt += per[1];
        report.irv += per[2];
        report.welfare_per_agent += per[3];
        report.sim += per[4];
        report.entropy += per[5];
    }
    let k = profiles.len() as f64;
    report.stv /= k;
    report.rgt /= k;
    report.irv /= k;
    report.welfare_per_agent /= k;
    report.sim /= k;
    report.entropy /= k;
    report.profiles_evaluated = profiles.len();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{lift_mechanism, rsd_exact, BaselineKind, DeterministicMatching};
    use crate::prefs::example_market;
    use ndarray::Array2;

    fn rsd_example() -> RandomizedMatching {
        rsd_exact(&example_market()).unwrap()
    }

    #[test]
    fn stv_pair_on_rsd_example() {
        let enc = example_market().encode();
        let v = stv_pair(&rsd_example(), &enc, 1, 1).unwrap();
        assert!((v - 1.0 / 54.0).abs() <= 1e-12);
        assert!(stv_profile(&rsd_example(), &enc).unwrap() > 0.0);
    }

    #[test]
    fn stv_of_empty_matching_is_product_of_utilities() {
        let profile = example_market();
        let enc = profile.encode();
        let zero = RandomizedMatching::zeros(3, 3);
        for w in 0..3 {
            for f in 0..3 {
                let v = stv_pair(&zero, &enc, w, f).unwrap();
                assert_eq!(v, enc.q[[w, f]] * enc.p[[w, f]]);
                assert!(v > 0.0);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let enc = example_market().encode();
        let r = RandomizedMatching::zeros(2, 3);
        assert!(matches!(stv_pair(&r, &enc, 0, 0), Err(Error::Dimension(_))));
        assert!(stv_profile(&r, &enc).is_err());
    }

    #[test]
    fn irv_single_unacceptable_pair() {
        // w1 ranks f1 just below ⊥; f1 finds w1 acceptable
        let profile = PreferenceProfile::new(
            vec![
                PreferenceOrder::truncated(&[1], 2).unwrap(),
                PreferenceOrder::full(&[0, 1]).unwrap(),
            ],
            vec![
                PreferenceOrder::full(&[0, 1]).unwrap(),
                PreferenceOrder::full(&[0, 1]).unwrap(),
            ],
        )
        .unwrap();
        let enc = profile.encode();
        assert_eq!(enc.p[[0, 0]], -0.5);
        let mu = DeterministicMatching::from_pairs(2, 2, &[(0, 0)]).unwrap();
        let v = irv_profile(&mu.to_marginals(), &enc).unwrap();
        assert!((v - (1.0 / 4.0) * 0.5).abs() < 1e-15);
    }

    #[test]
    fn cumulative_prob_thresholds() {
        let profile = example_market();
        let r = rsd_example();
        let w2 = AgentId::worker(1);
        let order = profile.order(w2);
        assert_eq!(cumulative_prob(&r, order, w2, 1, Inclusion::Weak).unwrap(), 0.75);
        let all = cumulative_prob(&r, order, w2, 2, Inclusion::Weak).unwrap();
        assert!((all - (0.75 + 1.0 / 6.0 + 1.0 / 12.0)).abs() < 1e-12);
        assert_eq!(cumulative_prob(&r, order, w2, 1, Inclusion::Strict).unwrap(), 0.0);
        let truncated = PreferenceOrder::truncated(&[1], 3).unwrap();
        assert!(matches!(
            cumulative_prob(&r, &truncated, w2, 0, Inclusion::Weak),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn welfare_examples() {
        let profile = example_market();
        let enc = profile.encode();
        assert_eq!(welfare_profile(&RandomizedMatching::zeros(3, 3), &enc).unwrap(), 0.0);
        let wda = lift_mechanism(BaselineKind::Wda).evaluate(&profile).unwrap();
        let v = welfare_profile(&wda, &enc).unwrap();
        assert!((v - 7.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn similarity_examples() {
        let profile = example_market();
        let wda = lift_mechanism(BaselineKind::Wda).evaluate(&profile).unwrap();
        assert_eq!(similarity(&wda, &profile).unwrap(), 1.0);
        // against w-DA: 17/36, against f-DA {(1,1),(2,2),(3,3)}: 11/18
        let s = similarity(&rsd_example(), &profile).unwrap();
        assert!((s - 11.0 / 18.0).abs() < 1e-12);
        let none = |size| PreferenceOrder::truncated(&[], size).unwrap();
        let empty = PreferenceProfile::new(vec![none(2); 2], vec![none(2); 2]).unwrap();
        assert_eq!(similarity(&RandomizedMatching::zeros(2, 2), &empty).unwrap(), 1.0);
    }

    #[test]
    fn similarity_of_uniform_marginals() {
        let profile = PreferenceProfile::from_full_rankings(
            &vec![vec![0, 1, 2, 3]; 4],
            &vec![vec![0, 1, 2, 3]; 4],
        )
        .unwrap();
        let r = RandomizedMatching::new(Array2::from_elem((4, 4), 0.2)).unwrap();
        assert!((similarity(&r, &profile).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn entropy_examples() {
        let wda = lift_mechanism(BaselineKind::Wda)
            .evaluate(&example_market())
            .unwrap();
        assert_eq!(entropy(&wda).value, 0.0);
        let uniform = RandomizedMatching::new(Array2::from_elem((4, 4), 0.25)).unwrap();
        assert!((entropy(&uniform).value - 1.0).abs() < 1e-12);
        assert!(entropy(&rsd_example()).value > 0.0);
        let e = entropy(&RandomizedMatching::new(Array2::from_elem((1, 3), 0.2)).unwrap());
        assert!(e.degenerate);
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn wda_regret_for_firm_one() {
        let wda = lift_mechanism(BaselineKind::Wda);
        let profile = example_market();
        assert_eq!(regret_agent(&wda, &profile, AgentId::firm(0)).unwrap(), 1.0);
        // workers cannot gain under worker-proposing DA
        for w in 0..3 {
            assert_eq!(regret_agent(&wda, &profile, AgentId::worker(w)).unwrap(), 0.0);
        }
        assert!(regret_profile(&wda, &profile).unwrap() >= 0.5 / 3.0);
    }

    #[test]
    fn evaluate_rejects_empty_input() {
        let wda = lift_mechanism(BaselineKind::Wda);
        assert!(evaluate(&wda, &[]).is_err());
    }

    #[test]
    fn fosd_gain_picks_first_maximal_threshold() {
        let order = PreferenceOrder::full(&[2, 0, 1]).unwrap();
        let truth = [0.2, 0.3, 0.1];
        let lie = [0.2, 0.3, 0.4];
        let (g, t) = fosd_gain(&order, &truth, &lie, Inclusion::Weak).unwrap();
        assert!((g - 0.3).abs() < 1e-15);
        assert_eq!(t, 2);
        let nothing = PreferenceOrder::truncated(&[], 3).unwrap();
        assert!(fosd_gain(&nothing, &truth, &lie, Inclusion::Weak).is_none());
    }
}
