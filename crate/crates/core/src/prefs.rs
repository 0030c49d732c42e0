//! Preference orders and profiles, the evenly spaced utility encoding, and
//! the profile distributions used for training and test data.
//!
//! A worker ranks firms plus the outside option `⊥` ([`Choice::Unmatched`]);
//! a firm ranks workers plus `⊥`. Everything ranked below `⊥` is
//! unacceptable.

use std::fmt;
use std::io::{BufRead, Write};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default cap on `size + 1` for misreport enumeration (720 orders).
pub const DEFAULT_MISREPORT_CAP: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Worker,
    Firm,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Worker => Side::Firm,
            Side::Firm => Side::Worker,
        }
    }

    fn label(self) -> char {
        match self {
            Side::Worker => 'w',
            Side::Firm => 'f',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentId {
    pub side: Side,
    pub index: usize,
}

impl AgentId {
    pub fn worker(index: usize) -> Self {
        AgentId {
            side: Side::Worker,
            index,
        }
    }

    pub fn firm(index: usize) -> Self {
        AgentId {
            side: Side::Firm,
            index,
        }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.side.label(), self.index + 1)
    }
}

/// One entry of a preference order. `Agent(_)` sorts before `Unmatched`,
/// which makes the lexicographic misreport order well defined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Choice {
    Agent(usize),
    Unmatched,
}

/// A strict ranking over the opposite side plus `⊥`, most preferred first.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PreferenceOrder {
    ranking: Vec<Choice>,
}

impl PreferenceOrder {
    /// Validates that every opposite-side index in `0..size` and `⊥` appear
    /// exactly once.
    pub fn new(ranking: Vec<Choice>, size: usize) -> Result<Self> {
        if ranking.len() != size + 1 {
            return Err(Error::InvalidOrder(format!(
                "expected {} entries, got {}",
                size + 1,
                ranking.len()
            )));
        }
        let mut seen = vec![false; size + 1];
        for &c in &ranking {
            let slot = match c {
                Choice::Agent(j) if j < size => j,
                Choice::Agent(j) => {
                    return Err(Error::InvalidOrder(format!(
                        "agent index {j} out of range for size {size}"
                    )))
                }
                Choice::Unmatched => size,
            };
            if seen[slot] {
                return Err(Error::InvalidOrder(format!("duplicate entry {c:?}")));
            }
            seen[slot] = true;
        }
        Ok(PreferenceOrder { ranking })
    }

    /// All agents in the given order, `⊥` last.
    pub fn full(agents: &[usize]) -> Result<Self> {
        let mut ranking: Vec<Choice> = agents.iter().map(|&j| Choice::Agent(j)).collect();
        ranking.push(Choice::Unmatched);
        Self::new(ranking, agents.len())
    }

    /// Acceptable agents in order, followed by `⊥`; the rest of `0..size`
    /// follows `⊥` in ascending index order.
    pub fn truncated(acceptable: &[usize], size: usize) -> Result<Self> {
        let mut ranking: Vec<Choice> = acceptable.iter().map(|&j| Choice::Agent(j)).collect();
        ranking.push(Choice::Unmatched);
        ranking.extend(
            (0..size)
                .filter(|j| !acceptable.contains(j))
                .map(Choice::Agent),
        );
        Self::new(ranking, size)
    }

    pub fn ranking(&self) -> &[Choice] {
        &self.ranking
    }

    /// Number of opposite-side agents ranked.
    pub fn size(&self) -> usize {
        self.ranking.len() - 1
    }

    /// Position of `c` in the ranking (0 = most preferred).
    pub fn position(&self, c: Choice) -> usize {
        self.ranking
            .iter()
            .position(|&x| x == c)
            .expect("validated order contains every choice")
    }

    pub fn prefers(&self, a: Choice, b: Choice) -> bool {
        self.position(a) < self.position(b)
    }

    pub fn is_acceptable(&self, agent: usize) -> bool {
        self.prefers(Choice::Agent(agent), Choice::Unmatched)
    }

    /// Acceptable agents, most preferred first.
    pub fn acceptable(&self) -> impl Iterator<Item = usize> + '_ {
        self.ranking.iter().map_while(|c| match *c {
            Choice::Agent(j) => Some(j),
            Choice::Unmatched => None,
        })
    }

    pub fn is_truncated(&self) -> bool {
        self.ranking.last() != Some(&Choice::Unmatched)
    }

    /// Moves `⊥` to `position`, keeping the relative order of agents.
    pub fn with_unmatched_at(&self, position: usize) -> PreferenceOrder {
        let mut agents: Vec<Choice> = self
            .ranking
            .iter()
            .copied()
            .filter(|c| *c != Choice::Unmatched)
            .collect();
        agents.insert(position.min(agents.len()), Choice::Unmatched);
        PreferenceOrder { ranking: agents }
    }

    /// Evenly spaced utility of each opposite-side agent, indexed by agent.
    ///
    /// `u_j = (1/size) * (1[j > ⊥] + Σ_j' (1[j > j'] - 1[⊥ > j']))`
    pub fn encode(&self) -> Vec<f64> {
        let size = self.size();
        let pos: Vec<usize> = (0..size).map(|j| self.position(Choice::Agent(j))).collect();
        let bottom = self.position(Choice::Unmatched);
        let scale = size as f64;
        (0..size)
            .map(|j| {
                let mut count: i64 = i64::from(pos[j] < bottom);
                for &pj in &pos {
                    count += i64::from(pos[j] < pj) - i64::from(bottom < pj);
                }
                count as f64 / scale
            })
            .collect()
    }

    /// Text form such as `f2,_,f1`; `opposite` is the side being ranked.
    pub fn format_tokens(&self, opposite: Side) -> String {
        self.ranking
            .iter()
            .map(|c| match c {
                Choice::Agent(j) => format!("{}{}", opposite.label(), j + 1),
                Choice::Unmatched => "_".to_string(),
            })
            .collect::<Vec<_>>()
            .join(",")
    }

    fn parse_tokens(text: &str, opposite: Side, size: usize) -> Result<Self> {
        let ranking = text
            .split(',')
            .map(|tok| parse_choice(tok.trim(), opposite))
            .collect::<Result<Vec<_>>>()?;
        Self::new(ranking, size)
    }
}

fn parse_choice(tok: &str, side: Side) -> Result<Choice> {
    if tok == "_" {
        return Ok(Choice::Unmatched);
    }
    let rest = tok
        .strip_prefix(side.label())
        .ok_or_else(|| Error::InvalidOrder(format!("unexpected token '{tok}'")))?;
    let k: usize = rest
        .parse()
        .map_err(|_| Error::InvalidOrder(format!("unexpected token '{tok}'")))?;
    if k == 0 {
        return Err(Error::InvalidOrder(format!(
            "agent labels are 1-based, got '{tok}'"
        )));
    }
    Ok(Choice::Agent(k - 1))
}

/// Reports of all `n` workers and `m` firms.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PreferenceProfile {
    workers: Vec<PreferenceOrder>,
    firms: Vec<PreferenceOrder>,
}

impl PreferenceProfile {
    pub fn new(workers: Vec<PreferenceOrder>, firms: Vec<PreferenceOrder>) -> Result<Self> {
        let (n, m) = (workers.len(), firms.len());
        if n == 0 || m == 0 {
            return Err(Error::InvalidProfile("market must have n, m >= 1".into()));
        }
        if let Some(w) = workers.iter().position(|o| o.size() != m) {
            return Err(Error::InvalidProfile(format!(
                "worker {} ranks {} firms, expected {m}",
                w + 1,
                workers[w].size()
            )));
        }
        if let Some(f) = firms.iter().position(|o| o.size() != n) {
            return Err(Error::InvalidProfile(format!(
                "firm {} ranks {} workers, expected {n}",
                f + 1,
                firms[f].size()
            )));
        }
        Ok(PreferenceProfile { workers, firms })
    }

    /// Builds a profile from 0-based full rankings (no truncation).
    pub fn from_full_rankings(workers: &[Vec<usize>], firms: &[Vec<usize>]) -> Result<Self> {
        let w = workers
            .iter()
            .map(|r| PreferenceOrder::full(r))
            .collect::<Result<Vec<_>>>()?;
        let f = firms
            .iter()
            .map(|r| PreferenceOrder::full(r))
            .collect::<Result<Vec<_>>>()?;
        Self::new(w, f)
    }

    pub fn n(&self) -> usize {
        self.workers.len()
    }

    pub fn m(&self) -> usize {
        self.firms.len()
    }

    pub fn workers(&self) -> &[PreferenceOrder] {
        &self.workers
    }

    pub fn firms(&self) -> &[PreferenceOrder] {
        &self.firms
    }

    pub fn order(&self, agent: AgentId) -> &PreferenceOrder {
        match agent.side {
            Side::Worker => &self.workers[agent.index],
            Side::Firm => &self.firms[agent.index],
        }
    }

    /// Size of the ranking an agent on `side` submits.
    pub fn report_size(&self, side: Side) -> usize {
        match side {
            Side::Worker => self.m(),
            Side::Firm => self.n(),
        }
    }

    pub fn agents(&self) -> impl Iterator<Item = AgentId> {
        let (n, m) = (self.n(), self.m());
        (0..n)
            .map(AgentId::worker)
            .chain((0..m).map(AgentId::firm))
    }

    /// The profile with `agent`'s order replaced by `report`.
    pub fn with_report(&self, agent: AgentId, report: PreferenceOrder) -> Result<Self> {
        if report.size() != self.report_size(agent.side) {
            return Err(Error::InvalidProfile(format!(
                "report for {agent} has size {}",
                report.size()
            )));
        }
        let mut out = self.clone();
        match agent.side {
            Side::Worker => out.workers[agent.index] = report,
            Side::Firm => out.firms[agent.index] = report,
        }
        Ok(out)
    }

    /// Whether worker `w` and firm `f` find each other acceptable.
    pub fn mutually_acceptable(&self, w: usize, f: usize) -> bool {
        self.workers[w].is_acceptable(f) && self.firms[f].is_acceptable(w)
    }

    pub fn encode(&self) -> EncodedProfile {
        encode(self)
    }

    /// One line of the profile text format, e.g. `f1,f2,_;f2,_,f1|w1,w2,_;w2,w1,_`.
    pub fn to_line(&self) -> String {
        let w: Vec<String> = self
            .workers
            .iter()
            .map(|o| o.format_tokens(Side::Firm))
            .collect();
        let f: Vec<String> = self
            .firms
            .iter()
            .map(|o| o.format_tokens(Side::Worker))
            .collect();
        format!("{}|{}", w.join(";"), f.join(";"))
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let (w, f) = line
            .trim()
            .split_once('|')
            .ok_or_else(|| Error::InvalidProfile("missing '|' between sides".into()))?;
        let w_parts: Vec<&str> = w.split(';').collect();
        let f_parts: Vec<&str> = f.split(';').collect();
        let (n, m) = (w_parts.len(), f_parts.len());
        let workers = w_parts
            .iter()
            .map(|s| PreferenceOrder::parse_tokens(s, Side::Firm, m))
            .collect::<Result<Vec<_>>>()?;
        let firms = f_parts
            .iter()
            .map(|s| PreferenceOrder::parse_tokens(s, Side::Worker, n))
            .collect::<Result<Vec<_>>>()?;
        Self::new(workers, firms)
    }
}

impl fmt::Display for PreferenceProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_line())
    }
}

/// Reads profiles, one per line. Blank lines and `#` comments are skipped.
pub fn read_profiles<R: BufRead>(reader: R) -> Result<Vec<PreferenceProfile>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let p = PreferenceProfile::parse_line(t).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Some(first) = out.first() {
            let first: &PreferenceProfile = first;
            if first.n() != p.n() || first.m() != p.m() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!(
                        "market is {}x{}, earlier profiles are {}x{}",
                        p.n(),
                        p.m(),
                        first.n(),
                        first.m()
                    ),
                });
            }
        }
        out.push(p);
    }
    Ok(out)
}

pub fn write_profiles<W: Write>(
    mut writer: W,
    header: &str,
    profiles: &[PreferenceProfile],
) -> Result<()> {
    for line in header.lines() {
        writeln!(writer, "# {line}")?;
    }
    for p in profiles {
        writeln!(writer, "{}", p.to_line())?;
    }
    Ok(())
}

/// Encoded utilities: `p[[w, f]]` is worker `w`'s value for firm `f`,
/// `q[[w, f]]` is firm `f`'s value for worker `w`. The outside option
/// encodes to zero on both sides.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedProfile {
    pub p: Array2<f64>,
    pub q: Array2<f64>,
}

impl EncodedProfile {
    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn m(&self) -> usize {
        self.p.ncols()
    }

    /// Network input: `p` row-major followed by `q` row-major.
    pub fn to_input(&self) -> Vec<f64> {
        self.p.iter().chain(self.q.iter()).copied().collect()
    }
}

pub fn encode(profile: &PreferenceProfile) -> EncodedProfile {
    let (n, m) = (profile.n(), profile.m());
    let mut p = Array2::zeros((n, m));
    let mut q = Array2::zeros((n, m));
    for (w, order) in profile.workers().iter().enumerate() {
        for (f, v) in order.encode().into_iter().enumerate() {
            p[[w, f]] = v;
        }
    }
    for (f, order) in profile.firms().iter().enumerate() {
        for (w, v) in order.encode().into_iter().enumerate() {
            q[[w, f]] = v;
        }
    }
    EncodedProfile { p, q }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistributionKind {
    Uncorrelated,
    Correlated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistributionConfig {
    pub kind: DistributionKind,
    pub p_corr: f64,
    pub p_trunc: f64,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
}

impl DistributionConfig {
    pub fn uncorrelated(n: usize, m: usize, p_trunc: f64, seed: u64) -> Self {
        DistributionConfig {
            kind: DistributionKind::Uncorrelated,
            p_corr: 0.0,
            p_trunc,
            n,
            m,
            seed,
        }
    }

    pub fn correlated(n: usize, m: usize, p_corr: f64, p_trunc: f64, seed: u64) -> Self {
        DistributionConfig {
            kind: DistributionKind::Correlated,
            p_corr,
            p_trunc,
            n,
            m,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidConfig("n and m must be at least 1".into()));
        }
        for (name, v) in [("p_corr", self.p_corr), ("p_trunc", self.p_trunc)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} = {v} is not in [0, 1]")));
            }
        }
        if self.kind == DistributionKind::Uncorrelated && self.p_corr != 0.0 {
            return Err(Error::InvalidConfig(
                "p_corr must be 0 for uncorrelated preferences".into(),
            ));
        }
        Ok(())
    }

    /// The deterministic stream for profile number `index`.
    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        profile_stream(self.seed, index)
    }

    /// Profiles `start..start + count`, each drawn from its own stream.
    pub fn sample_range(&self, start: u64, count: usize) -> Result<Vec<PreferenceProfile>> {
        self.validate()?;
        Ok((0..count as u64)
            .map(|i| sample_profile(self, &mut self.stream(start + i)))
            .collect())
    }
}

/// Counter-based stream: ChaCha8 keyed by `seed`, stream id `index`.
pub fn profile_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn sample_order<R: Rng + ?Sized>(size: usize, p_trunc: f64, rng: &mut R) -> PreferenceOrder {
    let mut agents: Vec<usize> = (0..size).collect();
    agents.shuffle(rng);
    let order = PreferenceOrder::full(&agents).expect("permutation is a valid order");
    if rng.gen_bool(p_trunc) {
        // ⊥ lands strictly above at least one agent
        let pos = rng.gen_range(0..size);
        order.with_unmatched_at(pos)
    } else {
        order
    }
}

/// Draws one profile. `cfg` is assumed valid.
pub fn sample_profile<R: Rng + ?Sized>(cfg: &DistributionConfig, rng: &mut R) -> PreferenceProfile {
    let mut workers: Vec<PreferenceOrder> =
        (0..cfg.n).map(|_| sample_order(cfg.m, cfg.p_trunc, rng)).collect();
    let mut firms: Vec<PreferenceOrder> =
        (0..cfg.m).map(|_| sample_order(cfg.n, cfg.p_trunc, rng)).collect();
    if cfg.kind == DistributionKind::Correlated {
        let common_worker = sample_order(cfg.m, cfg.p_trunc, rng);
        let common_firm = sample_order(cfg.n, cfg.p_trunc, rng);
        for o in workers.iter_mut() {
            if rng.gen_bool(cfg.p_corr) {
                *o = common_worker.clone();
            }
        }
        for o in firms.iter_mut() {
            if rng.gen_bool(cfg.p_corr) {
                *o = common_firm.clone();
            }
        }
    }
    PreferenceProfile::new(workers, firms).expect("sampled profile has consistent sizes")
}

fn next_permutation(v: &mut [Choice]) -> bool {
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

fn factorial(k: usize) -> usize {
    (1..=k).product()
}

/// Every strict order over `size` opposite-side agents and `⊥`, in
/// lexicographic order (agents by index, `⊥` after all agents).
pub fn enumerate_misreports(side: Side, size: usize) -> Result<Vec<PreferenceOrder>> {
    enumerate_misreports_with_cap(side, size, DEFAULT_MISREPORT_CAP)
}

/// As [`enumerate_misreports`], with an explicit cap on `size + 1`.
pub fn enumerate_misreports_with_cap(
    side: Side,
    size: usize,
    cap: usize,
) -> Result<Vec<PreferenceOrder>> {
    if size + 1 > cap {
        return Err(Error::EnumerationOverflow {
            what: match side {
                Side::Worker => "worker misreports",
                Side::Firm => "firm misreports",
            },
            required: size + 1,
            cap,
        });
    }
    let mut current: Vec<Choice> = (0..size).map(Choice::Agent).collect();
    current.push(Choice::Unmatched);
    let mut out = Vec::with_capacity(factorial(size + 1));
    loop {
        out.push(PreferenceOrder {
            ranking: current.clone(),
        });
        if !next_permutation(&mut current) {
            break;
        }
    }
    Ok(out)
}

/// The market used throughout the tests: three workers, three firms, full
/// preferences.
///
/// ```text
/// w1: f2, f3, f1    f1: w1, w2, w3
/// w2: f2, f1, f3    f2: w2, w3, w1
/// w3: f1, f3, f2    f3: w3, w1, w2
/// ```
pub fn example_market() -> PreferenceProfile {
    PreferenceProfile::from_full_rankings(
        &[vec![1, 2, 0], vec![1, 0, 2], vec![0, 2, 1]],
        &[vec![0, 1, 2], vec![1, 2, 0], vec![2, 0, 1]],
    )
    .expect("example market is valid")
}
