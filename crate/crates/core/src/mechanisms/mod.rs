//! Matchings, the mechanism interface, and the classical baselines.

mod bvn;
mod da;
mod rsd;

use std::fmt;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::prefs::PreferenceProfile;

pub use bvn::{bvn_decompose, BvnComponent, BvnDecomposition};
pub use da::{da, Proposing};
pub use rsd::{
    rsd_exact, rsd_exact_with_cap, rsd_monte_carlo, serial_dictatorship_round,
    DEFAULT_RSD_CAP,
};

/// Row/column-sum slack tolerated by [`RandomizedMatching::new`].
pub const MARGINAL_TOLERANCE: f64 = 1e-9;

/// A one-to-one matching; agents without a partner are matched to `⊥`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DeterministicMatching {
    worker_partner: Vec<Option<usize>>,
    firm_partner: Vec<Option<usize>>,
}

impl DeterministicMatching {
    pub fn empty(n: usize, m: usize) -> Self {
        DeterministicMatching {
            worker_partner: vec![None; n],
            firm_partner: vec![None; m],
        }
    }

    pub fn from_pairs(n: usize, m: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut out = Self::empty(n, m);
        for &(w, f) in pairs {
            out.insert(w, f)?;
        }
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.worker_partner.len()
    }

    pub fn m(&self) -> usize {
        self.firm_partner.len()
    }

    pub fn insert(&mut self, w: usize, f: usize) -> Result<()> {
        if w >= self.n() || f >= self.m() {
            return Err(Error::InvalidMatching(format!(
                "pair (w{}, f{}) outside a {}x{} market",
                w + 1,
                f + 1,
                self.n(),
                self.m()
            )));
        }
        if self.worker_partner[w].is_some() || self.firm_partner[f].is_some() {
            return Err(Error::InvalidMatching(format!(
                "w{} or f{} already matched",
                w + 1,
                f + 1
            )));
        }
        self.worker_partner[w] = Some(f);
        self.firm_partner[f] = Some(w);
        Ok(())
    }

    pub fn worker_partner(&self, w: usize) -> Option<usize> {
        self.worker_partner[w]
    }

    pub fn firm_partner(&self, f: usize) -> Option<usize> {
        self.firm_partner[f]
    }

    /// Matched pairs in ascending worker order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.worker_partner
            .iter()
            .enumerate()
            .filter_map(|(w, f)| f.map(|f| (w, f)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.worker_partner.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, w: usize, f: usize) -> bool {
        self.worker_partner.get(w).copied().flatten() == Some(f)
    }

    pub fn to_marginals(&self) -> RandomizedMatching {
        let mut r = Array2::zeros((self.n(), self.m()));
        for (w, f) in self.pairs() {
            r[[w, f]] = 1.0;
        }
        RandomizedMatching { r }
    }

    /// Sidecar line: `w1:f3 w2:_ w3:f1`.
    pub fn to_line(&self) -> String {
        self.worker_partner
            .iter()
            .enumerate()
            .map(|(w, f)| match f {
                Some(f) => format!("w{}:f{}", w + 1, f + 1),
                None => format!("w{}:_", w + 1),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse_line(line: &str, m: usize) -> Result<Self> {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let n = tokens.len();
        let mut out = Self::empty(n, m);
        for tok in tokens {
            let bad = || Error::InvalidMatching(format!("bad matching token '{tok}'"));
            let (w, f) = tok.split_once(':').ok_or_else(bad)?;
            let w: usize = w
                .strip_prefix('w')
                .and_then(|s| s.parse().ok())
                .filter(|&k| k >= 1 && k <= n)
                .ok_or_else(bad)?;
            if f == "_" {
                continue;
            }
            let f: usize = f
                .strip_prefix('f')
                .and_then(|s| s.parse().ok())
                .filter(|&k| k >= 1)
                .ok_or_else(bad)?;
            out.insert(w - 1, f - 1)?;
        }
        Ok(out)
    }
}

impl fmt::Display for DeterministicMatching {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_line())
    }
}

/// Marginal match probabilities `r[[w, f]]`; the unmatched margins are
/// derived as `1 - row sum` and `1 - column sum`.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomizedMatching {
    r: Array2<f64>,
}

impl RandomizedMatching {
    /// Validates entries in `[0, 1]` and row/column sums at most
    /// `1 + MARGINAL_TOLERANCE`.
    pub fn new(r: Array2<f64>) -> Result<Self> {
        if let Some(((w, f), v)) = r
            .indexed_iter()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0 + MARGINAL_TOLERANCE)
        {
            return Err(Error::InvalidMatching(format!(
                "r[w{}, f{}] = {v} outside [0, 1]",
                w + 1,
                f + 1
            )));
        }
        for (w, row) in r.rows().into_iter().enumerate() {
            let s: f64 = row.sum();
            if s > 1.0 + MARGINAL_TOLERANCE {
                return Err(Error::InvalidMatching(format!(
                    "row w{} sums to {s}",
                    w + 1
                )));
            }
        }
        for (f, col) in r.columns().into_iter().enumerate() {
            let s: f64 = col.sum();
            if s > 1.0 + MARGINAL_TOLERANCE {
                return Err(Error::InvalidMatching(format!(
                    "column f{} sums to {s}",
                    f + 1
                )));
            }
        }
        Ok(RandomizedMatching { r })
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        RandomizedMatching {
            r: Array2::zeros((n, m)),
        }
    }

    pub fn n(&self) -> usize {
        self.r.nrows()
    }

    pub fn m(&self) -> usize {
        self.r.ncols()
    }

    pub fn get(&self, w: usize, f: usize) -> f64 {
        self.r[[w, f]]
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.r
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.r
    }

    /// Probability that worker `w` is unmatched.
    pub fn worker_unmatched(&self, w: usize) -> f64 {
        1.0 - self.r.row(w).sum()
    }

    /// Probability that firm `f` is unmatched.
    pub fn firm_unmatched(&self, f: usize) -> f64 {
        1.0 - self.r.column(f).sum()
    }

    pub fn max_abs_diff(&self, other: &RandomizedMatching) -> f64 {
        self.r
            .iter()
            .zip(other.r.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A randomized matching mechanism: reports in, marginals out.
pub trait Mechanism {
    fn label(&self) -> String;

    fn evaluate(&self, profile: &PreferenceProfile) -> Result<RandomizedMatching>;

    /// Evaluates several profiles; implementations may batch.
    fn evaluate_batch(&self, profiles: &[PreferenceProfile]) -> Result<Vec<RandomizedMatching>> {
        profiles.iter().map(|p| self.evaluate(p)).collect()
    }
}

impl<M: Mechanism + ?Sized> Mechanism for &M {
    fn label(&self) -> String {
        (**self).label()
    }

    fn evaluate(&self, profile: &PreferenceProfile) -> Result<RandomizedMatching> {
        (**self).evaluate(profile)
    }

    fn evaluate_batch(&self, profiles: &[PreferenceProfile]) -> Result<Vec<RandomizedMatching>> {
        (**self).evaluate_batch(profiles)
    }
}

impl<M: Mechanism + ?Sized> Mechanism for Box<M> {
    fn label(&self) -> String {
        (**self).label()
    }

    fn evaluate(&self, profile: &PreferenceProfile) -> Result<RandomizedMatching> {
        (**self).evaluate(profile)
    }

    fn evaluate_batch(&self, profiles: &[PreferenceProfile]) -> Result<Vec<RandomizedMatching>> {
        (**self).evaluate_batch(profiles)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    Wda,
    Fda,
    Rsd,
}

impl BaselineKind {
    pub fn label(self) -> &'static str {
        match self {
            BaselineKind::Wda => "wda",
            BaselineKind::Fda => "fda",
            BaselineKind::Rsd => "rsd",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "wda" => Some(BaselineKind::Wda),
            "fda" => Some(BaselineKind::Fda),
            "rsd" => Some(BaselineKind::Rsd),
            _ => None,
        }
    }
}

/// A classical mechanism behind the [`Mechanism`] interface.
#[derive(Clone, Debug)]
pub struct Baseline {
    pub kind: BaselineKind,
    /// Markets with `n + m` above this use Monte Carlo RSD.
    pub rsd_cap: usize,
    pub mc_samples: usize,
    pub mc_seed: u64,
}

pub fn lift_mechanism(kind: BaselineKind) -> Baseline {
    Baseline {
        kind,
        rsd_cap: DEFAULT_RSD_CAP,
        mc_samples: 100_000,
        mc_seed: 0,
    }
}

impl Mechanism for Baseline {
    fn label(&self) -> String {
        self.kind.label().to_string()
    }

    fn evaluate(&self, profile: &PreferenceProfile) -> Result<RandomizedMatching> {
        match self.kind {
            BaselineKind::Wda => Ok(da(profile, Proposing::Workers).to_marginals()),
            BaselineKind::Fda => Ok(da(profile, Proposing::Firms).to_marginals()),
            BaselineKind::Rsd => {
                if profile.n() + profile.m() <= self.rsd_cap {
                    rsd_exact_with_cap(profile, self.rsd_cap)
                } else {
                    let mut rng = crate::prefs::profile_stream(self.mc_seed, 0);
                    rsd_monte_carlo(profile, self.mc_samples, &mut rng)
                }
            }
        }
    }
}
