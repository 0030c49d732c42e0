use ndarray::Array2;

use crate::error::{Error, Result};
use crate::mechanisms::{DeterministicMatching, RandomizedMatching};

/// Residual entries at or below this are treated as exhausted.
const SUPPORT_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct BvnComponent {
    pub weight: f64,
    pub matching: DeterministicMatching,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BvnDecomposition {
    pub components: Vec<BvnComponent>,
}

impl BvnDecomposition {
    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    /// The weighted sum of component indicator matrices.
    pub fn reconstruct(&self, n: usize, m: usize) -> Array2<f64> {
        let mut r = Array2::zeros((n, m));
        for c in &self.components {
            for (w, f) in c.matching.pairs() {
                r[[w, f]] += c.weight;
            }
        }
        r
    }
}

/// Kuhn's augmenting-path search on a square bipartite graph.
fn perfect_matching(adj: &[Vec<usize>]) -> Option<Vec<usize>> {
    let size = adj.len();
    let mut col_owner: Vec<Option<usize>> = vec![None; size];

    fn augment(
        row: usize,
        adj: &[Vec<usize>],
        visited: &mut [bool],
        col_owner: &mut [Option<usize>],
    ) -> bool {
        for &col in &adj[row] {
            if visited[col] {
                continue;
            }
            visited[col] = true;
            let free = match col_owner[col] {
                None => true,
                Some(other) => augment(other, adj, visited, col_owner),
            };
            if free {
                col_owner[col] = Some(row);
                return true;
            }
        }
        false
    }

    for row in 0..size {
        let mut visited = vec![false; size];
        if !augment(row, adj, &mut visited, &mut col_owner) {
            return None;
        }
    }
    let mut row_match = vec![0; size];
    for (col, owner) in col_owner.into_iter().enumerate() {
        row_match[owner?] = col;
    }
    Some(row_match)
}

/// Writes a weakly doubly stochastic `r` as a convex combination of
/// matchings.
///
/// The residual is kept together with its remaining total mass `t`; a
/// worker's slack is `t - row sum` and a firm's is `t - column sum`. Each
/// step extracts a matching inside the support of the residual that covers
/// every worker and firm without slack, found as a perfect matching of the
/// `(n + m)`-square augmentation `[[R, diag(slack_w)], [diag(slack_f), Rᵀ]]`,
/// and removes as much of it as the smallest participating entry allows.
/// Every step exhausts at least one of the `nm` entries, `n + m` slacks, or
/// `t` itself, and none of them ever grows back, which bounds the number of
/// components by `nm + n + m + 1`.
pub fn bvn_decompose(r: &RandomizedMatching) -> Result<BvnDecomposition> {
    // re-validate: callers may hold matrices built without checks
    let r = RandomizedMatching::new(r.matrix().clone())?;
    let (n, m) = (r.n(), r.m());
    // entries at rounding level are dropped so the support and the line
    // sums describe the same matrix
    let mut residual = r.matrix().mapv(|v| if v > SUPPORT_EPS { v } else { 0.0 });
    let mut total = 1.0f64;
    let mut components = Vec::new();
    let max_steps = n * m + n + m + 1;

    while total > SUPPORT_EPS {
        if components.len() >= max_steps {
            return Err(Error::Numeric(format!(
                "decomposition did not terminate within {max_steps} components"
            )));
        }
        let worker_slack: Vec<f64> = (0..n).map(|w| total - residual.row(w).sum()).collect();
        let firm_slack: Vec<f64> = (0..m).map(|f| total - residual.column(f).sum()).collect();

        // rows: workers 0..n, then firm dummies n..n+m
        // cols: firms 0..m, then worker dummies m..m+n
        let support = |eps: f64| {
            let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n + m];
            for w in 0..n {
                for f in 0..m {
                    if residual[[w, f]] > eps {
                        adj[w].push(f);
                        adj[n + f].push(m + w);
                    }
                }
                if worker_slack[w] > eps {
                    adj[w].push(m + w);
                }
            }
            for f in 0..m {
                if firm_slack[f] > eps {
                    adj[n + f].push(f);
                }
            }
            adj
        };
        // a slack that rounding pushed below the cutoff can still be needed
        let assignment = perfect_matching(&support(SUPPORT_EPS))
            .or_else(|| perfect_matching(&support(0.0)))
            .ok_or_else(|| Error::Numeric("no covering matching in the residual support".into()))?;

        let mut matching = DeterministicMatching::empty(n, m);
        let mut theta = total;
        let mut firm_covered = vec![false; m];
        for (w, &col) in assignment.iter().take(n).enumerate() {
            if col < m {
                matching.insert(w, col)?;
                firm_covered[col] = true;
                theta = theta.min(residual[[w, col]]);
            } else {
                theta = theta.min(worker_slack[w]);
            }
        }
        for f in (0..m).filter(|&f| !firm_covered[f]) {
            theta = theta.min(firm_slack[f]);
        }
        if theta <= 0.0 {
            return Err(Error::Numeric("decomposition step has zero weight".into()));
        }
        for (w, f) in matching.pairs() {
            residual[[w, f]] -= theta;
            if residual[[w, f]] <= SUPPORT_EPS {
                residual[[w, f]] = 0.0;
            }
        }
        total -= theta;
        components.push(BvnComponent {
            weight: theta,
            matching,
        });
    }
    Ok(BvnDecomposition { components })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn check(r: &RandomizedMatching, d: &BvnDecomposition) {
        let rec = d.reconstruct(r.n(), r.m());
        for (a, b) in rec.iter().zip(r.matrix().iter()) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
        assert!((d.total_weight() - 1.0).abs() <= 1e-9);
        assert!(d.components.len() <= r.n() * r.m() + r.n() + r.m() + 1);
        for c in &d.components {
            assert!(c.weight > 0.0);
            for (w, f) in c.matching.pairs() {
                assert!(r.get(w, f) > 0.0);
            }
        }
    }

    #[test]
    fn permutation_matrix_is_one_component() {
        let r = RandomizedMatching::new(arr2(&[[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]))
            .unwrap();
        let d = bvn_decompose(&r).unwrap();
        assert_eq!(d.components.len(), 1);
        assert_eq!(d.components[0].weight, 1.0);
        assert_eq!(d.components[0].matching.pairs(), vec![(0, 1), (1, 0), (2, 2)]);
    }

    #[test]
    fn entries_at_rounding_level_do_not_block_progress() {
        let r = RandomizedMatching::new(arr2(&[
            [0.0, 7.031489790575913e-13, 3.304992485637272e-1],
            [0.0, 7.512251209032562e-13, 1.3950873966713453e-14],
            [5.7578668603265816e-11, 3.2507227796505287e-15, 2.0728271317510486e-3],
        ]))
        .unwrap();
        check(&r, &bvn_decompose(&r).unwrap());
    }

    #[test]
    fn uniform_two_by_two() {
        let r = RandomizedMatching::new(arr2(&[[0.5, 0.5], [0.5, 0.5]])).unwrap();
        let d = bvn_decompose(&r).unwrap();
        assert_eq!(d.components.len(), 2);
        let mut pairs: Vec<_> = d.components.iter().map(|c| c.matching.pairs()).collect();
        pairs.sort();
        assert_eq!(pairs, vec![vec![(0, 0), (1, 1)], vec![(0, 1), (1, 0)]]);
        for c in &d.components {
            assert!((c.weight - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn weak_matrices_use_unmatched_slack() {
        let r = RandomizedMatching::new(arr2(&[[0.3, 0.2], [0.1, 0.0], [0.0, 0.4]])).unwrap();
        let d = bvn_decompose(&r).unwrap();
        check(&r, &d);
        let zero = RandomizedMatching::zeros(2, 3);
        let d = bvn_decompose(&zero).unwrap();
        assert_eq!(d.components.len(), 1);
        assert!(d.components[0].matching.is_empty());
    }

    #[test]
    fn rejects_invalid_input() {
        let bad = RandomizedMatching {
            r: arr2(&[[0.7, 0.7]]),
        };
        assert!(matches!(bvn_decompose(&bad), Err(Error::InvalidMatching(_))));
    }
}
