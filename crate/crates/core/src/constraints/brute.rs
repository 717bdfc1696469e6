//! Exhaustive satisfiability check for small trees, used to cross-check the
//! search. Enumerates statement and loop orders outright; layouts are chosen
//! per tensor since each one only interacts with the loop orders.

use std::collections::BTreeMap;

use itertools::Itertools;
use thiserror::Error;

use super::{verify_solution, Family, ScheduleSolution};
use crate::network::{ContractionTree, IndexId};

pub const MAX_CONTRACTIONS: usize = 3;
pub const MAX_LOOPS: usize = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BruteForceError {
    #[error("tree too large for exhaustive search ({contractions} contractions, {loops} loops max)")]
    TooLarge { contractions: usize, loops: usize },
}

/// Does any layout of `modes` agree with the loop order of every contraction
/// that touches the tensor?
fn layout_exists(order: usize, uses: &[(Vec<IndexId>, &BTreeMap<IndexId, usize>)]) -> Option<Vec<usize>> {
    (0..order).permutations(order).find(|d| {
        uses.iter()
            .all(|(idx, lp)| (0..order).all(|j| (0..order).all(|j2| d[j] >= d[j2] || lp[&idx[j]] < lp[&idx[j2]])))
    })
}

pub fn brute_force_sat(tree: &ContractionTree, l: usize) -> Result<bool, BruteForceError> {
    let m = tree.len();
    let loops = tree.contractions().iter().map(|c| c.index_set().len()).max().unwrap_or(0);
    if m > MAX_CONTRACTIONS || loops > MAX_LOOPS {
        return Err(BruteForceError::TooLarge { contractions: m, loops });
    }
    let layout = tree.layout_tensors();
    let identity: BTreeMap<String, Vec<usize>> =
        layout.iter().map(|r| (r.tensor.clone(), (0..r.order()).collect())).collect();
    let per_contraction: Vec<Vec<BTreeMap<IndexId, usize>>> = tree
        .contractions()
        .iter()
        .map(|c| {
            let idx = c.index_set();
            (0..idx.len()).permutations(idx.len()).map(|p| idx.iter().copied().zip(p).collect()).collect()
        })
        .collect();

    for ap in (0..m).permutations(m) {
        if (0..m).any(|c| tree.parent(c).is_some_and(|p| ap[c] >= ap[p])) {
            continue;
        }
        for lp in per_contraction.iter().multi_cartesian_product() {
            let lp: Vec<BTreeMap<IndexId, usize>> = lp.into_iter().cloned().collect();
            let sol = ScheduleSolution { bound: l, ap: ap.clone(), lp, dp: identity.clone() };
            let violations = verify_solution(tree, l, &sol).expect("complete assignment");
            if violations.iter().any(|v| v.family != Family::Consistency) {
                continue;
            }
            let all_layouts = layout.iter().all(|r| {
                let uses: Vec<_> = tree
                    .contractions()
                    .iter()
                    .flat_map(|c| {
                        [&c.result, &c.lhs, &c.rhs]
                            .into_iter()
                            .filter(|x| x.tensor == r.tensor)
                            .map(|x| (x.indices.clone(), &sol.lp[c.id]))
                            .collect::<Vec<_>>()
                    })
                    .collect();
                layout_exists(r.order(), &uses).is_some()
            });
            if all_layouts {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{build_model, solve, SolveOptions};
    use crate::network::parse_network;

    #[test]
    fn agrees_with_search_on_small_trees() {
        let nets = [
            super::super::tests::RUNNING,
            "extent i 2\nextent j 2\nextent k 2\nR[i,j] = T[i,k] * S[k,j]",
            "extent i 2\nextent j 2\nextent k 2\nextent l 2\nX[i,j,l] = A[i,k] * B[k,j,l]\nR[i,l] = X[i,j,l] * C[j]",
        ];
        for net in nets {
            let t = parse_network(net).unwrap();
            for l in 1..=3 {
                let model = build_model(&t, l).unwrap();
                let found = solve(&model, &SolveOptions::default()).unwrap().is_some();
                assert_eq!(brute_force_sat(&t, l).unwrap(), found, "{net} at l={l}");
            }
        }
    }

    #[test]
    fn refuses_large_trees() {
        let t = parse_network(
            "extent a 2\nextent b 2\nextent c 2\nextent d 2\nextent e 2\nextent f 2\nR[a] = A[a,b,c] * B[d,e,f]",
        )
        .unwrap();
        assert!(matches!(brute_force_sat(&t, 1), Err(BruteForceError::TooLarge { .. })));
    }
}
