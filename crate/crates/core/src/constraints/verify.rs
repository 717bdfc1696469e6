//! Direct re-check of a schedule against the tree. Shares no code with model
//! construction or search.

use std::fmt;

use thiserror::Error;

use super::{Family, ScheduleSolution};
use crate::network::{ContractionTree, IndexId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VerifyError {
    #[error("solution has no value for {0}")]
    MissingVariable(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub family: Family,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:?}] {}", self.family, self.detail)
    }
}

fn is_permutation(vals: &[usize]) -> bool {
    let mut seen = vec![false; vals.len()];
    vals.iter().all(|&v| v < seen.len() && !std::mem::replace(&mut seen[v], true))
}

/// Evaluates every constraint family on `sol`. An empty list means the
/// schedule is valid for bound `l`.
pub fn verify_solution(
    tree: &ContractionTree,
    l: usize,
    sol: &ScheduleSolution,
) -> Result<Vec<Violation>, VerifyError> {
    let m = tree.len();
    let name = |k: IndexId| tree.index_name(k);
    if sol.ap.len() < m {
        return Err(VerifyError::MissingVariable(format!("ap[{}]", sol.ap.len())));
    }
    if sol.lp.len() < m {
        return Err(VerifyError::MissingVariable(format!("lp[{}, *]", sol.lp.len())));
    }
    let lp = |c: usize, k: IndexId| -> Result<usize, VerifyError> {
        sol.lp[c].get(&k).copied().ok_or_else(|| VerifyError::MissingVariable(format!("lp[{c},{}]", name(k))))
    };
    let layout = tree.layout_tensors();
    for r in &layout {
        match sol.dp.get(&r.tensor) {
            Some(d) if d.len() == r.order() => {}
            _ => return Err(VerifyError::MissingVariable(format!("dp[{}, *]", r.tensor))),
        }
    }
    for c in tree.contractions() {
        for k in c.index_set() {
            lp(c.id, k)?;
        }
    }

    let mut out = Vec::new();
    let mut bad = |family: Family, detail: String| out.push(Violation { family, detail });

    // statement order
    if !is_permutation(&sol.ap[..m]) {
        bad(Family::Assignment, format!("ap {:?} is not a permutation of 0..{m}", &sol.ap[..m]));
    }
    for c in 0..m {
        if let Some(p) = tree.parent(c) {
            if sol.ap[c] >= sol.ap[p] {
                bad(Family::Assignment, format!("child {c} is not scheduled before parent {p}"));
            }
        }
    }

    // layouts
    for r in &layout {
        let d = &sol.dp[&r.tensor];
        if !is_permutation(d) {
            bad(Family::Mode, format!("dp[{}] = {d:?} is not a permutation", r.tensor));
        }
    }

    // loop orders
    for c in tree.contractions() {
        let idx = c.index_set();
        let pos: Vec<usize> = idx.iter().map(|&k| sol.lp[c.id][&k]).collect();
        if !is_permutation(&pos) {
            bad(Family::Loop, format!("loop positions of contraction {} are not a permutation", c.id));
        }
    }

    // layout / loop consistency
    for c in tree.contractions() {
        for r in [&c.result, &c.lhs, &c.rhs] {
            let Some(d) = sol.dp.get(&r.tensor) else { continue };
            if tree.producer(&r.tensor).is_some() && tree.root_result().tensor != r.tensor {
                continue;
            }
            for j in 0..r.order() {
                for j2 in 0..r.order() {
                    let (k, k2) = (r.indices[j], r.indices[j2]);
                    if d[j] < d[j2] && sol.lp[c.id][&k] >= sol.lp[c.id][&k2] {
                        bad(
                            Family::Consistency,
                            format!(
                                "{}: mode {j} precedes mode {j2} but loop {} is not outside loop {} in contraction {}",
                                r.tensor,
                                name(k),
                                name(k2),
                                c.id
                            ),
                        );
                    }
                }
            }
        }
    }

    // fusion of producer / consumer pairs
    for (prod, cons, t) in tree.intermediates() {
        let n = t.order();
        if n <= l {
            continue;
        }
        let at = |c: usize, s: usize| -> Option<IndexId> { sol.lp[c].iter().find(|(_, &p)| p == s).map(|(&k, _)| k) };
        for s in 0..n - l {
            let pk = at(prod, s);
            match pk {
                Some(k) if t.indices.contains(&k) => {}
                _ => {
                    bad(Family::Producer, format!("loop {s} of producer {prod} does not index {}", t.tensor));
                    continue;
                }
            }
            let k = pk.unwrap();
            if sol.lp[cons].get(&k) != Some(&s) {
                bad(
                    Family::Consumer,
                    format!("consumer {cons} of {} does not have loop {} at position {s}", t.tensor, name(k)),
                );
            }
            for r in 0..m {
                if r == prod || r == cons {
                    continue;
                }
                let between = sol.ap[prod] < sol.ap[r] && sol.ap[r] < sol.ap[cons];
                if between && sol.lp[r].get(&k) != Some(&s) {
                    bad(
                        Family::InBetween,
                        format!(
                            "statement {r} between producer {prod} and consumer {cons} lacks loop {} at position {s}",
                            name(k)
                        ),
                    );
                }
            }
        }
    }
    Ok(out)
}
