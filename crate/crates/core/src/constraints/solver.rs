//! Backtracking finite-domain search with propagation.
//!
//! Branching order is static given the statement positions: all `ap`
//! variables, then each contraction's `lp` variables in statement order, then
//! the `dp` variables. Propagation only removes unsupported values, so the
//! first solution found is the lexicographically first one under that order.

use std::collections::VecDeque;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Constraint, ConstraintModel, ScheduleSolution, SolveError, SolveOptions, VarId, VarKey};

type Domain = u64;

fn bit(v: usize) -> Domain {
    1 << v
}

fn single(d: Domain) -> Option<usize> {
    (d.count_ones() == 1).then(|| d.trailing_zeros() as usize)
}

fn min_val(d: Domain) -> usize {
    d.trailing_zeros() as usize
}

fn max_val(d: Domain) -> usize {
    63 - d.leading_zeros() as usize
}

/// Values strictly below `v`.
fn below(v: usize) -> Domain {
    if v >= 64 {
        !0
    } else {
        bit(v) - 1
    }
}

/// Values strictly above `v`.
fn above(v: usize) -> Domain {
    if v >= 63 {
        0
    } else {
        !0 << (v + 1)
    }
}

struct Search<'a> {
    model: &'a ConstraintModel,
    watchers: Vec<Vec<usize>>,
    value_order: Vec<Vec<usize>>,
    ap_vars: Vec<VarId>,
    dp_vars: Vec<VarId>,
    started: Instant,
    opts: &'a SolveOptions,
    nodes: u64,
}

#[derive(Debug)]
enum Halt {
    Timeout,
}

pub fn solve(model: &ConstraintModel, opts: &SolveOptions) -> Result<Option<ScheduleSolution>, SolveError> {
    assert!(model.vars().iter().all(|v| v.size <= 64), "domains larger than 64 values");
    let mut watchers = vec![Vec::new(); model.vars().len()];
    for (ci, c) in model.constraints().iter().enumerate() {
        for v in c.constraint.vars() {
            if !watchers[v].contains(&ci) {
                watchers[v].push(ci);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let value_order = model
        .vars()
        .iter()
        .map(|var| {
            let mut vals: Vec<usize> = (0..var.size).rev().collect();
            if opts.seed != 0 {
                vals.shuffle(&mut rng);
            }
            vals
        })
        .collect();
    let ap_vars = (0..model.num_contractions()).map(|c| model.var(&VarKey::Ap(c)).expect("ap variable")).collect();
    let dp_vars =
        model.vars().iter().enumerate().filter(|(_, v)| matches!(v.key, VarKey::Dp { .. })).map(|(id, _)| id).collect();
    let mut search = Search { model, watchers, value_order, ap_vars, dp_vars, started: Instant::now(), opts, nodes: 0 };
    let mut doms: Vec<Domain> = model.vars().iter().map(|v| below(v.size)).collect();
    let all: Vec<usize> = (0..model.constraints().len()).collect();
    if !search.propagate(&mut doms, all) {
        return Ok(None);
    }
    match search.dfs(doms) {
        Ok(Some(doms)) => {
            let values: Vec<usize> = doms.iter().map(|&d| single(d).expect("assigned")).collect();
            debug_assert!(model.constraints().iter().all(|c| c.constraint.holds(&values)));
            Ok(Some(model.to_solution(&values)))
        }
        Ok(None) => Ok(None),
        Err(Halt::Timeout) => Err(SolveError::Timeout { budget: opts.time_budget, model: model.to_string() }),
    }
}

impl Search<'_> {
    fn next_var(&self, doms: &[Domain]) -> Option<VarId> {
        if let Some(&v) = self.ap_vars.iter().find(|&&v| single(doms[v]).is_none()) {
            return Some(v);
        }
        let mut stmts: Vec<usize> = (0..self.ap_vars.len()).collect();
        stmts.sort_by_key(|&c| single(doms[self.ap_vars[c]]));
        for c in stmts {
            for &k in self.model.loop_indices(c) {
                let v = self.model.var(&VarKey::Lp { contraction: c, index: k }).expect("lp variable");
                if single(doms[v]).is_none() {
                    return Some(v);
                }
            }
        }
        self.dp_vars.iter().copied().find(|&v| single(doms[v]).is_none())
    }

    fn dfs(&mut self, doms: Vec<Domain>) -> Result<Option<Vec<Domain>>, Halt> {
        self.nodes += 1;
        if self.started.elapsed() > self.opts.time_budget {
            return Err(Halt::Timeout);
        }
        let Some(var) = self.next_var(&doms) else {
            return Ok(Some(doms));
        };
        for k in 0..self.value_order[var].len() {
            let val = self.value_order[var][k];
            if doms[var] & bit(val) == 0 {
                continue;
            }
            let mut child = doms.clone();
            child[var] = bit(val);
            if !self.propagate(&mut child, self.watchers[var].clone()) {
                continue;
            }
            if let Some(found) = self.dfs(child)? {
                return Ok(Some(found));
            }
        }
        Ok(None)
    }

    /// Runs propagators to a fixpoint. Returns false on a wipe-out.
    fn propagate(&self, doms: &mut [Domain], seed: Vec<usize>) -> bool {
        let mut queue: VecDeque<usize> = seed.into();
        let mut queued = vec![false; self.model.constraints().len()];
        for &c in &queue {
            queued[c] = true;
        }
        while let Some(ci) = queue.pop_front() {
            queued[ci] = false;
            let before: Vec<(VarId, Domain)> =
                self.model.constraints()[ci].constraint.vars().into_iter().map(|v| (v, doms[v])).collect();
            if !revise(&self.model.constraints()[ci].constraint, doms) {
                return false;
            }
            for (v, d) in before {
                if doms[v] == 0 {
                    return false;
                }
                if doms[v] != d {
                    for &w in &self.watchers[v] {
                        if w != ci && !queued[w] {
                            queued[w] = true;
                            queue.push_back(w);
                        }
                    }
                }
            }
        }
        true
    }
}

/// Narrows domains for one constraint. Sound but not necessarily complete;
/// every propagator is exact once all its variables are fixed.
fn revise(c: &Constraint, d: &mut [Domain]) -> bool {
    match c {
        Constraint::AllDifferent(vs) => {
            let mut changed = true;
            while changed {
                changed = false;
                for &a in vs {
                    if let Some(x) = single(d[a]) {
                        for &b in vs {
                            if b != a && d[b] & bit(x) != 0 {
                                d[b] &= !bit(x);
                                if d[b] == 0 {
                                    return false;
                                }
                                changed = true;
                            }
                        }
                    }
                }
            }
            let union = vs.iter().fold(0, |acc, &v| acc | d[v]);
            union.count_ones() as usize >= vs.len()
        }
        Constraint::Less(a, b) => narrow_less(d, *a, *b),
        Constraint::Fixed(v, x) => {
            d[*v] &= bit(*x);
            d[*v] != 0
        }
        Constraint::AnyEquals { vars, value } => {
            if vars.iter().any(|&v| d[v] == bit(*value)) {
                return true;
            }
            let cands: Vec<VarId> = vars.iter().copied().filter(|&v| d[v] & bit(*value) != 0).collect();
            match cands.len() {
                0 => false,
                1 => {
                    d[cands[0]] = bit(*value);
                    true
                }
                _ => true,
            }
        }
        Constraint::EqImplies { premise, conclusion } => eq_implies(d, *premise, Some(*conclusion)),
        Constraint::OrderImplies { if_before: (a, b), then_before: (c, e) } => {
            if surely_less(d, *a, *b) {
                narrow_less(d, *c, *e)
            } else if surely_not_less(d, *c, *e) {
                // a >= b
                narrow_less_eq(d, *b, *a)
            } else {
                true
            }
        }
        Constraint::BetweenEqImplies { first, mid, last, premise, conclusion } => {
            match (single(d[*first]), single(d[*mid]), single(d[*last])) {
                (Some(f), Some(m), Some(l)) => {
                    if f < m && m < l {
                        eq_implies(d, *premise, *conclusion)
                    } else {
                        true
                    }
                }
                _ => true,
            }
        }
    }
}

fn surely_less(d: &[Domain], a: VarId, b: VarId) -> bool {
    max_val(d[a]) < min_val(d[b])
}

fn surely_not_less(d: &[Domain], a: VarId, b: VarId) -> bool {
    min_val(d[a]) >= max_val(d[b])
}

/// Enforces `a < b` on bounds.
fn narrow_less(d: &mut [Domain], a: VarId, b: VarId) -> bool {
    if a == b {
        return false;
    }
    d[a] &= below(max_val(d[b]));
    if d[a] == 0 {
        return false;
    }
    d[b] &= above(min_val(d[a]));
    d[b] != 0
}

/// Enforces `a <= b` on bounds.
fn narrow_less_eq(d: &mut [Domain], a: VarId, b: VarId) -> bool {
    d[a] &= below(max_val(d[b]) + 1);
    if d[a] == 0 {
        return false;
    }
    d[b] &= !below(min_val(d[a]));
    d[b] != 0
}

fn eq_implies(d: &mut [Domain], (a, x): (VarId, usize), conclusion: Option<(VarId, usize)>) -> bool {
    match conclusion {
        None => {
            d[a] &= !bit(x);
            d[a] != 0
        }
        Some((b, y)) => {
            if d[a] == bit(x) {
                d[b] &= bit(y);
            }
            if d[b] & bit(y) == 0 {
                d[a] &= !bit(x);
            }
            d[a] != 0 && d[b] != 0
        }
    }
}
