//! Integer constraint system over assignment positions (`ap`), CSF mode
//! positions (`dp`) and loop positions (`lp`), plus the search for the
//! smallest intermediate order bound `l` that admits a fused schedule.

mod brute;
mod solver;
mod verify;

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{ContractionTree, IndexId, TensorRef};
use crate::tensor::ModeOrder;

pub use brute::{brute_force_sat, BruteForceError};
pub use solver::solve;
pub use verify::{verify_solution, VerifyError, Violation};

pub type VarId = usize;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarKey {
    /// Position of a contraction's statement in the schedule.
    Ap(usize),
    /// Position of mode `mode` of `tensor` in its CSF layout.
    Dp { tensor: String, mode: usize },
    /// Position of the loop over `index` around contraction `contraction`.
    Lp { contraction: usize, index: IndexId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Variable {
    pub key: VarKey,
    /// Domain is `0..size`.
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Family {
    Assignment,
    Mode,
    Loop,
    Consistency,
    Producer,
    Consumer,
    InBetween,
    Pinned,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Constraint {
    AllDifferent(Vec<VarId>),
    /// `a < b`
    Less(VarId, VarId),
    /// `(a < b) => (c < d)`
    OrderImplies {
        if_before: (VarId, VarId),
        then_before: (VarId, VarId),
    },
    /// `v_0 = value or v_1 = value or ...`
    AnyEquals {
        vars: Vec<VarId>,
        value: usize,
    },
    /// `(a = x) => (b = y)`
    EqImplies {
        premise: (VarId, usize),
        conclusion: (VarId, usize),
    },
    /// `(first < mid < last) => ((a = x) => (b = y))`. A missing conclusion
    /// variable (the statement has no loop over that index) reads as false.
    BetweenEqImplies {
        first: VarId,
        mid: VarId,
        last: VarId,
        premise: (VarId, usize),
        conclusion: Option<(VarId, usize)>,
    },
    Fixed(VarId, usize),
}

impl Constraint {
    pub fn vars(&self) -> Vec<VarId> {
        match self {
            Constraint::AllDifferent(v) => v.clone(),
            Constraint::Less(a, b) => vec![*a, *b],
            Constraint::OrderImplies { if_before: (a, b), then_before: (c, d) } => vec![*a, *b, *c, *d],
            Constraint::AnyEquals { vars, .. } => vars.clone(),
            Constraint::EqImplies { premise, conclusion } => vec![premise.0, conclusion.0],
            Constraint::BetweenEqImplies { first, mid, last, premise, conclusion } => {
                let mut v = vec![*first, *mid, *last, premise.0];
                v.extend(conclusion.map(|c| c.0));
                v
            }
            Constraint::Fixed(v, _) => vec![*v],
        }
    }

    /// Evaluates the constraint on a complete assignment.
    pub fn holds(&self, val: &[usize]) -> bool {
        match self {
            Constraint::AllDifferent(vs) => {
                vs.iter().enumerate().all(|(k, &a)| vs[k + 1..].iter().all(|&b| val[a] != val[b]))
            }
            Constraint::Less(a, b) => val[*a] < val[*b],
            Constraint::OrderImplies { if_before: (a, b), then_before: (c, d) } => {
                !(val[*a] < val[*b]) || val[*c] < val[*d]
            }
            Constraint::AnyEquals { vars, value } => vars.iter().any(|&v| val[v] == *value),
            Constraint::EqImplies { premise: (a, x), conclusion: (b, y) } => val[*a] != *x || val[*b] == *y,
            Constraint::BetweenEqImplies { first, mid, last, premise: (a, x), conclusion } => {
                let between = val[*first] < val[*mid] && val[*mid] < val[*last];
                let consequent = conclusion.map_or(false, |(b, y)| val[b] == y);
                !between || val[*a] != *x || consequent
            }
            Constraint::Fixed(v, x) => val[*v] == *x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedConstraint {
    pub family: Family,
    pub constraint: Constraint,
}

/// Layout choices fixed by the caller, as outer-to-inner mode orders.
#[derive(Debug, Clone, Default)]
pub struct ModelOptions {
    pub pinned_layouts: BTreeMap<String, ModeOrder>,
}

#[derive(Debug, Clone)]
pub struct ConstraintModel {
    bound: usize,
    vars: Vec<Variable>,
    lookup: BTreeMap<VarKey, VarId>,
    constraints: Vec<TaggedConstraint>,
    names: Vec<String>,
    num_contractions: usize,
    /// Index order of each contraction's loop variables (first appearance).
    loop_indices: Vec<Vec<IndexId>>,
    layout_tensors: Vec<(String, usize)>,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("fusion bound must be at least 1")]
    ZeroBound,
    #[error("tensor {0} has no schedulable layout")]
    UnknownLayoutTensor(String),
    #[error("pinned layout for {tensor} has {found} modes, expected {expected}")]
    PinnedRank { tensor: String, expected: usize, found: usize },
}

impl ConstraintModel {
    pub fn bound(&self) -> usize {
        self.bound
    }

    pub fn vars(&self) -> &[Variable] {
        &self.vars
    }

    pub fn constraints(&self) -> &[TaggedConstraint] {
        &self.constraints
    }

    pub fn var(&self, key: &VarKey) -> Option<VarId> {
        self.lookup.get(key).copied()
    }

    pub fn var_name(&self, v: VarId) -> &str {
        &self.names[v]
    }

    pub fn num_contractions(&self) -> usize {
        self.num_contractions
    }

    pub fn count(&self, family: Family) -> usize {
        self.constraints.iter().filter(|c| c.family == family).count()
    }

    pub fn render(&self, c: &Constraint) -> String {
        let n = |v: &VarId| self.names[*v].as_str();
        match c {
            Constraint::AllDifferent(vs) => {
                format!("alldifferent({})", vs.iter().map(n).collect::<Vec<_>>().join(", "))
            }
            Constraint::Less(a, b) => format!("{} < {}", n(a), n(b)),
            Constraint::OrderImplies { if_before: (a, b), then_before: (c, d) } => {
                format!("({} < {}) => ({} < {})", n(a), n(b), n(c), n(d))
            }
            Constraint::AnyEquals { vars, value } => {
                vars.iter().map(|v| format!("{} = {value}", n(v))).collect::<Vec<_>>().join(" | ")
            }
            Constraint::EqImplies { premise: (a, x), conclusion: (b, y) } => {
                format!("({} = {x}) => ({} = {y})", n(a), n(b))
            }
            Constraint::BetweenEqImplies { first, mid, last, premise: (a, x), conclusion } => {
                let rhs = match conclusion {
                    Some((b, y)) => format!("{} = {y}", n(b)),
                    None => "false".to_string(),
                };
                format!("({} < {} < {}) => (({} = {x}) => ({rhs}))", n(first), n(mid), n(last), n(a))
            }
            Constraint::Fixed(v, x) => format!("{} = {x}", n(v)),
        }
    }

    fn add_var(&mut self, key: VarKey, size: usize, name: String) -> VarId {
        let id = self.vars.len();
        self.lookup.insert(key.clone(), id);
        self.vars.push(Variable { key, size });
        self.names.push(name);
        id
    }

    fn push(&mut self, family: Family, constraint: Constraint) {
        self.constraints.push(TaggedConstraint { family, constraint });
    }

    /// Turns a complete assignment (indexed by `VarId`) into a solution.
    pub fn to_solution(&self, values: &[usize]) -> ScheduleSolution {
        let mut ap = vec![0; self.num_contractions];
        let mut lp = vec![BTreeMap::new(); self.num_contractions];
        let mut dp: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (t, order) in &self.layout_tensors {
            dp.insert(t.clone(), vec![0; *order]);
        }
        for (v, var) in self.vars.iter().enumerate() {
            match &var.key {
                VarKey::Ap(c) => ap[*c] = values[v],
                VarKey::Lp { contraction, index } => {
                    lp[*contraction].insert(*index, values[v]);
                }
                VarKey::Dp { tensor, mode } => {
                    dp.get_mut(tensor).expect("layout tensor")[*mode] = values[v];
                }
            }
        }
        ScheduleSolution { bound: self.bound, ap, lp, dp }
    }

    pub(crate) fn loop_indices(&self, c: usize) -> &[IndexId] {
        &self.loop_indices[c]
    }
}

impl fmt::Display for ConstraintModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "bound l = {}", self.bound)?;
        for (v, var) in self.vars.iter().enumerate() {
            writeln!(f, "var {} in 0..{}", self.names[v], var.size)?;
        }
        for c in &self.constraints {
            writeln!(f, "[{:?}] {}", c.family, self.render(&c.constraint))?;
        }
        Ok(())
    }
}

/// References to `tensor` inside contraction `c`.
fn refs_in<'a>(c: &'a crate::network::Contraction, tensor: &str) -> Vec<&'a TensorRef> {
    [&c.result, &c.lhs, &c.rhs].into_iter().filter(|r| r.tensor == tensor).collect()
}

pub fn build_model(tree: &ContractionTree, l: usize) -> Result<ConstraintModel, ModelError> {
    build_model_with(tree, l, &ModelOptions::default())
}

pub fn build_model_with(tree: &ContractionTree, l: usize, opts: &ModelOptions) -> Result<ConstraintModel, ModelError> {
    if l == 0 {
        return Err(ModelError::ZeroBound);
    }
    let m = tree.len();
    let layout: Vec<(String, usize)> = tree.layout_tensors().iter().map(|r| (r.tensor.clone(), r.order())).collect();
    let mut model = ConstraintModel {
        bound: l,
        vars: Vec::new(),
        lookup: BTreeMap::new(),
        constraints: Vec::new(),
        names: Vec::new(),
        num_contractions: m,
        loop_indices: tree.contractions().iter().map(|c| c.index_set()).collect(),
        layout_tensors: layout.clone(),
    };

    // assignment positions
    let ap: Vec<VarId> = (0..m).map(|c| model.add_var(VarKey::Ap(c), m, format!("ap[{c}]"))).collect();
    if m > 1 {
        model.push(Family::Assignment, Constraint::AllDifferent(ap.clone()));
    }
    for c in 0..m {
        if let Some(p) = tree.parent(c) {
            model.push(Family::Assignment, Constraint::Less(ap[c], ap[p]));
        }
    }

    // loop positions
    let mut lp: Vec<BTreeMap<IndexId, VarId>> = vec![BTreeMap::new(); m];
    for c in 0..m {
        let idx = model.loop_indices[c].clone();
        let mut group = Vec::new();
        for &k in &idx {
            let name = format!("lp[{c},{}]", tree.index_name(k));
            let v = model.add_var(VarKey::Lp { contraction: c, index: k }, idx.len(), name);
            lp[c].insert(k, v);
            group.push(v);
        }
        if group.len() > 1 {
            model.push(Family::Loop, Constraint::AllDifferent(group));
        }
    }

    // mode positions for inputs and the root result
    let mut dp: BTreeMap<String, Vec<VarId>> = BTreeMap::new();
    for (t, order) in &layout {
        let vs: Vec<VarId> = (0..*order)
            .map(|j| {
                let key = VarKey::Dp { tensor: t.clone(), mode: j };
                model.add_var(key, *order, format!("dp[{t},{j}]"))
            })
            .collect();
        if vs.len() > 1 {
            model.push(Family::Mode, Constraint::AllDifferent(vs.clone()));
        }
        dp.insert(t.clone(), vs);
    }
    for (t, order) in &opts.pinned_layouts {
        let vs = dp.get(t).ok_or_else(|| ModelError::UnknownLayoutTensor(t.clone()))?.clone();
        if order.len() != vs.len() {
            return Err(ModelError::PinnedRank { tensor: t.clone(), expected: vs.len(), found: order.len() });
        }
        for (pos, &mode) in order.as_slice().iter().enumerate() {
            model.push(Family::Pinned, Constraint::Fixed(vs[mode], pos));
        }
    }

    // mode order / loop order consistency for every layout-constrained reference
    for c in tree.contractions() {
        for (t, _) in &layout {
            for r in refs_in(c, t) {
                let n = r.order();
                for j in 0..n {
                    for j2 in 0..n {
                        if j == j2 {
                            continue;
                        }
                        let (k, k2) = (r.indices[j], r.indices[j2]);
                        model.push(
                            Family::Consistency,
                            Constraint::OrderImplies {
                                if_before: (dp[t][j], dp[t][j2]),
                                then_before: (lp[c.id][&k], lp[c.id][&k2]),
                            },
                        );
                    }
                }
            }
        }
    }

    // producer / consumer / in-between fusion constraints
    for (prod, cons, t) in tree.intermediates() {
        let n = t.order();
        if n <= l {
            continue;
        }
        for s in 0..n - l {
            let vars = t.indices.iter().map(|k| lp[prod][k]).collect();
            model.push(Family::Producer, Constraint::AnyEquals { vars, value: s });
            for k in &t.indices {
                model.push(
                    Family::Consumer,
                    Constraint::EqImplies { premise: (lp[prod][k], s), conclusion: (lp[cons][k], s) },
                );
            }
            for r in (0..m).filter(|&r| r != prod && r != cons) {
                for k in &t.indices {
                    model.push(
                        Family::InBetween,
                        Constraint::BetweenEqImplies {
                            first: ap[prod],
                            mid: ap[r],
                            last: ap[cons],
                            premise: (lp[prod][k], s),
                            conclusion: lp[r].get(k).map(|&v| (v, s)),
                        },
                    );
                }
            }
        }
    }
    Ok(model)
}

/// Satisfying values for every `ap`, `lp` and `dp` variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleSolution {
    pub bound: usize,
    /// Statement position per contraction.
    pub ap: Vec<usize>,
    /// Loop position per index, per contraction.
    pub lp: Vec<BTreeMap<IndexId, usize>>,
    /// CSF position per mode, per layout-constrained tensor.
    pub dp: BTreeMap<String, Vec<usize>>,
}

impl ScheduleSolution {
    /// Contractions sorted by statement position.
    pub fn statement_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.ap.len()).collect();
        order.sort_by_key(|&c| self.ap[c]);
        order
    }

    /// Outer-to-inner loop order around contraction `c`.
    pub fn loop_order(&self, c: usize) -> Vec<IndexId> {
        let mut v: Vec<(usize, IndexId)> = self.lp[c].iter().map(|(&k, &p)| (p, k)).collect();
        v.sort();
        v.into_iter().map(|(_, k)| k).collect()
    }

    /// CSF mode order (outer-to-inner list of modes) of a layout tensor.
    pub fn mode_order(&self, tensor: &str) -> Option<ModeOrder> {
        let pos = self.dp.get(tensor)?;
        let mut modes: Vec<usize> = (0..pos.len()).collect();
        modes.sort_by_key(|&j| pos[j]);
        ModeOrder::new(modes).ok()
    }

    pub fn report(&self, tree: &ContractionTree) -> SolutionReport {
        let names = |ks: &[IndexId]| ks.iter().map(|&k| tree.index_name(k).to_string()).collect();
        let schedule = self
            .statement_order()
            .into_iter()
            .map(|c| StatementReport {
                contraction: c,
                position: self.ap[c],
                statement: tree.render_contraction(tree.contraction(c)),
                loop_order: names(&self.loop_order(c)),
            })
            .collect();
        let layouts = tree
            .layout_tensors()
            .into_iter()
            .filter_map(|r| {
                let order = self.mode_order(&r.tensor)?;
                let idx: Vec<IndexId> = order.as_slice().iter().map(|&j| r.indices[j]).collect();
                Some(LayoutReport { tensor: r.tensor.clone(), modes: order.as_slice().to_vec(), indices: names(&idx) })
            })
            .collect();
        SolutionReport { bound: self.bound, schedule, layouts }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementReport {
    pub contraction: usize,
    pub position: usize,
    pub statement: String,
    pub loop_order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutReport {
    pub tensor: String,
    /// Outer-to-inner mode numbers.
    pub modes: Vec<usize>,
    /// The same order spelled with the reference's index names.
    pub indices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub bound: usize,
    pub schedule: Vec<StatementReport>,
    pub layouts: Vec<LayoutReport>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("invalid report: {0}")]
    Json(String),
    #[error("report does not match the network: {0}")]
    Mismatch(String),
}

impl SolutionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        serde_json::from_str(text).map_err(|e| ReportError::Json(e.to_string()))
    }

    /// Rebuilds the variable values the report describes.
    pub fn to_solution(&self, tree: &ContractionTree) -> Result<ScheduleSolution, ReportError> {
        let m = tree.len();
        let mut ap = vec![usize::MAX; m];
        let mut lp = vec![BTreeMap::new(); m];
        for s in &self.schedule {
            if s.contraction >= m {
                return Err(ReportError::Mismatch(format!("no contraction {}", s.contraction)));
            }
            ap[s.contraction] = s.position;
            for (p, name) in s.loop_order.iter().enumerate() {
                let k = tree.index_id(name).ok_or_else(|| ReportError::Mismatch(format!("unknown index {name}")))?;
                lp[s.contraction].insert(k, p);
            }
        }
        if let Some(c) = ap.iter().position(|&p| p == usize::MAX) {
            return Err(ReportError::Mismatch(format!("contraction {c} is not scheduled")));
        }
        let mut dp = BTreeMap::new();
        for l in &self.layouts {
            let mut pos = vec![usize::MAX; l.modes.len()];
            for (level, &mode) in l.modes.iter().enumerate() {
                match pos.get_mut(mode) {
                    Some(p) => *p = level,
                    None => return Err(ReportError::Mismatch(format!("{} has no mode {mode}", l.tensor))),
                }
            }
            dp.insert(l.tensor.clone(), pos);
        }
        Ok(ScheduleSolution { bound: self.bound, ap, lp, dp })
    }
}

impl fmt::Display for SolutionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "l = {}", self.bound)?;
        for s in &self.schedule {
            writeln!(f, "{}: {}  loops [{}]", s.position, s.statement, s.loop_order.join(","))?;
        }
        for l in &self.layouts {
            writeln!(f, "layout {} = [{}]", l.tensor, l.indices.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Zero keeps the default value order (largest first); any other seed
    /// shuffles each variable's value order deterministically.
    pub seed: u64,
    pub time_budget: Duration,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { seed: 0, time_budget: Duration::from_secs(10) }
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("solver exceeded its {budget:?} budget on model:\n{model}")]
    Timeout { budget: Duration, model: String },
    #[error("no schedule with intermediates of order <= {l_max}")]
    Unsat { l_max: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Tries `l = 1, 2, ...` up to `l_max` (default: the largest intermediate
/// order, where the unfused schedule always exists) and returns the first
/// satisfiable bound with its solution.
pub fn search_min_order(
    tree: &ContractionTree,
    l_max: Option<usize>,
    model_opts: &ModelOptions,
    opts: &SolveOptions,
) -> Result<(usize, ScheduleSolution), SolveError> {
    let l_max = l_max.unwrap_or_else(|| tree.max_intermediate_order()).max(1);
    for l in 1..=l_max {
        let model = build_model_with(tree, l, model_opts)?;
        if let Some(sol) = solve(&model, opts)? {
            return Ok((l, sol));
        }
    }
    Err(SolveError::Unsat { l_max })
}
