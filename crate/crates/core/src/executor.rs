//! Interpreter for the loop IR over CSF inputs, plus dense reference
//! evaluators and a tolerance comparison.
//!
//! Each `forall` iterates the union of the coordinates of the sparse operands
//! whose next CSF level it indexes (or the full range when some statement
//! below has no such operand); a statement only fires when all of its sparse
//! operands are present. Intermediates live in dense workspaces indexed by
//! their surviving modes.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::constraints::ScheduleSolution;
use crate::lowering::{IrNode, IrRef};
use crate::network::{ContractionTree, IndexId, TensorRef, TensorRole};
use crate::tensor::{CsfTensor, DenseWorkspace, ModeOrder, Shape, SparseTensor, TensorError};

/// Upper bound on the number of points a dense reference evaluation visits.
pub const ORACLE_LIMIT: u128 = 100_000_000;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("tensor {0} is not bound")]
    UnboundTensor(String),
    #[error("layout of {tensor} does not match loop nesting: {detail}")]
    ModeOrderMismatch { tensor: String, detail: String },
    #[error("unknown index {0}")]
    UnknownIndex(String),
    #[error("index {index} is not bound by an enclosing loop in `{assignment}`")]
    UnboundIndex { index: String, assignment: String },
    #[error("bound tensor {tensor} has shape {found}, expected {expected}")]
    BindingShape { tensor: String, expected: Shape, found: Shape },
    #[error("malformed IR: {0}")]
    MalformedIr(String),
    #[error("dense evaluation would visit {0} points")]
    TooLarge(u128),
    #[error("shape mismatch: {0} vs {1}")]
    ShapeMismatch(Shape, Shape),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone)]
pub enum BoundTensor {
    Sparse(CsfTensor),
    /// Dense storage in the mode order given.
    Dense {
        order: ModeOrder,
        data: DenseWorkspace,
    },
}

impl BoundTensor {
    fn mode_order(&self) -> &ModeOrder {
        match self {
            BoundTensor::Sparse(c) => c.mode_order(),
            BoundTensor::Dense { order, .. } => order,
        }
    }
}

/// Input tensors, keyed by name.
#[derive(Debug, Clone, Default)]
pub struct Binding {
    tensors: BTreeMap<String, BoundTensor>,
    shapes: BTreeMap<String, Shape>,
}

impl Binding {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind_sparse(&mut self, name: &str, t: &SparseTensor, order: &ModeOrder) -> Result<(), ExecError> {
        let csf = CsfTensor::build(t, order)?;
        self.shapes.insert(name.to_string(), t.shape().clone());
        self.tensors.insert(name.to_string(), BoundTensor::Sparse(csf));
        Ok(())
    }

    pub fn bind_dense(&mut self, name: &str, t: &SparseTensor, order: &ModeOrder) -> Result<(), ExecError> {
        let p = t.permute(order)?;
        let mut data = DenseWorkspace::new(p.shape().extents());
        data.cells_mut().copy_from_slice(&p.to_dense());
        self.shapes.insert(name.to_string(), t.shape().clone());
        self.tensors.insert(name.to_string(), BoundTensor::Dense { order: order.clone(), data });
        Ok(())
    }

    /// Binds every input of `tree` in the layout chosen by `sol`; tensors
    /// named in `dense` are stored densely.
    pub fn for_solution(
        tree: &ContractionTree,
        sol: &ScheduleSolution,
        inputs: &BTreeMap<String, SparseTensor>,
        dense: &BTreeSet<String>,
    ) -> Result<Self, ExecError> {
        let mut b = Binding::new();
        for r in tree.inputs() {
            let t = inputs.get(&r.tensor).ok_or_else(|| ExecError::UnboundTensor(r.tensor.clone()))?;
            let order = sol.mode_order(&r.tensor).unwrap_or_else(|| ModeOrder::identity(r.order()));
            if dense.contains(&r.tensor) {
                b.bind_dense(&r.tensor, t, &order)?;
            } else {
                b.bind_sparse(&r.tensor, t, &order)?;
            }
        }
        Ok(b)
    }

    pub fn get(&self, name: &str) -> Option<&BoundTensor> {
        self.tensors.get(name)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AssignStats {
    pub assignment: String,
    pub iterations: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExecStats {
    #[serde(rename = "multiply_adds")]
    pub multiply_add_count: u64,
    pub max_workspace_cells: usize,
    pub per_assignment: Vec<AssignStats>,
}

impl ExecStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

enum Operand {
    Sparse { occ: usize },
    Dense { tensor: usize, idx: Vec<IndexId> },
    Workspace { ws: usize, idx: Vec<IndexId> },
}

enum Target {
    Workspace { ws: usize, idx: Vec<IndexId> },
    Result { idx: Vec<IndexId> },
}

struct Stmt {
    target: Target,
    operands: [Operand; 2],
    occs: Vec<usize>,
}

enum Node {
    Forall {
        index: IndexId,
        extent: usize,
        parts: Vec<(usize, usize)>,
        dense: bool,
        stmts: Vec<usize>,
        body: Box<Node>,
    },
    Where {
        zero: Vec<usize>,
        stmts: Vec<usize>,
        consumer_stmts: Vec<usize>,
        /// Nothing written by the producer is read outside this node.
        exclusive: bool,
        consumer: Box<Node>,
        producer: Box<Node>,
    },
    Assign(usize),
}

struct Occurrence<'a> {
    tensor: String,
    csf: &'a CsfTensor,
    indices: Vec<IndexId>,
}

struct Program<'a> {
    tree: &'a ContractionTree,
    binding: &'a Binding,
    occs: Vec<Occurrence<'a>>,
    dense: Vec<&'a DenseWorkspace>,
    ws_names: Vec<String>,
    ws_dims: Vec<Vec<usize>>,
    stmts: Vec<Stmt>,
    labels: Vec<String>,
}

impl<'a> Program<'a> {
    fn ids(&self, r: &IrRef) -> Result<Vec<IndexId>, ExecError> {
        r.indices.iter().map(|n| self.tree.index_id(n).ok_or_else(|| ExecError::UnknownIndex(n.clone()))).collect()
    }

    /// Checks a bound input against the tree and the concrete reference.
    fn check_layout(&self, r: &IrRef, idx: &[IndexId], bound: &BoundTensor) -> Result<(), ExecError> {
        let order = bound.mode_order();
        let refs: Vec<&TensorRef> =
            self.tree.contractions().iter().flat_map(|c| c.operands()).filter(|x| x.tensor == r.tensor).collect();
        let expected = Shape::new(self.tree.ref_shape(refs[0]))?;
        let found = &self.binding.shapes[&r.tensor];
        if found != &expected {
            return Err(ExecError::BindingShape { tensor: r.tensor.clone(), expected, found: found.clone() });
        }
        let matches = order.len() == idx.len()
            && refs.iter().any(|x| order.as_slice().iter().zip(idx).all(|(&m, &k)| x.indices[m] == k));
        if matches {
            Ok(())
        } else {
            Err(ExecError::ModeOrderMismatch {
                tensor: r.tensor.clone(),
                detail: format!("stored in mode order {:?}, referenced as {r}", order.as_slice()),
            })
        }
    }

    fn operand(&mut self, r: &IrRef) -> Result<Operand, ExecError> {
        let idx = self.ids(r)?;
        match self.tree.role(&r.tensor) {
            TensorRole::Input => {
                let bound = self.binding.get(&r.tensor).ok_or_else(|| ExecError::UnboundTensor(r.tensor.clone()))?;
                self.check_layout(r, &idx, bound)?;
                match bound {
                    BoundTensor::Sparse(csf) => {
                        self.occs.push(Occurrence { tensor: r.tensor.clone(), csf, indices: idx });
                        Ok(Operand::Sparse { occ: self.occs.len() - 1 })
                    }
                    BoundTensor::Dense { data, .. } => {
                        self.dense.push(data);
                        Ok(Operand::Dense { tensor: self.dense.len() - 1, idx })
                    }
                }
            }
            TensorRole::Intermediate => Ok(Operand::Workspace { ws: self.workspace(r, &idx)?, idx }),
            TensorRole::Result => Err(ExecError::MalformedIr(format!("result {} read as an operand", r.tensor))),
        }
    }

    fn workspace(&mut self, r: &IrRef, idx: &[IndexId]) -> Result<usize, ExecError> {
        let dims: Vec<usize> = idx.iter().map(|&k| self.tree.extent(k)).collect();
        if let Some(w) = self.ws_names.iter().position(|n| *n == r.tensor) {
            if self.ws_dims[w] != dims {
                return Err(ExecError::MalformedIr(format!("{} referenced with differing modes", r.tensor)));
            }
            return Ok(w);
        }
        self.ws_names.push(r.tensor.clone());
        self.ws_dims.push(dims);
        Ok(self.ws_names.len() - 1)
    }

    fn compile(&mut self, node: &IrNode, bound: &mut Vec<IndexId>) -> Result<(Node, Vec<usize>), ExecError> {
        match node {
            IrNode::Assign(a) => {
                let target = match self.tree.role(&a.result.tensor) {
                    TensorRole::Input => {
                        return Err(ExecError::MalformedIr(format!("input {} is assigned", a.result.tensor)))
                    }
                    TensorRole::Intermediate => {
                        let idx = self.ids(&a.result)?;
                        Target::Workspace { ws: self.workspace(&a.result, &idx)?, idx }
                    }
                    TensorRole::Result => {
                        let idx = self.ids(&a.result)?;
                        let root = self.tree.root_result();
                        let mut sorted = idx.clone();
                        sorted.sort_unstable();
                        let mut want = root.indices.clone();
                        want.sort_unstable();
                        if sorted != want {
                            return Err(ExecError::MalformedIr(format!("result referenced as {}", a.result)));
                        }
                        Target::Result { idx: root.indices.clone() }
                    }
                };
                let operands = [self.operand(&a.lhs)?, self.operand(&a.rhs)?];
                for k in a.index_set() {
                    let id = self.tree.index_id(&k).ok_or_else(|| ExecError::UnknownIndex(k.clone()))?;
                    if !bound.contains(&id) {
                        return Err(ExecError::UnboundIndex { index: k, assignment: a.to_string() });
                    }
                }
                let occs = operands
                    .iter()
                    .filter_map(|o| match o {
                        Operand::Sparse { occ } => Some(*occ),
                        _ => None,
                    })
                    .collect();
                self.stmts.push(Stmt { target, operands, occs });
                self.labels.push(a.to_string());
                let s = self.stmts.len() - 1;
                Ok((Node::Assign(s), vec![s]))
            }
            IrNode::Forall { index, body } => {
                let id = self.tree.index_id(index).ok_or_else(|| ExecError::UnknownIndex(index.clone()))?;
                if bound.contains(&id) {
                    return Err(ExecError::MalformedIr(format!("index {index} bound twice")));
                }
                bound.push(id);
                let first_occ = self.occs.len();
                let (body, stmts) = self.compile(body, bound)?;
                bound.pop();
                let mut parts = Vec::new();
                for o in first_occ..self.occs.len() {
                    let occ = &self.occs[o];
                    if let Some(level) = occ.indices.iter().position(|&k| k == id) {
                        if let Some(&k) = occ.indices[..level].iter().find(|k| !bound.contains(k)) {
                            return Err(ExecError::ModeOrderMismatch {
                                tensor: occ.tensor.clone(),
                                detail: format!(
                                    "level for {} is visited before level for {}",
                                    index,
                                    self.tree.index_name(k)
                                ),
                            });
                        }
                        parts.push((o, level));
                    }
                }
                let dense =
                    stmts.iter().any(|&s| !self.stmts[s].occs.iter().any(|&o| self.occs[o].indices.contains(&id)));
                let extent = self.tree.extent(id);
                Ok((
                    Node::Forall { index: id, extent, parts, dense, stmts: stmts.clone(), body: Box::new(body) },
                    stmts,
                ))
            }
            IrNode::Where { consumer, producer } => {
                let (p, ps) = self.compile(producer, bound)?;
                let (c, cs) = self.compile(consumer, bound)?;
                let produced: BTreeSet<usize> = ps
                    .iter()
                    .filter_map(|&s| match self.stmts[s].target {
                        Target::Workspace { ws, .. } => Some(ws),
                        Target::Result { .. } => None,
                    })
                    .collect();
                let consumed: BTreeSet<usize> = cs
                    .iter()
                    .flat_map(|&s| self.stmts[s].operands.iter())
                    .filter_map(|o| match o {
                        Operand::Workspace { ws, .. } => Some(*ws),
                        _ => None,
                    })
                    .collect();
                let zero = produced.intersection(&consumed).copied().collect();
                let read_in_p: BTreeSet<usize> = ps
                    .iter()
                    .flat_map(|&s| self.stmts[s].operands.iter())
                    .filter_map(|o| match o {
                        Operand::Workspace { ws, .. } => Some(*ws),
                        _ => None,
                    })
                    .collect();
                let exclusive = produced.iter().all(|w| consumed.contains(w) || read_in_p.contains(w));
                let stmts: Vec<usize> = ps.iter().chain(&cs).copied().collect();
                let node = Node::Where {
                    zero,
                    stmts: stmts.clone(),
                    consumer_stmts: cs,
                    exclusive,
                    consumer: Box::new(c),
                    producer: Box::new(p),
                };
                Ok((node, stmts))
            }
        }
    }
}

struct State<'p, 'a> {
    prog: &'p Program<'a>,
    env: Vec<usize>,
    pos: Vec<Option<usize>>,
    ws: Vec<DenseWorkspace>,
    written: Vec<bool>,
    result: HashMap<Vec<usize>, f64>,
    stats: ExecStats,
}

fn offset(idx: &[IndexId], env: &[usize], w: &DenseWorkspace) -> usize {
    idx.iter().zip(w.strides()).map(|(&k, s)| env[k] * s).sum()
}

impl State<'_, '_> {
    fn alive(&self, s: usize) -> bool {
        self.prog.stmts[s].occs.iter().all(|&o| self.pos[o].is_some())
    }

    /// Operands are present and no workspace read is still all zero.
    fn fires(&self, s: usize) -> bool {
        self.alive(s)
            && self.prog.stmts[s].operands.iter().all(|o| match o {
                Operand::Workspace { ws, .. } => self.written[*ws],
                _ => true,
            })
    }

    fn run(&mut self, node: &Node) {
        match node {
            Node::Assign(s) => self.assign(*s),
            Node::Where { zero, stmts, consumer_stmts, exclusive, consumer, producer } => {
                if !stmts.iter().any(|&s| self.alive(s)) {
                    return;
                }
                // a dead consumer makes the producer's work unobservable
                if *exclusive && !consumer_stmts.iter().any(|&s| self.alive(s)) {
                    return;
                }
                for &w in zero {
                    self.ws[w].zero();
                    self.written[w] = false;
                }
                self.run(producer);
                self.run(consumer);
            }
            Node::Forall { index, extent, parts, dense, stmts, body } => {
                if !stmts.iter().any(|&s| self.alive(s)) {
                    return;
                }
                // (occurrence, csf level, cursor, end, saved parent)
                let mut cur: Vec<(usize, usize, usize, usize, Option<usize>)> = parts
                    .iter()
                    .map(|&(o, level)| {
                        let saved = self.pos[o];
                        match saved {
                            Some(parent) => {
                                let lv = self.prog.occs[o].csf.level(level);
                                (o, level, lv.segments[parent], lv.segments[parent + 1], saved)
                            }
                            None => (o, level, 0, 0, saved),
                        }
                    })
                    .collect();
                let mut x = 0;
                loop {
                    if !*dense {
                        let next = cur
                            .iter()
                            .filter(|c| c.2 < c.3)
                            .map(|c| self.prog.occs[c.0].csf.level(c.1).coords[c.2])
                            .min();
                        match next {
                            Some(v) => x = v,
                            None => break,
                        }
                    } else if x >= *extent {
                        break;
                    }
                    for c in cur.iter_mut() {
                        let coords = &self.prog.occs[c.0].csf.level(c.1).coords;
                        while c.2 < c.3 && coords[c.2] < x {
                            c.2 += 1;
                        }
                        if c.2 < c.3 && coords[c.2] == x {
                            self.pos[c.0] = Some(c.2);
                            c.2 += 1;
                        } else {
                            self.pos[c.0] = None;
                        }
                    }
                    self.env[*index] = x;
                    self.run(body);
                    x += 1;
                }
                for c in &cur {
                    self.pos[c.0] = c.4;
                }
            }
        }
    }

    fn value(&self, op: &Operand) -> f64 {
        match op {
            Operand::Sparse { occ } => self.prog.occs[*occ].csf.values()[self.pos[*occ].expect("alive")],
            Operand::Dense { tensor, idx } => {
                let d = self.prog.dense[*tensor];
                d.cells()[offset(idx, &self.env, d)]
            }
            Operand::Workspace { ws, idx } => {
                let w = &self.ws[*ws];
                w.cells()[offset(idx, &self.env, w)]
            }
        }
    }

    fn assign(&mut self, s: usize) {
        if !self.fires(s) {
            return;
        }
        let stmt = &self.prog.stmts[s];
        let v = self.value(&stmt.operands[0]) * self.value(&stmt.operands[1]);
        self.stats.multiply_add_count += 1;
        self.stats.per_assignment[s].iterations += 1;
        match &stmt.target {
            Target::Workspace { ws, idx } => {
                let o = offset(idx, &self.env, &self.ws[*ws]);
                self.ws[*ws].cells_mut()[o] += v;
                self.written[*ws] = true;
            }
            Target::Result { idx } => {
                let key: Vec<usize> = idx.iter().map(|&k| self.env[k]).collect();
                *self.result.entry(key).or_insert(0.0) += v;
            }
        }
    }
}

/// Runs `ir` over the bound inputs. The result is in the root tensor's
/// original mode numbering.
pub fn execute(tree: &ContractionTree, ir: &IrNode, binding: &Binding) -> Result<(SparseTensor, ExecStats), ExecError> {
    let mut prog = Program {
        tree,
        binding,
        occs: Vec::new(),
        dense: Vec::new(),
        ws_names: Vec::new(),
        ws_dims: Vec::new(),
        stmts: Vec::new(),
        labels: Vec::new(),
    };
    let (root, stmts) = prog.compile(ir, &mut Vec::new())?;
    let assigned: BTreeSet<String> = stmts
        .iter()
        .map(|&s| match &prog.stmts[s].target {
            Target::Workspace { ws, .. } => prog.ws_names[*ws].clone(),
            Target::Result { .. } => tree.root_result().tensor.clone(),
        })
        .collect();
    if stmts.len() != tree.len() || assigned.len() != tree.len() {
        return Err(ExecError::MalformedIr(format!(
            "IR assigns {} statements to {} tensors, tree has {} contractions",
            stmts.len(),
            assigned.len(),
            tree.len()
        )));
    }
    let ws: Vec<DenseWorkspace> = prog.ws_dims.iter().map(|d| DenseWorkspace::new(d)).collect();
    let max_ws = ws.iter().map(|w| w.len()).max().unwrap_or(0);
    let pos = prog.occs.iter().map(|o| (o.csf.order() > 0 || o.csf.nnz() > 0).then_some(0)).collect();
    let mut st = State {
        prog: &prog,
        env: vec![0; tree.indices().len()],
        pos,
        written: vec![false; ws.len()],
        ws,
        result: HashMap::new(),
        stats: ExecStats {
            multiply_add_count: 0,
            max_workspace_cells: max_ws,
            per_assignment: prog.labels.iter().map(|l| AssignStats { assignment: l.clone(), iterations: 0 }).collect(),
        },
    };
    st.run(&root);
    let shape = Shape::new(tree.ref_shape(tree.root_result()))?;
    let out = SparseTensor::from_entries(shape, st.result)?;
    Ok((out, st.stats))
}

/// Dense evaluation of `sum over loops of product of operands` into `result`.
struct DenseTerm<'a> {
    data: &'a [f64],
    strides: Vec<usize>,
    idx: Vec<IndexId>,
}

fn strides_for(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![0; dims.len()];
    let mut acc = 1;
    for k in (0..dims.len()).rev() {
        s[k] = acc;
        acc *= dims[k];
    }
    s
}

fn dense_contract(
    tree: &ContractionTree,
    loops: &[IndexId],
    terms: &[DenseTerm<'_>],
    result_idx: &[IndexId],
) -> Result<Vec<f64>, ExecError> {
    let extents: Vec<usize> = loops.iter().map(|&k| tree.extent(k)).collect();
    let points: u128 = extents.iter().map(|&e| e as u128).product();
    if points > ORACLE_LIMIT {
        return Err(ExecError::TooLarge(points));
    }
    let rdims: Vec<usize> = result_idx.iter().map(|&k| tree.extent(k)).collect();
    let rstrides = strides_for(&rdims);
    let mut out = vec![0.0; rdims.iter().product()];
    let mut env = vec![0usize; tree.indices().len()];
    let at = |idx: &[IndexId], strides: &[usize], env: &[usize]| -> usize {
        idx.iter().zip(strides).map(|(&k, s)| env[k] * s).sum()
    };
    if points == 0 {
        return Ok(out);
    }
    loop {
        let mut v = 1.0;
        for t in terms {
            v *= t.data[at(&t.idx, &t.strides, &env)];
            if v == 0.0 {
                break;
            }
        }
        if v != 0.0 {
            out[at(result_idx, &rstrides, &env)] += v;
        }
        // odometer, innermost loop last
        let mut d = loops.len();
        loop {
            if d == 0 {
                return Ok(out);
            }
            d -= 1;
            env[loops[d]] += 1;
            if env[loops[d]] < extents[d] {
                break;
            }
            env[loops[d]] = 0;
        }
    }
}

fn to_sparse(tree: &ContractionTree, r: &TensorRef, cells: &[f64]) -> Result<SparseTensor, ExecError> {
    let dims = tree.ref_shape(r);
    let strides = strides_for(&dims);
    let entries = cells.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(off, &v)| {
        let coords: Vec<usize> = strides.iter().zip(&dims).map(|(&s, &d)| (off / s) % d).collect();
        (coords, v)
    });
    Ok(SparseTensor::from_entries(Shape::new(dims.clone())?, entries)?)
}

fn densify(
    tree: &ContractionTree,
    inputs: &BTreeMap<String, SparseTensor>,
) -> Result<BTreeMap<String, Vec<f64>>, ExecError> {
    let mut out = BTreeMap::new();
    for r in tree.inputs() {
        let t = inputs.get(&r.tensor).ok_or_else(|| ExecError::UnboundTensor(r.tensor.clone()))?;
        let want = Shape::new(tree.ref_shape(r))?;
        if t.shape() != &want {
            return Err(ExecError::BindingShape { tensor: r.tensor.clone(), expected: want, found: t.shape().clone() });
        }
        let cells: u128 = want.extents().iter().map(|&e| e as u128).product();
        if cells > ORACLE_LIMIT {
            return Err(ExecError::TooLarge(cells));
        }
        out.insert(r.tensor.clone(), t.to_dense());
    }
    Ok(out)
}

/// Number of points the n-ary evaluation visits: the product of all extents.
pub fn nary_points(tree: &ContractionTree) -> u128 {
    tree.indices().iter().map(|i| i.extent as u128).product()
}

/// Evaluates the whole network as one loop nest over every index.
pub fn oracle_nary(tree: &ContractionTree, inputs: &BTreeMap<String, SparseTensor>) -> Result<SparseTensor, ExecError> {
    let points = nary_points(tree);
    if points > ORACLE_LIMIT {
        return Err(ExecError::TooLarge(points));
    }
    let dense = densify(tree, inputs)?;
    let mut terms = Vec::new();
    for c in tree.contractions() {
        for r in c.operands() {
            if tree.role(&r.tensor) == TensorRole::Input {
                terms.push(DenseTerm {
                    data: &dense[&r.tensor],
                    strides: strides_for(&tree.ref_shape(r)),
                    idx: r.indices.clone(),
                });
            }
        }
    }
    let loops: Vec<IndexId> = (0..tree.indices().len()).collect();
    let root = tree.root_result();
    let cells = dense_contract(tree, &loops, &terms, &root.indices)?;
    to_sparse(tree, root, &cells)
}

/// Evaluates contractions one at a time with fully materialized dense
/// intermediates. Also returns the largest intermediate's cell count.
pub fn oracle_unfused(
    tree: &ContractionTree,
    inputs: &BTreeMap<String, SparseTensor>,
) -> Result<(SparseTensor, usize), ExecError> {
    let mut dense = densify(tree, inputs)?;
    // post-order: every producer before its consumer
    let mut order = Vec::new();
    let mut stack = vec![(tree.root(), false)];
    while let Some((c, done)) = stack.pop() {
        if done {
            order.push(c);
        } else {
            stack.push((c, true));
            stack.extend(tree.children(c).into_iter().map(|k| (k, false)));
        }
    }
    let mut max_cells = 0;
    for c in order {
        let con = tree.contraction(c);
        let terms: Vec<DenseTerm> = con
            .operands()
            .iter()
            .map(|r| DenseTerm {
                data: &dense[&r.tensor],
                strides: strides_for(&tree.ref_shape(r)),
                idx: r.indices.clone(),
            })
            .collect();
        let cells = dense_contract(tree, &con.index_set(), &terms, &con.result.indices)?;
        if c != tree.root() {
            max_cells = max_cells.max(cells.len());
        }
        dense.insert(con.result.tensor.clone(), cells);
    }
    let root = tree.root_result();
    Ok((to_sparse(tree, root, &dense[&root.tensor])?, max_cells))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Offender {
    pub coords: Vec<usize>,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub pass: bool,
    pub points: usize,
    pub failures: usize,
    pub max_abs_error: f64,
    /// Point with the largest error relative to its allowed tolerance.
    pub worst: Option<Offender>,
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} points, {} out of tolerance, max abs error {:e}",
            if self.pass { "pass" } else { "FAIL" },
            self.points,
            self.failures,
            self.max_abs_error
        )?;
        if let Some(w) = &self.worst {
            write!(f, ", worst at {:?}: {} vs {}", w.coords, w.a, w.b)?;
        }
        Ok(())
    }
}

/// Pointwise `|a - b| <= abs_tol + rel_tol * max(|a|, |b|)` over the union of
/// stored coordinates.
pub fn compare(a: &SparseTensor, b: &SparseTensor, rel_tol: f64, abs_tol: f64) -> Result<CompareReport, ExecError> {
    if a.shape() != b.shape() {
        return Err(ExecError::ShapeMismatch(a.shape().clone(), b.shape().clone()));
    }
    let mut ea = a.entries().peekable();
    let mut eb = b.entries().peekable();
    let mut report = CompareReport { pass: true, points: 0, failures: 0, max_abs_error: 0.0, worst: None };
    let mut worst_ratio = 0.0f64;
    loop {
        let (coords, x, y) = match (ea.peek(), eb.peek()) {
            (None, None) => break,
            (Some(&(ca, va)), None) => {
                ea.next();
                (ca, va, 0.0)
            }
            (None, Some(&(cb, vb))) => {
                eb.next();
                (cb, 0.0, vb)
            }
            (Some(&(ca, va)), Some(&(cb, vb))) => match ca.cmp(cb) {
                std::cmp::Ordering::Less => {
                    ea.next();
                    (ca, va, 0.0)
                }
                std::cmp::Ordering::Greater => {
                    eb.next();
                    (cb, 0.0, vb)
                }
                std::cmp::Ordering::Equal => {
                    ea.next();
                    eb.next();
                    (ca, va, vb)
                }
            },
        };
        report.points += 1;
        let err = (x - y).abs();
        let allowed = abs_tol + rel_tol * x.abs().max(y.abs());
        report.max_abs_error = report.max_abs_error.max(err);
        let ok = err <= allowed;
        if !ok {
            report.failures += 1;
            report.pass = false;
        }
        let ratio = if allowed > 0.0 {
            err / allowed
        } else if err > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        if err > 0.0 && ratio > worst_ratio {
            worst_ratio = ratio;
            report.worst = Some(Offender { coords: coords.to_vec(), a: x, b: y });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{build_model, solve, SolveOptions};
    use crate::lowering::lower;
    use crate::network::parse_network;

    fn st(dims: &[usize], entries: &[(&[usize], f64)]) -> SparseTensor {
        SparseTensor::from_entries(Shape::new(dims.to_vec()).unwrap(), entries.iter().map(|(c, v)| (c.to_vec(), *v)))
            .unwrap()
    }

    fn plan(tree: &ContractionTree, l: usize) -> (ScheduleSolution, IrNode) {
        let sol = solve(&build_model(tree, l).unwrap(), &SolveOptions::default()).unwrap().unwrap();
        let ir = lower(tree, &sol).unwrap();
        (sol, ir)
    }

    const MATMUL: &str = "extent i 2\nextent j 2\nextent k 2\nR[i,j] = T[i,k] * S[k,j]";

    fn matmul_inputs() -> BTreeMap<String, SparseTensor> {
        let mut m = BTreeMap::new();
        m.insert("T".to_string(), st(&[2, 2], &[(&[0, 0], 2.0), (&[1, 1], 3.0)]));
        m.insert("S".to_string(), st(&[2, 2], &[(&[0, 1], 5.0), (&[1, 0], 7.0)]));
        m
    }

    #[test]
    fn matrix_multiply() {
        let t = parse_network(MATMUL).unwrap();
        let (sol, ir) = plan(&t, 1);
        let b = Binding::for_solution(&t, &sol, &matmul_inputs(), &BTreeSet::new()).unwrap();
        let (r, stats) = execute(&t, &ir, &b).unwrap();
        let want = st(&[2, 2], &[(&[0, 1], 10.0), (&[1, 0], 21.0)]);
        assert_eq!(r, want);
        assert_eq!(stats.multiply_add_count, 2);
        assert_eq!(oracle_nary(&t, &matmul_inputs()).unwrap(), want);
        assert_eq!(oracle_unfused(&t, &matmul_inputs()).unwrap().0, want);
    }

    #[test]
    fn dense_binding_gives_same_result() {
        let t = parse_network(MATMUL).unwrap();
        let (sol, ir) = plan(&t, 1);
        let dense: BTreeSet<String> = ["S".to_string()].into();
        let b = Binding::for_solution(&t, &sol, &matmul_inputs(), &dense).unwrap();
        let (r, _) = execute(&t, &ir, &b).unwrap();
        assert_eq!(r, st(&[2, 2], &[(&[0, 1], 10.0), (&[1, 0], 21.0)]));
    }

    #[test]
    fn zero_input_annihilates() {
        let t = parse_network(crate::constraints::tests::RUNNING).unwrap();
        let (sol, ir) = plan(&t, 2);
        let mut inputs = BTreeMap::new();
        for r in t.inputs() {
            let dims = t.ref_shape(r);
            let full: Vec<(Vec<usize>, f64)> =
                (0..dims.iter().product::<usize>()).map(|o| (vec![o / 9 % 3, o / 3 % 3, o % 3], 1.0)).collect();
            inputs.insert(r.tensor.clone(), SparseTensor::from_entries(Shape::new(dims).unwrap(), full).unwrap());
        }
        inputs.insert("C".into(), SparseTensor::empty(Shape::new(vec![3, 3, 3]).unwrap()));
        let b = Binding::for_solution(&t, &sol, &inputs, &BTreeSet::new()).unwrap();
        let (r, stats) = execute(&t, &ir, &b).unwrap();
        assert!(r.is_empty());
        assert_eq!(stats.multiply_add_count, 0);
    }

    #[test]
    fn wrong_layout_is_rejected() {
        let t = parse_network(MATMUL).unwrap();
        let (sol, ir) = plan(&t, 1);
        let mut b = Binding::new();
        let inputs = matmul_inputs();
        b.bind_sparse("T", &inputs["T"], &ModeOrder::new(vec![1, 0]).unwrap()).unwrap();
        b.bind_sparse("S", &inputs["S"], &ModeOrder::new(vec![1, 0]).unwrap()).unwrap();
        assert!(matches!(execute(&t, &ir, &b), Err(ExecError::ModeOrderMismatch { .. })));
        let mut b = Binding::new();
        b.bind_sparse("T", &inputs["T"], &sol.mode_order("T").unwrap()).unwrap();
        assert!(matches!(execute(&t, &ir, &b), Err(ExecError::UnboundTensor(_))));
    }

    #[test]
    fn compare_tolerances() {
        let a = st(&[3], &[(&[0], 1.0), (&[2], 2.0)]);
        let r = compare(&a, &a, 1e-10, 0.0).unwrap();
        assert!(r.pass);
        assert_eq!(r.max_abs_error, 0.0);
        assert!(r.worst.is_none());

        let b = st(&[3], &[(&[0], 1.0 + 1e-15), (&[2], 2.0)]);
        assert!(compare(&a, &b, 1e-10, 0.0).unwrap().pass);

        let c = st(&[3], &[(&[0], 1.0), (&[1], 1.0), (&[2], 2.0)]);
        let r = compare(&c, &a, 1e-10, 0.0).unwrap();
        assert!(!r.pass);
        assert_eq!(r.failures, 1);
        assert_eq!(r.worst, Some(Offender { coords: vec![1], a: 1.0, b: 0.0 }));

        let d = st(&[4], &[]);
        assert!(matches!(compare(&a, &d, 0.0, 0.0), Err(ExecError::ShapeMismatch(..))));
    }

    #[test]
    fn oracle_guard() {
        let t = parse_network("extent i 1000\nextent j 1000\nextent k 1000\nR[i,j] = T[i,k] * S[k,j]").unwrap();
        let mut inputs = BTreeMap::new();
        inputs.insert("T".into(), SparseTensor::empty(Shape::new(vec![1000, 1000]).unwrap()));
        inputs.insert("S".into(), SparseTensor::empty(Shape::new(vec![1000, 1000]).unwrap()));
        assert!(matches!(oracle_nary(&t, &inputs), Err(ExecError::TooLarge(_))));
        assert!(matches!(oracle_unfused(&t, &inputs), Err(ExecError::TooLarge(_))));
    }

    #[test]
    fn empty_inputs_give_empty_oracle() {
        let t = parse_network(MATMUL).unwrap();
        let mut inputs = BTreeMap::new();
        inputs.insert("T".into(), SparseTensor::empty(Shape::new(vec![2, 2]).unwrap()));
        inputs.insert("S".into(), SparseTensor::empty(Shape::new(vec![2, 2]).unwrap()));
        assert!(oracle_nary(&t, &inputs).unwrap().is_empty());
    }

    #[test]
    fn stats_json_field_names() {
        let s = ExecStats::default();
        let v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        assert!(v.get("multiply_adds").is_some());
        assert!(v.get("max_workspace_cells").is_some());
        assert!(v.get("per_assignment").is_some());
    }
}
