//! Lowering of a schedule into a `forall` / `where` loop IR.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::constraints::ScheduleSolution;
use crate::network::{ContractionTree, TensorRef};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LoweringError {
    #[error("loop order of `{assignment}` does not start with `{index}`")]
    PrefixMismatch { index: String, assignment: String },
    #[error("malformed schedule: {0}")]
    MalformedSchedule(String),
}

/// A tensor reference with concrete index order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct IrRef {
    pub tensor: String,
    pub indices: Vec<String>,
}

impl IrRef {
    fn render(&self, open: char, close: char) -> String {
        format!("{}{open}{}{close}", self.tensor, self.indices.join(","))
    }
}

impl fmt::Display for IrRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render('[', ']'))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Assignment {
    pub result: IrRef,
    pub lhs: IrRef,
    pub rhs: IrRef,
}

impl Assignment {
    fn refs(&self) -> [&IrRef; 3] {
        [&self.result, &self.lhs, &self.rhs]
    }

    /// Distinct index names in first-appearance order.
    pub fn index_set(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in self.refs() {
            for i in &r.indices {
                if !out.contains(i) {
                    out.push(i.clone());
                }
            }
        }
        out
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {} * {}", self.result, self.lhs, self.rhs)
    }
}

/// An assignment together with the loops still to be opened around it,
/// outermost first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchedulePair {
    pub contraction: usize,
    pub assignment: Assignment,
    pub loops: Vec<String>,
}

impl fmt::Display for SchedulePair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}, [{}]>", self.assignment, self.loops.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum IrNode {
    Forall { index: String, body: Box<IrNode> },
    Where { consumer: Box<IrNode>, producer: Box<IrNode> },
    Assign(Assignment),
}

impl IrNode {
    /// Assignments in execution order.
    pub fn assignments(&self) -> Vec<&Assignment> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect<'a>(&'a self, out: &mut Vec<&'a Assignment>) {
        match self {
            IrNode::Forall { body, .. } => body.collect(out),
            IrNode::Where { consumer, producer } => {
                producer.collect(out);
                consumer.collect(out);
            }
            IrNode::Assign(a) => out.push(a),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("IR serializes")
    }
}

impl fmt::Display for IrNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IrNode::Forall { index, body } => write!(f, "forall({index}, {body})"),
            IrNode::Where { consumer, producer } => write!(f, "where({consumer}, {producer})"),
            IrNode::Assign(a) => {
                write!(f, "{} = {} * {}", a.result.render('(', ')'), a.lhs.render('(', ')'), a.rhs.render('(', ')'))
            }
        }
    }
}

pub fn print_ir(node: &IrNode) -> String {
    node.to_string()
}

/// Builds the pair sequence for a verified solution: pairs in statement
/// order, loops by loop position, layout tensors in their chosen mode order
/// and intermediates in the producer's loop order.
pub fn schedule_from_solution(tree: &ContractionTree, sol: &ScheduleSolution) -> Vec<SchedulePair> {
    let name = |k| tree.index_name(k).to_string();
    let concrete = |r: &TensorRef| -> IrRef {
        let indices = match tree.producer(&r.tensor) {
            Some(p) if r.tensor != tree.root_result().tensor => {
                let order = sol.loop_order(p);
                order.into_iter().filter(|k| r.indices.contains(k)).map(name).collect()
            }
            _ => match sol.mode_order(&r.tensor) {
                Some(mo) => mo.as_slice().iter().map(|&j| name(r.indices[j])).collect(),
                None => r.indices.iter().map(|&k| name(k)).collect(),
            },
        };
        IrRef { tensor: r.tensor.clone(), indices }
    };
    sol.statement_order()
        .into_iter()
        .map(|c| {
            let con = tree.contraction(c);
            SchedulePair {
                contraction: c,
                assignment: Assignment {
                    result: concrete(&con.result),
                    lhs: concrete(&con.lhs),
                    rhs: concrete(&con.rhs),
                },
                loops: sol.loop_order(c).into_iter().map(name).collect(),
            }
        })
        .collect()
}

/// Strips `index` from the front of every loop list and from every
/// intermediate whose producer and consumer are both in `pairs`.
pub fn remove(index: &str, pairs: &[SchedulePair]) -> Result<Vec<SchedulePair>, LoweringError> {
    let produced: Vec<&str> = pairs.iter().map(|p| p.assignment.result.tensor.as_str()).collect();
    let consumed: Vec<&str> =
        pairs.iter().flat_map(|p| [p.assignment.lhs.tensor.as_str(), p.assignment.rhs.tensor.as_str()]).collect();
    let local = |t: &str| produced.contains(&t) && consumed.contains(&t);
    let strip = |r: &IrRef| -> IrRef {
        let mut r = r.clone();
        if local(&r.tensor) {
            r.indices.retain(|i| i != index);
        }
        r
    };
    pairs
        .iter()
        .map(|p| {
            if p.loops.first().map(String::as_str) != Some(index) {
                return Err(LoweringError::PrefixMismatch {
                    index: index.to_string(),
                    assignment: p.assignment.to_string(),
                });
            }
            Ok(SchedulePair {
                contraction: p.contraction,
                assignment: Assignment {
                    result: strip(&p.assignment.result),
                    lhs: strip(&p.assignment.lhs),
                    rhs: strip(&p.assignment.rhs),
                },
                loops: p.loops[1..].to_vec(),
            })
        })
        .collect()
}

enum Entry {
    Index(String, Vec<SchedulePair>),
    Assign(SchedulePair),
}

impl Entry {
    fn pairs(&self) -> &[SchedulePair] {
        match self {
            Entry::Index(_, ps) => ps,
            Entry::Assign(p) => std::slice::from_ref(p),
        }
    }
}

/// Checks that every loop list orders exactly its assignment's indices, then
/// builds the IR.
pub fn generate(pairs: &[SchedulePair]) -> Result<IrNode, LoweringError> {
    if pairs.is_empty() {
        return Err(LoweringError::MalformedSchedule("empty schedule".into()));
    }
    for p in pairs {
        let mut idx = p.assignment.index_set();
        let mut loops = p.loops.clone();
        idx.sort();
        loops.sort();
        if idx != loops {
            return Err(LoweringError::MalformedSchedule(format!(
                "loops [{}] are not a permutation of the indices of `{}`",
                p.loops.join(","),
                p.assignment
            )));
        }
    }
    gen(pairs)
}

fn gen(pairs: &[SchedulePair]) -> Result<IrNode, LoweringError> {
    if pairs.is_empty() {
        return Err(LoweringError::MalformedSchedule("empty loop body".into()));
    }
    // Groups are kept positionally, so an index that reappears after a
    // different one opens a fresh group instead of merging with the old one.
    let mut groups: Vec<Entry> = Vec::new();
    for p in pairs {
        match p.loops.first() {
            None => groups.push(Entry::Assign(p.clone())),
            Some(i) => match groups.last_mut() {
                Some(Entry::Index(j, ps)) if j == i => ps.push(p.clone()),
                _ => groups.push(Entry::Index(i.clone(), vec![p.clone()])),
            },
        }
    }
    if groups.len() == 1 {
        return match groups.pop().unwrap() {
            Entry::Assign(p) => Ok(IrNode::Assign(p.assignment)),
            Entry::Index(i, ps) => {
                let body = gen(&remove(&i, &ps)?)?;
                Ok(IrNode::Forall { index: i, body: Box::new(body) })
            }
        };
    }
    let last = groups.pop().unwrap();
    let prefix = &pairs[..pairs.len() - last.pairs().len()];
    Ok(IrNode::Where { consumer: Box::new(gen(last.pairs())?), producer: Box::new(gen(prefix)?) })
}

/// Schedule and IR in one step.
pub fn lower(tree: &ContractionTree, sol: &ScheduleSolution) -> Result<IrNode, LoweringError> {
    generate(&schedule_from_solution(tree, sol))
}
