//! Tensor networks given as binary contraction trees.
//!
//! A network is a list of binary contractions `Out[..] = Lhs[..] * Rhs[..]`.
//! Tensors that are never produced are inputs, the one result that is never
//! consumed is the root, and every other result is an intermediate that must
//! be produced once and consumed once.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type IndexId = usize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NetworkError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("index {index} repeats within reference to {tensor}")]
    DuplicateIndexInRef { tensor: String, index: String },
    #[error("inconsistent extent for index {index}")]
    ExtentMismatch { index: String },
    #[error("no extent given for index {index}")]
    MissingExtent { index: String },
    #[error("unknown tensor {0}")]
    UnknownTensor(String),
    #[error("not a contraction tree: {0}")]
    NotATree(String),
    #[error("tensor {tensor} is referenced with inconsistent modes")]
    InconsistentTensor { tensor: String },
    #[error("result index {index} of {tensor} appears in neither operand")]
    FreeResultIndex { tensor: String, index: String },
    #[error("contraction index {index} of {tensor} is reused outside its subtree")]
    EscapingIndex { tensor: String, index: String },
    #[error("intermediate {0} is a scalar; only the root may have order 0")]
    ScalarIntermediate(String),
    #[error("too many contractions to enumerate ({0} > 8)")]
    TooLarge(usize),
    #[error("invalid JSON network: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexInfo {
    pub name: String,
    pub extent: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TensorRef {
    pub tensor: String,
    pub indices: Vec<IndexId>,
}

impl TensorRef {
    pub fn order(&self) -> usize {
        self.indices.len()
    }

    pub fn position(&self, index: IndexId) -> Option<usize> {
        self.indices.iter().position(|&i| i == index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TensorRole {
    Input,
    Intermediate,
    Result,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contraction {
    pub id: usize,
    pub result: TensorRef,
    pub lhs: TensorRef,
    pub rhs: TensorRef,
}

impl Contraction {
    /// All indices of the contraction, in order of first appearance across
    /// result, lhs and rhs.
    pub fn index_set(&self) -> Vec<IndexId> {
        let mut out = Vec::new();
        for r in [&self.result, &self.lhs, &self.rhs] {
            for &i in &r.indices {
                if !out.contains(&i) {
                    out.push(i);
                }
            }
        }
        out
    }

    /// Splits the index set into external (present in the result) and
    /// contraction (summed) indices.
    pub fn classify_indices(&self) -> (BTreeSet<IndexId>, BTreeSet<IndexId>) {
        let external: BTreeSet<_> = self.result.indices.iter().copied().collect();
        let contraction =
            self.lhs.indices.iter().chain(&self.rhs.indices).copied().filter(|i| !external.contains(i)).collect();
        (external, contraction)
    }

    pub fn operands(&self) -> [&TensorRef; 2] {
        [&self.lhs, &self.rhs]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractionTree {
    indices: Vec<IndexInfo>,
    contractions: Vec<Contraction>,
    parent: Vec<Option<usize>>,
    root: usize,
}

impl ContractionTree {
    pub fn indices(&self) -> &[IndexInfo] {
        &self.indices
    }

    pub fn index_name(&self, i: IndexId) -> &str {
        &self.indices[i].name
    }

    pub fn extent(&self, i: IndexId) -> usize {
        self.indices[i].extent
    }

    pub fn index_id(&self, name: &str) -> Option<IndexId> {
        self.indices.iter().position(|x| x.name == name)
    }

    pub fn contractions(&self) -> &[Contraction] {
        &self.contractions
    }

    pub fn contraction(&self, c: usize) -> &Contraction {
        &self.contractions[c]
    }

    pub fn len(&self) -> usize {
        self.contractions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contractions.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, c: usize) -> Option<usize> {
        self.parent[c]
    }

    pub fn children(&self, c: usize) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.parent[k] == Some(c)).collect()
    }

    /// Contraction producing `tensor`, if it is not an input.
    pub fn producer(&self, tensor: &str) -> Option<usize> {
        self.contractions.iter().position(|c| c.result.tensor == tensor)
    }

    /// Contraction consuming intermediate `tensor`.
    pub fn consumer(&self, tensor: &str) -> Option<usize> {
        self.contractions.iter().position(|c| c.lhs.tensor == tensor || c.rhs.tensor == tensor)
    }

    pub fn role(&self, tensor: &str) -> TensorRole {
        match self.producer(tensor) {
            None => TensorRole::Input,
            Some(c) if c == self.root => TensorRole::Result,
            Some(_) => TensorRole::Intermediate,
        }
    }

    pub fn root_result(&self) -> &TensorRef {
        &self.contractions[self.root].result
    }

    /// Input tensors with one representative reference each, in order of
    /// first appearance.
    pub fn inputs(&self) -> Vec<&TensorRef> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for c in &self.contractions {
            for r in c.operands() {
                if self.producer(&r.tensor).is_none() && seen.insert(r.tensor.clone()) {
                    out.push(r);
                }
            }
        }
        out
    }

    /// Tensors whose CSF mode order is chosen by the scheduler: the inputs
    /// followed by the root result.
    pub fn layout_tensors(&self) -> Vec<&TensorRef> {
        let mut out = self.inputs();
        out.push(self.root_result());
        out
    }

    /// Intermediate tensors as (producer, consumer, reference at producer).
    pub fn intermediates(&self) -> Vec<(usize, usize, &TensorRef)> {
        (0..self.len()).filter_map(|c| self.parent[c].map(|p| (c, p, &self.contractions[c].result))).collect()
    }

    pub fn max_intermediate_order(&self) -> usize {
        self.intermediates().iter().map(|(_, _, r)| r.order()).max().unwrap_or(0)
    }

    /// Extents of the modes of `r`.
    pub fn ref_shape(&self, r: &TensorRef) -> Vec<usize> {
        r.indices.iter().map(|&i| self.extent(i)).collect()
    }

    /// Contractions in the subtree rooted at `c`, including `c`.
    pub fn subtree(&self, c: usize) -> Vec<usize> {
        let mut out = vec![c];
        let mut k = 0;
        while k < out.len() {
            let cur = out[k];
            out.extend(self.children(cur));
            k += 1;
        }
        out.sort_unstable();
        out
    }

    pub fn render_ref(&self, r: &TensorRef) -> String {
        let names: Vec<&str> = r.indices.iter().map(|&i| self.index_name(i)).collect();
        format!("{}[{}]", r.tensor, names.join(","))
    }

    pub fn render_contraction(&self, c: &Contraction) -> String {
        format!("{} = {} * {}", self.render_ref(&c.result), self.render_ref(&c.lhs), self.render_ref(&c.rhs))
    }

    /// All orderings of the contractions in which every child precedes its
    /// parent.
    pub fn topological_orders(&self) -> Result<Vec<Vec<usize>>, NetworkError> {
        if self.len() > 8 {
            return Err(NetworkError::TooLarge(self.len()));
        }
        let mut out = Vec::new();
        let mut placed = vec![false; self.len()];
        let mut cur = Vec::with_capacity(self.len());
        self.topo_rec(&mut placed, &mut cur, &mut out);
        Ok(out)
    }

    fn topo_rec(&self, placed: &mut [bool], cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == self.len() {
            out.push(cur.clone());
            return;
        }
        for c in 0..self.len() {
            if placed[c] || self.children(c).iter().any(|&k| !placed[k]) {
                continue;
            }
            placed[c] = true;
            cur.push(c);
            self.topo_rec(placed, cur, out);
            cur.pop();
            placed[c] = false;
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for ix in &self.indices {
            s.push_str(&format!("extent {} {}\n", ix.name, ix.extent));
        }
        for c in &self.contractions {
            s.push_str(&self.render_contraction(c));
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> String {
        let spec = self.to_spec();
        serde_json::to_string_pretty(&spec).expect("network spec serializes")
    }

    fn to_spec(&self) -> JsonNetwork {
        let jref = |r: &TensorRef| JsonRef {
            tensor: r.tensor.clone(),
            indices: r.indices.iter().map(|&i| self.index_name(i).to_string()).collect(),
        };
        JsonNetwork {
            extents: self.indices.iter().map(|x| (x.name.clone(), x.extent)).collect(),
            shapes: BTreeMap::new(),
            contractions: self
                .contractions
                .iter()
                .map(|c| JsonContraction { out: jref(&c.result), lhs: jref(&c.lhs), rhs: jref(&c.rhs) })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JsonRef {
    tensor: String,
    indices: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JsonContraction {
    out: JsonRef,
    lhs: JsonRef,
    rhs: JsonRef,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JsonNetwork {
    #[serde(default)]
    extents: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    shapes: BTreeMap<String, Vec<usize>>,
    contractions: Vec<JsonContraction>,
}

/// Unvalidated network as read from either input format.
#[derive(Debug, Default)]
struct RawNetwork {
    extents: Vec<(String, usize)>,
    shapes: Vec<(String, Vec<usize>)>,
    contractions: Vec<[(String, Vec<String>); 3]>,
}

/// Parses the line-oriented network format, or the JSON form when the text
/// starts with `{`.
pub fn parse_network(text: &str) -> Result<ContractionTree, NetworkError> {
    if text.trim_start().starts_with('{') {
        return parse_network_json(text);
    }
    let mut raw = RawNetwork::default();
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        let line = match line.find('#') {
            Some(p) => &line[..p],
            None => line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |msg: &str| NetworkError::Syntax { line: lineno, msg: msg.to_string() };
        let mut words = line.split_whitespace();
        match words.next() {
            Some("extent") => {
                let name = words.next().ok_or_else(|| syntax("expected `extent <index> <N>`"))?;
                let n = words
                    .next()
                    .and_then(|w| w.parse::<usize>().ok())
                    .filter(|&n| n > 0)
                    .ok_or_else(|| syntax("extent must be a positive integer"))?;
                if words.next().is_some() {
                    return Err(syntax("trailing tokens after extent"));
                }
                raw.extents.push((name.to_string(), n));
            }
            Some("shape") => {
                let name = words.next().ok_or_else(|| syntax("expected `shape <tensor> <N>...`"))?;
                let dims: Option<Vec<usize>> = words.map(|w| w.parse::<usize>().ok().filter(|&n| n > 0)).collect();
                let dims = dims.ok_or_else(|| syntax("shape extents must be positive integers"))?;
                raw.shapes.push((name.to_string(), dims));
            }
            _ => {
                let (lhs, rhs) = line.split_once('=').ok_or_else(|| syntax("expected `Out[..] = A[..] * B[..]`"))?;
                let (a, b) = rhs.split_once('*').ok_or_else(|| syntax("expected a binary product `A[..] * B[..]`"))?;
                if b.contains('*') {
                    return Err(syntax("only binary contractions are supported"));
                }
                let out = parse_ref(lhs).map_err(|m| syntax(&m))?;
                let a = parse_ref(a).map_err(|m| syntax(&m))?;
                let b = parse_ref(b).map_err(|m| syntax(&m))?;
                raw.contractions.push([out, a, b]);
            }
        }
    }
    build_tree(raw)
}

pub fn parse_network_json(text: &str) -> Result<ContractionTree, NetworkError> {
    let spec: JsonNetwork = serde_json::from_str(text).map_err(|e| NetworkError::Json(e.to_string()))?;
    let conv = |r: JsonRef| (r.tensor, r.indices);
    let raw = RawNetwork {
        extents: spec.extents.into_iter().collect(),
        shapes: spec.shapes.into_iter().collect(),
        contractions: spec.contractions.into_iter().map(|c| [conv(c.out), conv(c.lhs), conv(c.rhs)]).collect(),
    };
    build_tree(raw)
}

fn is_ident(s: &str) -> bool {
    let mut ch = s.chars();
    matches!(ch.next(), Some(c) if c.is_alphabetic() || c == '_')
        && ch.all(|c| c.is_alphanumeric() || c == '_' || c == '\'')
}

fn parse_ref(s: &str) -> Result<(String, Vec<String>), String> {
    let s = s.trim();
    let (name, idx) = match s.find('[') {
        None => (s, ""),
        Some(p) => {
            let inner = s[p + 1..].strip_suffix(']').ok_or_else(|| format!("unterminated reference {s:?}"))?;
            (&s[..p], inner)
        }
    };
    let name = name.trim();
    if !is_ident(name) {
        return Err(format!("invalid tensor name {name:?}"));
    }
    let mut indices = Vec::new();
    for part in idx.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        if !is_ident(part) {
            return Err(format!("invalid index name {part:?}"));
        }
        indices.push(part.to_string());
    }
    Ok((name.to_string(), indices))
}

fn build_tree(raw: RawNetwork) -> Result<ContractionTree, NetworkError> {
    if raw.contractions.is_empty() {
        return Err(NetworkError::NotATree("no contractions".into()));
    }
    let mut extents: BTreeMap<String, usize> = BTreeMap::new();
    let mut set_extent = |name: &str, n: usize| -> Result<(), NetworkError> {
        match extents.get(name) {
            Some(&e) if e != n => Err(NetworkError::ExtentMismatch { index: name.to_string() }),
            _ => {
                extents.insert(name.to_string(), n);
                Ok(())
            }
        }
    };
    for (name, n) in &raw.extents {
        set_extent(name, *n)?;
    }

    // index ids in order of first appearance
    let mut names: Vec<String> = Vec::new();
    for c in &raw.contractions {
        for (tensor, idx) in c {
            let mut seen = BTreeSet::new();
            for i in idx {
                if !seen.insert(i) {
                    return Err(NetworkError::DuplicateIndexInRef { tensor: tensor.clone(), index: i.clone() });
                }
                if !names.contains(i) {
                    names.push(i.clone());
                }
            }
        }
    }

    // a tensor's references must agree on order
    let mut tensor_order: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &raw.contractions {
        for (tensor, idx) in c {
            if *tensor_order.entry(tensor).or_insert(idx.len()) != idx.len() {
                return Err(NetworkError::InconsistentTensor { tensor: tensor.clone() });
            }
        }
    }
    for (tensor, dims) in &raw.shapes {
        let order = *tensor_order.get(tensor.as_str()).ok_or_else(|| NetworkError::UnknownTensor(tensor.clone()))?;
        if order != dims.len() {
            return Err(NetworkError::InconsistentTensor { tensor: tensor.clone() });
        }
        for c in &raw.contractions {
            for (t, idx) in c {
                if t == tensor {
                    for (i, &n) in idx.iter().zip(dims) {
                        set_extent(i, n)?;
                    }
                }
            }
        }
    }
    let mut indices = Vec::with_capacity(names.len());
    for name in &names {
        let extent = *extents.get(name).ok_or_else(|| NetworkError::MissingExtent { index: name.clone() })?;
        indices.push(IndexInfo { name: name.clone(), extent });
    }
    let id_of = |name: &str| names.iter().position(|n| n == name).unwrap();
    let to_ref = |(t, idx): &(String, Vec<String>)| TensorRef {
        tensor: t.clone(),
        indices: idx.iter().map(|i| id_of(i)).collect(),
    };
    let contractions: Vec<Contraction> = raw
        .contractions
        .iter()
        .enumerate()
        .map(|(id, [o, a, b])| Contraction { id, result: to_ref(o), lhs: to_ref(a), rhs: to_ref(b) })
        .collect();

    // tree structure
    let m = contractions.len();
    let mut producer: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &contractions {
        if producer.insert(&c.result.tensor, c.id).is_some() {
            return Err(NetworkError::NotATree(format!("{} is produced twice", c.result.tensor)));
        }
        if c.lhs.tensor == c.result.tensor || c.rhs.tensor == c.result.tensor {
            return Err(NetworkError::NotATree(format!("{} consumes itself", c.result.tensor)));
        }
    }
    let mut parent = vec![None; m];
    for c in &contractions {
        for r in c.operands() {
            if let Some(&p) = producer.get(r.tensor.as_str()) {
                if parent[p].is_some() {
                    return Err(NetworkError::NotATree(format!("{} is consumed twice", r.tensor)));
                }
                parent[p] = Some(c.id);
            }
        }
    }
    let roots: Vec<usize> = (0..m).filter(|&c| parent[c].is_none()).collect();
    if roots.len() != 1 {
        return Err(NetworkError::NotATree(format!("{} unconsumed results", roots.len())));
    }
    let root = roots[0];
    // every contraction must reach the root without revisiting
    for start in 0..m {
        let mut cur = start;
        let mut steps = 0;
        while let Some(p) = parent[cur] {
            cur = p;
            steps += 1;
            if steps > m {
                return Err(NetworkError::NotATree("cycle between contractions".into()));
            }
        }
    }

    let tree = ContractionTree { indices, contractions, parent, root };
    for c in tree.contractions() {
        for &i in &c.result.indices {
            if c.lhs.position(i).is_none() && c.rhs.position(i).is_none() {
                return Err(NetworkError::FreeResultIndex {
                    tensor: c.result.tensor.clone(),
                    index: tree.index_name(i).to_string(),
                });
            }
        }
        if c.id != root && c.result.indices.is_empty() {
            return Err(NetworkError::ScalarIntermediate(c.result.tensor.clone()));
        }
        // a summed index belongs to this subtree only
        let inside = tree.subtree(c.id);
        let (_, summed) = c.classify_indices();
        for other in tree.contractions().iter().filter(|o| !inside.contains(&o.id)) {
            for i in other.index_set() {
                if summed.contains(&i) {
                    return Err(NetworkError::EscapingIndex {
                        tensor: c.result.tensor.clone(),
                        index: tree.index_name(i).to_string(),
                    });
                }
            }
        }
    }
    Ok(tree)
}

impl fmt::Display for ContractionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.contractions {
            writeln!(f, "{}", self.render_contraction(c))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const RUNNING: &str = "\
extent i 4
extent j 4
extent k 4
extent p 4
extent q 4
extent r 4
X[i,j,q,r] = A[i,p,q] * B[j,p,r]
Y[i,j,k,r] = X[i,j,q,r] * C[k,q,r]
R[i,j,k] = Y[i,j,k,r] * D[j,k,r]
";

    fn names(t: &ContractionTree, s: &BTreeSet<IndexId>) -> Vec<String> {
        s.iter().map(|&i| t.index_name(i).to_string()).collect()
    }

    #[test]
    fn running_example_is_a_chain() {
        let t = parse_network(RUNNING).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.root(), 2);
        assert_eq!(t.parent(0), Some(1));
        assert_eq!(t.parent(1), Some(2));
        let mids: Vec<&str> = t.intermediates().iter().map(|(_, _, r)| r.tensor.as_str()).collect();
        assert_eq!(mids, vec!["X", "Y"]);
        assert_eq!(t.role("A"), TensorRole::Input);
        assert_eq!(t.role("X"), TensorRole::Intermediate);
        assert_eq!(t.role("R"), TensorRole::Result);
    }

    #[test]
    fn matrix_multiply_classification() {
        let t = parse_network("extent i 2\nextent j 3\nextent k 4\nR[i,j] = T[i,k] * S[k,j]").unwrap();
        assert_eq!(t.len(), 1);
        let (ext, con) = t.contraction(0).classify_indices();
        assert_eq!(names(&t, &ext), vec!["i", "j"]);
        assert_eq!(names(&t, &con), vec!["k"]);
    }

    #[test]
    fn first_running_contraction_classification() {
        let t = parse_network(RUNNING).unwrap();
        let (ext, con) = t.contraction(0).classify_indices();
        assert_eq!(names(&t, &ext), vec!["i", "j", "q", "r"]);
        assert_eq!(names(&t, &con), vec!["p"]);
    }

    #[test]
    fn mask_product_has_no_contraction_index() {
        let t = parse_network("extent i 2\nextent j 2\nextent k 2\nR[i,j,k] = A[i,j,k] * L[i,j]").unwrap();
        let (ext, con) = t.contraction(0).classify_indices();
        assert_eq!(ext.len(), 3);
        assert!(con.is_empty());
    }

    #[test]
    fn extent_mismatch_from_shapes() {
        let spec = "extent i 3\nextent j 3\nshape T 3 4\nshape S 5 3\nR[i,j] = T[i,k] * S[k,j]";
        assert_eq!(parse_network(spec), Err(NetworkError::ExtentMismatch { index: "k".into() }));
        let dup = "extent k 4\nextent k 5\nextent i 2\nR[i] = T[i,k] * S[k]";
        assert_eq!(parse_network(dup), Err(NetworkError::ExtentMismatch { index: "k".into() }));
    }

    #[test]
    fn validation_errors() {
        let e = |s: &str| parse_network(s).unwrap_err();
        assert!(matches!(e("extent i 2\nR[i] = T[i,i] * S[i]"), NetworkError::DuplicateIndexInRef { .. }));
        assert!(matches!(e("R[i] = T[i] * S[i]"), NetworkError::MissingExtent { .. }));
        assert!(matches!(
            e("extent i 2\nextent j 2\nX[i] = A[i] * B[i]\nY[i] = X[i] * C[i]\nZ[i] = X[i] * D[i]"),
            NetworkError::NotATree(_)
        ));
        assert!(matches!(e("extent i 2\nX[i] = A[i] * B[i]\nY[i] = C[i] * D[i]"), NetworkError::NotATree(_)));
        assert!(matches!(e("extent i 2\nextent j 2\nR[i,j] = A[i] * B[i]"), NetworkError::FreeResultIndex { .. }));
        assert!(matches!(e("extent i 2\nX[] = A[i] * B[i]\nR[i] = X[] * C[i]"), NetworkError::ScalarIntermediate(_)));
        assert!(matches!(
            e("extent i 2\nextent j 2\nX[i] = A[i,j] * B[j]\nR[i,j] = X[i] * C[i,j]"),
            NetworkError::EscapingIndex { .. }
        ));
        assert!(matches!(e("extent i 2\nextent j 2\nR[i] = A[i,j] * A[i]"), NetworkError::InconsistentTensor { .. }));
        assert!(matches!(e("extent i 2\nshape Q 2\nR[i] = A[i] * B[i]"), NetworkError::UnknownTensor(_)));
        assert!(matches!(e("extent i 2\nR[i] = A[i] * B[i] * C[i]"), NetworkError::Syntax { .. }));
    }

    #[test]
    fn scalar_root_is_allowed() {
        let t = parse_network("extent i 3\nR[] = A[i] * B[i]").unwrap();
        assert_eq!(t.root_result().order(), 0);
    }

    #[test]
    fn topological_orders_chain_and_fork() {
        let t = parse_network(RUNNING).unwrap();
        assert_eq!(t.topological_orders().unwrap(), vec![vec![0, 1, 2]]);

        let fork = "extent i 2\nextent j 2\nX[i] = A[i,j] * B[j]\nY[i] = C[i] * D[i]\nR[i] = X[i] * Y[i]";
        let t = parse_network(fork).unwrap();
        let orders = t.topological_orders().unwrap();
        assert_eq!(orders, vec![vec![0, 1, 2], vec![1, 0, 2]]);
    }

    #[test]
    fn topological_orders_too_large() {
        let mut s = String::from("extent i 2\nT0[i] = A0[i] * B0[i]\n");
        for k in 1..9 {
            s.push_str(&format!("T{k}[i] = T{}[i] * B{k}[i]\n", k - 1));
        }
        let t = parse_network(&s).unwrap();
        assert_eq!(t.topological_orders(), Err(NetworkError::TooLarge(9)));
    }

    #[test]
    fn text_and_json_round_trip() {
        let t = parse_network(RUNNING).unwrap();
        assert_eq!(parse_network(&t.to_text()).unwrap(), t);
        assert_eq!(parse_network(&t.to_json()).unwrap(), t);
    }

    #[test]
    fn repeated_input_tensor_is_allowed() {
        let t = parse_network(
            "extent K 3\nextent i 2\nextent j 2\nextent m 2\nextent n 2\nV[i,j,m,n] = E[K,i,m] * E[K,j,n]",
        )
        .unwrap();
        assert_eq!(t.inputs().len(), 1);
    }
}
