//! Sparse tensor storage: canonical coordinate lists, compressed sparse fiber
//! trees, dense workspaces and the FROSTT `.tns` text format.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("coordinate {coords:?} is out of bounds for shape {shape:?}")]
    OutOfBounds { coords: Vec<i64>, shape: Vec<usize> },
    #[error("rank mismatch: expected {expected} modes, found {found}")]
    RankMismatch { expected: usize, found: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("mode extent must be positive (mode {mode})")]
    ZeroExtent { mode: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-mode extents. An empty shape describes a scalar.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(extents: Vec<usize>) -> Result<Self, TensorError> {
        if let Some(mode) = extents.iter().position(|&e| e == 0) {
            return Err(TensorError::ZeroExtent { mode });
        }
        Ok(Shape(extents))
    }

    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn extents(&self) -> &[usize] {
        &self.0
    }

    pub fn num_cells(&self) -> usize {
        self.0.iter().product()
    }

    fn contains(&self, coords: &[usize]) -> bool {
        coords.len() == self.order() && coords.iter().zip(&self.0).all(|(c, e)| c < e)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (k, e) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, "]")
    }
}

/// A permutation of mode numbers, outer-to-inner.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModeOrder(Vec<usize>);

impl ModeOrder {
    pub fn new(perm: Vec<usize>) -> Result<Self, TensorError> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &p in &perm {
            if p >= n || seen[p] {
                return Err(TensorError::RankMismatch { expected: n, found: p });
            }
            seen[p] = true;
        }
        Ok(ModeOrder(perm))
    }

    pub fn identity(order: usize) -> Self {
        ModeOrder((0..order).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Coordinate-list tensor in canonical form: unique coordinates in
/// lexicographic order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    shape: Shape,
    /// Row-major `nnz x order` coordinate table.
    coords: Vec<usize>,
    values: Vec<f64>,
}

impl SparseTensor {
    pub fn empty(shape: Shape) -> Self {
        SparseTensor { shape, coords: Vec::new(), values: Vec::new() }
    }

    /// Builds a canonical tensor. Duplicates are summed and entries whose
    /// merged value is exactly zero are dropped.
    pub fn from_entries<I>(shape: Shape, entries: I) -> Result<Self, TensorError>
    where
        I: IntoIterator<Item = (Vec<usize>, f64)>,
    {
        let mut raw = Vec::new();
        for (c, v) in entries {
            if c.len() != shape.order() {
                return Err(TensorError::RankMismatch { expected: shape.order(), found: c.len() });
            }
            if !shape.contains(&c) {
                return Err(TensorError::OutOfBounds {
                    coords: c.iter().map(|&x| x as i64).collect(),
                    shape: shape.0.clone(),
                });
            }
            raw.push((c, v));
        }
        Ok(Self::canonicalize(shape, raw))
    }

    /// Like [`SparseTensor::from_entries`] but accepts signed coordinates, so
    /// negative components are reported rather than wrapped.
    pub fn from_signed_entries<I>(shape: Shape, entries: I) -> Result<Self, TensorError>
    where
        I: IntoIterator<Item = (Vec<i64>, f64)>,
    {
        let mut raw = Vec::new();
        for (c, v) in entries {
            if c.len() != shape.order() {
                return Err(TensorError::RankMismatch { expected: shape.order(), found: c.len() });
            }
            if c.iter().zip(shape.extents()).any(|(&x, &e)| x < 0 || x as usize >= e) {
                return Err(TensorError::OutOfBounds { coords: c, shape: shape.0.clone() });
            }
            raw.push((c.into_iter().map(|x| x as usize).collect(), v));
        }
        Ok(Self::canonicalize(shape, raw))
    }

    fn canonicalize(shape: Shape, mut raw: Vec<(Vec<usize>, f64)>) -> Self {
        raw.sort_by(|a, b| a.0.cmp(&b.0));
        let mut coords = Vec::with_capacity(raw.len() * shape.order());
        let mut values: Vec<f64> = Vec::with_capacity(raw.len());
        let mut last: Option<Vec<usize>> = None;
        for (c, v) in raw {
            if last.as_ref() == Some(&c) {
                *values.last_mut().unwrap() += v;
            } else {
                coords.extend_from_slice(&c);
                values.push(v);
                last = Some(c);
            }
        }
        let mut t = SparseTensor { shape, coords, values };
        t.prune_zeros();
        t
    }

    fn prune_zeros(&mut self) {
        if self.values.iter().all(|&v| v != 0.0) {
            return;
        }
        let order = self.order();
        let mut coords = Vec::with_capacity(self.coords.len());
        let mut values = Vec::with_capacity(self.values.len());
        for (k, &v) in self.values.iter().enumerate() {
            if v != 0.0 {
                coords.extend_from_slice(&self.coords[k * order..(k + 1) * order]);
                values.push(v);
            }
        }
        self.coords = coords;
        self.values = values;
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.order()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn coords(&self, k: usize) -> &[usize] {
        let n = self.order();
        &self.coords[k * n..(k + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn entries(&self) -> impl Iterator<Item = (&[usize], f64)> + '_ {
        (0..self.nnz()).map(move |k| (self.coords(k), self.values[k]))
    }

    /// Value at `coords`, or zero when the coordinate is not stored.
    pub fn get(&self, coords: &[usize]) -> f64 {
        let n = self.order();
        let (mut lo, mut hi) = (0, self.nnz());
        while lo < hi {
            let mid = (lo + hi) / 2;
            match self.coords[mid * n..(mid + 1) * n].cmp(coords) {
                std::cmp::Ordering::Less => lo = mid + 1,
                std::cmp::Ordering::Greater => hi = mid,
                std::cmp::Ordering::Equal => return self.values[mid],
            }
        }
        0.0
    }

    /// Reorders modes so that new mode `l` is old mode `order[l]`.
    pub fn permute(&self, order: &ModeOrder) -> Result<SparseTensor, TensorError> {
        let perm = order.as_slice();
        if perm.len() != self.order() {
            return Err(TensorError::RankMismatch { expected: self.order(), found: perm.len() });
        }
        let shape = Shape(perm.iter().map(|&m| self.shape.0[m]).collect());
        let raw = self.entries().map(|(c, v)| (perm.iter().map(|&m| c[m]).collect::<Vec<_>>(), v)).collect();
        Ok(Self::canonicalize(shape, raw))
    }

    /// Dense row-major copy of all cells.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut ws = DenseWorkspace::new(self.shape.extents());
        for (c, v) in self.entries() {
            ws.add(c, v);
        }
        ws.into_cells()
    }
}

/// One CSF level: `coords[segments[p]..segments[p + 1]]` are the children of
/// node `p` of the previous level (the synthetic root for level 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsfLevel {
    pub segments: Vec<usize>,
    pub coords: Vec<usize>,
}

impl CsfLevel {
    pub fn fiber(&self, parent: usize) -> &[usize] {
        &self.coords[self.segments[parent]..self.segments[parent + 1]]
    }

    /// Position in `coords` of the first child of `parent`.
    pub fn fiber_start(&self, parent: usize) -> usize {
        self.segments[parent]
    }
}

/// Compressed sparse fiber tree under a chosen mode order. Level `l` stores
/// coordinates of original mode `mode_order[l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsfTensor {
    shape: Shape,
    mode_order: ModeOrder,
    levels: Vec<CsfLevel>,
    values: Vec<f64>,
}

impl CsfTensor {
    pub fn build(t: &SparseTensor, order: &ModeOrder) -> Result<Self, TensorError> {
        let p = t.permute(order)?;
        let n = p.order();
        let nnz = p.nnz();
        let mut levels: Vec<CsfLevel> = (0..n).map(|_| CsfLevel { segments: Vec::new(), coords: Vec::new() }).collect();
        for k in 0..nnz {
            let c = p.coords(k);
            // first level at which this entry departs from the previous one
            let split = if k == 0 {
                0
            } else {
                let prev = p.coords(k - 1);
                (0..n).find(|&l| c[l] != prev[l]).unwrap_or(n)
            };
            for l in split..n {
                if l + 1 < n {
                    let start = levels[l + 1].coords.len();
                    levels[l + 1].segments.push(start);
                }
                levels[l].coords.push(c[l]);
            }
        }
        for (l, level) in levels.iter_mut().enumerate() {
            let len = level.coords.len();
            if l == 0 {
                level.segments = vec![0, len];
            } else if nnz > 0 {
                level.segments.push(len);
            }
        }
        let values = p.values;
        Ok(CsfTensor { shape: t.shape.clone(), mode_order: order.clone(), levels, values })
    }

    /// Shape in the original (unpermuted) mode numbering.
    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn mode_order(&self) -> &ModeOrder {
        &self.mode_order
    }

    pub fn levels(&self) -> &[CsfLevel] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &CsfLevel {
        &self.levels[l]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn order(&self) -> usize {
        self.shape.order()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Flattens the tree back to a coordinate list in the permuted coordinate
    /// system (level order).
    pub fn flatten(&self) -> SparseTensor {
        let n = self.order();
        let shape = Shape(self.mode_order.as_slice().iter().map(|&m| self.shape.0[m]).collect());
        if n == 0 {
            return SparseTensor { shape, coords: Vec::new(), values: self.values.clone() };
        }
        let mut coords = Vec::with_capacity(self.nnz() * n);
        let mut prefix = vec![0usize; n];
        self.walk(0, 0, &mut prefix, &mut coords);
        SparseTensor { shape, coords, values: self.values.clone() }
    }

    fn walk(&self, level: usize, parent: usize, prefix: &mut [usize], out: &mut Vec<usize>) {
        let lv = &self.levels[level];
        if lv.segments.is_empty() {
            return;
        }
        let start = lv.fiber_start(parent);
        for (off, &c) in lv.fiber(parent).iter().enumerate() {
            prefix[level] = c;
            if level + 1 == prefix.len() {
                out.extend_from_slice(prefix);
            } else {
                self.walk(level + 1, start + off, prefix, out);
            }
        }
    }
}

/// Dense row-major scratch array used for reduced intermediates.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseWorkspace {
    dims: Vec<usize>,
    strides: Vec<usize>,
    cells: Vec<f64>,
}

impl DenseWorkspace {
    pub fn new(dims: &[usize]) -> Self {
        let mut strides = vec![0; dims.len()];
        let mut acc = 1;
        for k in (0..dims.len()).rev() {
            strides[k] = acc;
            acc *= dims[k];
        }
        DenseWorkspace { dims: dims.to_vec(), strides, cells: vec![0.0; acc] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn zero(&mut self) {
        self.cells.fill(0.0);
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.cells[self.offset(idx)]
    }

    pub fn add(&mut self, idx: &[usize], v: f64) {
        let o = self.offset(idx);
        self.cells[o] += v;
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [f64] {
        &mut self.cells
    }

    pub fn into_cells(self) -> Vec<f64> {
        self.cells
    }
}

const SHAPE_HINT: &str = "# shape:";

/// Reads a FROSTT `.tns` stream (1-based coordinates, value last). The shape is
/// the per-mode maximum coordinate unless `shape` is given; a `# shape:`
/// comment written by [`write_tns`] is also honoured.
pub fn read_tns<R: BufRead>(reader: R, shape: Option<Shape>) -> Result<SparseTensor, TensorError> {
    let mut hint: Option<Vec<usize>> = None;
    let mut arity: Option<usize> = None;
    let mut raw: Vec<(Vec<i64>, f64)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix(SHAPE_HINT) {
            let dims: Result<Vec<usize>, _> = rest.split_whitespace().map(str::parse).collect();
            hint = Some(dims.map_err(|e| TensorError::Parse { line: lineno, msg: format!("bad shape hint: {e}") })?);
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < 2 {
            return Err(TensorError::Parse { line: lineno, msg: "expected coordinates followed by a value".into() });
        }
        let n = fields.len() - 1;
        match arity {
            None => arity = Some(n),
            Some(a) if a != n => return Err(TensorError::RankMismatch { expected: a, found: n }),
            _ => {}
        }
        let mut coords = Vec::with_capacity(n);
        for f in &fields[..n] {
            let c: i64 =
                f.parse().map_err(|_| TensorError::Parse { line: lineno, msg: format!("invalid coordinate {f:?}") })?;
            coords.push(c - 1);
        }
        let v: f64 = fields[n]
            .parse()
            .map_err(|_| TensorError::Parse { line: lineno, msg: format!("invalid value {:?}", fields[n]) })?;
        raw.push((coords, v));
    }
    let shape = match (shape, hint) {
        (Some(s), _) => s,
        (None, Some(h)) => Shape::new(h)?,
        (None, None) => {
            let n = arity.unwrap_or(0);
            let mut ext = vec![0i64; n];
            for (c, _) in &raw {
                for (e, &x) in ext.iter_mut().zip(c) {
                    *e = (*e).max(x + 1);
                }
            }
            Shape::new(ext.into_iter().map(|e| e.max(1) as usize).collect())?
        }
    };
    if let Some(a) = arity {
        if a != shape.order() {
            return Err(TensorError::RankMismatch { expected: shape.order(), found: a });
        }
    }
    SparseTensor::from_signed_entries(shape, raw)
}

/// Writes `t` in `.tns` form with a leading `# shape:` comment.
pub fn write_tns<W: Write>(t: &SparseTensor, mut w: W) -> Result<(), TensorError> {
    write!(w, "{SHAPE_HINT}")?;
    for e in t.shape().extents() {
        write!(w, " {e}")?;
    }
    writeln!(w)?;
    for (c, v) in t.entries() {
        for x in c {
            write!(w, "{} ", x + 1)?;
        }
        writeln!(w, "{v:?}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(e: &[usize]) -> Shape {
        Shape::new(e.to_vec()).unwrap()
    }

    #[test]
    fn coo_empty() {
        let t = SparseTensor::from_entries(shape(&[3, 3]), vec![]).unwrap();
        assert_eq!(t.nnz(), 0);
    }

    #[test]
    fn coo_sorts_lexicographically() {
        let t = SparseTensor::from_entries(shape(&[2, 2]), vec![(vec![1, 0], 2.0), (vec![0, 1], 3.0)]).unwrap();
        let e: Vec<_> = t.entries().map(|(c, v)| (c.to_vec(), v)).collect();
        assert_eq!(e, vec![(vec![0, 1], 3.0), (vec![1, 0], 2.0)]);
    }

    #[test]
    fn coo_cancelling_duplicates_are_dropped() {
        let t = SparseTensor::from_entries(shape(&[2, 2]), vec![(vec![0, 0], 1.5), (vec![0, 0], -1.5)]).unwrap();
        assert_eq!(t.nnz(), 0);
    }

    #[test]
    fn coo_errors() {
        let oob = SparseTensor::from_entries(shape(&[2, 2]), vec![(vec![2, 0], 1.0)]);
        assert!(matches!(oob, Err(TensorError::OutOfBounds { .. })));
        let neg = SparseTensor::from_signed_entries(shape(&[2, 2]), vec![(vec![-1, 0], 1.0)]);
        assert!(matches!(neg, Err(TensorError::OutOfBounds { .. })));
        let rank = SparseTensor::from_entries(shape(&[2, 2]), vec![(vec![0], 1.0)]);
        assert!(matches!(rank, Err(TensorError::RankMismatch { expected: 2, found: 1 })));
        assert!(matches!(Shape::new(vec![2, 0]), Err(TensorError::ZeroExtent { mode: 1 })));
    }

    fn small() -> SparseTensor {
        SparseTensor::from_entries(shape(&[2, 3]), vec![(vec![0, 0], 1.0), (vec![0, 2], 2.0), (vec![1, 1], 3.0)])
            .unwrap()
    }

    #[test]
    fn csf_identity_layout() {
        let c = CsfTensor::build(&small(), &ModeOrder::identity(2)).unwrap();
        assert_eq!(c.level(0).coords, vec![0, 1]);
        assert_eq!(c.level(0).segments, vec![0, 2]);
        assert_eq!(c.level(1).segments, vec![0, 2, 3]);
        assert_eq!(c.level(1).coords, vec![0, 2, 1]);
        assert_eq!(c.values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn csf_transposed_layout() {
        let order = ModeOrder::new(vec![1, 0]).unwrap();
        let c = CsfTensor::build(&small(), &order).unwrap();
        assert_eq!(c.level(0).coords, vec![0, 1, 2]);
        assert_eq!(c.level(1).segments, vec![0, 1, 2, 3]);
        assert_eq!(c.level(1).coords, vec![0, 1, 0]);
        assert_eq!(c.values(), &[1.0, 3.0, 2.0]);
    }

    #[test]
    fn csf_empty_has_only_root_segment() {
        let t = SparseTensor::empty(shape(&[4, 5, 6]));
        let c = CsfTensor::build(&t, &ModeOrder::identity(3)).unwrap();
        assert_eq!(c.level(0).segments, vec![0, 0]);
        for l in c.levels() {
            assert!(l.coords.is_empty());
        }
        assert!(c.level(1).segments.is_empty() && c.level(2).segments.is_empty());
        assert!(c.values().is_empty());
        assert_eq!(c.flatten().nnz(), 0);
    }

    #[test]
    fn csf_flatten_round_trips() {
        let t = small();
        for perm in [vec![0, 1], vec![1, 0]] {
            let order = ModeOrder::new(perm).unwrap();
            let c = CsfTensor::build(&t, &order).unwrap();
            assert_eq!(c.flatten(), t.permute(&order).unwrap());
        }
        let v = SparseTensor::from_entries(shape(&[5]), vec![(vec![3], 1.0), (vec![1], 2.0)]).unwrap();
        let c = CsfTensor::build(&v, &ModeOrder::identity(1)).unwrap();
        assert_eq!(c.flatten(), v);
    }

    #[test]
    fn csf_rank_mismatch() {
        let r = CsfTensor::build(&small(), &ModeOrder::identity(3));
        assert!(matches!(r, Err(TensorError::RankMismatch { .. })));
    }

    #[test]
    fn scalar_tensor() {
        let s = SparseTensor::from_entries(Shape::scalar(), vec![(vec![], 2.5)]).unwrap();
        assert_eq!(s.get(&[]), 2.5);
        let c = CsfTensor::build(&s, &ModeOrder::identity(0)).unwrap();
        assert_eq!(c.flatten(), s);
    }

    #[test]
    fn tns_reads_frostt_lines() {
        let text = "1 1 1 2.0\n2 3 1 -1.0\n";
        let t = read_tns(text.as_bytes(), None).unwrap();
        assert_eq!(t.shape().extents(), &[2, 3, 1]);
        assert_eq!(t.get(&[0, 0, 0]), 2.0);
        assert_eq!(t.get(&[1, 2, 0]), -1.0);
        assert_eq!(t.nnz(), 2);
    }

    #[test]
    fn tns_comment_only_is_empty_scalar_shape() {
        let t = read_tns("# comment\n".as_bytes(), None).unwrap();
        assert_eq!(t.order(), 0);
        assert_eq!(t.nnz(), 0);
    }

    #[test]
    fn tns_parse_errors() {
        let bad = read_tns("1 x 1 2.0\n".as_bytes(), None);
        assert!(matches!(bad, Err(TensorError::Parse { line: 1, .. })));
        let arity = read_tns("1 1 1 2.0\n1 1 3.0\n".as_bytes(), None);
        assert!(matches!(arity, Err(TensorError::RankMismatch { expected: 3, found: 2 })));
        let zero_based = read_tns("0 1 2.0\n".as_bytes(), None);
        assert!(matches!(zero_based, Err(TensorError::OutOfBounds { .. })));
    }

    #[test]
    fn tns_shape_override_keeps_trailing_slices() {
        let t = read_tns("1 1 2.0\n".as_bytes(), Some(shape(&[4, 7]))).unwrap();
        assert_eq!(t.shape().extents(), &[4, 7]);
    }

    #[test]
    fn workspace_zero_and_lookup() {
        let mut ws = DenseWorkspace::new(&[2, 3]);
        ws.add(&[1, 2], 4.0);
        ws.add(&[1, 2], 1.0);
        assert_eq!(ws.get(&[1, 2]), 5.0);
        assert_eq!(ws.offset(&[1, 2]), 5);
        ws.zero();
        assert!(ws.cells().iter().all(|&c| c == 0.0));
    }
}
