//! Benchmark networks and synthetic inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::network::{parse_network, ContractionTree, NetworkError};
use crate::tensor::{Shape, SparseTensor, TensorError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown benchmark kind `{0}` (expected mttkrp1-3, ttmc1-3, running_example or masked_3term)")]
    UnknownKind(String),
    #[error("{kind} takes {expected} extents, got {found}")]
    Extents { kind: BenchKind, expected: usize, found: usize },
    #[error("density must be in (0, 1], got {0}")]
    Density(f64),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchKind {
    Mttkrp(u8),
    Ttmc(u8),
    RunningExample,
    Masked3Term,
}

impl FromStr for BenchKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, BenchError> {
        Ok(match s {
            "mttkrp1" => BenchKind::Mttkrp(1),
            "mttkrp2" => BenchKind::Mttkrp(2),
            "mttkrp3" => BenchKind::Mttkrp(3),
            "ttmc1" => BenchKind::Ttmc(1),
            "ttmc2" => BenchKind::Ttmc(2),
            "ttmc3" => BenchKind::Ttmc(3),
            "running_example" => BenchKind::RunningExample,
            "masked_3term" => BenchKind::Masked3Term,
            _ => return Err(BenchError::UnknownKind(s.to_string())),
        })
    }
}

impl std::fmt::Display for BenchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BenchKind::Mttkrp(m) => write!(f, "mttkrp{m}"),
            BenchKind::Ttmc(m) => write!(f, "ttmc{m}"),
            BenchKind::RunningExample => f.write_str("running_example"),
            BenchKind::Masked3Term => f.write_str("masked_3term"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchParams {
    /// Kind-specific extents; `None` uses the defaults.
    pub extents: Option<Vec<usize>>,
    pub rank: usize,
    /// Density of the sparse inputs.
    pub density: f64,
    pub seed: u64,
}

impl BenchParams {
    pub fn defaults(kind: BenchKind) -> Self {
        let (rank, density) = match kind {
            BenchKind::Mttkrp(_) => (8, 0.01),
            BenchKind::Ttmc(_) => (16, 0.01),
            BenchKind::RunningExample => (0, 0.2),
            BenchKind::Masked3Term => (0, 0.2),
        };
        BenchParams { extents: None, rank, density, seed: 0 }
    }
}

/// A generated network with inputs. Tensors in `dense` are meant to be bound
/// as dense operands.
#[derive(Debug, Clone)]
pub struct BenchInstance {
    pub network: String,
    pub tree: ContractionTree,
    pub inputs: BTreeMap<String, SparseTensor>,
    pub dense: BTreeSet<String>,
}

/// Uniformly random coordinates without replacement and values uniform in
/// [-1, 1]. At least one entry is stored for any non-empty shape.
pub fn synthetic(extents: &[usize], density: f64, seed: u64) -> Result<SparseTensor, TensorError> {
    let shape = Shape::new(extents.to_vec())?;
    let cells = shape.num_cells();
    let nnz = ((density.clamp(0.0, 1.0) * cells as f64).round() as usize).clamp(1, cells);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, cells, nnz).into_vec();
    picks.sort_unstable();
    let entries: Vec<(Vec<usize>, f64)> =
        picks.into_iter().map(|off| (unravel(off, extents), rng.gen_range(-1.0..=1.0))).collect();
    SparseTensor::from_entries(shape, entries)
}

/// Random 0/1 tensor.
pub fn mask(extents: &[usize], density: f64, seed: u64) -> Result<SparseTensor, TensorError> {
    let t = synthetic(extents, density, seed)?;
    let entries: Vec<(Vec<usize>, f64)> = t.entries().map(|(c, _)| (c.to_vec(), 1.0)).collect();
    SparseTensor::from_entries(t.shape().clone(), entries)
}

fn unravel(mut off: usize, extents: &[usize]) -> Vec<usize> {
    let mut c = vec![0; extents.len()];
    for k in (0..extents.len()).rev() {
        c[k] = off % extents[k];
        off /= extents[k];
    }
    c
}

fn extents_or(kind: BenchKind, given: &Option<Vec<usize>>, default: &[usize]) -> Result<Vec<usize>, BenchError> {
    match given {
        None => Ok(default.to_vec()),
        Some(e) if e.len() == default.len() => Ok(e.clone()),
        Some(e) if e.len() == 1 => Ok(vec![e[0]; default.len()]),
        Some(e) => Err(BenchError::Extents { kind, expected: default.len(), found: e.len() }),
    }
}

/// Network text for a kind. Extents are listed per index.
pub fn bench_network(kind: BenchKind, params: &BenchParams) -> Result<String, BenchError> {
    let mut s = String::new();
    let r = params.rank;
    match kind {
        BenchKind::Mttkrp(m) | BenchKind::Ttmc(m) => {
            let e = extents_or(kind, &params.extents, &[30, 40, 50])?;
            let ttmc = matches!(kind, BenchKind::Ttmc(_));
            for (name, n) in ["i", "j", "k"].iter().zip(&e) {
                writeln!(s, "extent {name} {n}").unwrap();
            }
            if ttmc {
                for name in ["x", "y", "z"] {
                    writeln!(s, "extent {name} {r}").unwrap();
                }
            } else {
                writeln!(s, "extent r {r}").unwrap();
            }
            // left-to-right binarization: T with the first factor, then the second
            let text = match (ttmc, m) {
                (false, 1) => "X[i,k,r] = T[i,j,k] * B[j,r]\nA'[i,r] = X[i,k,r] * C[k,r]",
                (false, 2) => "X[j,k,r] = T[i,j,k] * A[i,r]\nB'[j,r] = X[j,k,r] * C[k,r]",
                (false, _) => "X[j,k,r] = T[i,j,k] * A[i,r]\nC'[k,r] = X[j,k,r] * B[j,r]",
                (true, 1) => "X[i,k,y] = T[i,j,k] * B[j,y]\nA'[i,y,z] = X[i,k,y] * C[k,z]",
                (true, 2) => "X[j,k,x] = T[i,j,k] * A[i,x]\nB'[j,x,z] = X[j,k,x] * C[k,z]",
                (true, _) => "X[j,k,x] = T[i,j,k] * A[i,x]\nC'[k,x,y] = X[j,k,x] * B[j,y]",
            };
            s.push_str(text);
        }
        BenchKind::RunningExample => {
            let e = extents_or(kind, &params.extents, &[6; 6])?;
            for (name, n) in ["i", "j", "k", "p", "q", "r"].iter().zip(&e) {
                writeln!(s, "extent {name} {n}").unwrap();
            }
            s.push_str(
                "X[i,j,q,r] = A[i,p,q] * B[j,p,r]\n\
                 Y[i,j,k,r] = X[i,j,q,r] * C[k,q,r]\n\
                 R[i,j,k] = Y[i,j,k,r] * D[j,k,r]",
            );
        }
        BenchKind::Masked3Term => {
            // E[K,i,t] = I[K,mu,nu] * C[mu,i] * P[nu,t] * L[K,i]
            let e = extents_or(kind, &params.extents, &[8, 10, 10, 6, 12])?;
            for (name, n) in ["K", "mu", "nu", "i", "t"].iter().zip(&e) {
                writeln!(s, "extent {name} {n}").unwrap();
            }
            s.push_str(
                "X[K,nu,i] = I[K,mu,nu] * C[mu,i]\n\
                 Z[K,nu,i] = X[K,nu,i] * L[K,i]\n\
                 E[K,i,t] = Z[K,nu,i] * P[nu,t]",
            );
        }
    }
    Ok(s)
}

/// The three-term network the mask is applied to: E = I * C * P.
pub fn unmasked_3term_network(params: &BenchParams) -> Result<String, BenchError> {
    let masked = bench_network(BenchKind::Masked3Term, params)?;
    let mut lines: Vec<&str> = masked.lines().filter(|l| l.starts_with("extent")).collect();
    lines.push("X[K,nu,i] = I[K,mu,nu] * C[mu,i]");
    lines.push("E[K,i,t] = X[K,nu,i] * P[nu,t]");
    Ok(lines.join("\n"))
}

/// Sparse tensors get `density`, dense factors are full, the mask is 0/1 at
/// `density`. Each input uses its own seed derived from `seed`.
pub fn bench_generate(kind: BenchKind, params: &BenchParams) -> Result<BenchInstance, BenchError> {
    if !(params.density > 0.0 && params.density <= 1.0) {
        return Err(BenchError::Density(params.density));
    }
    let network = bench_network(kind, params)?;
    let tree = parse_network(&network)?;
    let sparse: &[&str] = match kind {
        BenchKind::Mttkrp(_) | BenchKind::Ttmc(_) => &["T"],
        BenchKind::RunningExample => &["A", "B", "C", "D"],
        BenchKind::Masked3Term => &["I"],
    };
    let mut inputs = BTreeMap::new();
    let mut dense = BTreeSet::new();
    for (n, r) in tree.inputs().into_iter().enumerate() {
        let extents = tree.ref_shape(r);
        let seed = params.seed.wrapping_mul(1_000_003).wrapping_add(n as u64);
        let t = if sparse.contains(&r.tensor.as_str()) {
            synthetic(&extents, params.density, seed)?
        } else if kind == BenchKind::Masked3Term && r.tensor == "L" {
            mask(&extents, params.density, seed)?
        } else {
            dense.insert(r.tensor.clone());
            synthetic(&extents, 1.0, seed)?
        };
        inputs.insert(r.tensor.clone(), t);
    }
    Ok(BenchInstance { network, tree, inputs, dense })
}

/// Random valid network with `1..=max_contractions` contractions over a pool
/// of up to six indices with extents 2..=4.
pub fn random_network<R: Rng>(rng: &mut R, max_contractions: usize) -> String {
    loop {
        let s = try_random_network(rng, max_contractions);
        if parse_network(&s).is_ok() {
            return s;
        }
    }
}

enum Sketch {
    Leaf(Vec<usize>),
    Node(Box<Sketch>, Box<Sketch>),
}

fn count_leaves(t: &Sketch) -> usize {
    match t {
        Sketch::Leaf(_) => 1,
        Sketch::Node(a, b) => count_leaves(a) + count_leaves(b),
    }
}

fn replace_leaf(t: &mut Sketch, target: &mut usize, with: &mut Option<Sketch>) {
    match t {
        Sketch::Leaf(_) => {
            if *target == 0 {
                if let Some(n) = with.take() {
                    *t = n;
                }
            } else {
                *target -= 1;
            }
        }
        Sketch::Node(a, b) => {
            replace_leaf(a, target, with);
            replace_leaf(b, target, with);
        }
    }
}

fn idx_of(t: &Sketch) -> BTreeSet<usize> {
    match t {
        Sketch::Leaf(v) => v.iter().copied().collect(),
        Sketch::Node(a, b) => idx_of(a).union(&idx_of(b)).copied().collect(),
    }
}

fn try_random_network<R: Rng>(rng: &mut R, max_contractions: usize) -> String {
    const NAMES: [&str; 6] = ["a", "b", "c", "d", "e", "f"];
    let m = rng.gen_range(1..=max_contractions.max(1));
    let pool = rng.gen_range(3..=6);
    let leaf = |rng: &mut R| {
        let k = rng.gen_range(1..=3usize.min(pool));
        let mut v: Vec<usize> = (0..pool).collect();
        v.shuffle(rng);
        v.truncate(k);
        Sketch::Leaf(v)
    };
    // grow by replacing a random leaf with a contraction
    let mut root = Sketch::Node(Box::new(leaf(rng)), Box::new(leaf(rng)));
    for _ in 1..m {
        let n = count_leaves(&root);
        let mut target = rng.gen_range(0..n);
        let node = Sketch::Node(Box::new(leaf(rng)), Box::new(leaf(rng)));
        replace_leaf(&mut root, &mut target, &mut Some(node));
    }
    let all: Vec<usize> = idx_of(&root).into_iter().collect();
    let mut out_idx: Vec<usize> = all.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
    if out_idx.is_empty() {
        out_idx.push(all[rng.gen_range(0..all.len())]);
    }
    out_idx.shuffle(rng);

    let mut text = String::new();
    for k in 0..pool {
        writeln!(text, "extent {} {}", NAMES[k], rng.gen_range(2..=4)).unwrap();
    }
    let mut lines = Vec::new();
    let mut counter = (0usize, 0usize);
    fn emit<R: Rng>(
        t: &Sketch,
        needed: &BTreeSet<usize>,
        result: Option<(String, Vec<usize>)>,
        rng: &mut R,
        counter: &mut (usize, usize),
        lines: &mut Vec<String>,
    ) -> (String, Vec<usize>) {
        match t {
            Sketch::Leaf(v) => {
                counter.0 += 1;
                (format!("L{}", counter.0), v.clone())
            }
            Sketch::Node(a, b) => {
                let (name, res) = result.unwrap_or_else(|| {
                    counter.1 += 1;
                    let mut res: Vec<usize> = idx_of(t).intersection(needed).copied().collect();
                    res.shuffle(rng);
                    (format!("T{}", counter.1), res)
                });
                let res_set: BTreeSet<usize> = res.iter().copied().collect();
                let need_a: BTreeSet<usize> = res_set.union(&idx_of(b)).copied().collect();
                let need_b: BTreeSet<usize> = res_set.union(&idx_of(a)).copied().collect();
                let la = emit(a, &need_a, None, rng, counter, lines);
                let lb = emit(b, &need_b, None, rng, counter, lines);
                let r = |(n, v): &(String, Vec<usize>)| {
                    format!("{n}[{}]", v.iter().map(|&k| NAMES[k]).collect::<Vec<_>>().join(","))
                };
                lines.push(format!("{} = {} * {}", r(&(name.clone(), res.clone())), r(&la), r(&lb)));
                (name, res)
            }
        }
    }
    emit(&root, &BTreeSet::new(), Some(("R".to_string(), out_idx)), rng, &mut counter, &mut lines);
    text.push_str(&lines.join("\n"));
    text
}
