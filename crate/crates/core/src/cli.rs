//! Command-line driver. `run_cli` returns the process exit code:
//! 0 success, 1 usage or validation error, 2 no schedule within the order
//! bound, 3 comparison or verification failure.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::bench::{bench_generate, synthetic, BenchKind, BenchParams};
use crate::constraints::{
    brute_force_sat, build_model_with, search_min_order, solve, verify_solution, ModelOptions, ScheduleSolution,
    SolutionReport, SolveError, SolveOptions,
};
use crate::executor::{compare, execute, oracle_nary, oracle_unfused, Binding, CompareReport, ExecError, ExecStats};
use crate::lowering::{lower, print_ir, IrNode};
use crate::network::{parse_network, ContractionTree};
use crate::tensor::{read_tns, write_tns, ModeOrder, SparseTensor};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_UNSAT: i32 = 2;
pub const EXIT_MISMATCH: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "tenfuse", version, about = "Fused schedules for sparse tensor contraction trees")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find the smallest intermediate order bound and print the schedule and IR.
    Plan(PlanArgs),
    /// Plan, execute on the given tensors and optionally check against an oracle.
    Run(RunArgs),
    /// Check a saved schedule, or cross-check the solver at every bound.
    Verify(VerifyArgs),
    /// Generate a benchmark network with synthetic inputs and run it.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    /// Largest intermediate order to try (default: largest intermediate order).
    #[arg(long)]
    pub max_order: Option<usize>,
    /// CSF order of the result as index names, outermost first (e.g. j,k,i).
    #[arg(long, value_delimiter = ',')]
    pub root_layout: Option<Vec<String>>,
    /// Solver value-order seed; 0 keeps the default order.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Solver time budget per bound, in seconds.
    #[arg(long, default_value_t = 10.0)]
    pub timeout: f64,
    /// Write the IR text here.
    #[arg(long)]
    pub emit_ir: Option<PathBuf>,
    /// Write the schedule report (JSON) here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub network: PathBuf,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Compare against a dense reference evaluation.
    #[arg(long)]
    pub check: bool,
    #[arg(long, default_value_t = 1e-10)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub abs_tol: f64,
    /// Write execution counters (JSON) here.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Write the result tensor (.tns) here.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub network: PathBuf,
    /// Input from a file: ID=PATH.tns
    #[arg(long = "tensor")]
    pub tensors: Vec<String>,
    /// Random input: ID=EXTENTS:DENSITY:SEED with EXTENTS like 6x6x6 (empty
    /// to take them from the network).
    #[arg(long = "synthetic")]
    pub synthetic: Vec<String>,
    /// Bind this input as a dense operand.
    #[arg(long = "dense")]
    pub dense: Vec<String>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[command(flatten)]
    pub check: CheckArgs,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub network: PathBuf,
    /// Schedule report (JSON) to check; without it every bound is solved and
    /// cross-checked.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    #[arg(long)]
    pub max_order: Option<usize>,
    #[arg(long, default_value_t = 10.0)]
    pub timeout: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// mttkrp1-3, ttmc1-3, running_example or masked_3term
    pub kind: String,
    /// Comma-separated extents (one value applies to all).
    #[arg(long, value_delimiter = ',')]
    pub extents: Option<Vec<usize>>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub density: Option<f64>,
    /// Data seed.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// Write network.txt and the inputs as .tns files into this directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    #[command(flatten)]
    pub check: CheckArgs,
}

/// Error carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_USAGE, message: msg.to_string() }
}

impl From<SolveError> for Failure {
    fn from(e: SolveError) -> Self {
        let code = if matches!(e, SolveError::Unsat { .. }) { EXIT_UNSAT } else { EXIT_USAGE };
        Failure { code, message: e.to_string() }
    }
}

impl From<ExecError> for Failure {
    fn from(e: ExecError) -> Self {
        usage(e)
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_network(path: &Path) -> Result<ContractionTree, Failure> {
    parse_network(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// A planned network: bound, solution and IR.
pub struct Plan {
    pub bound: usize,
    pub solution: ScheduleSolution,
    pub ir: IrNode,
}

pub fn plan(tree: &ContractionTree, args: &ScheduleArgs) -> Result<Plan, Failure> {
    let mut model_opts = ModelOptions::default();
    if let Some(names) = &args.root_layout {
        let root = tree.root_result();
        let modes = names
            .iter()
            .map(|n| {
                tree.index_id(n)
                    .and_then(|k| root.position(k))
                    .ok_or_else(|| usage(format!("--root-layout: {n} is not an index of {}", root.tensor)))
            })
            .collect::<Result<Vec<usize>, Failure>>()?;
        let order = ModeOrder::new(modes).map_err(|e| usage(format!("--root-layout: {e}")))?;
        model_opts.pinned_layouts.insert(root.tensor.clone(), order);
    }
    if !(args.timeout >= 0.0 && args.timeout.is_finite()) {
        return Err(usage("--timeout must be a non-negative number of seconds"));
    }
    let opts = SolveOptions { seed: args.seed, time_budget: Duration::from_secs_f64(args.timeout) };
    let (bound, solution) = search_min_order(tree, args.max_order, &model_opts, &opts)?;
    let ir = lower(tree, &solution).map_err(usage)?;
    if let Some(p) = &args.emit_ir {
        write(p, &format!("{}\n", print_ir(&ir)))?;
    }
    if let Some(p) = &args.report {
        write(p, &format!("{}\n", solution.report(tree).to_json()))?;
    }
    Ok(Plan { bound, solution, ir })
}

fn cmd_plan(a: &PlanArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let tree = load_network(&a.network)?;
    let p = plan(&tree, &a.schedule)?;
    let report = p.solution.report(&tree);
    if a.json {
        let v = serde_json::json!({
            "bound": p.bound,
            "schedule": report,
            "ir": print_ir(&p.ir),
            "ir_tree": p.ir,
        });
        writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("json")).ok();
    } else {
        write!(out, "{report}").ok();
        writeln!(out, "ir: {}", print_ir(&p.ir)).ok();
    }
    Ok(EXIT_OK)
}

/// Parses `ID=EXTENTS:DENSITY:SEED`.
fn parse_synthetic(spec: &str, tree: &ContractionTree) -> Result<(String, SparseTensor), Failure> {
    let bad = || usage(format!("--synthetic {spec}: expected ID=EXTENTS:DENSITY:SEED"));
    let (id, rest) = spec.split_once('=').ok_or_else(bad)?;
    let parts: Vec<&str> = rest.split(':').collect();
    let [extents, density, seed] = parts[..] else { return Err(bad()) };
    let r = tree
        .inputs()
        .into_iter()
        .find(|r| r.tensor == id)
        .ok_or_else(|| usage(format!("--synthetic: {id} is not an input of the network")))?;
    let want = tree.ref_shape(r);
    let extents: Vec<usize> = if extents.is_empty() {
        want.clone()
    } else {
        extents.split('x').map(|e| e.trim().parse::<usize>().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if extents != want {
        return Err(usage(format!("--synthetic: {id} has extents {want:?} in the network, got {extents:?}")));
    }
    let density: f64 = density.parse().map_err(|_| bad())?;
    if !(density > 0.0 && density <= 1.0) {
        return Err(usage(format!("--synthetic {spec}: density must be in (0, 1]")));
    }
    let seed: u64 = seed.parse().map_err(|_| bad())?;
    let t = synthetic(&extents, density, seed).map_err(usage)?;
    Ok((id.to_string(), t))
}

fn load_inputs(a: &RunArgs, tree: &ContractionTree) -> Result<BTreeMap<String, SparseTensor>, Failure> {
    let mut inputs = BTreeMap::new();
    let mut add = |id: String, t: SparseTensor| -> Result<(), Failure> {
        if inputs.insert(id.clone(), t).is_some() {
            return Err(usage(format!("{id} is given more than once")));
        }
        Ok(())
    };
    for spec in &a.tensors {
        let (id, path) = spec.split_once('=').ok_or_else(|| usage(format!("--tensor {spec}: expected ID=PATH")))?;
        let r = tree
            .inputs()
            .into_iter()
            .find(|r| r.tensor == id)
            .ok_or_else(|| usage(format!("--tensor: {id} is not an input of the network")))?;
        let shape = crate::tensor::Shape::new(tree.ref_shape(r)).map_err(usage)?;
        let file = fs::File::open(path).map_err(|e| usage(format!("{path}: {e}")))?;
        let t = read_tns(BufReader::new(file), Some(shape)).map_err(|e| usage(format!("{path}: {e}")))?;
        add(id.to_string(), t)?;
    }
    for spec in &a.synthetic {
        let (id, t) = parse_synthetic(spec, tree)?;
        add(id, t)?;
    }
    for r in tree.inputs() {
        if !inputs.contains_key(&r.tensor) {
            return Err(usage(format!("no input given for {}", r.tensor)));
        }
    }
    Ok(inputs)
}

/// Result of executing a plan, with the optional oracle comparison.
pub struct RunOutcome {
    pub result: SparseTensor,
    pub stats: ExecStats,
    pub comparison: Option<(&'static str, CompareReport)>,
}

pub fn execute_and_check(
    tree: &ContractionTree,
    p: &Plan,
    inputs: &BTreeMap<String, SparseTensor>,
    dense: &BTreeSet<String>,
    check: &CheckArgs,
) -> Result<RunOutcome, Failure> {
    let binding = Binding::for_solution(tree, &p.solution, inputs, dense)?;
    let (result, stats) = execute(tree, &p.ir, &binding)?;
    let comparison = if check.check {
        let (name, reference) = match oracle_nary(tree, inputs) {
            Ok(r) => ("n-ary", r),
            Err(ExecError::TooLarge(_)) => ("unfused", oracle_unfused(tree, inputs)?.0),
            Err(e) => return Err(e.into()),
        };
        Some((name, compare(&result, &reference, check.rel_tol, check.abs_tol)?))
    } else {
        None
    };
    if let Some(p) = &check.stats {
        write(p, &format!("{}\n", stats.to_json()))?;
    }
    if let Some(p) = &check.output {
        let mut buf = Vec::new();
        write_tns(&result, &mut buf).map_err(usage)?;
        fs::write(p, buf).map_err(|e| usage(format!("{}: {e}", p.display())))?;
    }
    Ok(RunOutcome { result, stats, comparison })
}

fn report_run(out: &mut dyn Write, p: &Plan, o: &RunOutcome) -> i32 {
    writeln!(out, "l = {}", p.bound).ok();
    writeln!(out, "ir: {}", print_ir(&p.ir)).ok();
    writeln!(out, "result: {} nonzeros", o.result.nnz()).ok();
    writeln!(
        out,
        "multiply-adds: {}, max workspace cells: {}",
        o.stats.multiply_add_count, o.stats.max_workspace_cells
    )
    .ok();
    match &o.comparison {
        Some((name, c)) => {
            writeln!(out, "check against {name} oracle: {c}").ok();
            if c.pass {
                EXIT_OK
            } else {
                EXIT_MISMATCH
            }
        }
        None => EXIT_OK,
    }
}

fn cmd_run(a: &RunArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let tree = load_network(&a.network)?;
    let inputs = load_inputs(a, &tree)?;
    let dense: BTreeSet<String> = a.dense.iter().cloned().collect();
    if let Some(d) = dense.iter().find(|d| !inputs.contains_key(*d)) {
        return Err(usage(format!("--dense: {d} is not an input of the network")));
    }
    let p = plan(&tree, &a.schedule)?;
    let o = execute_and_check(&tree, &p, &inputs, &dense, &a.check)?;
    Ok(report_run(out, &p, &o))
}

fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let tree = load_network(&a.network)?;
    if let Some(path) = &a.schedule {
        let report = SolutionReport::from_json(&read(path)?).map_err(usage)?;
        let sol = report.to_solution(&tree).map_err(usage)?;
        let violations = verify_solution(&tree, report.bound, &sol).map_err(usage)?;
        for v in &violations {
            writeln!(out, "{v}").ok();
        }
        writeln!(out, "{} violation(s) at l = {}", violations.len(), report.bound).ok();
        return Ok(if violations.is_empty() { EXIT_OK } else { EXIT_MISMATCH });
    }
    let l_max = a.max_order.unwrap_or_else(|| tree.max_intermediate_order()).max(1);
    let opts = SolveOptions { seed: 0, time_budget: Duration::from_secs_f64(a.timeout.max(0.0)) };
    let mut code = EXIT_OK;
    for l in 1..=l_max {
        let model = build_model_with(&tree, l, &ModelOptions::default()).map_err(usage)?;
        let found = solve(&model, &opts)?;
        let mut line = format!("l = {l}: {}", if found.is_some() { "sat" } else { "unsat" });
        if let Some(sol) = &found {
            let v = verify_solution(&tree, l, sol).map_err(usage)?;
            if !v.is_empty() {
                code = EXIT_MISMATCH;
                line.push_str(&format!(", {} violation(s)", v.len()));
            }
        }
        match brute_force_sat(&tree, l) {
            Ok(b) if b == found.is_some() => line.push_str(", exhaustive search agrees"),
            Ok(_) => {
                code = EXIT_MISMATCH;
                line.push_str(", exhaustive search DISAGREES");
            }
            Err(_) => line.push_str(", too large for exhaustive search"),
        }
        writeln!(out, "{line}").ok();
    }
    Ok(code)
}

fn cmd_bench(a: &BenchArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let kind: BenchKind = a.kind.parse().map_err(usage)?;
    let mut params = BenchParams::defaults(kind);
    params.extents = a.extents.clone();
    params.seed = a.data_seed;
    if let Some(r) = a.rank {
        params.rank = r;
    }
    if let Some(d) = a.density {
        params.density = d;
    }
    let inst = bench_generate(kind, &params).map_err(usage)?;
    if let Some(dir) = &a.out_dir {
        fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
        write(&dir.join("network.txt"), &format!("{}\n", inst.network))?;
        for (name, t) in &inst.inputs {
            let mut buf = Vec::new();
            write_tns(t, &mut buf).map_err(usage)?;
            let file = dir.join(format!("{}.tns", name.replace('\'', "_")));
            fs::write(&file, buf).map_err(|e| usage(format!("{}: {e}", file.display())))?;
        }
    }
    writeln!(
        out,
        "{kind}: {}",
        inst.network.lines().filter(|l| !l.starts_with("extent")).collect::<Vec<_>>().join("; ")
    )
    .ok();
    let p = plan(&inst.tree, &a.schedule)?;
    let o = execute_and_check(&inst.tree, &p, &inst.inputs, &inst.dense, &a.check)?;
    Ok(report_run(out, &p, &o))
}

/// Runs the CLI on `args` (including the program name), writing normal
/// output to `out` and diagnostics to `err`.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let text = e.render().to_string();
            if code == EXIT_OK {
                write!(out, "{text}").ok();
            } else {
                write!(err, "{text}").ok();
            }
            return code;
        }
    };
    let res = match &cli.command {
        Command::Plan(a) => cmd_plan(a, out),
        Command::Run(a) => cmd_run(a, out),
        Command::Verify(a) => cmd_verify(a, out),
        Command::Bench(a) => cmd_bench(a, out),
    };
    match res {
        Ok(code) => code,
        Err(f) => {
            writeln!(err, "error: {}", f.message).ok();
            f.code
        }
    }
}
