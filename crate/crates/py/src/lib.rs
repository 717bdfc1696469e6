//! Python bindings: networks, sparse tensors, scheduling and execution.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::time::Duration;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ::tenfuse::bench::synthetic;
use ::tenfuse::constraints::{search_min_order, ModelOptions, ScheduleSolution, SolveError, SolveOptions};
use ::tenfuse::executor::{self, Binding, ExecStats};
use ::tenfuse::lowering::{lower, print_ir, IrNode};
use ::tenfuse::network::{parse_network, ContractionTree};
use ::tenfuse::tensor::{read_tns, write_tns, ModeOrder, Shape, SparseTensor};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A contraction tree parsed from the text network format.
#[pyclass(name = "Network", module = "tenfuse", frozen)]
struct PyNetwork {
    tree: ContractionTree,
}

#[pymethods]
impl PyNetwork {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        Ok(Self { tree: parse_network(text).map_err(value_err)? })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        Self::new(&text)
    }

    /// Statements in input order.
    fn contractions(&self) -> Vec<String> {
        self.tree.contractions().iter().map(|c| self.tree.render_contraction(c)).collect()
    }

    /// Index name -> extent.
    fn extents(&self) -> BTreeMap<String, usize> {
        self.tree.indices().iter().map(|i| (i.name.clone(), i.extent)).collect()
    }

    /// Input tensor name -> shape.
    fn inputs(&self) -> BTreeMap<String, Vec<usize>> {
        self.tree.inputs().into_iter().map(|r| (r.tensor.clone(), self.tree.ref_shape(r))).collect()
    }

    fn max_intermediate_order(&self) -> usize {
        self.tree.max_intermediate_order()
    }

    fn to_json(&self) -> String {
        self.tree.to_json()
    }

    fn __len__(&self) -> usize {
        self.tree.len()
    }

    fn __repr__(&self) -> String {
        format!("Network({} contractions)", self.tree.len())
    }
}

/// COO sparse tensor with sorted, unique coordinates.
#[pyclass(name = "Tensor", module = "tenfuse", frozen)]
struct PyTensor {
    inner: SparseTensor,
}

#[pymethods]
impl PyTensor {
    /// Builds from 0-based coordinates; duplicates are summed.
    #[new]
    #[pyo3(signature = (shape, coords, values))]
    fn new(shape: Vec<usize>, coords: Vec<Vec<usize>>, values: Vec<f64>) -> PyResult<Self> {
        if coords.len() != values.len() {
            return Err(PyValueError::new_err(format!("{} coordinates but {} values", coords.len(), values.len())));
        }
        let shape = Shape::new(shape).map_err(value_err)?;
        let inner = SparseTensor::from_entries(shape, coords.into_iter().zip(values)).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (path, shape=None))]
    fn read_tns(path: &str, shape: Option<Vec<usize>>) -> PyResult<Self> {
        let f = File::open(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        let shape = shape.map(Shape::new).transpose().map_err(value_err)?;
        Ok(Self { inner: read_tns(BufReader::new(f), shape).map_err(value_err)? })
    }

    /// Uniformly random coordinates with values in [-1, 1].
    #[staticmethod]
    #[pyo3(signature = (shape, density, seed=0))]
    fn synthetic(shape: Vec<usize>, density: f64, seed: u64) -> PyResult<Self> {
        Ok(Self { inner: synthetic(&shape, density, seed).map_err(value_err)? })
    }

    fn write_tns(&self, path: &str) -> PyResult<()> {
        let f = File::create(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        write_tns(&self.inner, BufWriter::new(f)).map_err(value_err)
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().extents().to_vec()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.inner.nnz()
    }

    fn get(&self, coords: Vec<usize>) -> PyResult<f64> {
        let ext = self.inner.shape().extents();
        if coords.len() != ext.len() || coords.iter().zip(ext).any(|(c, e)| c >= e) {
            return Err(PyValueError::new_err(format!("coordinates {coords:?} outside shape {ext:?}")));
        }
        Ok(self.inner.get(&coords))
    }

    /// `[(coords, value), ...]` in row-major order.
    fn entries(&self) -> Vec<(Vec<usize>, f64)> {
        self.inner.entries().map(|(c, v)| (c.to_vec(), v)).collect()
    }

    /// Row-major dense cells.
    fn to_dense(&self) -> Vec<f64> {
        self.inner.to_dense()
    }

    fn __eq__(&self, other: &PyTensor) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?}, nnz={})", self.inner.shape().extents(), self.inner.nnz())
    }
}

/// A solved schedule with its lowered IR.
#[pyclass(name = "Schedule", module = "tenfuse", frozen)]
struct PySchedule {
    solution: ScheduleSolution,
    ir: IrNode,
    report: String,
}

#[pymethods]
impl PySchedule {
    /// Bound on intermediate order the schedule was found at.
    #[getter]
    fn bound(&self) -> usize {
        self.solution.bound
    }

    #[getter]
    fn ir(&self) -> String {
        print_ir(&self.ir)
    }

    fn ir_json(&self) -> String {
        self.ir.to_json()
    }

    fn report_json(&self) -> String {
        self.report.clone()
    }

    fn __repr__(&self) -> String {
        format!("Schedule(bound={})", self.solution.bound)
    }
}

#[pyclass(name = "ExecStats", module = "tenfuse", frozen)]
struct PyStats {
    inner: ExecStats,
}

#[pymethods]
impl PyStats {
    #[getter]
    fn multiply_adds(&self) -> u64 {
        self.inner.multiply_add_count
    }

    #[getter]
    fn max_workspace_cells(&self) -> usize {
        self.inner.max_workspace_cells
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        format!(
            "ExecStats(multiply_adds={}, max_workspace_cells={})",
            self.inner.multiply_add_count, self.inner.max_workspace_cells
        )
    }
}

/// Finds the smallest intermediate-order bound with a fused schedule and
/// lowers it.
#[pyfunction]
#[pyo3(signature = (network, max_order=None, root_layout=None, seed=0, timeout=10.0))]
fn plan(
    network: &PyNetwork,
    max_order: Option<usize>,
    root_layout: Option<Vec<String>>,
    seed: u64,
    timeout: f64,
) -> PyResult<PySchedule> {
    let tree = &network.tree;
    let mut model_opts = ModelOptions::default();
    if let Some(names) = root_layout {
        let root = tree.root_result();
        let modes = names
            .iter()
            .map(|n| {
                tree.index_id(n)
                    .and_then(|k| root.position(k))
                    .ok_or_else(|| PyValueError::new_err(format!("{n} is not an index of {}", root.tensor)))
            })
            .collect::<PyResult<Vec<usize>>>()?;
        model_opts.pinned_layouts.insert(root.tensor.clone(), ModeOrder::new(modes).map_err(value_err)?);
    }
    if !(timeout.is_finite() && timeout > 0.0) {
        return Err(PyValueError::new_err("timeout must be positive"));
    }
    let opts = SolveOptions { seed, time_budget: Duration::from_secs_f64(timeout) };
    let (_, solution) = search_min_order(tree, max_order, &model_opts, &opts).map_err(|e| match e {
        SolveError::Unsat { .. } | SolveError::Timeout { .. } => PyRuntimeError::new_err(e.to_string()),
        other => value_err(other),
    })?;
    let ir = lower(tree, &solution).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let report = solution.report(tree).to_json();
    Ok(PySchedule { solution, ir, report })
}

fn input_map(inputs: BTreeMap<String, PyRef<'_, PyTensor>>) -> BTreeMap<String, SparseTensor> {
    inputs.into_iter().map(|(k, v)| (k, v.inner.clone())).collect()
}

/// Executes `schedule` on `inputs`; returns the result and counters.
#[pyfunction]
#[pyo3(signature = (network, schedule, inputs, dense=None))]
fn run(
    network: &PyNetwork,
    schedule: &PySchedule,
    inputs: BTreeMap<String, PyRef<'_, PyTensor>>,
    dense: Option<BTreeSet<String>>,
) -> PyResult<(PyTensor, PyStats)> {
    let inputs = input_map(inputs);
    let binding = Binding::for_solution(&network.tree, &schedule.solution, &inputs, &dense.unwrap_or_default())
        .map_err(value_err)?;
    let (t, stats) = executor::execute(&network.tree, &schedule.ir, &binding).map_err(value_err)?;
    Ok((PyTensor { inner: t }, PyStats { inner: stats }))
}

/// Reference result by dense n-ary evaluation.
#[pyfunction]
fn oracle(network: &PyNetwork, inputs: BTreeMap<String, PyRef<'_, PyTensor>>) -> PyResult<PyTensor> {
    let t = executor::oracle_nary(&network.tree, &input_map(inputs)).map_err(value_err)?;
    Ok(PyTensor { inner: t })
}

/// Pointwise tolerance check; returns `(passed, max_abs_error)`.
#[pyfunction]
#[pyo3(signature = (a, b, rel_tol=1e-10, abs_tol=1e-12))]
fn compare(a: &PyTensor, b: &PyTensor, rel_tol: f64, abs_tol: f64) -> PyResult<(bool, f64)> {
    let r = executor::compare(&a.inner, &b.inner, rel_tol, abs_tol).map_err(value_err)?;
    Ok((r.pass, r.max_abs_error))
}

#[pymodule(name = "tenfuse")]
fn tenfuse_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyTensor>()?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyStats>()?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    Ok(())
}
