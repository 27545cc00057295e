//! Python bindings. Matrices cross the boundary as lists of rows, so any
//! sequence of float sequences (including a 2-D numpy array) is accepted.

use loco_core::bench::{run_grid, BenchConfig, BenchMethod};
use loco_core::chain::{logspace as core_logspace, norm_error_sweep as core_sweep};
use loco_core::recovery::{rotation_recovery_demo as core_demo, temperature_sweep as core_tsweep, RecoveryConfig};
use loco_core::{adapter, checkpoint, skew, ChainMode, LocoAdapter, LowRankSkewFactors, Matrix, Rng, RotationChain, TemperatureParam};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(loco_py, LocoError, PyException, "Raised for any failed loco operation.");

fn py_err(e: loco_core::LocoError) -> PyErr {
    LocoError::new_err(e.to_string())
}

type Rows = Vec<Vec<f64>>;

fn to_matrix(rows: Rows) -> PyResult<Matrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("ragged matrix: rows differ in length"));
    }
    Matrix::from_vec(r, c, rows.into_iter().flatten().collect()).map_err(py_err)
}

fn to_rows(m: &Matrix) -> Rows {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn parse_mode(mode: &str) -> PyResult<ChainMode> {
    match mode {
        "exact" => Ok(ChainMode::Exact),
        "first_order" | "first-order" => Ok(ChainMode::FirstOrder),
        other => Err(PyValueError::new_err(format!(
            "mode must be 'exact' or 'first_order', got {other:?}"
        ))),
    }
}

fn mode_name(m: ChainMode) -> &'static str {
    match m {
        ChainMode::Exact => "exact",
        ChainMode::FirstOrder => "first_order",
    }
}

fn temp(t: f64) -> PyResult<TemperatureParam> {
    TemperatureParam::new(t).map_err(py_err)
}

/// Skew generator factors `(U, V)` of one rotation.
#[pyclass(name = "Factors", module = "loco_py", skip_from_py_object)]
#[derive(Clone)]
struct PyFactors(LowRankSkewFactors);

#[pymethods]
impl PyFactors {
    #[new]
    fn new(u: Rows, v: Rows) -> PyResult<Self> {
        Ok(Self(LowRankSkewFactors::new(to_matrix(u)?, to_matrix(v)?).map_err(py_err)?))
    }

    /// Both factors Gaussian.
    #[staticmethod]
    #[pyo3(signature = (seed, d, r, std = 1.0))]
    fn random(seed: u64, d: usize, r: usize, std: f64) -> PyResult<Self> {
        Ok(Self(LowRankSkewFactors::random(&mut Rng::new(seed), d, r, std).map_err(py_err)?))
    }

    /// Identity-start factors: Gaussian `U`, zero `V`.
    #[staticmethod]
    #[pyo3(signature = (seed, d, r, std = skew::DEFAULT_INIT_STD))]
    fn init(seed: u64, d: usize, r: usize, std: f64) -> PyResult<Self> {
        Ok(Self(skew::init_factors(&mut Rng::new(seed), d, r, std).map_err(py_err)?))
    }

    #[getter]
    fn u(&self) -> Rows {
        to_rows(self.0.u())
    }

    #[getter]
    fn v(&self) -> Rows {
        to_rows(self.0.v())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn rank(&self) -> usize {
        self.0.rank()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.0.param_count()
    }

    /// Dense `A = U·Vᵀ − V·Uᵀ`.
    fn skew(&self) -> PyResult<Rows> {
        Ok(to_rows(&loco_core::build_skew(&self.0).map_err(py_err)?))
    }

    /// Dense Cayley rotation at temperature `t`, via the Woodbury form.
    #[pyo3(signature = (t = 1.0))]
    fn rotation(&self, t: f64) -> PyResult<Rows> {
        let core = loco_core::cayley_woodbury(&self.0, temp(t)?).map_err(py_err)?;
        Ok(to_rows(&loco_core::materialize(&core)))
    }

    /// Rotates the rows of `xs` without forming the rotation.
    #[pyo3(signature = (xs, t = 1.0))]
    fn apply(&self, xs: Rows, t: f64) -> PyResult<Rows> {
        let core = loco_core::cayley_woodbury(&self.0, temp(t)?).map_err(py_err)?;
        Ok(to_rows(&loco_core::apply_rotation(&core, &to_matrix(xs)?).map_err(py_err)?))
    }

    fn __repr__(&self) -> String {
        format!("Factors(d={}, r={})", self.0.dim(), self.0.rank())
    }
}

/// An ordered chain of rotations evaluated exactly or to first order.
#[pyclass(name = "Chain", module = "loco_py", skip_from_py_object)]
#[derive(Clone)]
struct PyChain(RotationChain);

#[pymethods]
impl PyChain {
    #[new]
    #[pyo3(signature = (components, mode = "first_order", t = 1.0))]
    fn new(components: Vec<PyRef<'_, PyFactors>>, mode: &str, t: f64) -> PyResult<Self> {
        let comps = components.iter().map(|f| f.0.clone()).collect();
        let chain = RotationChain::new(comps, parse_mode(mode)?).map_err(py_err)?;
        Ok(Self(chain.with_temperature(temp(t)?)))
    }

    /// Rows of `xs` times `(R₁⋯Rₙ)ᵀ`, or its first-order approximation.
    fn apply(&self, xs: Rows) -> PyResult<Rows> {
        Ok(to_rows(&self.0.apply(&to_matrix(xs)?).map_err(py_err)?))
    }

    /// Orthogonality defect of the first-order chain and its bound.
    fn deviation<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let rep = loco_core::deviation_report(&self.0).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("n", rep.n)?;
        d.set_item("gamma", rep.gamma)?;
        d.set_item("deviation", rep.deviation)?;
        d.set_item("bound", rep.bound)?;
        d.set_item("satisfied", rep.satisfied)?;
        Ok(d)
    }

    #[getter]
    fn components(&self) -> Vec<PyFactors> {
        self.0.components().iter().cloned().map(PyFactors).collect()
    }

    #[getter]
    fn mode(&self) -> &'static str {
        mode_name(self.0.mode())
    }

    #[setter]
    fn set_mode(&mut self, mode: &str) -> PyResult<()> {
        self.0.set_mode(parse_mode(mode)?);
        Ok(())
    }

    #[getter]
    fn temperature(&self) -> f64 {
        self.0.temperature().value()
    }

    #[setter]
    fn set_temperature(&mut self, t: f64) -> PyResult<()> {
        self.0.set_temperature(temp(t)?);
        Ok(())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.0.param_count()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Chain(n={}, d={}, mode={:?}, t={})",
            self.0.len(),
            self.0.dim(),
            mode_name(self.0.mode()),
            self.0.temperature().value()
        )
    }
}

/// Frozen weight `W₀` with a trainable rotation chain: `f(x) = W₀·R·x`.
#[pyclass(name = "Adapter", module = "loco_py", skip_from_py_object)]
#[derive(Clone)]
struct PyAdapter(LocoAdapter);

#[pymethods]
impl PyAdapter {
    #[new]
    fn new(w0: Rows, chain: PyRef<'_, PyChain>) -> PyResult<Self> {
        Ok(Self(LocoAdapter::new(to_matrix(w0)?, chain.0.clone()).map_err(py_err)?))
    }

    /// Identity-initialized adapter with `n` components of rank `r`.
    #[staticmethod]
    #[pyo3(signature = (seed, w0, r, n, std = skew::DEFAULT_INIT_STD))]
    fn init(seed: u64, w0: Rows, r: usize, n: usize, std: f64) -> PyResult<Self> {
        let a = LocoAdapter::init(&mut Rng::new(seed), to_matrix(w0)?, r, n, std).map_err(py_err)?;
        Ok(Self(a))
    }

    fn forward(&self, xs: Rows) -> PyResult<Rows> {
        Ok(to_rows(&adapter::forward(&self.0, &to_matrix(xs)?).map_err(py_err)?))
    }

    /// Gradients `(dU, dV)`, one entry per component, for the loss gradient
    /// `upstream` at the forward output.
    fn backward(&self, xs: Rows, upstream: Rows) -> PyResult<(Vec<Rows>, Vec<Rows>)> {
        let g = adapter::backward(&self.0, &to_matrix(xs)?, &to_matrix(upstream)?).map_err(py_err)?;
        Ok((g.du.iter().map(to_rows).collect(), g.dv.iter().map(to_rows).collect()))
    }

    fn sgd_step(&mut self, du: Vec<Rows>, dv: Vec<Rows>, lr: f64) -> PyResult<()> {
        let g = adapter::FactorGradients {
            du: du.into_iter().map(to_matrix).collect::<PyResult<_>>()?,
            dv: dv.into_iter().map(to_matrix).collect::<PyResult<_>>()?,
        };
        adapter::sgd_step(&mut self.0, &g, lr).map_err(py_err)
    }

    /// One SGD step on the mean squared error against `ys`; returns the loss
    /// before the step.
    fn train_step(&mut self, xs: Rows, ys: Rows, lr: f64) -> PyResult<f64> {
        let (xs, ys) = (to_matrix(xs)?, to_matrix(ys)?);
        let out = adapter::forward(&self.0, &xs).map_err(py_err)?;
        let loss = adapter::mse(&out, &ys).map_err(py_err)?;
        let g = adapter::backward(&self.0, &xs, &adapter::mse_grad(&out, &ys).map_err(py_err)?).map_err(py_err)?;
        adapter::sgd_step(&mut self.0, &g, lr).map_err(py_err)?;
        Ok(loss)
    }

    /// `W₀·R₁⋯Rₙ` as a single dense weight.
    fn merge(&self) -> PyResult<Rows> {
        Ok(to_rows(&adapter::merge(&self.0).map_err(py_err)?))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::save_file(&self.0, path).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self(checkpoint::load_file(path).map_err(py_err)?))
    }

    #[getter]
    fn w0(&self) -> Rows {
        to_rows(self.0.w0())
    }

    #[getter]
    fn chain(&self) -> PyChain {
        PyChain(self.0.chain().clone())
    }

    #[getter]
    fn mode(&self) -> &'static str {
        mode_name(self.0.mode())
    }

    #[setter]
    fn set_mode(&mut self, mode: &str) -> PyResult<()> {
        self.0.set_mode(parse_mode(mode)?);
        Ok(())
    }

    #[getter]
    fn temperature(&self) -> f64 {
        self.0.temperature().value()
    }

    #[setter]
    fn set_temperature(&mut self, t: f64) -> PyResult<()> {
        self.0.set_temperature(temp(t)?);
        Ok(())
    }

    fn __repr__(&self) -> String {
        format!(
            "Adapter(k={}, d={}, n={}, t={})",
            self.0.out_dim(),
            self.0.dim(),
            self.0.chain().len(),
            self.0.temperature().value()
        )
    }
}

/// Dense Cayley transform `(I − A)⁻¹(I + A)` of a skew matrix.
#[pyfunction]
fn cayley_naive(a: Rows) -> PyResult<Rows> {
    Ok(to_rows(&loco_core::cayley_naive(&to_matrix(a)?).map_err(py_err)?))
}

#[pyfunction]
fn logspace(start: f64, stop: f64, count: usize) -> PyResult<Vec<f64>> {
    core_logspace(start, stop, count).map_err(py_err)
}

/// `[(eps, mean_rel_err, std_rel_err), …]`.
#[pyfunction]
fn norm_error_sweep(
    seed: u64,
    d: usize,
    r: usize,
    n: usize,
    eps: Vec<f64>,
    trials: usize,
) -> PyResult<Vec<(f64, f64, f64)>> {
    let pts = core_sweep(seed, d, r, n, &eps, trials).map_err(py_err)?;
    Ok(pts.iter().map(|p| (p.eps, p.mean_rel_error, p.std_rel_error)).collect())
}

/// Trains a fresh adapter to recover a hidden rotation. Returns a dict with
/// `losses`, `adapter`, `xs`, `ys` and `pretrained_loss`.
#[pyfunction]
#[pyo3(signature = (seed = 0, k = 16, d = 32, r = 2, n = 2, steps = 2000, lr = None, batch = None, target_std = None, init_std = None))]
#[allow(clippy::too_many_arguments)]
fn rotation_recovery_demo<'py>(
    py: Python<'py>,
    seed: u64,
    k: usize,
    d: usize,
    r: usize,
    n: usize,
    steps: usize,
    lr: Option<f64>,
    batch: Option<usize>,
    target_std: Option<f64>,
    init_std: Option<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let def = RecoveryConfig::default();
    let cfg = RecoveryConfig {
        seed,
        k,
        d,
        r,
        n,
        steps,
        lr: lr.unwrap_or(def.lr),
        batch: batch.unwrap_or(def.batch),
        target_std: target_std.unwrap_or(def.target_std),
        init_std: init_std.unwrap_or(def.init_std),
    };
    let run = py.detach(|| core_demo(&cfg)).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("losses", run.losses.clone())?;
    out.set_item("pretrained_loss", run.pretrained_loss)?;
    out.set_item("xs", to_rows(&run.xs))?;
    out.set_item("ys", to_rows(&run.ys))?;
    out.set_item("adapter", Py::new(py, PyAdapter(run.adapter))?)?;
    Ok(out)
}

/// `[(t, loss, norm_dev), …]` for the adapter on data `(xs, ys)`.
#[pyfunction]
#[pyo3(signature = (adapter, xs, ys, ts, mode = "first_order"))]
fn temperature_sweep(
    adapter: PyRef<'_, PyAdapter>,
    xs: Rows,
    ys: Rows,
    ts: Vec<f64>,
    mode: &str,
) -> PyResult<Vec<(f64, f64, f64)>> {
    let pts = core_tsweep(&adapter.0, &to_matrix(xs)?, &to_matrix(ys)?, &ts, parse_mode(mode)?).map_err(py_err)?;
    Ok(pts.iter().map(|p| (p.t, p.loss, p.norm_dev)).collect())
}

/// Runs the benchmark grid; one dict per record.
#[pyfunction(name = "bench")]
#[pyo3(signature = (methods, d, r, n = vec![1], batch = 64, repeats = 5, warmup = 2, seed = 0, parallel = false))]
#[allow(clippy::too_many_arguments)]
fn run_bench<'py>(
    py: Python<'py>,
    methods: Vec<String>,
    d: Vec<usize>,
    r: Vec<usize>,
    n: Vec<usize>,
    batch: usize,
    repeats: usize,
    warmup: usize,
    seed: u64,
    parallel: bool,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let methods = methods
        .iter()
        .map(|m| m.parse::<BenchMethod>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    let cfg = BenchConfig {
        seed,
        batch,
        repeats,
        warmup,
        parallel,
    };
    let records = py.detach(|| run_grid(&methods, &d, &r, &n, &cfg)).map_err(py_err)?;
    records
        .iter()
        .map(|rec| {
            let d = PyDict::new(py);
            d.set_item("method", rec.method.as_str())?;
            d.set_item("d", rec.d)?;
            d.set_item("r_or_b", rec.r_or_b)?;
            d.set_item("n", rec.n)?;
            d.set_item("batch", rec.batch)?;
            d.set_item("wall_ns_median", rec.wall_ns_median)?;
            d.set_item("wall_ns_min", rec.wall_ns_min)?;
            d.set_item("wall_ns_max", rec.wall_ns_max)?;
            d.set_item("peak_bytes", rec.peak_bytes)?;
            d.set_item("largest_alloc_bytes", rec.largest_alloc_bytes)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn loco_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("LocoError", m.py().get_type::<LocoError>())?;
    m.add_class::<PyFactors>()?;
    m.add_class::<PyChain>()?;
    m.add_class::<PyAdapter>()?;
    m.add_function(wrap_pyfunction!(cayley_naive, m)?)?;
    m.add_function(wrap_pyfunction!(logspace, m)?)?;
    m.add_function(wrap_pyfunction!(norm_error_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(rotation_recovery_demo, m)?)?;
    m.add_function(wrap_pyfunction!(temperature_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    Ok(())
}
