//! Python bindings: groups, systems, twisted measures, operator norms and
//! the run pipelines.

use std::sync::Arc;

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sl2lab::cli::{self, Command, RunConfig};
use sl2lab::decouple::{decouple_case, fit_decoupling_constant};
use sl2lab::measures::{self as m, GroupMeasure, MeasureParams};
use sl2lab::modgroup::{enumerate_group, new_space_projector, GroupTable};
use sl2lab::spectral::{self as sp, ConvOperator, EigenOptions, NormMethod, Subspace, SweepConfig};
use sl2lab::symdyn::{self as sd, BasePoint, SystemConfig, SystemSpec, Word};
use sl2lab::{Error, Guards};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_)
        | Error::Argument(_)
        | Error::Resource(_)
        | Error::InvalidElement(_)
        | Error::InvalidSystem(_)
        | Error::Inadmissible(_)
        | Error::ModulusMismatch(..) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn guards(max_modulus: Option<u32>) -> Guards {
    let mut g = Guards::default();
    if let Some(m) = max_modulus {
        g.max_modulus = m;
    }
    g
}

fn base_point(x: Option<f64>) -> PyResult<BasePoint> {
    match x {
        None => Ok(BasePoint::Midpoint),
        Some(v) if (0.0..=1.0).contains(&v) => Ok(BasePoint::Value(v)),
        Some(v) => Err(PyValueError::new_err(format!("base point {v} is outside [0, 1]"))),
    }
}

fn subspace(name: &str) -> PyResult<Subspace> {
    match name {
        "full" => Ok(Subspace::Full),
        "mean_zero" => Ok(Subspace::MeanZero),
        "new" | "new_space" => Ok(Subspace::NewSpace),
        other => Err(PyValueError::new_err(format!(
            "subspace must be \"full\", \"mean_zero\" or \"new\", got \"{other}\""
        ))),
    }
}

/// `SL_2(Z/q)` with its multiplication table.
#[pyclass(name = "Group", frozen)]
struct PyGroup {
    inner: Arc<GroupTable>,
}

#[pymethods]
impl PyGroup {
    #[new]
    #[pyo3(signature = (q, max_modulus=None))]
    fn new(q: u32, max_modulus: Option<u32>) -> PyResult<Self> {
        let inner = enumerate_group(q, &guards(max_modulus)).map_err(to_py)?;
        Ok(Self { inner: Arc::new(inner) })
    }

    #[getter]
    fn q(&self) -> u32 {
        self.inner.q()
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order()
    }

    /// Dimension of the new subspace `E_q`.
    fn new_space_dimension(&self) -> PyResult<usize> {
        Ok(new_space_projector(&self.inner).map_err(to_py)?.dimension())
    }

    fn element(&self, i: u32) -> PyResult<(u32, u32, u32, u32)> {
        if i as usize >= self.inner.order() {
            return Err(PyValueError::new_err(format!("index {i} out of range")));
        }
        let [a, b, c, d] = self.inner.element(i).entries();
        Ok((a, b, c, d))
    }

    fn index_of(&self, a: i64, b: i64, c: i64, d: i64) -> PyResult<u32> {
        let m = sl2lab::modgroup::reduce_mod([[a, b], [c, d]], self.inner.q()).map_err(to_py)?;
        self.inner
            .index_of(&m)
            .ok_or_else(|| PyValueError::new_err("matrix is not in the group"))
    }

    fn mul(&self, i: u32, j: u32) -> u32 {
        self.inner.mul(i, j)
    }

    fn inverse(&self, i: u32) -> u32 {
        self.inner.inverse(i)
    }

    fn __len__(&self) -> usize {
        self.inner.order()
    }

    fn __repr__(&self) -> String {
        format!("Group(q={}, order={})", self.inner.q(), self.inner.order())
    }
}

/// A Zaremba or Schottky symbolic system.
#[pyclass(name = "System", frozen)]
struct PySystem {
    config: SystemConfig,
    spec: SystemSpec,
}

#[pymethods]
impl PySystem {
    #[staticmethod]
    #[pyo3(signature = (digits, base_point=None))]
    fn zaremba(digits: Vec<u32>, base_point: Option<f64>) -> PyResult<Self> {
        Self::build(SystemConfig::zaremba(&digits).with_base_point(self::base_point(base_point)?))
    }

    #[staticmethod]
    #[pyo3(signature = (base_point=None))]
    fn schottky(base_point: Option<f64>) -> PyResult<Self> {
        Self::build(SystemConfig::default_schottky().with_base_point(self::base_point(base_point)?))
    }

    /// Builds a system from its JSON config block.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let config: SystemConfig = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Self::build(config)
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.spec.letters().iter().map(|l| l.label.clone()).collect()
    }

    fn count_words(&self, n: usize) -> u128 {
        self.spec.count_words(n)
    }

    /// Critical exponent from the partition function at word length `n`.
    #[pyo3(signature = (n=10, tol=1e-6))]
    fn delta(&self, n: usize, tol: f64) -> PyResult<f64> {
        Ok(sd::estimate_delta(&self.spec, n, tol, &Guards::default())
            .map_err(to_py)?
            .delta)
    }

    /// Contraction factor per letter.
    fn contraction(&self) -> PyResult<f64> {
        Ok(sd::estimate_contraction(&self.spec).map_err(to_py)?.per_letter)
    }

    /// Cocycle of a word given by labels, outermost letter first.
    fn cocycle(&self, labels: Vec<String>, q: u32) -> PyResult<(u32, u32, u32, u32)> {
        let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
        let word = self.spec.word_by_labels(&refs).map_err(to_py)?;
        let [a, b, c, d] = m::cocycle(&self.spec, &word, q).map_err(to_py)?.entries();
        Ok((a, b, c, d))
    }

    fn __repr__(&self) -> String {
        format!("System({})", serde_json::to_string(&self.config).unwrap_or_default())
    }
}

impl PySystem {
    fn build(config: SystemConfig) -> PyResult<Self> {
        let spec = sd::build_system(&config).map_err(to_py)?;
        Ok(Self { config, spec })
    }
}

/// A complex measure on `SL_2(Z/q)`.
#[pyclass(name = "Measure", frozen)]
struct PyMeasure {
    inner: GroupMeasure,
}

#[pymethods]
impl PyMeasure {
    #[getter]
    fn q(&self) -> u32 {
        self.inner.q()
    }

    #[getter]
    fn l1(&self) -> f64 {
        self.inner.l1()
    }

    #[getter]
    fn l2(&self) -> f64 {
        self.inner.l2()
    }

    fn support(&self) -> Vec<u32> {
        self.inner.support()
    }

    fn get(&self, g: u32) -> Complex64 {
        self.inner.get(g)
    }

    fn to_list(&self) -> Vec<Complex64> {
        self.inner.to_dense()
    }

    fn __repr__(&self) -> String {
        format!(
            "Measure(q={}, support={}, l1={:.6e})",
            self.inner.q(),
            self.inner.support_len(),
            self.inner.l1()
        )
    }
}

/// The twisted measure `mu` with `r` letters after a prefix of
/// `prefix_len` copies of the first letter.
#[pyfunction]
#[pyo3(signature = (system, group, r, a, b=0.0, prefix_len=0, x=None))]
fn build_mu(
    system: &PySystem,
    group: &PyGroup,
    r: usize,
    a: f64,
    b: f64,
    prefix_len: usize,
    x: Option<f64>,
) -> PyResult<PyMeasure> {
    let prefix = system.spec.word(vec![0; prefix_len]).map_err(to_py)?;
    let p = MeasureParams::new(&system.spec, r, a)
        .with_prefix(prefix)
        .with_b(b)
        .with_x(base_point(x)?);
    let inner = m::build_mu(&p, &group.inner, &Guards::default()).map_err(to_py)?;
    Ok(PyMeasure { inner })
}

/// The untwisted-prefix measure `mu_1` with `r` letters.
#[pyfunction]
fn build_mu1(system: &PySystem, group: &PyGroup, r: usize, a: f64) -> PyResult<PyMeasure> {
    let inner = m::build_mu1(
        &MeasureParams::new(&system.spec, r, a),
        &group.inner,
        &Guards::default(),
    )
    .map_err(to_py)?;
    Ok(PyMeasure { inner })
}

#[pyfunction]
fn measure_from_pairs(group: &PyGroup, pairs: Vec<(u32, Complex64)>) -> PyResult<PyMeasure> {
    let n = group.inner.order() as u32;
    if let Some((g, _)) = pairs.iter().find(|(g, _)| *g >= n) {
        return Err(PyValueError::new_err(format!("index {g} out of range")));
    }
    Ok(PyMeasure {
        inner: GroupMeasure::from_pairs(&group.inner, pairs),
    })
}

#[pyfunction]
fn convolve(group: &PyGroup, mu: &PyMeasure, nu: &PyMeasure) -> PyResult<PyMeasure> {
    let inner = m::convolve(&group.inner, &mu.inner, &nu.inner).map_err(to_py)?;
    Ok(PyMeasure { inner })
}

/// Operator norm of convolution by `mu` on a subspace of `L^2(G)`.
#[pyfunction]
#[pyo3(signature = (group, mu, subspace="mean_zero", tol=1e-8, max_iter=5000, seed=0x5eed, power=false))]
#[allow(clippy::too_many_arguments)]
fn operator_norm<'py>(
    py: Python<'py>,
    group: &PyGroup,
    mu: &PyMeasure,
    subspace: &str,
    tol: f64,
    max_iter: usize,
    seed: u64,
    power: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = EigenOptions {
        method: if power { NormMethod::Power } else { NormMethod::Lanczos },
        tol,
        max_iter,
        seed,
        ..EigenOptions::default()
    };
    let op = ConvOperator::new(&group.inner, mu.inner.clone(), self::subspace(subspace)?).map_err(to_py)?;
    let r = py.detach(|| sp::operator_norm(&op, &opts)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("q", r.q)?;
    d.set_item("dim", r.dim)?;
    d.set_item("l1", r.l1)?;
    d.set_item("norm", r.norm)?;
    d.set_item("relative_gap", r.relative_gap)?;
    d.set_item("iterations", r.iterations)?;
    d.set_item("residual", r.residual)?;
    Ok(d)
}

/// Fits the decoupling constant and checks domination at one `(L, R', q)`.
#[pyfunction]
fn decouple<'py>(
    py: Python<'py>,
    system: &PySystem,
    group: &PyGroup,
    l: usize,
    r_prime: usize,
    a: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let g = Guards::default();
    let (fit, case) = py
        .detach(|| {
            let fit = fit_decoupling_constant(&system.spec, a, &g)?;
            let case = decouple_case(&system.spec, &group.inner, l, r_prime, &fit, &g)?;
            Ok::<_, Error>((fit, case))
        })
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("c", fit.c)?;
    d.set_item("gamma", fit.gamma)?;
    d.set_item("K", fit.flatness_k(l))?;
    d.set_item("violations", case.domination.violations)?;
    d.set_item("min_slack", case.domination.min_slack)?;
    d.set_item("mass_ratio", case.mass_ratio())?;
    d.set_item("passed", case.passed())?;
    Ok(d)
}

/// Norm ratio on the new subspace for each modulus. Skipped moduli carry
/// `None` and a reason.
#[pyfunction]
#[pyo3(signature = (system, q_list, l, a, r_coefficient=None))]
fn sweep<'py>(
    py: Python<'py>,
    system: &PySystem,
    q_list: Vec<u32>,
    l: usize,
    a: f64,
    r_coefficient: Option<f64>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = SweepConfig {
        q_list,
        l,
        a,
        b: 0.0,
        prefix: Word::empty(),
        x: BasePoint::Midpoint,
        r_coefficient,
        eigen: EigenOptions::default(),
        record_timings: false,
    };
    let report = py
        .detach(|| sp::main_sweep(&system.spec, &cfg, &Guards::default()))
        .map_err(to_py)?;
    report
        .rows
        .iter()
        .map(|row| {
            let d = PyDict::new(py);
            d.set_item("q", row.q)?;
            d.set_item("ratio", row.ratio)?;
            d.set_item("opnorm_Eq", row.opnorm_eq)?;
            d.set_item("l1_mass", row.l1_mass)?;
            d.set_item("R_used", row.r_used)?;
            d.set_item("skipped_reason", row.skipped_reason.clone())?;
            Ok(d)
        })
        .collect()
}

/// Runs a pipeline from a JSON config and returns the report as JSON.
#[pyfunction]
fn run(py: Python<'_>, command: &str, config_json: &str) -> PyResult<String> {
    let cmd = Command::ALL
        .into_iter()
        .find(|c| c.name() == command)
        .ok_or_else(|| PyValueError::new_err(format!("unknown command \"{command}\"")))?;
    let cfg = RunConfig::from_json_str(config_json).map_err(to_py)?;
    let report = py.detach(|| cli::run(cmd, &cfg)).map_err(to_py)?;
    cli::emit_report(&report, &cfg.outputs.dir).map_err(to_py)?;
    serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn pysl2lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGroup>()?;
    m.add_class::<PySystem>()?;
    m.add_class::<PyMeasure>()?;
    m.add_function(wrap_pyfunction!(build_mu, m)?)?;
    m.add_function(wrap_pyfunction!(build_mu1, m)?)?;
    m.add_function(wrap_pyfunction!(measure_from_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(convolve, m)?)?;
    m.add_function(wrap_pyfunction!(operator_norm, m)?)?;
    m.add_function(wrap_pyfunction!(decouple, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
