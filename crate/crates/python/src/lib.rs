//! Python bindings for `geoshapley`.
//!
//! Matrices cross the boundary as lists of rows (numpy arrays work through
//! the sequence protocol). Python callables can act as predictors; they
//! receive a list of rows and must return one float per row.

use ndarray::{Array2, ArrayView2};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use geoshapley::io::{read_result_json, write_result_json};
use geoshapley::validation::{run_validation, ValidationConfig};
use geoshapley::{
    generate_dataset, intrinsic_effect, ols_fit, rank_features, select_background, svc_recover,
    BackgroundSpec, ExplainOptions, Explainer, GeoShapError, GeoShapleyResult, OlsModel, Predictor,
    SimulatedDataset, TrueModel,
};

create_exception!(geoshapley_py, GeoShapleyError, PyException);

fn err(e: GeoShapError) -> PyErr {
    GeoShapleyError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(GeoShapleyError::new_err("rows have different lengths"));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((flat.len() / ncols.max(1), ncols), flat)
        .map_err(|e| GeoShapleyError::new_err(e.to_string()))
}

fn to_rows(x: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    x.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Column layout: names and which of them are location coordinates.
#[pyclass(name = "GeoSpec", module = "geoshapley_py", from_py_object)]
#[derive(Clone)]
struct PyGeoSpec {
    inner: geoshapley::GeoSpec,
}

#[pymethods]
impl PyGeoSpec {
    #[new]
    fn new(names: Vec<String>, location_cols: Vec<String>) -> PyResult<Self> {
        let geo: Vec<&str> = location_cols.iter().map(String::as_str).collect();
        let inner = geoshapley::GeoSpec::from_names(names, &geo).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    #[getter]
    fn g(&self) -> usize {
        self.inner.g()
    }

    /// Players: the non-location features plus one joint location player.
    #[getter]
    fn q(&self) -> usize {
        self.inner.q()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names()
    }

    #[getter]
    fn geo_names(&self) -> Vec<String> {
        self.inner.geo_names()
    }

    fn __repr__(&self) -> String {
        format!("GeoSpec(features={:?}, location={:?})", self.inner.feature_names(), self.inner.geo_names())
    }
}

/// Ordinary least squares with intercept.
#[pyclass(name = "OlsModel", module = "geoshapley_py", from_py_object)]
#[derive(Clone)]
struct PyOls {
    inner: OlsModel,
}

#[pymethods]
impl PyOls {
    #[staticmethod]
    fn fit(x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<Self> {
        let x = matrix(x)?;
        Ok(Self { inner: ols_fit(x.view(), &y).map_err(err)? })
    }

    /// Intercept first, then one slope per column.
    #[getter]
    fn coefficients(&self) -> Vec<f64> {
        self.inner.coefficients.clone()
    }

    #[getter]
    fn r2(&self) -> f64 {
        self.inner.r2
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let x = matrix(x)?;
        self.inner.predict(x.view()).map_err(err)
    }
}

/// A Python callable used as a model. Calls are serialized under the GIL.
struct CallablePredictor {
    f: Py<PyAny>,
    arity: usize,
}

impl Predictor for CallablePredictor {
    fn arity(&self) -> usize {
        self.arity
    }

    fn predict(&self, x: ArrayView2<'_, f64>) -> geoshapley::Result<Vec<f64>> {
        let n = x.nrows();
        let out = Python::attach(|py| -> PyResult<Vec<f64>> {
            self.f.call1(py, (to_rows(x),))?.extract(py)
        })
        .map_err(|e| GeoShapError::Predictor(format!("python predictor raised: {e}")))?;
        if out.len() != n {
            return Err(GeoShapError::Predictor(format!(
                "python predictor returned {} values for {n} rows",
                out.len()
            )));
        }
        Ok(out)
    }

    fn descriptor(&self) -> String {
        "python".into()
    }

    fn concurrency_safe(&self) -> bool {
        false
    }
}

fn predictor_from(obj: &Bound<'_, PyAny>, arity: usize) -> PyResult<Box<dyn Predictor>> {
    if let Ok(m) = obj.extract::<PyOls>() {
        return Ok(Box::new(m.inner));
    }
    if let Ok(s) = obj.extract::<String>() {
        return match s.as_str() {
            "truemodel" => Ok(Box::new(TrueModel)),
            other => Err(GeoShapleyError::new_err(format!("unknown predictor '{other}'"))),
        };
    }
    if obj.is_callable() {
        return Ok(Box::new(CallablePredictor { f: obj.clone().unbind(), arity }));
    }
    Err(GeoShapleyError::new_err("predictor must be an OlsModel, 'truemodel' or a callable"))
}

/// Attributions for a batch of instances.
#[pyclass(name = "Explanation", module = "geoshapley_py")]
struct PyExplanation {
    inner: GeoShapleyResult,
}

#[pymethods]
impl PyExplanation {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn base_value(&self) -> f64 {
        self.inner.base_value
    }

    #[getter]
    fn prediction(&self) -> Vec<f64> {
        self.inner.prediction.clone()
    }

    #[getter]
    fn phi_geo(&self) -> Vec<f64> {
        self.inner.phi_geo.clone()
    }

    /// One row per instance, one column per non-location feature.
    #[getter]
    fn phi_main(&self) -> Vec<Vec<f64>> {
        self.inner.phi_main.clone()
    }

    #[getter]
    fn phi_geo_interaction(&self) -> Vec<Vec<f64>> {
        self.inner.phi_geo_interaction.clone()
    }

    #[getter]
    fn residual(&self) -> Vec<f64> {
        self.inner.reconstruction_residual.clone()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.metadata.feature_names.clone()
    }

    /// Indices of instances whose explanation failed, with messages.
    #[getter]
    fn skipped(&self) -> Vec<(usize, String)> {
        self.inner.skipped.iter().map(|s| (s.index, s.message.clone())).collect()
    }

    /// base value + phi_GEO per instance.
    fn intrinsic(&self) -> Vec<f64> {
        intrinsic_effect(&self.inner)
    }

    /// `(label, mean |phi|)` sorted by importance.
    fn ranking(&self) -> Vec<(String, f64)> {
        rank_features(&self.inner).into_iter().map(|e| (e.label, e.mean_abs)).collect()
    }

    /// Spatially varying coefficient estimate for feature `j`.
    fn svc(&self, j: usize, spec: &PyGeoSpec, background: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let x = self.inner.instances_array();
        let bg = geoshapley::BackgroundData::uniform(matrix(background)?).map_err(err)?;
        let s = svc_recover(&self.inner, x.view(), j, &spec.inner, &bg, geoshapley::postprocess::DEFAULT_REL_TOL)
            .map_err(err)?;
        Ok(s.beta_hat)
    }

    fn to_json(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        write_result_json(&self.inner, &mut buf).map_err(err)?;
        String::from_utf8(buf).map_err(|e| GeoShapleyError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: read_result_json(text.as_bytes()).map_err(err)? })
    }
}

/// Explains every row of `x`.
#[pyfunction]
#[pyo3(signature = (predictor, x, spec, background = "kmeans:50:0", workers = 1, seed = 0, skip_failures = false))]
#[allow(clippy::too_many_arguments)]
fn explain(
    py: Python<'_>,
    predictor: &Bound<'_, PyAny>,
    x: Vec<Vec<f64>>,
    spec: &PyGeoSpec,
    background: &str,
    workers: usize,
    seed: u64,
    skip_failures: bool,
) -> PyResult<PyExplanation> {
    let x = matrix(x)?;
    let model = predictor_from(predictor, x.ncols())?;
    let bg_spec: BackgroundSpec = background.parse().map_err(err)?;
    let spec = spec.inner.clone();
    let options = ExplainOptions { workers, seed, skip_failures, ..Default::default() };
    let result = py
        .detach(|| {
            let bg = select_background(x.view(), &bg_spec)?;
            Explainer::new(model.as_ref(), spec, bg)?.explain_batch(x.view(), &options)
        })
        .map_err(err)?;
    Ok(PyExplanation { inner: result })
}

/// Background rows chosen by a spec such as `kmeans:50:0` or `full`.
#[pyfunction]
fn background(x: Vec<Vec<f64>>, spec: &str) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let x = matrix(x)?;
    let spec: BackgroundSpec = spec.parse().map_err(err)?;
    let bg = select_background(x.view(), &spec).map_err(err)?;
    Ok((to_rows(bg.rows()), bg.weights().to_vec()))
}

/// The simulated validation dataset as a dict of columns.
#[pyfunction]
#[pyo3(signature = (seed = 0, noise_sd = 1.0, n = None))]
fn simulate<'py>(py: Python<'py>, seed: u64, noise_sd: f64, n: Option<usize>) -> PyResult<Bound<'py, PyDict>> {
    let d = generate_dataset(seed, noise_sd, n).map_err(err)?;
    let out = PyDict::new(py);
    let features = d.features();
    for (j, name) in SimulatedDataset::feature_names().iter().enumerate() {
        out.set_item(name, features.column(j).to_vec())?;
    }
    out.set_item("y_signal", &d.y_signal)?;
    out.set_item("y", &d.y)?;
    out.set_item("f0", &d.f0)?;
    out.set_item("beta1", &d.beta1)?;
    out.set_item("beta2", &d.beta2)?;
    Ok(out)
}

/// Runs the recovery study; returns the report as JSON text.
#[pyfunction]
#[pyo3(signature = (seed = 0, noise_sd = 1.0, n = None, eval = None, background = "kmeans:50:0", workers = 1))]
fn validate(
    py: Python<'_>,
    seed: u64,
    noise_sd: f64,
    n: Option<usize>,
    eval: Option<usize>,
    background: &str,
    workers: usize,
) -> PyResult<String> {
    let config = ValidationConfig {
        seed,
        noise_sd,
        n,
        eval,
        background: background.parse().map_err(err)?,
        workers,
    };
    let run = py.detach(|| run_validation(&config)).map_err(err)?;
    serde_json::to_string(&run.report).map_err(|e| GeoShapleyError::new_err(e.to_string()))
}

/// Converts an effect on the log10 scale to a percentage change.
#[pyfunction]
fn log10_to_percent(phi: f64) -> f64 {
    geoshapley::log10_to_percent(phi)
}

#[pymodule]
fn geoshapley_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("GeoShapleyError", m.py().get_type::<GeoShapleyError>())?;
    m.add_class::<PyGeoSpec>()?;
    m.add_class::<PyOls>()?;
    m.add_class::<PyExplanation>()?;
    m.add_function(wrap_pyfunction!(explain, m)?)?;
    m.add_function(wrap_pyfunction!(background, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(log10_to_percent, m)?)?;
    Ok(())
}
