//! Python module `ofoh`: configuration, pipeline verbs, and the pure
//! numerical operations (attention normalizers, orthogonal split, voting,
//! retrieval metrics).

use std::collections::BTreeMap;
use std::path::PathBuf;

use ofoh::config::RunConfig;
use ofoh::metrics::{self, Embeddings};
use ofoh::{attention, dem1, ensemble, pipeline, Error};
use pyo3::create_exception;
use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

create_exception!(ofoh, OfohError, PyRuntimeError);
create_exception!(ofoh, ConfigError, OfohError);
create_exception!(ofoh, MissingPrerequisiteError, OfohError);
create_exception!(ofoh, NumericalError, OfohError);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Config { .. } => ConfigError::new_err(msg),
        Error::MissingPrerequisite(_) => MissingPrerequisiteError::new_err(msg),
        Error::Numerical(_) => NumericalError::new_err(msg),
        Error::Shape(_) | Error::Contract(_) => PyValueError::new_err(msg),
        _ => OfohError::new_err(msg),
    }
}

type Metrics = BTreeMap<String, f64>;

fn report_dict(r: &metrics::RetrievalReport) -> Metrics {
    BTreeMap::from([
        ("rank1".to_string(), r.rank1),
        ("rank5".to_string(), r.rank5),
        ("map".to_string(), r.map),
    ])
}

/// Pipeline configuration: key=value text over the profile defaults, then overrides.
#[pyclass(name = "RunConfig", module = "ofoh", skip_from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (text = "", overrides = None))]
    fn new(text: &str, overrides: Option<BTreeMap<String, String>>) -> PyResult<Self> {
        let o: Vec<(String, String)> = overrides.unwrap_or_default().into_iter().collect();
        RunConfig::parse_with(text, &o).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (path, overrides = None))]
    fn from_file(path: PathBuf, overrides: Option<BTreeMap<String, String>>) -> PyResult<Self> {
        let o: Vec<(String, String)> = overrides.unwrap_or_default().into_iter().collect();
        RunConfig::parse_file(&path, &o).map(|inner| Self { inner }).map_err(to_py)
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner
            .entries()
            .into_iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
            .ok_or_else(|| PyKeyError::new_err(key.to_string()))
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.set(key, value)
            .map_err(|msg| to_py(Error::Config { line: 0, msg }))?;
        next.validate().map_err(to_py)?;
        self.inner = next;
        Ok(())
    }

    fn entries(&self) -> BTreeMap<String, String> {
        self.inner
            .entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(profile={}, seed={}, out={:?})", self.inner.profile, self.inner.seed, self.inner.out)
    }
}

#[pyfunction]
fn gen_data(py: Python<'_>, cfg: &PyRunConfig) -> PyResult<usize> {
    let c = cfg.inner.clone();
    py.detach(move || pipeline::gen_data(&c)).map(|r| r.len()).map_err(to_py)
}

fn logs(l: Vec<ofoh::train::EpochLog>) -> Vec<Metrics> {
    l.into_iter()
        .map(|e| {
            BTreeMap::from([
                ("epoch".to_string(), e.epoch as f64),
                ("lr".to_string(), e.lr),
                ("id".to_string(), e.id),
                ("triplet".to_string(), e.triplet),
                ("diversity".to_string(), e.diversity),
                ("total".to_string(), e.total),
            ])
        })
        .collect()
}

/// Per-epoch loss components.
#[pyfunction]
fn train_dem1(py: Python<'_>, cfg: &PyRunConfig) -> PyResult<Vec<Metrics>> {
    let c = cfg.inner.clone();
    py.detach(move || pipeline::train_dem1(&c)).map(logs).map_err(to_py)
}

#[pyfunction]
fn train_dem2(py: Python<'_>, cfg: &PyRunConfig) -> PyResult<Vec<Metrics>> {
    let c = cfg.inner.clone();
    py.detach(move || pipeline::train_dem2(&c)).map(logs).map_err(to_py)
}

/// Stacking loss per epoch.
#[pyfunction]
fn train_stack(py: Python<'_>, cfg: &PyRunConfig) -> PyResult<Vec<f64>> {
    let c = cfg.inner.clone();
    py.detach(move || pipeline::train_stack(&c)).map_err(to_py)
}

/// `{model: {rank1, rank5, map}}` for DEM1, DEM2, DEMV, DEMS.
#[pyfunction]
fn evaluate_run(py: Python<'_>, cfg: &PyRunConfig) -> PyResult<BTreeMap<String, Metrics>> {
    let c = cfg.inner.clone();
    let r = py.detach(move || pipeline::eval(&c)).map_err(to_py)?;
    Ok(r.rows.iter().map(|(m, r)| (m.clone(), report_dict(r))).collect())
}

/// Rows of `(study, variant, model, rank1, map)` and the best stacking lambda.
#[pyfunction]
fn ablate(py: Python<'_>, cfg: &PyRunConfig) -> PyResult<(Vec<(String, String, String, f64, f64)>, f64)> {
    let c = cfg.inner.clone();
    let r = py.detach(move || pipeline::ablate(&c)).map_err(to_py)?;
    let rows = r
        .rows
        .iter()
        .map(|x| (x.study.to_string(), x.variant.clone(), x.model.to_string(), x.rank1, x.map))
        .collect();
    Ok((rows, r.best_lambda))
}

#[pyfunction]
fn softmax(z: Vec<f64>) -> PyResult<Vec<f64>> {
    attention::softmax(&z).map_err(to_py)
}

#[pyfunction]
fn sparsemax(z: Vec<f64>) -> PyResult<Vec<f64>> {
    attention::sparsemax(&z).map_err(to_py)
}

/// `(f_lproj, f_lorth)` of `f_l` against `f_g`.
#[pyfunction]
fn orthogonal_decompose(f_l: Vec<f64>, f_g: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    dem1::orthogonal_decompose(&f_l, &f_g).map_err(to_py)
}

#[pyfunction]
fn vote(members: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    ensemble::vote(&members).map_err(to_py)
}

#[pyfunction]
fn pairwise_distances(queries: Vec<Vec<f64>>, gallery: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let d = metrics::pairwise_distances(&queries, &gallery).map_err(to_py)?;
    Ok((0..d.n_queries).map(|i| d.row(i).to_vec()).collect())
}

/// Rank-1, rank-5, mAP and the CMC curve under same-id-same-camera exclusion.
#[pyfunction]
#[pyo3(signature = (query, query_ids, query_cams, gallery, gallery_ids, gallery_cams, cosine = false))]
#[allow(clippy::too_many_arguments)]
fn evaluate(
    query: Vec<Vec<f64>>,
    query_ids: Vec<usize>,
    query_cams: Vec<usize>,
    gallery: Vec<Vec<f64>>,
    gallery_ids: Vec<usize>,
    gallery_cams: Vec<usize>,
    cosine: bool,
) -> PyResult<(Metrics, Vec<f64>)> {
    let q = Embeddings {
        ids: query_ids,
        cams: query_cams,
        descriptors: query,
    };
    let g = Embeddings {
        ids: gallery_ids,
        cams: gallery_cams,
        descriptors: gallery,
    };
    let r = metrics::evaluate(&q, &g, cosine).map_err(to_py)?;
    Ok((report_dict(&r), r.cmc.clone()))
}

#[pymodule]
#[pyo3(name = "ofoh")]
fn ofoh_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("OfohError", py.get_type::<OfohError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("MissingPrerequisiteError", py.get_type::<MissingPrerequisiteError>())?;
    m.add("NumericalError", py.get_type::<NumericalError>())?;
    m.add_class::<PyRunConfig>()?;
    m.add_function(wrap_pyfunction!(gen_data, m)?)?;
    m.add_function(wrap_pyfunction!(train_dem1, m)?)?;
    m.add_function(wrap_pyfunction!(train_dem2, m)?)?;
    m.add_function(wrap_pyfunction!(train_stack, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_run, m)?)?;
    m.add_function(wrap_pyfunction!(ablate, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(sparsemax, m)?)?;
    m.add_function(wrap_pyfunction!(orthogonal_decompose, m)?)?;
    m.add_function(wrap_pyfunction!(vote, m)?)?;
    m.add_function(wrap_pyfunction!(pairwise_distances, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
